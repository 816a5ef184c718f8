//! Multi-lane highway microsimulation.
//!
//! The road is straight and periodic: a ring of `length` metres with
//! `lane_count` parallel lanes. `x` grows along the driving direction and `y`
//! grows to the right, so lane 0 is the leftmost lane and a positive heading
//! turns toward larger `y`. The ego vehicle follows a kinematic bicycle model;
//! surrounding vehicles use IDM for speed and MOBIL for lane choice.

pub mod geometry;
pub mod idm;
pub mod observation;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use geometry::{rects_overlap, OrientedRect};
use idm::{IdmParams, Leader, MobilInputs, MobilParams};
pub use observation::{
    longitudinal_offset, observe_vehicles, EgoObservation, Observed, VehicleState, OBS_DIM, SV_SLOTS,
};

pub const EGO_ID: i64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadSpec {
    pub lane_count: usize,
    pub lane_width: f64,
    pub length: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 4.0,
            length: 1000.0,
        }
    }
}

impl RoadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lane_count < 2 {
            return Err(Error::config("road needs at least two lanes"));
        }
        if !(self.lane_width > 0.0) || !(self.length > 0.0) {
            return Err(Error::config("lane width and road length must be positive"));
        }
        Ok(())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane containing lateral position `y`, clamped to the road.
    pub fn lane_at(&self, y: f64) -> usize {
        let k = (y / self.lane_width).floor();
        k.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    pub fn total_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width
    }

    pub fn is_off_road(&self, y: f64) -> bool {
        y < 0.0 || y > self.total_width()
    }

    /// Bit mask of lanes touched by the lateral interval `[lo, hi]`.
    pub fn lanes_touched(&self, lo: f64, hi: f64) -> u32 {
        let a = self.lane_at(lo);
        let b = self.lane_at(hi);
        (a..=b).fold(0, |m, k| m | (1 << k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub max_steer: f64,
    pub max_speed: f64,
    pub max_accel: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            length: 5.0,
            width: 2.0,
            max_steer: 0.6,
            max_speed: 40.0,
            max_accel: 3.0,
        }
    }
}

/// Kinematic bicycle state referenced at the vehicle centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl BicycleState {
    fn slip(steer: f64) -> f64 {
        (0.5 * steer.tan()).atan()
    }

    pub fn velocity(&self, steer: f64) -> (f64, f64) {
        let beta = Self::slip(steer);
        let (s, c) = (self.heading + beta).sin_cos();
        (self.speed * c, self.speed * s)
    }

    /// One explicit Euler step. Steering and acceleration are clamped to the vehicle limits.
    pub fn advance(&mut self, steer: f64, accel: f64, dt: f64, params: &VehicleParams) {
        let steer = steer.clamp(-params.max_steer, params.max_steer);
        let accel = accel.clamp(-params.max_accel, params.max_accel);
        let beta = Self::slip(steer);
        let (s, c) = (self.heading + beta).sin_cos();
        self.x += self.speed * c * dt;
        self.y += self.speed * s * dt;
        self.heading += self.speed * beta.sin() / (params.wheelbase / 2.0) * dt;
        self.speed = (self.speed + accel * dt).clamp(0.0, params.max_speed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Controls {
    pub steer: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub road: RoadSpec,
    pub dt: f64,
    pub max_episode_time: f64,
    pub vehicle: VehicleParams,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub desired_speed_range: (f64, f64),
    pub ego_speed_range: (f64, f64),
    /// Vehicles per lane-kilometre at a V/C ratio of 1.
    pub capacity_per_lane_km: f64,
    pub placement_retries: usize,
    pub mobil_interval: f64,
    pub sv_lateral_gain: f64,
    pub sv_max_lateral_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            road: RoadSpec::default(),
            dt: 0.1,
            max_episode_time: 200.0,
            vehicle: VehicleParams::default(),
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            desired_speed_range: (8.0, 14.0),
            ego_speed_range: (8.0, 14.0),
            capacity_per_lane_km: 50.0 / 3.0,
            placement_retries: 500,
            mobil_interval: 1.0,
            sv_lateral_gain: 0.8,
            sv_max_lateral_speed: 1.2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        if !(self.dt > 0.0) || !(self.max_episode_time > 0.0) {
            return Err(Error::config("dt and episode length must be positive"));
        }
        if self.desired_speed_range.0 <= 0.0 || self.desired_speed_range.0 > self.desired_speed_range.1 {
            return Err(Error::config("bad desired speed range"));
        }
        Ok(())
    }

    /// Number of surrounding vehicles for a V/C ratio.
    pub fn vehicle_count(&self, density: f64) -> usize {
        let lane_km = self.road.lane_count as f64 * self.road.length / 1000.0;
        (density * self.capacity_per_lane_km * lane_km).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TrafficVehicle {
    id: i64,
    x: f64,
    y: f64,
    speed: f64,
    vy: f64,
    desired_speed: f64,
    target_lane: usize,
    mobil_timer: f64,
    prev_vx: f64,
    accel: f64,
}

#[derive(Debug, Clone, Copy)]
struct Body {
    x: f64,
    speed: f64,
    length: f64,
    occupancy: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: EgoObservation,
    pub f_unsafe: bool,
    pub collision: bool,
    pub off_road: bool,
    /// Episode time cap reached without a safety event.
    pub truncated: bool,
    pub time: f64,
    /// Finite-differenced longitudinal acceleration of the vehicle in each slot.
    pub sv_accels: [f64; SV_SLOTS],
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.f_unsafe || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub id: i64,
    pub lane_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub steer: f64,
    pub accel: f64,
    pub f_unsafe: bool,
}

pub const TRAJECTORY_HEADER: [&str; 11] = [
    "step", "id", "lane_id", "x", "y", "heading", "v_x", "v_y", "steer", "acc", "f_unsafe",
];

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.id.to_string(),
            r.lane_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.heading.to_string(),
            r.vx.to_string(),
            r.vy.to_string(),
            r.steer.to_string(),
            r.accel.to_string(),
            u8::from(r.f_unsafe).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Constant-speed time to collision with a leader, saturated into `[0, t_max]`.
pub fn time_to_collision(gap: f64, ego_speed: f64, leader_speed: f64, t_max: f64) -> f64 {
    let closing = ego_speed - leader_speed;
    if closing <= 0.0 {
        return t_max;
    }
    (gap / closing).clamp(0.0, t_max)
}

/// Anything the ego vehicle can be driven in: the simulator or a replayed recording.
pub trait DrivingEnv {
    fn observation(&self) -> EgoObservation;
    fn ego(&self) -> Option<VehicleState>;
    fn road(&self) -> RoadSpec;
    fn vehicle(&self) -> VehicleParams;
    fn dt(&self) -> f64;
    /// Time to collision with the same-lane leader, saturated into `[0, t_max]`.
    fn ttc(&self, t_max: f64) -> f64;
    fn advance(&mut self, controls: Controls) -> Result<StepOutcome>;
}

pub struct Highway {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    ego: Option<BicycleState>,
    ego_controls: Controls,
    svs: Vec<TrafficVehicle>,
    time: f64,
    steps: u64,
    sv_collisions: usize,
    observed: Observed,
    log: Option<Vec<TrajectoryRow>>,
}

impl Highway {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(0),
            ego: None,
            ego_controls: Controls::default(),
            svs: Vec::new(),
            time: 0.0,
            steps: 0,
            sv_collisions: 0,
            observed: Observed::default(),
            log: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn road(&self) -> &RoadSpec {
        &self.cfg.road
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn sv_collisions(&self) -> usize {
        self.sv_collisions
    }

    pub fn set_logging(&mut self, on: bool) {
        self.log = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_log(&mut self) -> Vec<TrajectoryRow> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Places the ego vehicle and `density`-scaled traffic on the road.
    pub fn reset(&mut self, seed: u64, density: f64) -> Result<EgoObservation> {
        self.reset_inner(seed, density, true)?;
        self.refresh_observation();
        self.log_state(false);
        Ok(self.observed.obs)
    }

    /// Traffic without an ego vehicle.
    pub fn reset_traffic_only(&mut self, seed: u64, density: f64) -> Result<()> {
        self.reset_inner(seed, density, false)
    }

    fn reset_inner(&mut self, seed: u64, density: f64, with_ego: bool) -> Result<()> {
        if !(0.0..1.0).contains(&density) {
            return Err(Error::config(format!("traffic density must lie in [0, 1), got {density}")));
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.time = 0.0;
        self.steps = 0;
        self.sv_collisions = 0;
        self.ego_controls = Controls::default();
        self.svs.clear();
        if let Some(log) = self.log.as_mut() {
            log.clear();
        }
        let road = self.cfg.road;
        let veh = self.cfg.vehicle;
        // (lane, x, speed) of every placed vehicle, used for gap checks.
        let mut placed: Vec<(usize, f64, f64)> = Vec::new();
        self.ego = if with_ego {
            let lane = self.rng.random_range(0..road.lane_count);
            let (lo, hi) = self.cfg.ego_speed_range;
            let speed = self.rng.random_range(lo..=hi);
            placed.push((lane, 0.0, speed));
            Some(BicycleState {
                x: 0.0,
                y: road.lane_center(lane),
                heading: 0.0,
                speed,
            })
        } else {
            None
        };

        let count = self.cfg.vehicle_count(density);
        for n in 0..count {
            let (lo, hi) = self.cfg.desired_speed_range;
            let desired = self.rng.random_range(lo..=hi);
            let speed = desired * self.rng.random_range(0.7..=1.0);
            let mut slot = None;
            for _ in 0..self.cfg.placement_retries {
                let lane = self.rng.random_range(0..road.lane_count);
                let x = self.rng.random_range(0.0..road.length);
                let clear = placed.iter().all(|&(l, px, pv)| {
                    if l != lane {
                        return true;
                    }
                    let gap = longitudinal_offset(px, x, Some(road.length)).abs() - veh.length;
                    gap >= self.cfg.idm.min_gap + pv.max(speed) * 1.0
                });
                if clear {
                    slot = Some((lane, x));
                    break;
                }
            }
            let (lane, x) = slot.ok_or_else(|| {
                Error::config(format!(
                    "could not place vehicle {} of {count} at density {density}",
                    n + 1
                ))
            })?;
            placed.push((lane, x, speed));
            let timer = self.rng.random_range(0.0..self.cfg.mobil_interval);
            self.svs.push(TrafficVehicle {
                id: n as i64 + 1,
                x,
                y: road.lane_center(lane),
                speed,
                vy: 0.0,
                desired_speed: desired,
                target_lane: lane,
                mobil_timer: timer,
                prev_vx: speed,
                accel: 0.0,
            });
        }
        Ok(())
    }

    pub fn ego_state(&self) -> Option<VehicleState> {
        self.ego.map(|e| {
            let (vx, vy) = e.velocity(self.ego_controls.steer);
            VehicleState {
                id: EGO_ID,
                lane_id: self.cfg.road.lane_at(e.y),
                x: e.x,
                y: e.y,
                heading: e.heading,
                vx,
                vy,
                length: self.cfg.vehicle.length,
                width: self.cfg.vehicle.width,
            }
        })
    }

    pub fn ego_dynamics(&self) -> Option<BicycleState> {
        self.ego
    }

    pub fn sv_states(&self) -> Vec<VehicleState> {
        self.svs.iter().map(|v| self.sv_state(v)).collect()
    }

    fn sv_state(&self, v: &TrafficVehicle) -> VehicleState {
        VehicleState {
            id: v.id,
            lane_id: self.cfg.road.lane_at(v.y),
            x: v.x,
            y: v.y,
            heading: v.vy.atan2(v.speed.max(1e-6)),
            vx: v.speed,
            vy: v.vy,
            length: self.cfg.vehicle.length,
            width: self.cfg.vehicle.width,
        }
    }

    pub fn observe(&self) -> EgoObservation {
        self.observed.obs
    }

    pub fn observed(&self) -> &Observed {
        &self.observed
    }

    fn refresh_observation(&mut self) {
        let Some(mut ego) = self.ego_state() else {
            self.observed = Observed::default();
            return;
        };
        let svs = self.sv_states();
        let len = self.cfg.road.length;
        // Neighbour offsets are computed on the ring, then the ego x is folded for reporting.
        let mut observed = observe_vehicles(&ego, svs.iter(), Some(len));
        ego.x = ego.x.rem_euclid(len);
        observed.obs.ev[1] = ego.x;
        self.observed = observed;
    }

    /// Time to collision with the nearest same-lane vehicle ahead of the ego vehicle.
    pub fn ttc_to_leader(&self, t_max: f64) -> f64 {
        let Some(ego) = self.ego_state() else {
            return t_max;
        };
        let len = self.cfg.road.length;
        let leader = self
            .svs
            .iter()
            .filter(|v| self.cfg.road.lane_at(v.y) == ego.lane_id)
            .map(|v| (longitudinal_offset(ego.x, v.x, Some(len)), v))
            .filter(|(dx, _)| *dx > 0.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match leader {
            None => t_max,
            Some((dx, v)) => {
                let gap = dx - self.cfg.vehicle.length;
                time_to_collision(gap, ego.vx, v.speed, t_max)
            }
        }
    }

    fn bodies(&self) -> Vec<Body> {
        let road = &self.cfg.road;
        let hw = self.cfg.vehicle.width / 2.0;
        let mut out: Vec<Body> = self
            .svs
            .iter()
            .map(|v| Body {
                x: v.x,
                speed: v.speed,
                length: self.cfg.vehicle.length,
                occupancy: road.lanes_touched(v.y - hw, v.y + hw) | (1 << v.target_lane),
            })
            .collect();
        if let Some(e) = self.ego {
            out.push(Body {
                x: e.x,
                speed: e.speed * e.heading.cos(),
                length: self.cfg.vehicle.length,
                occupancy: road.lanes_touched(e.y - hw, e.y + hw),
            });
        }
        out
    }

    /// Nearest vehicles ahead and behind vehicle `me` (index into `bodies`)
    /// among those occupying any lane in `mask`: `(index, bumper gap)`.
    fn neighbours(bodies: &[Body], me: usize, x: f64, length: f64, mask: u32, ring: f64) -> (Option<(usize, f64)>, Option<(usize, f64)>) {
        let mut ahead: Option<(usize, f64)> = None;
        let mut behind: Option<(usize, f64)> = None;
        for (k, b) in bodies.iter().enumerate() {
            if k == me || b.occupancy & mask == 0 {
                continue;
            }
            let dx = longitudinal_offset(x, b.x, Some(ring));
            let gap = dx.abs() - (length + b.length) / 2.0;
            if dx > 0.0 || (dx == 0.0 && k > me) {
                if ahead.is_none_or(|(_, g)| gap < g) {
                    ahead = Some((k, gap));
                }
            } else if behind.is_none_or(|(_, g)| gap < g) {
                behind = Some((k, gap));
            }
        }
        (ahead, behind)
    }

    fn leader_of(bodies: &[Body], ahead: Option<(usize, f64)>) -> Option<Leader> {
        ahead.map(|(k, gap)| Leader {
            gap,
            speed: bodies[k].speed,
        })
    }

    fn plan_traffic(&mut self, dt: f64) {
        let bodies = self.bodies();
        let road = self.cfg.road;
        let idm = self.cfg.idm;
        let mobil = self.cfg.mobil;
        let ring = road.length;
        let n_sv = self.svs.len();
        let mut decisions: Vec<(f64, Option<usize>)> = Vec::with_capacity(n_sv);
        for i in 0..n_sv {
            let v = &self.svs[i];
            let me = &bodies[i];
            let (ahead, _) = Self::neighbours(&bodies, i, v.x, me.length, me.occupancy, ring);
            let accel = idm.accel(v.speed, v.desired_speed, Self::leader_of(&bodies, ahead));

            let settled = road.lane_at(v.y) == v.target_lane
                && (v.y - road.lane_center(v.target_lane)).abs() < 0.2;
            let mut new_target = None;
            if settled && v.mobil_timer <= 0.0 {
                let lane = v.target_lane;
                let mut best = mobil.accel_threshold;
                let candidates = [lane.checked_sub(1), (lane + 1 < road.lane_count).then_some(lane + 1)];
                for target in candidates.into_iter().flatten() {
                    let mask = 1u32 << target;
                    let (new_ahead, new_behind) = Self::neighbours(&bodies, i, v.x, me.length, mask, ring);
                    if new_ahead.is_some_and(|(_, g)| g <= idm.min_gap)
                        || new_behind.is_some_and(|(_, g)| g <= idm.min_gap)
                    {
                        continue;
                    }
                    let self_after = idm.accel(v.speed, v.desired_speed, Self::leader_of(&bodies, new_ahead));
                    let (nf_now, nf_after) = match new_behind {
                        Some((f, gap)) => {
                            let fb = &bodies[f];
                            let desired = self.desired_speed_of(f);
                            let now_leader = new_ahead.map(|(k, g)| Leader {
                                gap: g + gap + me.length,
                                speed: bodies[k].speed,
                            });
                            (
                                idm.accel(fb.speed, desired, now_leader),
                                idm.accel(fb.speed, desired, Some(Leader { gap, speed: me.speed })),
                            )
                        }
                        None => (0.0, 0.0),
                    };
                    let own_mask = 1u32 << lane;
                    let (own_ahead, own_behind) = Self::neighbours(&bodies, i, v.x, me.length, own_mask, ring);
                    let (of_now, of_after) = match own_behind {
                        Some((f, gap)) => {
                            let fb = &bodies[f];
                            let desired = self.desired_speed_of(f);
                            let after_leader = own_ahead.map(|(k, g)| Leader {
                                gap: g + gap + me.length,
                                speed: bodies[k].speed,
                            });
                            (
                                idm.accel(fb.speed, desired, Some(Leader { gap, speed: me.speed })),
                                idm.accel(fb.speed, desired, after_leader),
                            )
                        }
                        None => (0.0, 0.0),
                    };
                    let inputs = MobilInputs {
                        self_now: accel,
                        self_after,
                        new_follower_now: nf_now,
                        new_follower_after: nf_after,
                        old_follower_now: of_now,
                        old_follower_after: of_after,
                    };
                    if mobil.is_safe(&inputs) {
                        let gain = mobil.incentive(&inputs);
                        if gain > best {
                            best = gain;
                            new_target = Some(target);
                        }
                    }
                }
            }
            decisions.push((accel, new_target));
        }
        for (v, (accel, target)) in self.svs.iter_mut().zip(decisions) {
            v.accel = accel;
            if let Some(t) = target {
                v.target_lane = t;
            }
            if v.mobil_timer <= 0.0 {
                v.mobil_timer = self.cfg.mobil_interval;
            }
            v.mobil_timer -= dt;
        }
    }

    fn desired_speed_of(&self, body_index: usize) -> f64 {
        match self.svs.get(body_index) {
            Some(v) => v.desired_speed,
            // The ego vehicle, judged by its followers, is assumed to hold its speed.
            None => self.ego.map(|e| e.speed.max(1.0)).unwrap_or(1.0),
        }
    }

    fn advance_traffic(&mut self, dt: f64) {
        let road = self.cfg.road;
        let gain = self.cfg.sv_lateral_gain;
        let vy_max = self.cfg.sv_max_lateral_speed;
        for v in &mut self.svs {
            v.prev_vx = v.speed;
            let a = v.accel;
            let new_speed = v.speed + a * dt;
            if new_speed < 0.0 {
                v.x += -v.speed * v.speed / (2.0 * a);
                v.speed = 0.0;
            } else {
                v.x += (v.speed + new_speed) / 2.0 * dt;
                v.speed = new_speed;
            }
            v.x = v.x.rem_euclid(road.length);
            let target_y = road.lane_center(v.target_lane);
            v.vy = (gain * (target_y - v.y)).clamp(-vy_max, vy_max);
            v.y += v.vy * dt;
        }
    }

    fn rect_of(&self, s: &VehicleState, x: f64) -> OrientedRect {
        OrientedRect {
            cx: x,
            cy: s.y,
            heading: s.heading,
            length: s.length,
            width: s.width,
        }
    }

    fn count_sv_collisions(&self) -> usize {
        let states = self.sv_states();
        let ring = self.cfg.road.length;
        let mut hits = 0;
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                let dx = longitudinal_offset(states[i].x, states[j].x, Some(ring));
                if dx.abs() > 8.0 || (states[i].y - states[j].y).abs() > 4.0 {
                    continue;
                }
                let a = self.rect_of(&states[i], 0.0);
                let b = self.rect_of(&states[j], dx);
                if rects_overlap(&a, &b) {
                    hits += 1;
                }
            }
        }
        hits
    }

    /// Advances traffic only (used when no ego vehicle is present).
    pub fn step_traffic(&mut self, dt: f64) {
        self.plan_traffic(dt);
        self.advance_traffic(dt);
        self.time += dt;
        self.steps += 1;
        self.sv_collisions += self.count_sv_collisions();
    }

    pub fn step(&mut self, controls: Controls, dt: f64) -> Result<StepOutcome> {
        if !controls.steer.is_finite() || !controls.accel.is_finite() {
            return Err(Error::Fault(format!(
                "non-finite controls {controls:?} at t={:.2}s; ego={:?}",
                self.time, self.ego
            )));
        }
        if self.ego.is_none() {
            return Err(Error::config("step called before reset"));
        }
        let veh = self.cfg.vehicle;
        let controls = Controls {
            steer: controls.steer.clamp(-veh.max_steer, veh.max_steer),
            accel: controls.accel.clamp(-veh.max_accel, veh.max_accel),
        };
        self.plan_traffic(dt);
        if let Some(e) = self.ego.as_mut() {
            e.advance(controls.steer, controls.accel, dt, &veh);
        }
        self.ego_controls = controls;
        self.advance_traffic(dt);
        self.time += dt;
        self.steps += 1;
        self.sv_collisions += self.count_sv_collisions();

        let ego = self.ego_state().expect("ego present");
        let ring = self.cfg.road.length;
        let ego_rect = self.rect_of(&ego, 0.0);
        let collision = self.sv_states().iter().any(|s| {
            let dx = longitudinal_offset(ego.x, s.x, Some(ring));
            dx.abs() < 10.0 && rects_overlap(&ego_rect, &self.rect_of(s, dx))
        });
        let off_road = self.cfg.road.is_off_road(ego.y);
        let f_unsafe = collision || off_road;
        self.refresh_observation();

        let mut sv_accels = [0.0; SV_SLOTS];
        for (slot, id) in self.observed.slot_ids.iter().enumerate() {
            if let Some(id) = id {
                if let Some(v) = self.svs.iter().find(|v| v.id == *id) {
                    sv_accels[slot] = (v.speed - v.prev_vx) / dt;
                }
            }
        }
        let truncated = !f_unsafe && self.time >= self.cfg.max_episode_time - 1e-9;
        self.log_state(f_unsafe);
        Ok(StepOutcome {
            observation: self.observed.obs,
            f_unsafe,
            collision,
            off_road,
            truncated,
            time: self.time,
            sv_accels,
        })
    }

    fn log_state(&mut self, f_unsafe: bool) {
        if self.log.is_none() {
            return;
        }
        let step = self.steps;
        let mut rows = Vec::with_capacity(self.svs.len() + 1);
        if let Some(e) = self.ego_state() {
            rows.push(TrajectoryRow {
                step,
                id: e.id,
                lane_id: e.lane_id,
                x: e.x,
                y: e.y,
                heading: e.heading,
                vx: e.vx,
                vy: e.vy,
                steer: self.ego_controls.steer,
                accel: self.ego_controls.accel,
                f_unsafe,
            });
        }
        for v in &self.svs {
            let s = self.sv_state(v);
            rows.push(TrajectoryRow {
                step,
                id: s.id,
                lane_id: s.lane_id,
                x: s.x,
                y: s.y,
                heading: s.heading,
                vx: s.vx,
                vy: s.vy,
                steer: 0.0,
                accel: v.accel,
                f_unsafe: false,
            });
        }
        if let Some(log) = self.log.as_mut() {
            log.extend(rows);
        }
    }

    /// Test hook: replaces traffic with explicit vehicles `(lane, x, speed, desired_speed)`.
    pub fn set_traffic(&mut self, vehicles: &[(usize, f64, f64, f64)]) {
        let road = self.cfg.road;
        self.svs = vehicles
            .iter()
            .enumerate()
            .map(|(n, &(lane, x, speed, desired))| TrafficVehicle {
                id: n as i64 + 1,
                x: x.rem_euclid(road.length),
                y: road.lane_center(lane),
                speed,
                vy: 0.0,
                desired_speed: desired,
                target_lane: lane,
                mobil_timer: self.cfg.mobil_interval,
                prev_vx: speed,
                accel: 0.0,
            })
            .collect();
        self.refresh_observation();
    }

    /// Test hook: overrides the ego pose and speed.
    pub fn set_ego(&mut self, state: BicycleState) {
        self.ego = Some(state);
        self.refresh_observation();
    }

    /// Minimum bumper gap between same-lane neighbours; `None` with fewer than two vehicles in any lane.
    pub fn min_same_lane_gap(&self) -> Option<f64> {
        let mut all: Vec<(usize, f64)> = self
            .sv_states()
            .iter()
            .map(|s| (s.lane_id, s.x))
            .collect();
        if let Some(e) = self.ego_state() {
            all.push((e.lane_id, e.x));
        }
        let ring = self.cfg.road.length;
        let len = self.cfg.vehicle.length;
        let mut min: Option<f64> = None;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i].0 == all[j].0 {
                    let gap = longitudinal_offset(all[i].1, all[j].1, Some(ring)).abs() - len;
                    min = Some(min.map_or(gap, |m: f64| m.min(gap)));
                }
            }
        }
        min
    }
}

impl DrivingEnv for Highway {
    fn observation(&self) -> EgoObservation {
        self.observe()
    }

    fn ego(&self) -> Option<VehicleState> {
        self.ego_state()
    }

    fn road(&self) -> RoadSpec {
        self.cfg.road
    }

    fn vehicle(&self) -> VehicleParams {
        self.cfg.vehicle
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn ttc(&self, t_max: f64) -> f64 {
        self.ttc_to_leader(t_max)
    }

    fn advance(&mut self, controls: Controls) -> Result<StepOutcome> {
        self.step(controls, self.cfg.dt)
    }
}
