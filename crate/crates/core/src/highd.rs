//! HighD-format recordings: parsing, resampling, replay with one substituted
//! ego vehicle, and synthetic fixture generation.
//!
//! Positions in the track files follow the HighD convention: `x`, `y` give the
//! upper-left corner of the bounding box in image coordinates (y down),
//! `width` is the extent along x and `height` the extent along y. Vehicles on
//! the lower carriageway drive toward +x, those on the upper one toward −x.
//! Replay maps the ego's carriageway into the simulator frame (x forward, y to
//! the right, lane 0 next to the median), mirroring the upper carriageway.
//!
//! `laneId` counts the intervals of the combined sorted marking list from the
//! top of the image, starting at 1. The gap between the two carriageways is an
//! interval too, so with three lanes each way the upper lanes are 1..=3, the
//! median is 4 and the lower lanes are 5..=7.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::action::DiscreteOption;
use crate::env::geometry::{rects_overlap, OrientedRect};
use crate::env::{
    observe_vehicles, time_to_collision, BicycleState, Controls, DrivingEnv, EgoObservation, Observed, RoadSpec,
    StepOutcome, TrajectoryRow, VehicleParams, VehicleState, EGO_ID, SV_SLOTS,
};
use crate::error::{Error, Result};
use crate::trainer::Policy;

pub const REQUIRED_COLUMNS: [&str; 9] = ["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "laneId"];

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMeta {
    pub frame_rate: f64,
    pub upper_markings: Vec<f64>,
    pub lower_markings: Vec<f64>,
}

fn parse_markings(key: &str, v: &str) -> Result<Vec<f64>> {
    let m = v
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::config(format!("{key}: cannot parse `{s}`"))))
        .collect::<Result<Vec<f64>>>()?;
    if m.len() < 2 || m.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("{key}: need at least two strictly increasing markings")));
    }
    Ok(m)
}

impl RecordingMeta {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = crate::config::parse_key_values(text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::MissingColumn(k.to_string()))
        };
        let frame_rate: f64 = get("frameRate")?
            .parse()
            .map_err(|_| Error::config("frameRate: not a number"))?;
        if !(frame_rate > 0.0) {
            return Err(Error::config("frameRate: must be positive"));
        }
        let meta = Self {
            frame_rate,
            upper_markings: parse_markings("upperLaneMarkings", get("upperLaneMarkings")?)?,
            lower_markings: parse_markings("lowerLaneMarkings", get("lowerLaneMarkings")?)?,
        };
        if meta.upper_markings.last() >= meta.lower_markings.first() {
            return Err(Error::config("upper carriageway markings must lie above the lower ones"));
        }
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        let join = |m: &[f64]| m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        format!(
            "frameRate = {}\nupperLaneMarkings = {}\nlowerLaneMarkings = {}\n",
            self.frame_rate,
            join(&self.upper_markings),
            join(&self.lower_markings)
        )
    }

    fn combined(&self) -> Vec<f64> {
        let mut all = self.upper_markings.clone();
        all.extend(&self.lower_markings);
        all
    }

    /// `laneId` of an image-frame lateral position, `0` outside all markings.
    pub fn lane_id_at(&self, y_image: f64) -> i64 {
        let all = self.combined();
        for (k, w) in all.windows(2).enumerate() {
            if y_image >= w[0] && y_image < w[1] {
                return k as i64 + 1;
            }
        }
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Lower carriageway, driving toward +x.
    Lower,
    /// Upper carriageway, driving toward −x.
    Upper,
}

/// Maps one carriageway of a recording into the simulator frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Carriageway {
    pub direction: Direction,
    /// Markings in simulator lateral coordinates, increasing, starting at 0.
    pub markings: Vec<f64>,
    lane_id_offset: i64,
    origin: f64,
}

impl Carriageway {
    pub fn new(meta: &RecordingMeta, direction: Direction) -> Self {
        match direction {
            Direction::Lower => {
                let origin = meta.lower_markings[0];
                Self {
                    direction,
                    markings: meta.lower_markings.iter().map(|m| m - origin).collect(),
                    lane_id_offset: meta.upper_markings.len() as i64,
                    origin,
                }
            }
            Direction::Upper => {
                let origin = *meta.upper_markings.last().expect("validated markings");
                let mut markings: Vec<f64> = meta.upper_markings.iter().map(|m| origin - m).collect();
                markings.reverse();
                Self {
                    direction,
                    markings,
                    lane_id_offset: 0,
                    origin,
                }
            }
        }
    }

    pub fn lane_count(&self) -> usize {
        self.markings.len() - 1
    }

    /// Simulator-frame centre state of a record.
    pub fn to_sim(&self, s: &TrackSample, width: f64, height: f64) -> (f64, f64, f64, f64) {
        let xc = s.x + width / 2.0;
        let yc = s.y + height / 2.0;
        match self.direction {
            Direction::Lower => (xc, yc - self.origin, s.vx, s.vy),
            Direction::Upper => (-xc, self.origin - yc, -s.vx, -s.vy),
        }
    }

    /// Lane index (0 next to the median) for a simulator lateral position, clamped to the road.
    /// Intervals are closed on the side that maps to the upper image edge, so
    /// a position on a marking gets the same lane as its recorded `laneId`.
    pub fn lane_at(&self, y: f64) -> usize {
        let n = self.lane_count();
        let inside = |w: &[f64]| match self.direction {
            Direction::Lower => y >= w[0] && y < w[1],
            Direction::Upper => y > w[0] && y <= w[1],
        };
        self.markings
            .windows(2)
            .position(inside)
            .unwrap_or(if y <= 0.0 { 0 } else { n - 1 })
    }

    /// Recorded `laneId` for a simulator lane index.
    pub fn lane_id(&self, lane: usize) -> i64 {
        match self.direction {
            Direction::Lower => self.lane_id_offset + lane as i64 + 1,
            Direction::Upper => (self.lane_count() - lane) as i64,
        }
    }

    pub fn road(&self) -> RoadSpec {
        let n = self.lane_count();
        RoadSpec {
            lane_count: n,
            lane_width: self.markings[n] / n as f64,
            length: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    /// Index on the resampled time grid: time = tick · dt.
    pub tick: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lane_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: i64,
    pub width: f64,
    pub height: f64,
    pub samples: Vec<TrackSample>,
}

impl Track {
    pub fn first_tick(&self) -> i64 {
        self.samples.first().map_or(0, |s| s.tick)
    }

    pub fn last_tick(&self) -> i64 {
        self.samples.last().map_or(-1, |s| s.tick)
    }

    pub fn at(&self, tick: i64) -> Option<&TrackSample> {
        let k = tick - self.first_tick();
        if k < 0 {
            return None;
        }
        self.samples.get(k as usize)
    }

    /// Carriageway by majority of recorded lane ids, falling back to the sign
    /// of the mean longitudinal velocity when no id lies on a carriageway.
    pub fn direction(&self, meta: &RecordingMeta) -> Direction {
        let upper_ids = 1..meta.upper_markings.len() as i64;
        let lower_first = meta.upper_markings.len() as i64 + 1;
        let lower_ids = lower_first..lower_first + meta.lower_markings.len() as i64 - 1;
        let up = self.samples.iter().filter(|s| upper_ids.contains(&s.lane_id)).count();
        let down = self.samples.iter().filter(|s| lower_ids.contains(&s.lane_id)).count();
        if up != down {
            return if up > down { Direction::Upper } else { Direction::Lower };
        }
        let sum_vx: f64 = self.samples.iter().map(|s| s.vx).sum();
        if sum_vx < 0.0 {
            Direction::Upper
        } else {
            Direction::Lower
        }
    }
}

/// Per-vehicle trajectories on a common `dt` grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackIndex {
    pub dt: f64,
    pub tracks: BTreeMap<i64, Track>,
}

struct RawRow {
    frame: i64,
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    vx: f64,
    vy: f64,
    lane_id: i64,
}

fn resample(id: i64, rows: &[RawRow], frame_rate: f64, dt: f64) -> Track {
    let time = |r: &RawRow| r.frame as f64 / frame_rate;
    let t0 = time(&rows[0]);
    let t1 = time(&rows[rows.len() - 1]);
    let eps = 1e-9;
    let first = ((t0 - eps) / dt).ceil() as i64;
    let last = ((t1 + eps) / dt).floor() as i64;
    let mut samples = Vec::new();
    let mut seg = 0;
    for tick in first..=last {
        let t = tick as f64 * dt;
        while seg + 1 < rows.len() - 1 && time(&rows[seg + 1]) <= t + eps {
            seg += 1;
        }
        let a = &rows[seg];
        let b = rows.get(seg + 1).unwrap_or(a);
        let (ta, tb) = (time(a), time(b));
        let w = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        let lerp = |p: f64, q: f64| if w == 0.0 { p } else if w == 1.0 { q } else { p + (q - p) * w };
        samples.push(TrackSample {
            tick,
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            vx: lerp(a.vx, b.vx),
            vy: lerp(a.vy, b.vy),
            lane_id: if w >= 1.0 { b.lane_id } else { a.lane_id },
        });
    }
    Track {
        id,
        width: rows[0].width,
        height: rows[0].height,
        samples,
    }
}

/// Reads a track CSV and resamples every vehicle onto the `dt` grid by linear interpolation.
pub fn parse_tracks<R: Read>(reader: R, frame_rate: f64, dt: f64) -> Result<TrackIndex> {
    if !(frame_rate > 0.0 && dt > 0.0) {
        return Err(Error::config("frame rate and dt must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 9];
    for (slot, name) in col.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut per_vehicle: BTreeMap<i64, Vec<RawRow>> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = n + 1;
        let field = |k: usize| -> Result<f64> {
            let raw = rec.get(col[k]).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Data {
                row,
                message: format!("column {}: cannot parse `{raw}`", REQUIRED_COLUMNS[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    message: format!("column {}: non-finite value", REQUIRED_COLUMNS[k]),
                });
            }
            Ok(v)
        };
        let int = |k: usize| -> Result<i64> {
            let v = field(k)?;
            if v.fract() != 0.0 {
                return Err(Error::Data {
                    row,
                    message: format!("column {}: expected an integer", REQUIRED_COLUMNS[k]),
                });
            }
            Ok(v as i64)
        };
        let id = int(1)?;
        let r = RawRow {
            frame: int(0)?,
            x: field(2)?,
            y: field(3)?,
            width: field(4)?,
            height: field(5)?,
            vx: field(6)?,
            vy: field(7)?,
            lane_id: int(8)?,
        };
        let rows = per_vehicle.entry(id).or_default();
        if rows.last().is_some_and(|p| r.frame <= p.frame) {
            return Err(Error::Data {
                row,
                message: format!("vehicle {id}: frame {} does not increase", r.frame),
            });
        }
        rows.push(r);
    }
    let tracks = per_vehicle
        .into_iter()
        .map(|(id, rows)| (id, resample(id, &rows, frame_rate, dt)))
        .filter(|(_, t)| !t.samples.is_empty())
        .collect();
    Ok(TrackIndex { dt, tracks })
}

/// Writes the index back out with one frame per tick (frame rate `1/dt`).
pub fn write_tracks<W: Write>(out: W, index: &TrackIndex) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REQUIRED_COLUMNS)?;
    let mut rows: Vec<(i64, i64, &Track, &TrackSample)> = index
        .tracks
        .values()
        .flat_map(|t| t.samples.iter().map(move |s| (s.tick, t.id, t, s)))
        .collect();
    rows.sort_by_key(|(tick, id, _, _)| (*tick, *id));
    for (tick, id, t, s) in rows {
        w.write_record([
            tick.to_string(),
            id.to_string(),
            s.x.to_string(),
            s.y.to_string(),
            t.width.to_string(),
            t.height.to_string(),
            s.vx.to_string(),
            s.vy.to_string(),
            s.lane_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Recording loaded from a directory holding `tracks.csv` and `meta.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub index: TrackIndex,
}

pub const TRACKS_FILE: &str = "tracks.csv";
pub const META_FILE: &str = "meta.txt";

impl Recording {
    pub fn load(dir: &std::path::Path, dt: f64) -> Result<Self> {
        let meta = RecordingMeta::parse(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        let index = parse_tracks(std::fs::File::open(dir.join(TRACKS_FILE))?, meta.frame_rate, dt)?;
        Ok(Self { meta, index })
    }

    /// Ids recorded for at least `min_ticks` grid steps.
    pub fn candidates(&self, min_ticks: usize) -> Vec<i64> {
        self.index
            .tracks
            .values()
            .filter(|t| t.samples.len() >= min_ticks)
            .map(|t| t.id)
            .collect()
    }

    pub fn pick_ego<R: Rng + ?Sized>(&self, min_ticks: usize, rng: &mut R) -> Result<i64> {
        let c = self.candidates(min_ticks);
        if c.is_empty() {
            return Err(Error::config(format!("no vehicle is recorded for {min_ticks} steps")));
        }
        Ok(c[rng.random_range(0..c.len())])
    }
}

#[derive(Debug, Clone)]
struct ReplaySv {
    id: i64,
    length: f64,
    width: f64,
    track: Track,
}

/// Replays recorded traffic while the ego vehicle follows external controls.
pub struct ReplayEnv {
    lanes: Carriageway,
    vehicle: VehicleParams,
    dt: f64,
    ego: BicycleState,
    ego_controls: Controls,
    ego_id: i64,
    start_tick: i64,
    end_tick: i64,
    tick: i64,
    svs: Vec<ReplaySv>,
    observed: Observed,
    sv_log: Vec<TrajectoryRow>,
}

impl ReplayEnv {
    /// Starts a replay with `ego_id` removed from traffic and placed at its recorded initial state.
    pub fn new(rec: &Recording, ego_id: i64, vehicle: VehicleParams, min_ticks: usize) -> Result<Self> {
        let ego_track = rec.index.tracks.get(&ego_id).ok_or(Error::UnknownVehicle(ego_id))?;
        if ego_track.samples.len() < min_ticks.max(2) {
            return Err(Error::config(format!(
                "vehicle {ego_id} is recorded for {} steps, fewer than {}",
                ego_track.samples.len(),
                min_ticks.max(2)
            )));
        }
        let direction = ego_track.direction(&rec.meta);
        let lanes = Carriageway::new(&rec.meta, direction);
        let (x, y, vx, vy) = lanes.to_sim(&ego_track.samples[0], ego_track.width, ego_track.height);
        let vehicle = VehicleParams {
            length: ego_track.width,
            width: ego_track.height,
            ..vehicle
        };
        let svs = rec
            .index
            .tracks
            .values()
            .filter(|t| t.id != ego_id && t.direction(&rec.meta) == direction)
            .map(|t| ReplaySv {
                id: t.id,
                length: t.width,
                width: t.height,
                track: t.clone(),
            })
            .collect();
        let mut env = Self {
            lanes,
            vehicle,
            dt: rec.index.dt,
            ego: BicycleState {
                x,
                y,
                heading: vy.atan2(vx.max(1e-9)),
                speed: vx.hypot(vy),
            },
            ego_controls: Controls::default(),
            ego_id,
            start_tick: ego_track.first_tick(),
            end_tick: ego_track.last_tick(),
            tick: ego_track.first_tick(),
            svs,
            observed: Observed::default(),
            sv_log: Vec::new(),
        };
        env.refresh();
        Ok(env)
    }

    pub fn ego_id(&self) -> i64 {
        self.ego_id
    }

    pub fn carriageway(&self) -> &Carriageway {
        &self.lanes
    }

    pub fn tick(&self) -> i64 {
        self.tick
    }

    pub fn ego_dynamics(&self) -> BicycleState {
        self.ego
    }

    /// Replayed traffic rows, one per present vehicle per step.
    pub fn sv_log(&self) -> &[TrajectoryRow] {
        &self.sv_log
    }

    fn sv_state(&self, sv: &ReplaySv, tick: i64) -> Option<VehicleState> {
        let s = sv.track.at(tick)?;
        let (x, y, vx, vy) = self.lanes.to_sim(s, sv.track.width, sv.track.height);
        Some(VehicleState {
            id: sv.id,
            lane_id: self.lanes.lane_at(y),
            x,
            y,
            heading: vy.atan2(vx.abs().max(1e-9)),
            vx,
            vy,
            length: sv.length,
            width: sv.width,
        })
    }

    pub fn sv_states(&self) -> Vec<VehicleState> {
        self.svs.iter().filter_map(|sv| self.sv_state(sv, self.tick)).collect()
    }

    pub fn ego_state(&self) -> VehicleState {
        let (vx, vy) = self.ego.velocity(self.ego_controls.steer);
        VehicleState {
            id: EGO_ID,
            lane_id: self.lanes.lane_at(self.ego.y),
            x: self.ego.x,
            y: self.ego.y,
            heading: self.ego.heading,
            vx,
            vy,
            length: self.vehicle.length,
            width: self.vehicle.width,
        }
    }

    fn refresh(&mut self) {
        let ego = self.ego_state();
        let svs = self.sv_states();
        self.observed = observe_vehicles(&ego, svs.iter(), None);
    }

    fn rect(s: &VehicleState) -> OrientedRect {
        OrientedRect {
            cx: s.x,
            cy: s.y,
            heading: s.heading,
            length: s.length,
            width: s.width,
        }
    }
}

impl DrivingEnv for ReplayEnv {
    fn observation(&self) -> EgoObservation {
        self.observed.obs
    }

    fn ego(&self) -> Option<VehicleState> {
        Some(self.ego_state())
    }

    fn road(&self) -> RoadSpec {
        self.lanes.road()
    }

    fn vehicle(&self) -> VehicleParams {
        self.vehicle
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn ttc(&self, t_max: f64) -> f64 {
        let ego = self.ego_state();
        self.sv_states()
            .into_iter()
            .filter(|s| s.lane_id == ego.lane_id && s.x > ego.x)
            .min_by(|a, b| a.x.total_cmp(&b.x))
            .map_or(t_max, |lead| {
                let gap = lead.x - ego.x - (lead.length + ego.length) / 2.0;
                time_to_collision(gap, ego.vx, lead.vx, t_max)
            })
    }

    fn advance(&mut self, controls: Controls) -> Result<StepOutcome> {
        if !controls.steer.is_finite() || !controls.accel.is_finite() {
            return Err(Error::Fault(format!(
                "non-finite controls {controls:?} at tick {}; ego={:?}",
                self.tick, self.ego
            )));
        }
        let veh = self.vehicle;
        let controls = Controls {
            steer: controls.steer.clamp(-veh.max_steer, veh.max_steer),
            accel: controls.accel.clamp(-veh.max_accel, veh.max_accel),
        };
        self.ego.advance(controls.steer, controls.accel, self.dt, &veh);
        self.ego_controls = controls;
        self.tick += 1;
        self.refresh();

        let ego = self.ego_state();
        let svs = self.sv_states();
        let ego_rect = Self::rect(&ego);
        let collision = svs
            .iter()
            .any(|s| (s.x - ego.x).abs() < (s.length + ego.length) && rects_overlap(&ego_rect, &Self::rect(s)));
        let road = self.lanes.road();
        let off_road = ego.y < 0.0 || ego.y > self.lanes.markings[road.lane_count];
        let f_unsafe = collision || off_road;

        let mut sv_accels = [0.0; SV_SLOTS];
        for (slot, id) in self.observed.slot_ids.iter().enumerate() {
            let Some(id) = id else { continue };
            if let Some(sv) = self.svs.iter().find(|s| s.id == *id) {
                if let (Some(now), Some(prev)) = (self.sv_state(sv, self.tick), self.sv_state(sv, self.tick - 1)) {
                    sv_accels[slot] = (now.vx - prev.vx) / self.dt;
                }
            }
        }
        let step = (self.tick - self.start_tick) as u64;
        for s in &svs {
            self.sv_log.push(TrajectoryRow {
                step,
                id: s.id,
                lane_id: s.lane_id,
                x: s.x,
                y: s.y,
                heading: s.heading,
                vx: s.vx,
                vy: s.vy,
                steer: 0.0,
                accel: 0.0,
                f_unsafe: false,
            });
        }
        let truncated = !f_unsafe && self.tick >= self.end_tick;
        Ok(StepOutcome {
            observation: self.observed.obs,
            f_unsafe,
            collision,
            off_road,
            truncated,
            time: step as f64 * self.dt,
            sv_accels,
        })
    }
}

/// Follows a recorded track: speed feed-forward with position feedback, and
/// steering that points the velocity at the recorded position `lookahead`
/// steps ahead through the inverse of the bicycle slip relation. Counts its
/// own steps, so it must be used from the first step of a replay.
pub struct TrackFollower {
    states: Vec<(f64, f64, f64, f64)>,
    step: usize,
    pub lookahead: usize,
    pub position_gain: f64,
}

impl TrackFollower {
    pub fn new(rec: &Recording, ego_id: i64) -> Result<Self> {
        let t = rec.index.tracks.get(&ego_id).ok_or(Error::UnknownVehicle(ego_id))?;
        let lanes = Carriageway::new(&rec.meta, t.direction(&rec.meta));
        Ok(Self {
            states: t.samples.iter().map(|s| lanes.to_sim(s, t.width, t.height)).collect(),
            step: 0,
            lookahead: 5,
            position_gain: 1.0,
        })
    }
}

impl Policy for TrackFollower {
    fn decide(&mut self, env: &dyn DrivingEnv) -> Result<(Controls, usize)> {
        let ego = env.ego().ok_or_else(|| Error::Fault("no ego vehicle".into()))?;
        let k = self.step;
        self.step += 1;
        let at = |n: usize| self.states.get(n).or(self.states.last()).copied();
        let (Some((x_next, _, vx_next, vy_next)), Some((x_ahead, y_ahead, _, _))) = (at(k + 1), at(k + self.lookahead)) else {
            return Ok((Controls::default(), DiscreteOption::Lk.index()));
        };
        let dt = env.dt();
        let speed = ego.speed();
        let desired = vx_next.hypot(vy_next) + self.position_gain * (x_next - (ego.x + ego.vx * dt)) / dt;
        let steer = if x_ahead - ego.x > 1e-6 {
            let course = (y_ahead - ego.y).atan2(x_ahead - ego.x);
            // Slip β = atan(tan δ / 2), so δ = atan(2 tan β).
            (2.0 * (course - ego.heading).tan()).atan()
        } else {
            0.0
        };
        let controls = Controls {
            steer,
            accel: (desired - speed) / dt,
        };
        Ok((controls, DiscreteOption::Lk.index()))
    }
}

/// Episode metrics and ego trace for `policy` driving `ego_id` through the recording.
pub fn replay_episode(
    rec: &Recording,
    ego_id: i64,
    policy: &mut dyn Policy,
    vehicle: VehicleParams,
    reward: &crate::reward::RewardConfig,
    debounce: f64,
    min_ticks: usize,
) -> Result<(crate::trainer::EpisodeRecord, Vec<TrajectoryRow>)> {
    let mut env = ReplayEnv::new(rec, ego_id, vehicle, min_ticks)?;
    let record = crate::trainer::run_episode(&mut env, policy, reward, debounce, None)?;
    Ok((record, env.sv_log))
}

/// `count` ego vehicles drawn with replacement from the recording, seeded by `seed`.
pub fn pick_egos(rec: &Recording, count: usize, min_ticks: usize, seed: u64) -> Result<Vec<i64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rec.pick_ego(min_ticks, &mut rng)).collect()
}

/// Greedy replays of `policy` with each listed vehicle substituted in turn.
/// Returns the aggregate report and the replayed traffic log of every episode.
pub fn evaluate_replay<'a>(
    policy: &mut dyn FnMut() -> Box<dyn Policy + 'a>,
    rec: &Recording,
    egos: &[i64],
    run: &crate::config::RunConfig,
    min_ticks: usize,
) -> Result<(crate::trainer::EvalReport, Vec<Vec<TrajectoryRow>>)> {
    let mut metrics = Vec::with_capacity(egos.len());
    let mut traces = Vec::with_capacity(egos.len());
    let mut logs = Vec::with_capacity(egos.len());
    for &id in egos {
        let mut p = policy();
        let (record, log) = replay_episode(
            rec,
            id,
            p.as_mut(),
            run.env.vehicle,
            &run.reward,
            run.control.lane_change_debounce,
            min_ticks,
        )?;
        metrics.push(record.metrics);
        traces.push(record.trace);
        logs.push(log);
    }
    Ok((
        crate::trainer::EvalReport {
            aggregate: crate::metrics::aggregate(&metrics),
            episodes: metrics,
            traces,
        },
        logs,
    ))
}

/// One synthetic vehicle on the lower carriageway (or mirrored onto the upper one).
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureVehicle {
    pub id: i64,
    /// Lane index counted from the median.
    pub lane: usize,
    pub x0: f64,
    pub speed: f64,
    /// Constant acceleration; speed never drops below zero.
    pub accel: f64,
    pub start: f64,
    pub end: f64,
    /// `(start time, target lane, duration)` of a lane change.
    pub lane_change: Option<(f64, usize, f64)>,
    pub direction: Direction,
}

impl FixtureVehicle {
    pub fn new(id: i64, lane: usize, x0: f64, speed: f64, duration: f64) -> Self {
        Self {
            id,
            lane,
            x0,
            speed,
            accel: 0.0,
            start: 0.0,
            end: duration,
            lane_change: None,
            direction: Direction::Lower,
        }
    }

    /// Longitudinal position and speed after `t` seconds of motion.
    pub fn longitudinal(&self, t: f64) -> (f64, f64) {
        if self.accel < 0.0 {
            let t_stop = self.speed / -self.accel;
            if t >= t_stop {
                return (self.x0 + self.speed * t_stop / 2.0, 0.0);
            }
        }
        (self.x0 + self.speed * t + 0.5 * self.accel * t * t, self.speed + self.accel * t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub frame_rate: f64,
    pub lane_count: usize,
    pub lane_width: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub vehicles: Vec<FixtureVehicle>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            frame_rate: 25.0,
            lane_count: 3,
            lane_width: 4.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            vehicles: Vec::new(),
        }
    }
}

impl FixtureSpec {
    pub fn meta(&self) -> RecordingMeta {
        let w = self.lane_width;
        let n = self.lane_count;
        let upper: Vec<f64> = (0..=n).map(|k| 1.0 + k as f64 * w).collect();
        let lower_start = upper[n] + 1.0;
        RecordingMeta {
            frame_rate: self.frame_rate,
            upper_markings: upper,
            lower_markings: (0..=n).map(|k| lower_start + k as f64 * w).collect(),
        }
    }

    /// Constant-speed single lane of `n` vehicles spaced `gap` metres apart.
    pub fn platoon(n: usize, speed: f64, gap: f64, duration: f64) -> Self {
        let mut spec = Self::default();
        for k in 0..n {
            spec.vehicles.push(FixtureVehicle::new(k as i64 + 1, 1, 50.0 + k as f64 * gap, speed, duration));
        }
        spec
    }

    /// A vehicle in an adjacent lane cuts in ahead of vehicle 1.
    pub fn cut_in(duration: f64) -> Self {
        let mut spec = Self::default();
        spec.vehicles.push(FixtureVehicle::new(1, 1, 50.0, 12.0, duration));
        let mut cutter = FixtureVehicle::new(2, 2, 70.0, 11.0, duration);
        cutter.lane_change = Some((3.0, 1, 4.0));
        spec.vehicles.push(cutter);
        spec
    }

    /// Vehicles spread over all lanes with seeded speeds and spacing.
    pub fn free_flow(n: usize, duration: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::default();
        let mut next_x = vec![20.0; spec.lane_count];
        for k in 0..n {
            let lane = k % spec.lane_count;
            let speed = rng.random_range(10.0..14.0);
            next_x[lane] += rng.random_range(30.0..60.0);
            spec.vehicles.push(FixtureVehicle::new(k as i64 + 1, lane, next_x[lane], speed, duration));
        }
        spec
    }

    /// Vehicle 1 approaches a stopped vehicle 2 in the same lane from `gap` metres
    /// (bumper to bumper) at `speed`.
    pub fn stopped_leader(gap: f64, speed: f64, duration: f64) -> Self {
        let mut spec = Self::default();
        spec.vehicles.push(FixtureVehicle::new(1, 1, 50.0, speed, duration));
        spec.vehicles.push(FixtureVehicle::new(2, 1, 50.0 + gap + spec.vehicle_length, 0.0, duration));
        spec
    }

    /// HighD-format rows for every vehicle at every frame of its lifetime.
    pub fn records(&self) -> Vec<(i64, i64, f64, f64, f64, f64, i64)> {
        let meta = self.meta();
        let lane_center = |lane: usize, dir: Direction| -> f64 {
            let n = self.lane_count;
            match dir {
                Direction::Lower => meta.lower_markings[lane] + self.lane_width / 2.0,
                Direction::Upper => meta.upper_markings[n - lane] - self.lane_width / 2.0,
            }
        };
        let mut rows = Vec::new();
        for v in &self.vehicles {
            let f0 = (v.start * self.frame_rate).round() as i64;
            let f1 = (v.end * self.frame_rate).round() as i64;
            for frame in f0..=f1 {
                let t = frame as f64 / self.frame_rate - v.start;
                let (s, speed) = v.longitudinal(t);
                let (mut yc, mut vy) = (lane_center(v.lane, v.direction), 0.0);
                if let Some((tc, target, dur)) = v.lane_change {
                    let a = lane_center(v.lane, v.direction);
                    let b = lane_center(target, v.direction);
                    let u = ((t - tc) / dur).clamp(0.0, 1.0);
                    yc = a + (b - a) * (1.0 - (std::f64::consts::PI * u).cos()) / 2.0;
                    if (0.0..1.0).contains(&u) && u > 0.0 {
                        vy = (b - a) * std::f64::consts::PI * (std::f64::consts::PI * u).sin() / (2.0 * dur);
                    }
                }
                let (xc, vx) = match v.direction {
                    Direction::Lower => (s, speed),
                    Direction::Upper => (-s, -speed),
                };
                let (x_box, y_box) = (xc - self.vehicle_length / 2.0, yc - self.vehicle_width / 2.0);
                let lane_id = meta.lane_id_at(y_box + self.vehicle_width / 2.0);
                rows.push((frame, v.id, x_box, y_box, vx, vy, lane_id));
            }
        }
        rows.sort_by_key(|r| (r.0, r.1));
        rows
    }
}

/// Writes `tracks.csv` and `meta.txt` for `spec` into `dir`.
pub fn make_fixture(spec: &FixtureSpec, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(META_FILE), spec.meta().to_text())?;
    let mut w = csv::Writer::from_writer(std::fs::File::create(dir.join(TRACKS_FILE))?);
    w.write_record(REQUIRED_COLUMNS)?;
    for (frame, id, x, y, vx, vy, lane) in spec.records() {
        w.write_record([
            frame.to_string(),
            id.to_string(),
            x.to_string(),
            y.to_string(),
            spec.vehicle_length.to_string(),
            spec.vehicle_width.to_string(),
            vx.to_string(),
            vy.to_string(),
            lane.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
