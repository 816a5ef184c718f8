//! Hybrid parameterized actions: a discrete manoeuvre plus a path length and
//! an acceleration command, turned into steering through a quintic guiding
//! path and a Stanley tracker (or a PD lane-centre controller).

use std::io::Write;

use crate::env::{Controls, EgoObservation, RoadSpec, VehicleParams, VehicleState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiscreteOption {
    /// Left lane change.
    Llc,
    /// Lane keeping.
    Lk,
    /// Right lane change.
    Rlc,
}

pub const NUM_OPTIONS: usize = 3;
/// Continuous parameters per option: path length and acceleration.
pub const PARAMS_PER_OPTION: usize = 2;
pub const CONTINUOUS_DIM: usize = NUM_OPTIONS * PARAMS_PER_OPTION;

impl DiscreteOption {
    pub const ALL: [DiscreteOption; NUM_OPTIONS] = [Self::Llc, Self::Lk, Self::Rlc];

    pub fn index(self) -> usize {
        match self {
            Self::Llc => 0,
            Self::Lk => 1,
            Self::Rlc => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lateral endpoint offset relative to the current lane centre.
    pub fn lateral_offset(self, lane_width: f64) -> f64 {
        match self {
            Self::Llc => -lane_width,
            Self::Lk => 0.0,
            Self::Rlc => lane_width,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Llc => "LLC",
            Self::Lk => "LK",
            Self::Rlc => "RLC",
        }
    }
}

/// Lane changes off the road edge are executed as lane keeping.
/// Returns the executed option and whether it was masked.
pub fn legalize(option: DiscreteOption, lane: usize, lane_count: usize) -> (DiscreteOption, bool) {
    match option {
        DiscreteOption::Llc if lane == 0 => (DiscreteOption::Lk, true),
        DiscreteOption::Rlc if lane + 1 >= lane_count => (DiscreteOption::Lk, true),
        o => (o, false),
    }
}

pub fn legal_mask(lane: usize, lane_count: usize) -> [bool; NUM_OPTIONS] {
    DiscreteOption::ALL.map(|o| !legalize(o, lane, lane_count).1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub lane_width: f64,
    pub min_turn_radius: f64,
    pub max_brake: f64,
    pub path_length_cap: f64,
    pub accel_limit: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            lane_width: 4.0,
            min_turn_radius: 6.4,
            max_brake: 3.0,
            path_length_cap: 150.0,
            accel_limit: 3.0,
        }
    }
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_turn_radius > self.lane_width / 4.0) {
            return Err(Error::config("minimum turning radius must exceed a quarter lane width"));
        }
        if !(self.max_brake > 0.0) || !(self.accel_limit > 0.0) || !(self.path_length_cap > 0.0) {
            return Err(Error::config("braking limit, acceleration limit and path cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub l_min: f64,
    pub l_max: f64,
    pub acc_min: f64,
    pub acc_max: f64,
}

impl ActionBounds {
    /// Maps a normalized coordinate in `[-1, 1]` onto `[lo, hi]`.
    fn map(u: f64, lo: f64, hi: f64) -> f64 {
        lo + (u.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
    }

    fn unmap(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn length_from_unit(&self, u: f64) -> f64 {
        Self::map(u, self.l_min, self.l_max)
    }

    pub fn accel_from_unit(&self, u: f64) -> f64 {
        Self::map(u, self.acc_min, self.acc_max)
    }

    pub fn length_to_unit(&self, l: f64) -> f64 {
        Self::unmap(l, self.l_min, self.l_max)
    }

    pub fn accel_to_unit(&self, a: f64) -> f64 {
        Self::unmap(a, self.acc_min, self.acc_max)
    }

    pub fn contains(&self, l: f64, acc: f64) -> bool {
        (self.l_min..=self.l_max).contains(&l) && (self.acc_min..=self.acc_max).contains(&acc)
    }
}

/// Path-length range from the kinematic turning limit and braking distance,
/// acceleration range fixed at `±accel_limit`.
pub fn bounds_for_speed(v_x: f64, cfg: &BoundsConfig) -> ActionBounds {
    let w = cfg.lane_width;
    let turning = (4.0 * cfg.min_turn_radius * w - w * w).sqrt();
    let braking = v_x * v_x / (2.0 * cfg.max_brake);
    let l_min = turning.min(braking).max(0.0);
    let l_max = (v_x.abs() + w).exp().min(cfg.path_length_cap).max(l_min);
    ActionBounds {
        l_min,
        l_max,
        acc_min: -cfg.accel_limit,
        acc_max: cfg.accel_limit,
    }
}

pub fn bounds_for(state: &EgoObservation, cfg: &BoundsConfig) -> ActionBounds {
    bounds_for_speed(state.ego_vx(), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridAction {
    pub option: DiscreteOption,
    pub length: f64,
    pub accel: f64,
}

/// Shortest guiding path; shorter requests are clamped to this.
pub const MIN_PATH_LENGTH: f64 = 1.0;

/// Quintic `y(u) = Σ γ_m u^m` with `u = x − x_start` on `[0, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidingPath {
    pub coeffs: [f64; 6],
    pub x_start: f64,
    pub length: f64,
    pub end: (f64, f64),
    pub points: Vec<(f64, f64)>,
}

impl GuidingPath {
    fn poly(&self, u: f64) -> (f64, f64, f64) {
        let c = &self.coeffs;
        let y = ((((c[5] * u + c[4]) * u + c[3]) * u + c[2]) * u + c[1]) * u + c[0];
        let dy = (((5.0 * c[5] * u + 4.0 * c[4]) * u + 3.0 * c[3]) * u + 2.0 * c[2]) * u + c[1];
        let ddy = ((20.0 * c[5] * u + 12.0 * c[4]) * u + 6.0 * c[3]) * u + 2.0 * c[2];
        (y, dy, ddy)
    }

    /// Position, slope and second derivative at road coordinate `x`. Outside
    /// the polynomial span the path continues along its end tangents.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let u = x - self.x_start;
        if u < 0.0 {
            let (y0, s0, _) = self.poly(0.0);
            (y0 + s0 * u, s0, 0.0)
        } else if u > self.length {
            let (y1, s1, _) = self.poly(self.length);
            (y1 + s1 * (u - self.length), s1, 0.0)
        } else {
            self.poly(u)
        }
    }

    pub fn y_at(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        let (_, dy, ddy) = self.eval(x);
        ddy / (1.0 + dy * dy).powf(1.5)
    }
}

/// Quintic with position and slope given at both ends and zero second
/// derivative at both ends.
pub fn quintic_coefficients(y0: f64, slope0: f64, y1: f64, slope1: f64, length: f64) -> [f64; 6] {
    let t = length;
    let h = y1 - y0;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        y0,
        slope0,
        0.0,
        (20.0 * h - (8.0 * slope1 + 12.0 * slope0) * t) / (2.0 * t3),
        (-30.0 * h + (14.0 * slope1 + 16.0 * slope0) * t) / (2.0 * t3 * t),
        (12.0 * h - 6.0 * (slope1 + slope0) * t) / (2.0 * t3 * t2),
    ]
}

/// Guiding path from the ego pose to the lane-centre target selected by `option`,
/// `length` metres ahead, sampled at `horizon` evenly spaced points.
pub fn build_path(ev: &VehicleState, option: DiscreteOption, length: f64, road: &RoadSpec, horizon: usize) -> GuidingPath {
    let length = if length.is_finite() && length >= MIN_PATH_LENGTH {
        length
    } else {
        log::warn!("guiding path length {length} clamped to {MIN_PATH_LENGTH} m");
        MIN_PATH_LENGTH
    };
    let y_end = road.lane_center(ev.lane_id) + option.lateral_offset(road.lane_width);
    let coeffs = quintic_coefficients(ev.y, ev.heading.tan(), y_end, 0.0, length);
    let mut path = GuidingPath {
        coeffs,
        x_start: ev.x,
        length,
        end: (ev.x + length, y_end),
        points: Vec::with_capacity(horizon),
    };
    path.points = (1..=horizon)
        .map(|h| {
            let x = ev.x + length * h as f64 / horizon as f64;
            (x, path.y_at(x))
        })
        .collect();
    path
}

pub fn write_path_csv<W: Write>(out: W, path: &GuidingPath) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["x", "y"])?;
    for (x, y) in &path.points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    let mut coef = vec!["coefficients".to_string()];
    coef.extend(path.coeffs.iter().map(|c| c.to_string()));
    w.write_record(&coef)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanleyGains {
    pub k_e: f64,
    pub v_soft: f64,
}

impl Default for StanleyGains {
    fn default() -> Self {
        Self { k_e: 1.0, v_soft: 1.0 }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Stanley lateral control evaluated at the front axle.
pub fn stanley_steer(ev: &VehicleState, path: &GuidingPath, gains: &StanleyGains, vehicle: &VehicleParams) -> f64 {
    let half = vehicle.wheelbase / 2.0;
    let (s, c) = ev.heading.sin_cos();
    let fx = ev.x + half * c;
    let fy = ev.y + half * s;
    let (py, slope, _) = path.eval(fx);
    let cross_track = py - fy;
    let heading_error = wrap_angle(slope.atan() - ev.heading);
    let steer = heading_error + (gains.k_e * cross_track).atan2(ev.vx.max(0.0) + gains.v_soft);
    steer.clamp(-vehicle.max_steer, vehicle.max_steer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub k_p: f64,
    pub k_d: f64,
    pub k_heading: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            k_p: 0.2,
            k_d: 0.2,
            k_heading: 0.5,
        }
    }
}

/// PD on lateral offset to `target_y` plus a heading term. The offset rate is
/// taken from the heading rather than the reported `v_y`, which carries the
/// previous steer through the slip angle.
pub fn pid_steer(ev: &VehicleState, target_y: f64, gains: &PidGains, vehicle: &VehicleParams) -> f64 {
    let error = target_y - ev.y;
    let error_rate = -ev.vx.hypot(ev.vy) * ev.heading.sin();
    let steer = gains.k_p * error + gains.k_d * error_rate - gains.k_heading * ev.heading;
    steer.clamp(-vehicle.max_steer, vehicle.max_steer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LateralMode {
    GuidingPath { gains: StanleyGains, horizon: usize },
    LaneCentrePid { gains: PidGains },
}

impl Default for LateralMode {
    fn default() -> Self {
        LateralMode::GuidingPath {
            gains: StanleyGains::default(),
            horizon: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveCommand {
    pub controls: Controls,
    pub executed: DiscreteOption,
    pub masked: bool,
    pub path: Option<GuidingPath>,
}

/// Turns a hybrid action into steering and acceleration for the current pose.
pub fn drive(action: &HybridAction, ev: &VehicleState, road: &RoadSpec, vehicle: &VehicleParams, mode: &LateralMode) -> DriveCommand {
    let (executed, masked) = legalize(action.option, ev.lane_id, road.lane_count);
    let (steer, path) = match mode {
        LateralMode::GuidingPath { gains, horizon } => {
            let path = build_path(ev, executed, action.length, road, *horizon);
            (stanley_steer(ev, &path, gains, vehicle), Some(path))
        }
        LateralMode::LaneCentrePid { gains } => {
            let target = road.lane_center(ev.lane_id) + executed.lateral_offset(road.lane_width);
            (pid_steer(ev, target, gains, vehicle), None)
        }
    };
    DriveCommand {
        controls: Controls {
            steer,
            accel: action.accel,
        },
        executed,
        masked,
        path,
    }
}
