//! Safety and general-performance rewards and their weighted combination.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub target_speed: f64,
    pub low_speed: f64,
    pub ttc_horizon: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    /// Objective weights `[safety, general]`.
    pub weights: Vec<f64>,
    /// Use `−|v − v_t|/v_t` for the speed term instead of the unsigned form.
    pub eff_negated: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            target_speed: 12.0,
            low_speed: 6.0,
            ttc_horizon: 5.0,
            max_steer: 0.6,
            max_accel: 3.0,
            weights: vec![0.4, 0.6],
            eff_negated: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::config(format!("objective weights must be non-negative and sum to 1, got {:?}", self.weights)));
        }
        if !(self.low_speed < self.target_speed) || !(self.low_speed > 0.0) {
            return Err(Error::config("low-speed threshold must be positive and below the target speed"));
        }
        if !(self.ttc_horizon > 0.0) || !(self.max_steer > 0.0) || !(self.max_accel > 0.0) {
            return Err(Error::config("reward normalizers must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardVector {
    pub r_safe: f64,
    pub r_gen: f64,
    pub r_eff: f64,
    pub r_comf: f64,
    pub r_int: f64,
}

impl RewardVector {
    pub fn as_objectives(&self) -> [f64; 2] {
        [self.r_safe, self.r_gen]
    }
}

pub fn r_safe(f_unsafe: bool, ttc: f64, t_max: f64) -> f64 {
    let penalty = if f_unsafe { -10.0 } else { 0.0 };
    penalty + 0.5 * (ttc / t_max).clamp(0.0, 1.0)
}

/// Efficiency, comfort and interaction terms. `sv_accels` holds observed
/// accelerations of the surrounding vehicles (zero for empty slots).
pub fn r_gen(speed: f64, steer: f64, accel: f64, sv_accels: &[f64], cfg: &RewardConfig) -> (f64, f64, f64) {
    let deviation = (speed - cfg.target_speed).abs() / cfg.target_speed;
    let speed_term = if cfg.eff_negated { -deviation } else { deviation };
    let r_eff = speed_term - ((cfg.low_speed - speed) / cfg.low_speed).max(0.0);
    let r_comf = -0.5 * steer.abs() / cfg.max_steer.abs() - 0.5 * accel.abs() / cfg.max_accel.abs();
    let r_int = -0.1 * sv_accels.iter().map(|a| a.abs()).sum::<f64>() / cfg.max_accel.abs();
    (r_eff, r_comf, r_int)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs<'a> {
    pub f_unsafe: bool,
    pub ttc: f64,
    pub speed: f64,
    pub steer: f64,
    pub accel: f64,
    pub sv_accels: &'a [f64],
}

pub fn reward_vector(inputs: &RewardInputs<'_>, cfg: &RewardConfig) -> RewardVector {
    let (r_eff, r_comf, r_int) = r_gen(inputs.speed, inputs.steer, inputs.accel, inputs.sv_accels, cfg);
    RewardVector {
        r_safe: r_safe(inputs.f_unsafe, inputs.ttc, cfg.ttc_horizon),
        r_gen: r_eff + r_comf + r_int,
        r_eff,
        r_comf,
        r_int,
    }
}

/// `Σ ω_i r_i` over `[r_safe, r_gen]`.
pub fn r_all(rv: &RewardVector, weights: &[f64]) -> f64 {
    weighted_sum(&rv.as_objectives(), weights)
}

pub fn weighted_sum(rewards: &[f64], weights: &[f64]) -> f64 {
    rewards.iter().zip(weights).map(|(r, w)| r * w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTraceRow {
    pub step: u64,
    pub reward: RewardVector,
    pub r_all: f64,
}

pub const REWARD_TRACE_HEADER: [&str; 7] = ["step", "r_safe", "r_eff", "r_comf", "r_int", "r_gen", "r_all"];

pub fn write_reward_trace<W: Write>(out: W, rows: &[RewardTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REWARD_TRACE_HEADER)?;
    for r in rows {
        let v = &r.reward;
        w.write_record([
            r.step.to_string(),
            v.r_safe.to_string(),
            v.r_eff.to_string(),
            v.r_comf.to_string(),
            v.r_int.to_string(),
            v.r_gen.to_string(),
            r.r_all.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
