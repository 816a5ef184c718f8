//! Ensemble-disagreement exploration.
//!
//! Continuous parameters are perturbed along the gradient of the weighted
//! ensemble variance; the discrete option is sampled from a softmax over
//! per-option variance while the state-level variance (scaled by ς) exceeds a
//! threshold, and chosen greedily otherwise.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::action::{legal_mask, DiscreteOption, HybridAction, CONTINUOUS_DIM, NUM_OPTIONS};
use crate::agent::{MoecAgent, CRITIC_INPUT_DIM};
use crate::env::{EgoObservation, OBS_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub candidates: usize,
    pub variance_threshold: f64,
    /// Final value of ς, reached at the end of training.
    pub weight_floor: f64,
    /// Random-exploration ablation: Gaussian std on normalized parameters at ς = 1.
    pub noise_scale: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            candidates: 10,
            variance_threshold: 0.05,
            weight_floor: 0.001,
            noise_scale: 0.5,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::config("candidate count must be >= 1"));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor <= 1.0) {
            return Err(Error::config("exploration weight floor must lie in (0, 1]"));
        }
        if !(self.variance_threshold >= 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::config("variance threshold and noise scale must be non-negative"));
        }
        Ok(())
    }
}

/// ς at `step` of `total`: exponential decay from 1 to `floor`, constant afterwards.
pub fn exploration_weight(step: u64, total: u64, floor: f64) -> f64 {
    if total == 0 || step >= total {
        return floor;
    }
    floor.powf(step as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    /// `[i][o]`: population variance over the ensemble of objective `i`.
    pub per_objective: Vec<[f64; NUM_OPTIONS]>,
    /// ω-weighted variance per option.
    pub per_option: [f64; NUM_OPTIONS],
    /// Mean of `per_option`.
    pub state: f64,
    /// Gradient of `Σ_o per_option[o]` with respect to the normalized parameters.
    pub gradient: [f64; CONTINUOUS_DIM],
}

fn input_matrix(obs: &[f64; OBS_DIM], params: &[[f64; CONTINUOUS_DIM]]) -> Array2<f64> {
    let mut x = Array2::zeros((params.len(), CRITIC_INPUT_DIM));
    for (mut row, p) in x.rows_mut().into_iter().zip(params) {
        for (d, v) in row.iter_mut().zip(MoecAgent::critic_input(obs, p)) {
            *d = v;
        }
    }
    x
}

/// Variances and their parameter gradient at `(s, params)`.
pub fn uncertainty(agent: &MoecAgent, obs: &[f64; OBS_DIM], params: &[f64; CONTINUOUS_DIM]) -> Result<UncertaintyReport> {
    let x = input_matrix(obs, std::slice::from_ref(params));
    let m = agent.ensemble_size();
    let mf = m as f64;
    let mut per_objective = Vec::with_capacity(agent.objectives());
    let mut per_option = [0.0; NUM_OPTIONS];
    let mut gradient = [0.0; CONTINUOUS_DIM];
    for i in 0..agent.objectives() {
        let w = agent.weights()[i];
        let tapes = (0..m)
            .map(|j| agent.critic(i, j).forward_batch(x.view()))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = [0.0; NUM_OPTIONS];
        for t in &tapes {
            for o in 0..NUM_OPTIONS {
                mean[o] += t.output[[0, o]] / mf;
            }
        }
        let mut var = [0.0; NUM_OPTIONS];
        for t in &tapes {
            for o in 0..NUM_OPTIONS {
                let d = t.output[[0, o]] - mean[o];
                var[o] += d * d / mf;
            }
        }
        for o in 0..NUM_OPTIONS {
            per_option[o] += w * var[o];
        }
        per_objective.push(var);
        if w == 0.0 || m == 1 {
            continue;
        }
        for (j, t) in tapes.iter().enumerate() {
            let mut g_out = Array2::zeros((1, NUM_OPTIONS));
            for o in 0..NUM_OPTIONS {
                g_out[[0, o]] = w * 2.0 * (t.output[[0, o]] - mean[o]) / mf;
            }
            let g = agent.critic(i, j).backward(t, g_out.view())?;
            for (k, gk) in gradient.iter_mut().enumerate() {
                *gk += g.input[[0, OBS_DIM + k]];
            }
        }
    }
    let state = per_option.iter().sum::<f64>() / NUM_OPTIONS as f64;
    Ok(UncertaintyReport {
        per_objective,
        per_option,
        state,
        gradient,
    })
}

/// ω-weighted per-option variance for each row of `params`.
pub fn option_variances(agent: &MoecAgent, obs: &[f64; OBS_DIM], params: &[[f64; CONTINUOUS_DIM]]) -> Result<Vec<[f64; NUM_OPTIONS]>> {
    let x = input_matrix(obs, params);
    let n = params.len();
    let m = agent.ensemble_size() as f64;
    let mut out = vec![[0.0; NUM_OPTIONS]; n];
    for i in 0..agent.objectives() {
        let w = agent.weights()[i];
        let outs = (0..agent.ensemble_size())
            .map(|j| agent.critic(i, j).predict_batch(x.view()))
            .collect::<Result<Vec<_>>>()?;
        for (r, acc) in out.iter_mut().enumerate() {
            for o in 0..NUM_OPTIONS {
                let mean = outs.iter().map(|q| q[[r, o]]).sum::<f64>() / m;
                let var = outs.iter().map(|q| (q[[r, o]] - mean).powi(2)).sum::<f64>() / m;
                acc[o] += w * var;
            }
        }
    }
    Ok(out)
}

/// `μ(s)` followed by `sat(μ(s) + (k·ς/K)·G)` for `k = 1..K`, saturated into `[-1, 1]`.
pub fn candidate_set<const D: usize>(mu: &[f64; D], gradient: &[f64; D], k_max: usize, weight: f64) -> Vec<[f64; D]> {
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(mu.map(|v| v.clamp(-1.0, 1.0)));
    for k in 1..=k_max {
        let step = k as f64 * weight / k_max as f64;
        out.push(std::array::from_fn(|d| (mu[d] + step * gradient[d]).clamp(-1.0, 1.0)));
    }
    out
}

/// For every option, adopt that option's slice from the candidate whose
/// variance for the option is largest. Ties go to the earliest candidate.
pub fn compose_by_variance(candidates: &[[f64; CONTINUOUS_DIM]], variances: &[[f64; NUM_OPTIONS]]) -> [f64; CONTINUOUS_DIM] {
    let mut chosen = candidates[0];
    for o in 0..NUM_OPTIONS {
        let mut best = 0;
        for (k, v) in variances.iter().enumerate().skip(1) {
            if v[o] > variances[best][o] {
                best = k;
            }
        }
        chosen[2 * o] = candidates[best][2 * o];
        chosen[2 * o + 1] = candidates[best][2 * o + 1];
    }
    chosen
}

pub fn select_continuous(agent: &MoecAgent, obs: &[f64; OBS_DIM], candidates: &[[f64; CONTINUOUS_DIM]]) -> Result<[f64; CONTINUOUS_DIM]> {
    if candidates.is_empty() {
        return Err(Error::config("empty candidate set"));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let variances = option_variances(agent, obs, candidates)?;
    Ok(compose_by_variance(candidates, &variances))
}

/// Softmax over `values`, computed after subtracting the maximum.
pub fn softmax<const D: usize>(values: &[f64; D]) -> [f64; D] {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = values.map(|v| (v - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

fn sample_index<R: Rng + ?Sized, const D: usize>(probs: &[f64; D], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    D - 1
}

/// Index of the largest legal value; ties go to the lowest index.
pub fn masked_argmax(values: &[f64; NUM_OPTIONS], mask: &[bool; NUM_OPTIONS]) -> usize {
    let mut best: Option<usize> = None;
    for o in 0..NUM_OPTIONS {
        if mask[o] && best.is_none_or(|b| values[o] > values[b]) {
            best = Some(o);
        }
    }
    best.unwrap_or(DiscreteOption::Lk.index())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Greedy,
    Sampled,
    Random,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Greedy => "greedy",
            Branch::Sampled => "sampled",
            Branch::Random => "random",
        }
    }
}

pub fn select_discrete<R: Rng + ?Sized>(
    q_all: &[f64; NUM_OPTIONS],
    report: &UncertaintyReport,
    mask: &[bool; NUM_OPTIONS],
    weight: f64,
    cfg: &ExploreConfig,
    rng: &mut R,
) -> (usize, Branch) {
    if weight * report.state > cfg.variance_threshold {
        (sample_index(&softmax(&report.per_option), rng), Branch::Sampled)
    } else {
        (masked_argmax(q_all, mask), Branch::Greedy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Variance-guided exploration.
    Explore,
    /// Gaussian parameter noise and ε-greedy options, both scaled by ς.
    Random,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: HybridAction,
    /// Normalized parameters for every option, as stored for learning.
    pub params: [f64; CONTINUOUS_DIM],
    pub branch: Branch,
    pub report: Option<UncertaintyReport>,
}

fn to_action(obs: &EgoObservation, agent: &MoecAgent, option: usize, params: &[f64; CONTINUOUS_DIM]) -> HybridAction {
    let b = agent.bounds(obs);
    HybridAction {
        option: DiscreteOption::from_index(option).expect("option index below NUM_OPTIONS"),
        length: b.length_from_unit(params[2 * option]),
        accel: b.accel_from_unit(params[2 * option + 1]),
    }
}

pub fn act<R: Rng + ?Sized>(
    agent: &MoecAgent,
    obs: &EgoObservation,
    lane_count: usize,
    weight: f64,
    cfg: &ExploreConfig,
    mode: ActMode,
    rng: &mut R,
) -> Result<Decision> {
    let s = obs.to_array();
    let mask = legal_mask(obs.lane_id(), lane_count);
    let mu = agent.actor_forward(&s);
    match mode {
        ActMode::Greedy => {
            let option = masked_argmax(&agent.q_all(&s, &mu), &mask);
            Ok(Decision {
                action: to_action(obs, agent, option, &mu),
                params: mu,
                branch: Branch::Greedy,
                report: None,
            })
        }
        ActMode::Random => {
            let mut params = mu;
            let std = cfg.noise_scale * weight;
            if std > 0.0 {
                let noise = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                for p in params.iter_mut() {
                    *p = (*p + noise.sample(rng)).clamp(-1.0, 1.0);
                }
            }
            let (option, branch) = if rng.random::<f64>() < weight {
                let legal: Vec<usize> = (0..NUM_OPTIONS).filter(|o| mask[*o]).collect();
                (legal[rng.random_range(0..legal.len())], Branch::Random)
            } else {
                (masked_argmax(&agent.q_all(&s, &params), &mask), Branch::Greedy)
            };
            Ok(Decision {
                action: to_action(obs, agent, option, &params),
                params,
                branch,
                report: None,
            })
        }
        ActMode::Explore => {
            let first = uncertainty(agent, &s, &mu)?;
            let candidates = candidate_set(&mu, &first.gradient, cfg.candidates, weight);
            let params = select_continuous(agent, &s, &candidates)?;
            let report = if params == mu { first } else { uncertainty(agent, &s, &params)? };
            let (option, branch) = select_discrete(&agent.q_all(&s, &params), &report, &mask, weight, cfg, rng);
            Ok(Decision {
                action: to_action(obs, agent, option, &params),
                params,
                branch,
                report: Some(report),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTraceRow {
    pub step: u64,
    pub per_option: [f64; NUM_OPTIONS],
    pub state: f64,
    pub branch: Branch,
}

pub const UNCERTAINTY_TRACE_HEADER: [&str; 6] = ["step", "var_llc", "var_lk", "var_rlc", "var_state", "branch"];

pub fn write_uncertainty_trace<W: Write>(out: W, rows: &[UncertaintyTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(UNCERTAINTY_TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.per_option[0].to_string(),
            r.per_option[1].to_string(),
            r.per_option[2].to_string(),
            r.state.to_string(),
            r.branch.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
