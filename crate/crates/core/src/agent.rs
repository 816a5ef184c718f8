//! Multi-objective ensemble-critic learner.
//!
//! One deterministic actor emits continuous parameters for every discrete
//! option at once. `N` ensembles of `M` critics each score a state together
//! with the full continuous-parameter vector and emit one value per option.
//! Continuous parameters are handled in normalized form (`[-1, 1]` per
//! coordinate, the actor's `tanh` output); [`ActionBounds`] maps them to metres
//! and m/s² for execution.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action::{bounds_for, ActionBounds, BoundsConfig, CONTINUOUS_DIM, NUM_OPTIONS};
use crate::config::parse_key_values;
use crate::env::{EgoObservation, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{soft_update, AdamState, Mlp, MlpSpec};

pub const CRITIC_INPUT_DIM: usize = OBS_DIM + CONTINUOUS_DIM;

/// Fixed per-feature scale applied to observations before they enter a network.
const FEATURE_SCALE: [f64; 12] = [
    // ego: lane, x, y, heading, v_x, v_y
    2.0, 1000.0, 12.0, 0.5, 20.0, 5.0, //
    // neighbour: present, Δx, Δy, heading, Δv_x, Δv_y
    1.0, 100.0, 8.0, 0.5, 10.0, 5.0,
];

pub fn features(obs: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
    let mut out = [0.0; OBS_DIM];
    for (k, (o, v)) in out.iter_mut().zip(obs).enumerate() {
        let scale = if k < 6 { FEATURE_SCALE[k] } else { FEATURE_SCALE[6 + (k - 6) % 6] };
        *o = v / scale;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub objectives: usize,
    pub ensemble_size: usize,
    pub weights: Vec<f64>,
    pub loss_weights: [f64; 4],
    pub gamma: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub bounds: BoundsConfig,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            objectives: 2,
            ensemble_size: 6,
            weights: vec![0.4, 0.6],
            loss_weights: [0.5, 0.2, 0.2, 0.1],
            gamma: 0.9,
            critic_lr: 0.01,
            actor_lr: 0.001,
            tau: 0.005,
            hidden: vec![256, 256, 256],
            bounds: BoundsConfig::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objectives == 0 || self.ensemble_size == 0 {
            return Err(Error::config("objective count and ensemble size must be >= 1"));
        }
        if self.weights.len() != self.objectives {
            return Err(Error::config(format!(
                "{} objective weights for {} objectives",
                self.weights.len(),
                self.objectives
            )));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::config("objective weights must be non-negative and sum to 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("discount must lie in (0, 1)"));
        }
        if !(self.critic_lr > self.actor_lr && self.actor_lr > 0.0) {
            return Err(Error::config("critic step size must exceed the actor step size (both positive)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("soft update rate must lie in [0, 1]"));
        }
        self.bounds.validate()
    }

    pub fn actor_spec(&self) -> MlpSpec {
        MlpSpec::new(OBS_DIM, self.hidden.clone(), CONTINUOUS_DIM)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        MlpSpec::new(CRITIC_INPUT_DIM, self.hidden.clone(), NUM_OPTIONS)
    }
}

/// One stored interaction. `params` holds the normalized continuous vector
/// for all options as fed to the critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub option: usize,
    pub params: [f64; CONTINUOUS_DIM],
    pub rewards: Vec<f64>,
    pub next_state: [f64; OBS_DIM],
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdTargets {
    /// `[i][j][b]`
    pub per_critic: Vec<Vec<Vec<f64>>>,
    /// `[i][b]`
    pub per_ensemble: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
}

/// Batch-mean loss terms `[own, ensemble, overall, convergence]` and their λ-weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLoss {
    pub terms: [f64; 4],
    pub total: f64,
}

/// Weighted sum of the four critic loss terms.
pub fn combined_critic_loss(terms: &[f64; 4], lambda: &[f64; 4]) -> f64 {
    terms.iter().zip(lambda).map(|(t, l)| t * l).sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateDiagnostics {
    pub critic_loss_mean: f64,
    pub actor_loss: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub skipped: usize,
}

/// Online critic predictions for a batch, kept for the backward pass.
struct CriticEval {
    tapes: Vec<Vec<crate::nn::Tape>>,
    /// `[i][j][b]`: value of the stored option.
    at_option: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct MoecAgent {
    cfg: AgentConfig,
    actor: Mlp,
    actor_target: Mlp,
    actor_opt: AdamState,
    critics: Vec<Vec<Mlp>>,
    critic_targets: Vec<Vec<Mlp>>,
    critic_opts: Vec<Vec<AdamState>>,
    updates: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl MoecAgent {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let actor = Mlp::new(cfg.actor_spec(), &mut rng)?;
        let mut critics = Vec::with_capacity(cfg.objectives);
        for _ in 0..cfg.objectives {
            let mut ensemble = Vec::with_capacity(cfg.ensemble_size);
            for _ in 0..cfg.ensemble_size {
                ensemble.push(Mlp::new(cfg.critic_spec(), &mut rng)?);
            }
            critics.push(ensemble);
        }
        Ok(Self::assemble(cfg, actor, critics))
    }

    fn assemble(cfg: AgentConfig, actor: Mlp, critics: Vec<Vec<Mlp>>) -> Self {
        let actor_opt = AdamState::new(actor.params().len(), cfg.actor_lr);
        let critic_opts = critics
            .iter()
            .map(|e| e.iter().map(|c| AdamState::new(c.params().len(), cfg.critic_lr)).collect())
            .collect();
        Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            actor_opt,
            critics,
            critic_opts,
            cfg,
            updates: 0,
        }
    }

    /// Builds an agent from explicit networks (targets start as copies).
    pub fn from_networks(cfg: AgentConfig, actor: Mlp, critics: Vec<Vec<Mlp>>) -> Result<Self> {
        cfg.validate()?;
        if critics.len() != cfg.objectives || critics.iter().any(|e| e.len() != cfg.ensemble_size) {
            return Err(Error::config("critic grid does not match objectives × ensemble size"));
        }
        if actor.spec() != &cfg.actor_spec() || critics.iter().flatten().any(|c| c.spec() != &cfg.critic_spec()) {
            return Err(Error::config("network shapes do not match the agent configuration"));
        }
        Ok(Self::assemble(cfg, actor, critics))
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn objectives(&self) -> usize {
        self.cfg.objectives
    }

    pub fn ensemble_size(&self) -> usize {
        self.cfg.ensemble_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.cfg.weights
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self, i: usize, j: usize) -> &Mlp {
        &self.critics[i][j]
    }

    pub fn critic_mut(&mut self, i: usize, j: usize) -> &mut Mlp {
        &mut self.critics[i][j]
    }

    pub fn critic_target(&self, i: usize, j: usize) -> &Mlp {
        &self.critic_targets[i][j]
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn bounds(&self, obs: &EgoObservation) -> ActionBounds {
        bounds_for(obs, &self.cfg.bounds)
    }

    /// Normalized continuous parameters `[l_LLC, acc_LLC, l_LK, acc_LK, l_RLC, acc_RLC]`.
    pub fn actor_forward(&self, obs: &[f64; OBS_DIM]) -> [f64; CONTINUOUS_DIM] {
        let z = self.actor.forward(&features(obs)).expect("actor input width is fixed");
        let mut out = [0.0; CONTINUOUS_DIM];
        for (o, v) in out.iter_mut().zip(z) {
            *o = v.tanh();
        }
        out
    }

    /// Actor output mapped into physical `(length, accel)` per option.
    pub fn actor_forward_physical(&self, obs: &EgoObservation) -> [(f64, f64); NUM_OPTIONS] {
        let u = self.actor_forward(&obs.to_array());
        let b = self.bounds(obs);
        std::array::from_fn(|o| (b.length_from_unit(u[2 * o]), b.accel_from_unit(u[2 * o + 1])))
    }

    pub fn critic_input(obs: &[f64; OBS_DIM], params: &[f64; CONTINUOUS_DIM]) -> [f64; CRITIC_INPUT_DIM] {
        let mut x = [0.0; CRITIC_INPUT_DIM];
        x[..OBS_DIM].copy_from_slice(&features(obs));
        x[OBS_DIM..].copy_from_slice(params);
        x
    }

    pub fn critic_forward(&self, i: usize, j: usize, obs: &[f64; OBS_DIM], params: &[f64; CONTINUOUS_DIM]) -> [f64; NUM_OPTIONS] {
        let y = self.critics[i][j]
            .forward(&Self::critic_input(obs, params))
            .expect("critic input width is fixed");
        [y[0], y[1], y[2]]
    }

    /// Ensemble mean of objective `i`, per option.
    pub fn q_bar(&self, i: usize, obs: &[f64; OBS_DIM], params: &[f64; CONTINUOUS_DIM]) -> [f64; NUM_OPTIONS] {
        let m = self.cfg.ensemble_size as f64;
        let mut acc = [0.0; NUM_OPTIONS];
        for j in 0..self.cfg.ensemble_size {
            let q = self.critic_forward(i, j, obs, params);
            for o in 0..NUM_OPTIONS {
                acc[o] += q[o];
            }
        }
        acc.map(|v| v / m)
    }

    /// `Σ_i ω_i q̄_i`, per option.
    pub fn q_all(&self, obs: &[f64; OBS_DIM], params: &[f64; CONTINUOUS_DIM]) -> [f64; NUM_OPTIONS] {
        let mut acc = [0.0; NUM_OPTIONS];
        for i in 0..self.cfg.objectives {
            let qb = self.q_bar(i, obs, params);
            for o in 0..NUM_OPTIONS {
                acc[o] += self.cfg.weights[i] * qb[o];
            }
        }
        acc
    }

    fn state_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f64; OBS_DIM]>) -> Array2<f64> {
        let n = rows.len();
        let mut m = Array2::zeros((n, OBS_DIM));
        for (mut row, s) in m.rows_mut().into_iter().zip(rows) {
            for (dst, v) in row.iter_mut().zip(features(s)) {
                *dst = v;
            }
        }
        m
    }

    fn concat(states: ArrayView2<'_, f64>, params: ArrayView2<'_, f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[states, params]).expect("matching batch sizes")
    }

    fn check_batch(&self, batch: &[&Transition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        if let Some(t) = batch.iter().find(|t| t.rewards.len() != self.cfg.objectives || t.option >= NUM_OPTIONS) {
            return Err(Error::Dimension {
                context: "transition rewards",
                expected: self.cfg.objectives,
                got: t.rewards.len(),
            });
        }
        Ok(())
    }

    /// Bootstrapped targets from the target networks. Terminal transitions keep only the reward.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<TdTargets> {
        self.check_batch(batch)?;
        let n = self.cfg.objectives;
        let m = self.cfg.ensemble_size;
        let b = batch.len();
        let next = Self::state_matrix(batch.iter().map(|t| &t.next_state));
        let next_params = self.actor_target.predict_batch(next.view())?.mapv(f64::tanh);
        let input = Self::concat(next.view(), next_params.view());

        let mut per_critic = vec![vec![vec![0.0; b]; m]; n];
        let mut per_ensemble = vec![vec![0.0; b]; n];
        let mut q_all_next = Array2::<f64>::zeros((b, NUM_OPTIONS));
        let max_row = |q: &Array2<f64>, r: usize| q.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            let mut mean = Array2::<f64>::zeros((b, NUM_OPTIONS));
            for j in 0..m {
                let q = self.critic_targets[i][j].predict_batch(input.view())?;
                for (k, t) in batch.iter().enumerate() {
                    let boot = if t.done { 0.0 } else { self.cfg.gamma * max_row(&q, k) };
                    per_critic[i][j][k] = t.rewards[i] + boot;
                }
                mean += &q;
            }
            mean /= m as f64;
            for (k, t) in batch.iter().enumerate() {
                let boot = if t.done { 0.0 } else { self.cfg.gamma * max_row(&mean, k) };
                per_ensemble[i][k] = t.rewards[i] + boot;
            }
            q_all_next.scaled_add(self.cfg.weights[i], &mean);
        }
        let overall = batch
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let r_all: f64 = t.rewards.iter().zip(&self.cfg.weights).map(|(r, w)| r * w).sum();
                let boot = if t.done { 0.0 } else { self.cfg.gamma * max_row(&q_all_next, k) };
                r_all + boot
            })
            .collect();
        Ok(TdTargets {
            per_critic,
            per_ensemble,
            overall,
        })
    }

    fn evaluate_critics(&self, batch: &[&Transition]) -> Result<CriticEval> {
        let states = Self::state_matrix(batch.iter().map(|t| &t.state));
        let mut params = Array2::<f64>::zeros((batch.len(), CONTINUOUS_DIM));
        for (mut row, t) in params.rows_mut().into_iter().zip(batch) {
            for (d, v) in row.iter_mut().zip(t.params) {
                *d = v;
            }
        }
        let input = Self::concat(states.view(), params.view());
        let mut tapes = Vec::with_capacity(self.cfg.objectives);
        let mut at_option = Vec::with_capacity(self.cfg.objectives);
        for ensemble in &self.critics {
            let mut et = Vec::with_capacity(ensemble.len());
            let mut ea = Vec::with_capacity(ensemble.len());
            for critic in ensemble {
                let tape = critic.forward_batch(input.view())?;
                ea.push(batch.iter().enumerate().map(|(k, t)| tape.output[[k, t.option]]).collect());
                et.push(tape);
            }
            tapes.push(et);
            at_option.push(ea);
        }
        Ok(CriticEval { tapes, at_option })
    }

    /// Loss of critic `(i, j)` and the gradient of that loss w.r.t. its output
    /// matrix. Other critics' predictions enter as constants.
    fn critic_loss_terms(
        &self,
        i: usize,
        j: usize,
        batch: &[&Transition],
        targets: &TdTargets,
        eval: &CriticEval,
    ) -> (CriticLoss, Array2<f64>) {
        let m = self.cfg.ensemble_size as f64;
        let lambda = self.cfg.loss_weights;
        let b = batch.len();
        let bf = b as f64;
        let mut terms = [0.0; 4];
        let mut out_grad = Array2::<f64>::zeros((b, NUM_OPTIONS));
        for (k, t) in batch.iter().enumerate() {
            let q = eval.at_option[i][j][k];
            let q_bar_of = |e: usize| eval.at_option[e].iter().map(|c| c[k]).sum::<f64>() / m;
            let q_bar = q_bar_of(i);
            let q_all: f64 = (0..self.cfg.objectives).map(|e| self.cfg.weights[e] * q_bar_of(e)).sum();
            let r_own = targets.per_critic[i][j][k] - q;
            let r_ens = targets.per_ensemble[i][k] - q_bar;
            let r_all = targets.overall[k] - q_all;
            let r_conv = q - q_bar;
            terms[0] += 0.5 * r_own * r_own / bf;
            terms[1] += 0.5 * r_ens * r_ens / bf;
            terms[2] += 0.5 * r_all * r_all / bf;
            terms[3] += 0.5 * r_conv * r_conv / bf;
            let g = -lambda[0] * r_own - lambda[1] * r_ens / m - lambda[2] * r_all * self.cfg.weights[i] / m
                + lambda[3] * r_conv * (1.0 - 1.0 / m);
            out_grad[[k, t.option]] = g / bf;
        }
        (
            CriticLoss {
                terms,
                total: combined_critic_loss(&terms, &lambda),
            },
            out_grad,
        )
    }

    /// Loss of critic `(i, j)` on `batch` and its parameter gradient.
    pub fn critic_loss(&self, i: usize, j: usize, batch: &[&Transition], targets: &TdTargets) -> Result<(CriticLoss, Vec<f64>)> {
        self.check_batch(batch)?;
        let eval = self.evaluate_critics(batch)?;
        let (loss, out_grad) = self.critic_loss_terms(i, j, batch, targets, &eval);
        let grads = self.critics[i][j].backward(&eval.tapes[i][j], out_grad.view())?;
        Ok((loss, grads.params))
    }

    /// `−(1/M) Σ_i ω_i Σ_j Σ_o Q_ij(s, o, μ(s))`, batch-averaged, and its actor gradient.
    pub fn actor_loss(&self, batch: &[&Transition]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let states = Self::state_matrix(batch.iter().map(|t| &t.state));
        let actor_tape = self.actor.forward_batch(states.view())?;
        let u = actor_tape.output.mapv(f64::tanh);
        let input = Self::concat(states.view(), u.view());
        let b = batch.len() as f64;
        let m = self.cfg.ensemble_size as f64;
        let mut loss = 0.0;
        let mut d_u = Array2::<f64>::zeros((batch.len(), CONTINUOUS_DIM));
        for (i, ensemble) in self.critics.iter().enumerate() {
            let coef = -self.cfg.weights[i] / m;
            if coef == 0.0 {
                continue;
            }
            let out_grad = Array2::from_elem((batch.len(), NUM_OPTIONS), coef / b);
            for critic in ensemble {
                let tape = critic.forward_batch(input.view())?;
                loss += coef * tape.output.sum() / b;
                let g = critic.backward(&tape, out_grad.view())?;
                d_u += &g.input.slice(s![.., OBS_DIM..]);
            }
        }
        // u = tanh(z)
        let d_z = d_u * &u.mapv(|v| 1.0 - v * v);
        let grads = self.actor.backward(&actor_tape, d_z.view())?;
        Ok((loss, grads.params))
    }

    /// One learning step: every critic descends its combined loss, then the
    /// actor descends its loss against the updated critics, then all target
    /// networks are soft-updated.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateDiagnostics> {
        self.check_batch(batch)?;
        let targets = self.td_targets(batch)?;
        let eval = self.evaluate_critics(batch)?;
        let mut diag = UpdateDiagnostics::default();
        let mut losses = 0.0;
        let mut grad_norms = 0.0;
        let mut counted = 0usize;
        let mut critic_grads = Vec::with_capacity(self.cfg.objectives * self.cfg.ensemble_size);
        for i in 0..self.cfg.objectives {
            for j in 0..self.cfg.ensemble_size {
                let (loss, out_grad) = self.critic_loss_terms(i, j, batch, &targets, &eval);
                if !loss.total.is_finite() {
                    log::warn!("critic ({i}, {j}) loss is non-finite; update skipped");
                    diag.skipped += 1;
                    critic_grads.push(None);
                    continue;
                }
                let g = self.critics[i][j].backward(&eval.tapes[i][j], out_grad.view())?;
                losses += loss.total;
                grad_norms += norm(&g.params);
                counted += 1;
                critic_grads.push(Some(g.params));
            }
        }
        drop(eval);
        for (idx, g) in critic_grads.into_iter().enumerate() {
            let (i, j) = (idx / self.cfg.ensemble_size, idx % self.cfg.ensemble_size);
            if let Some(g) = g {
                if let Err(e) = self.critic_opts[i][j].step(self.critics[i][j].params_mut(), &g) {
                    log::warn!("critic ({i}, {j}) update rejected: {e}");
                    diag.skipped += 1;
                }
            }
        }
        if counted > 0 {
            diag.critic_loss_mean = losses / counted as f64;
            diag.critic_grad_norm = grad_norms / counted as f64;
        }

        let (actor_loss, actor_grad) = self.actor_loss(batch)?;
        diag.actor_loss = actor_loss;
        diag.actor_grad_norm = norm(&actor_grad);
        if actor_loss.is_finite() {
            if let Err(e) = self.actor_opt.step(self.actor.params_mut(), &actor_grad) {
                log::warn!("actor update rejected: {e}");
                diag.skipped += 1;
            }
        } else {
            log::warn!("actor loss is non-finite; update skipped");
            diag.skipped += 1;
        }

        let tau = self.cfg.tau;
        for (targets, online) in self.critic_targets.iter_mut().zip(&self.critics) {
            for (t, o) in targets.iter_mut().zip(online) {
                soft_update(t, o, tau)?;
            }
        }
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        self.updates += 1;
        Ok(diag)
    }

    pub fn save(&self, dir: &Path, training_step: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let c = &self.cfg;
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let hidden = c.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        let manifest = format!(
            "format = moec-agent-v1\nobjectives = {}\nensemble_size = {}\nweights = {}\nloss_weights = {}\ngamma = {}\ncritic_lr = {}\nactor_lr = {}\ntau = {}\nhidden = {}\nbounds.lane_width = {}\nbounds.min_turn_radius = {}\nbounds.max_brake = {}\nbounds.path_length_cap = {}\nbounds.accel_limit = {}\nseed = {}\ntraining_step = {}\n",
            c.objectives,
            c.ensemble_size,
            join(&c.weights),
            join(&c.loss_weights),
            c.gamma,
            c.critic_lr,
            c.actor_lr,
            c.tau,
            hidden,
            c.bounds.lane_width,
            c.bounds.min_turn_radius,
            c.bounds.max_brake,
            c.bounds.path_length_cap,
            c.bounds.accel_limit,
            c.seed,
            training_step,
        );
        fs::write(dir.join("agent.manifest"), manifest)?;
        self.actor.save(&dir.join("actor"), c.seed)?;
        self.actor_target.save(&dir.join("actor_target"), c.seed)?;
        for i in 0..c.objectives {
            for j in 0..c.ensemble_size {
                self.critics[i][j].save(&dir.join(format!("critic_{i}_{j}")), c.seed)?;
                self.critic_targets[i][j].save(&dir.join(format!("critic_target_{i}_{j}")), c.seed)?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint directory; returns the agent and its training step.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let manifest_path = dir.join("agent.manifest");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::checkpoint(&manifest_path, e.to_string()))?;
        let kv = parse_key_values(&text)?;
        let bad = |key: &str| Error::checkpoint(&manifest_path, format!("missing or invalid `{key}`"));
        let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| bad(key));
        let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(key)) };
        let int = |key: &str| -> Result<u64> { get(key)?.parse().map_err(|_| bad(key)) };
        let list = |key: &str| -> Result<Vec<f64>> {
            get(key)?
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad(key)))
                .collect()
        };
        if get("format")? != "moec-agent-v1" {
            return Err(Error::checkpoint(&manifest_path, "unknown agent format"));
        }
        let lw = list("loss_weights")?;
        if lw.len() != 4 {
            return Err(bad("loss_weights"));
        }
        let hidden_text = get("hidden")?;
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| bad("hidden")))
                .collect::<Result<Vec<_>>>()?
        };
        let cfg = AgentConfig {
            objectives: int("objectives")? as usize,
            ensemble_size: int("ensemble_size")? as usize,
            weights: list("weights")?,
            loss_weights: [lw[0], lw[1], lw[2], lw[3]],
            gamma: num("gamma")?,
            critic_lr: num("critic_lr")?,
            actor_lr: num("actor_lr")?,
            tau: num("tau")?,
            hidden,
            bounds: BoundsConfig {
                lane_width: num("bounds.lane_width")?,
                min_turn_radius: num("bounds.min_turn_radius")?,
                max_brake: num("bounds.max_brake")?,
                path_length_cap: num("bounds.path_length_cap")?,
                accel_limit: num("bounds.accel_limit")?,
            },
            seed: int("seed")?,
        };
        let step = int("training_step")?;
        let load_net = |name: &str, spec: &MlpSpec| -> Result<Mlp> {
            let (net, _) = Mlp::load(&dir.join(name))?;
            if net.spec() != spec {
                return Err(Error::checkpoint(dir.join(name), "network shape does not match agent manifest"));
            }
            Ok(net)
        };
        let actor = load_net("actor", &cfg.actor_spec())?;
        let actor_target = load_net("actor_target", &cfg.actor_spec())?;
        let mut critics = Vec::new();
        let mut critic_targets = Vec::new();
        for i in 0..cfg.objectives {
            let mut e = Vec::new();
            let mut et = Vec::new();
            for j in 0..cfg.ensemble_size {
                e.push(load_net(&format!("critic_{i}_{j}"), &cfg.critic_spec())?);
                et.push(load_net(&format!("critic_target_{i}_{j}"), &cfg.critic_spec())?);
            }
            critics.push(e);
            critic_targets.push(et);
        }
        let mut agent = Self::from_networks(cfg, actor, critics)?;
        agent.actor_target = actor_target;
        agent.critic_targets = critic_targets;
        Ok((agent, step))
    }
}
