//! Training loop, evaluation rollouts and ablation modes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::action::{drive, DiscreteOption, HybridAction, LateralMode, PidGains, StanleyGains, CONTINUOUS_DIM};
use crate::agent::{AgentConfig, MoecAgent, Transition};
use crate::config::RunConfig;
use crate::env::{Controls, DrivingEnv, Highway, VehicleState};
use crate::error::{Error, Result};
use crate::explore::{act, exploration_weight, ActMode, Branch, UncertaintyTraceRow};
use crate::metrics::{aggregate, episode_metrics, Aggregate, EgoTraceRow, EpisodeMetrics};
use crate::reward::{r_all, reward_vector, RewardConfig, RewardInputs, RewardVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Ensemble critics with variance-guided exploration.
    Full,
    /// One critic per objective, random exploration.
    HpaMo,
    /// A single objective on the weighted reward.
    Hpa,
    /// `HpaMo` with discrete decisions only.
    DaMo,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Full, AblationMode::HpaMo, AblationMode::Hpa, AblationMode::DaMo];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::HpaMo => "hpa_mo",
            AblationMode::Hpa => "hpa",
            AblationMode::DaMo => "da_mo",
        }
    }

    pub fn act_mode(self) -> ActMode {
        match self {
            AblationMode::Full | AblationMode::Hpa => ActMode::Explore,
            AblationMode::HpaMo | AblationMode::DaMo => ActMode::Random,
        }
    }

    pub fn discrete_only(self) -> bool {
        self == AblationMode::DaMo
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode `{s}` (expected full, hpa_mo, hpa or da_mo)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Traffic V/C ratio.
    pub density: f64,
    /// Write an intermediate checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    /// Run a greedy evaluation every this many steps (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Consecutive skipped updates tolerated before aborting.
    pub nonfinite_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            warmup: 1024,
            batch_size: 256,
            buffer_capacity: 40_000,
            density: 0.5,
            checkpoint_every: 0,
            eval_every: 0,
            eval_episodes: 5,
            nonfinite_limit: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.warmup < self.batch_size {
            return Err(Error::config("warmup must be at least the batch size"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("replay capacity must be at least the batch size"));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::config("traffic density must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub stanley: StanleyGains,
    pub path_points: usize,
    pub pid: PidGains,
    /// Proportional gain of the speed tracker used with discrete-only actions.
    pub speed_gain: f64,
    pub lane_change_debounce: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            stanley: StanleyGains::default(),
            path_points: 30,
            pid: PidGains::default(),
            speed_gain: 0.5,
            lane_change_debounce: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub density: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            seed: 10_000,
            density: 0.5,
        }
    }
}

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample without replacement; `None` when fewer than `n` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if n > self.items.len() {
            return None;
        }
        Some(index::sample(rng, self.items.len(), n).into_iter().map(|k| &self.items[k]).collect())
    }
}

/// How a chosen option and parameter vector become controls.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionScheme {
    /// Guiding path of the chosen length tracked by Stanley control, chosen acceleration.
    Hybrid { stanley: StanleyGains, path_points: usize },
    /// Lane-centre PID steering, midpoint path length, speed-tracking acceleration.
    DiscreteOnly { pid: PidGains, target_speed: f64, speed_gain: f64 },
}

impl ActionScheme {
    pub fn for_mode(mode: AblationMode, control: &ControlConfig, reward: &RewardConfig) -> Self {
        if mode.discrete_only() {
            ActionScheme::DiscreteOnly {
                pid: control.pid,
                target_speed: reward.target_speed,
                speed_gain: control.speed_gain,
            }
        } else {
            ActionScheme::Hybrid {
                stanley: control.stanley,
                path_points: control.path_points,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub action: HybridAction,
    pub controls: Controls,
    /// Normalized parameter vector describing what was executed.
    pub params: [f64; CONTINUOUS_DIM],
    pub used_path: bool,
}

pub fn realize(
    option: usize,
    params: &[f64; CONTINUOUS_DIM],
    agent: &MoecAgent,
    env: &dyn DrivingEnv,
    ego: &VehicleState,
    scheme: &ActionScheme,
) -> Realized {
    let obs = env.observation();
    let bounds = agent.bounds(&obs);
    let road = env.road();
    let vehicle = env.vehicle();
    let opt = DiscreteOption::from_index(option).expect("option index below NUM_OPTIONS");
    match scheme {
        ActionScheme::Hybrid { stanley, path_points } => {
            let action = HybridAction {
                option: opt,
                length: bounds.length_from_unit(params[2 * option]),
                accel: bounds.accel_from_unit(params[2 * option + 1]),
            };
            let mode = LateralMode::GuidingPath {
                gains: *stanley,
                horizon: *path_points,
            };
            let cmd = drive(&action, ego, &road, &vehicle, &mode);
            Realized {
                action,
                controls: cmd.controls,
                params: *params,
                used_path: cmd.path.is_some(),
            }
        }
        ActionScheme::DiscreteOnly {
            pid,
            target_speed,
            speed_gain,
        } => {
            let accel = (speed_gain * (target_speed - ego.vx)).clamp(bounds.acc_min, bounds.acc_max);
            let action = HybridAction {
                option: opt,
                length: (bounds.l_min + bounds.l_max) / 2.0,
                accel,
            };
            let cmd = drive(&action, ego, &road, &vehicle, &LateralMode::LaneCentrePid { gains: *pid });
            let acc_unit = bounds.accel_to_unit(accel);
            Realized {
                action,
                controls: cmd.controls,
                params: [0.0, acc_unit, 0.0, acc_unit, 0.0, acc_unit],
                used_path: cmd.path.is_some(),
            }
        }
    }
}

/// Maps the current environment state to controls.
pub trait Policy {
    /// Returns the controls and the chosen option index.
    fn decide(&mut self, env: &dyn DrivingEnv) -> Result<(Controls, usize)>;
}

/// Greedy agent policy used for evaluation.
pub struct GreedyPolicy<'a> {
    pub agent: &'a MoecAgent,
    pub scheme: ActionScheme,
}

impl Policy for GreedyPolicy<'_> {
    fn decide(&mut self, env: &dyn DrivingEnv) -> Result<(Controls, usize)> {
        let obs = env.observation();
        let ego = env.ego().ok_or_else(|| Error::config("environment has no ego vehicle"))?;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let d = act(
            self.agent,
            &obs,
            env.road().lane_count,
            0.0,
            &Default::default(),
            ActMode::Greedy,
            &mut unused,
        )?;
        let r = realize(d.action.option.index(), &d.params, self.agent, env, &ego, &self.scheme);
        Ok((r.controls, d.action.option.index()))
    }
}

/// Policy issuing controls from a closure, for forced or scripted drivers.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&dyn DrivingEnv) -> Controls> Policy for FnPolicy<F> {
    fn decide(&mut self, env: &dyn DrivingEnv) -> Result<(Controls, usize)> {
        Ok(((self.0)(env), DiscreteOption::Lk.index()))
    }
}

/// Reward vector for the state reached after applying `controls`.
pub fn step_reward(env: &dyn DrivingEnv, controls: &Controls, f_unsafe: bool, sv_accels: &[f64], cfg: &RewardConfig) -> RewardVector {
    let speed = env.ego().map(|e| e.vx.hypot(e.vy)).unwrap_or(0.0);
    reward_vector(
        &RewardInputs {
            f_unsafe,
            ttc: env.ttc(cfg.ttc_horizon),
            speed,
            steer: controls.steer,
            accel: controls.accel,
            sv_accels,
        },
        cfg,
    )
}

fn trace_row(env: &dyn DrivingEnv, step: u64, time: f64, controls: &Controls, option: usize, rv: &RewardVector, total: f64, f_unsafe: bool) -> EgoTraceRow {
    let e = env.ego().expect("ego present after step");
    EgoTraceRow {
        step,
        time,
        lane_id: e.lane_id,
        x: e.x,
        y: e.y,
        heading: e.heading,
        vx: e.vx,
        vy: e.vy,
        speed: e.vx.hypot(e.vy),
        steer: controls.steer,
        accel: controls.accel,
        option,
        r_safe: rv.r_safe,
        r_gen: rv.r_gen,
        r_all: total,
        f_unsafe,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trace: Vec<EgoTraceRow>,
    pub metrics: EpisodeMetrics,
}

/// Runs `policy` until the environment reports the end of the episode or `max_steps` elapse.
pub fn run_episode(
    env: &mut dyn DrivingEnv,
    policy: &mut dyn Policy,
    reward: &RewardConfig,
    debounce: f64,
    max_steps: Option<u64>,
) -> Result<EpisodeRecord> {
    let mut trace = Vec::new();
    let mut step = 0u64;
    loop {
        if max_steps.is_some_and(|m| step >= m) {
            break;
        }
        let (controls, option) = policy.decide(env)?;
        let out = env.advance(controls)?;
        step += 1;
        let applied = Controls {
            steer: controls.steer.clamp(-env.vehicle().max_steer, env.vehicle().max_steer),
            accel: controls.accel.clamp(-env.vehicle().max_accel, env.vehicle().max_accel),
        };
        let rv = step_reward(env, &applied, out.f_unsafe, &out.sv_accels, reward);
        let total = r_all(&rv, &reward.weights);
        trace.push(trace_row(env, step, out.time, &applied, option, &rv, total, out.f_unsafe));
        if out.done() {
            break;
        }
    }
    let metrics = episode_metrics(&trace, env.dt(), debounce);
    Ok(EpisodeRecord { trace, metrics })
}

/// Agent configuration implied by the run configuration and its ablation mode.
pub fn agent_config(run: &RunConfig, seed: u64) -> AgentConfig {
    let mut cfg = run.agent.clone();
    cfg.seed = seed;
    cfg.bounds.lane_width = run.env.road.lane_width;
    cfg.weights = run.reward.weights.clone();
    cfg.objectives = cfg.weights.len();
    match run.mode {
        AblationMode::Full => {}
        AblationMode::HpaMo | AblationMode::DaMo => cfg.ensemble_size = 1,
        AblationMode::Hpa => {
            cfg.objectives = 1;
            cfg.weights = vec![1.0];
        }
    }
    cfg
}

/// Objective vector stored for learning under `mode`.
pub fn objective_rewards(mode: AblationMode, rv: &RewardVector, weights: &[f64]) -> Vec<f64> {
    match mode {
        AblationMode::Hpa => vec![r_all(rv, weights)],
        _ => rv.as_objectives().to_vec(),
    }
}

fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub episode: u64,
    pub total_reward: f64,
    pub r_safe: f64,
    pub r_gen: f64,
    /// Percentage of started episodes that ended in a safety event so far.
    pub cr_running: f64,
    pub var_state: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub weight: f64,
    pub f_unsafe: bool,
}

pub const TRAIN_LOG_HEADER: [&str; 11] = [
    "step", "episode", "total_reward", "r_safe", "r_gen", "CR_running", "var_state", "L_critic_mean", "L_actor", "varsigma",
    "f_unsafe",
];

pub fn write_train_log<W: Write>(out: W, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAIN_LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.episode.to_string(),
            r.total_reward.to_string(),
            r.r_safe.to_string(),
            r.r_gen.to_string(),
            r.cr_running.to_string(),
            r.var_state.to_string(),
            r.critic_loss.to_string(),
            r.actor_loss.to_string(),
            r.weight.to_string(),
            u8::from(r.f_unsafe).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: MoecAgent,
    pub log: Vec<TrainLogRow>,
    pub uncertainty: Vec<UncertaintyTraceRow>,
    pub evals: Vec<(u64, Option<Aggregate>)>,
    pub episodes: u64,
    pub unsafe_events: u64,
    pub updates: u64,
    pub path_builds: u64,
}

/// Trains one agent for `run.train.total_steps` environment steps. When `out`
/// is given, the log, uncertainty trace, resolved configuration and
/// checkpoints are written there.
pub fn train(run: &RunConfig, seed: u64, out: Option<&Path>) -> Result<TrainOutput> {
    run.validate()?;
    let tc = &run.train;
    let mut agent = MoecAgent::new(agent_config(run, seed))?;
    let mut env = Highway::new(run.env.clone())?;
    let scheme = ActionScheme::for_mode(run.mode, &run.control, &run.reward);
    let mut act_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_AC70);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_B0FF);
    let mut buffer = ReplayBuffer::new(tc.buffer_capacity);
    let lanes = run.env.road.lane_count;

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("resolved.cfg"), run.to_text())?;
    }

    let mut episode = 0u64;
    let mut obs = env.reset(episode_seed(seed, episode), tc.density)?;
    let mut unsafe_events = 0u64;
    let mut path_builds = 0u64;
    let mut log = Vec::with_capacity(tc.total_steps as usize);
    let mut trace = Vec::new();
    let mut evals = Vec::new();
    let mut skip_streak = 0usize;
    let mut last_diag = (0.0, 0.0);

    for t in 0..tc.total_steps {
        let weight = exploration_weight(t, tc.total_steps, run.explore.weight_floor);
        let decision = act(&agent, &obs, lanes, weight, &run.explore, run.mode.act_mode(), &mut act_rng)?;
        let option = decision.action.option.index();
        let ego = env.ego_state().ok_or_else(|| Error::Fault("ego vanished".into()))?;
        let realized = realize(option, &decision.params, &agent, &env, &ego, &scheme);
        path_builds += u64::from(realized.used_path);
        let outcome = env.step(realized.controls, run.env.dt)?;
        let applied = Controls {
            steer: realized.controls.steer.clamp(-run.env.vehicle.max_steer, run.env.vehicle.max_steer),
            accel: realized.controls.accel.clamp(-run.env.vehicle.max_accel, run.env.vehicle.max_accel),
        };
        let rv = step_reward(&env, &applied, outcome.f_unsafe, &outcome.sv_accels, &run.reward);
        let total = r_all(&rv, &run.reward.weights);
        buffer.push(Transition {
            state: obs.to_array(),
            option,
            params: realized.params,
            rewards: objective_rewards(run.mode, &rv, &run.reward.weights),
            next_state: outcome.observation.to_array(),
            done: outcome.f_unsafe,
        });

        if buffer.len() >= tc.warmup {
            let batch = buffer.sample(tc.batch_size, &mut sample_rng).expect("warmup >= batch size");
            let diag = agent.update(&batch)?;
            if diag.skipped > 0 {
                skip_streak += 1;
                if skip_streak > tc.nonfinite_limit {
                    return Err(Error::NonFiniteLoss(format!(
                        "{skip_streak} consecutive updates skipped at step {}; last diagnostics {diag:?}",
                        t + 1
                    )));
                }
            } else {
                skip_streak = 0;
            }
            last_diag = (diag.critic_loss_mean, diag.actor_loss);
        }

        if outcome.f_unsafe {
            unsafe_events += 1;
        }
        let var_state = decision.report.as_ref().map_or(0.0, |r| r.state);
        if let Some(r) = &decision.report {
            trace.push(UncertaintyTraceRow {
                step: t + 1,
                per_option: r.per_option,
                state: r.state,
                branch: decision.branch,
            });
        } else if decision.branch == Branch::Random {
            trace.push(UncertaintyTraceRow {
                step: t + 1,
                per_option: [0.0; 3],
                state: 0.0,
                branch: Branch::Random,
            });
        }
        log.push(TrainLogRow {
            step: t + 1,
            episode,
            total_reward: total,
            r_safe: rv.r_safe,
            r_gen: rv.r_gen,
            cr_running: 100.0 * unsafe_events as f64 / (episode + 1) as f64,
            var_state,
            critic_loss: last_diag.0,
            actor_loss: last_diag.1,
            weight,
            f_unsafe: outcome.f_unsafe,
        });

        if tc.eval_every > 0 && (t + 1) % tc.eval_every == 0 {
            let report = evaluate(&agent, run, tc.eval_episodes)?;
            evals.push((t + 1, report.aggregate));
        }
        if let Some(dir) = out {
            if tc.checkpoint_every > 0 && (t + 1) % tc.checkpoint_every == 0 && t + 1 < tc.total_steps {
                agent.save(&dir.join(format!("checkpoint_{}", t + 1)), t + 1)?;
            }
        }

        obs = if outcome.done() {
            episode += 1;
            env.reset(episode_seed(seed, episode), tc.density)?
        } else {
            outcome.observation
        };
    }

    if let Some(dir) = out {
        agent.save(&dir.join("checkpoint"), tc.total_steps)?;
        write_train_log(fs::File::create(dir.join("train_log.csv"))?, &log)?;
        crate::explore::write_uncertainty_trace(fs::File::create(dir.join("uncertainty.csv"))?, &trace)?;
        if !evals.is_empty() {
            let mut f = fs::File::create(dir.join("eval_during_training.txt"))?;
            for (step, agg) in &evals {
                f.write_all(crate::metrics::summary_text(&format!("step {step}"), agg.as_ref()).as_bytes())?;
            }
        }
    }
    Ok(TrainOutput {
        updates: agent.update_count(),
        agent,
        log,
        uncertainty: trace,
        evals,
        episodes: episode + 1,
        unsafe_events,
        path_builds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: Option<Aggregate>,
    pub traces: Vec<Vec<EgoTraceRow>>,
}

/// Greedy rollouts of `agent` in freshly seeded simulator episodes.
pub fn evaluate(agent: &MoecAgent, run: &RunConfig, episodes: usize) -> Result<EvalReport> {
    let scheme = ActionScheme::for_mode(run.mode, &run.control, &run.reward);
    let mut policy = GreedyPolicy { agent, scheme };
    evaluate_with(&mut policy, run, episodes)
}

pub fn evaluate_with(policy: &mut dyn Policy, run: &RunConfig, episodes: usize) -> Result<EvalReport> {
    let mut env = Highway::new(run.env.clone())?;
    let mut metrics = Vec::with_capacity(episodes);
    let mut traces = Vec::with_capacity(episodes);
    for k in 0..episodes {
        env.reset(episode_seed(run.eval.seed, k as u64), run.eval.density)?;
        let rec = run_episode(&mut env, policy, &run.reward, run.control.lane_change_debounce, None)?;
        metrics.push(rec.metrics);
        traces.push(rec.trace);
    }
    Ok(EvalReport {
        aggregate: aggregate(&metrics),
        episodes: metrics,
        traces,
    })
}

/// Refuses a checkpoint whose learner layout does not match the run configuration.
pub fn check_checkpoint(agent: &MoecAgent, run: &RunConfig) -> Result<()> {
    let expected = agent_config(run, agent.config().seed);
    let got = agent.config();
    if got.objectives != expected.objectives || got.ensemble_size != expected.ensemble_size || got.weights != expected.weights {
        return Err(Error::config(format!(
            "checkpoint has {} objectives × {} critics with weights {:?}, configuration expects {} × {} with {:?}",
            got.objectives, got.ensemble_size, got.weights, expected.objectives, expected.ensemble_size, expected.weights
        )));
    }
    Ok(())
}

/// SHA-256 over every file in `dir` (sorted by name, recursing into subdirectories).
pub fn directory_hash(dir: &Path) -> Result<String> {
    fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                collect(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update(fs::read(&f)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(k: usize) -> Transition {
        Transition {
            state: [k as f64; 42],
            option: 1,
            params: [0.0; 6],
            rewards: vec![k as f64],
            next_state: [0.0; 42],
            done: false,
        }
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut b = ReplayBuffer::new(5);
        for k in 0..8 {
            b.push(transition(k));
        }
        assert_eq!(b.len(), 5);
        let kept: Vec<f64> = b.iter().map(|t| t.rewards[0]).collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(b.inserted(), 8);
    }

    #[test]
    fn replay_sample_has_no_duplicates() {
        let mut b = ReplayBuffer::new(50);
        for k in 0..50 {
            b.push(transition(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(50, &mut rng).unwrap();
        let mut seen: Vec<f64> = s.iter().map(|t| t.rewards[0]).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 50);
        assert!(b.sample(51, &mut rng).is_none());
    }

    #[test]
    fn modes_parse_and_reject_unknown() {
        for m in AblationMode::ALL {
            assert_eq!(m.name().parse::<AblationMode>().unwrap(), m);
        }
        assert!("dqn".parse::<AblationMode>().is_err());
    }

    #[test]
    fn mode_agent_layouts() {
        let mut run = RunConfig {
            mode: AblationMode::Hpa,
            ..RunConfig::default()
        };
        let c = agent_config(&run, 0);
        assert_eq!((c.objectives, c.weights.clone()), (1, vec![1.0]));
        run.mode = AblationMode::HpaMo;
        assert_eq!(agent_config(&run, 0).ensemble_size, 1);
        run.mode = AblationMode::Full;
        assert_eq!(agent_config(&run, 0).ensemble_size, 6);
    }

    #[test]
    fn hpa_stores_single_reward() {
        let rv = RewardVector {
            r_safe: 0.5,
            r_gen: -1.0,
            ..Default::default()
        };
        assert_eq!(objective_rewards(AblationMode::Hpa, &rv, &[0.4, 0.6]), vec![0.2 - 0.6]);
        assert_eq!(objective_rewards(AblationMode::Full, &rv, &[0.4, 0.6]), vec![0.5, -1.0]);
    }
}
