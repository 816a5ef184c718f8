//! Run configuration: flat `section.key = value` text validated against a fixed schema.
//!
//! A file may start from a named profile (`profile = desk`); every other key
//! must appear in [`schema`]. Unknown keys and unparsable values are errors
//! naming the key.

use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::explore::ExploreConfig;
use crate::reward::RewardConfig;
use crate::trainer::{agent_config, AblationMode, ControlConfig, EvalConfig, TrainConfig};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: AblationMode,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub explore: ExploreConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub control: ControlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::Full,
            seeds: vec![0, 1, 2, 3, 4, 5],
            out: PathBuf::from("runs"),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            reward: RewardConfig::default(),
            explore: ExploreConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reduced-cost profile: 30000 steps at V/C 0.3 with smaller networks and batches.
    pub fn desk() -> Self {
        let mut c = Self {
            seeds: vec![0, 1, 2],
            ..Self::default()
        };
        c.train.total_steps = 30_000;
        c.train.density = 0.3;
        c.train.batch_size = 32;
        c.train.warmup = 128;
        c.eval.density = 0.3;
        c.eval.episodes = 20;
        c.agent.hidden = vec![32, 32];
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" | "table" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(format!("profile: unknown profile `{other}` (expected default or desk)"))),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut cfg = match kv.iter().find(|(k, _)| k == "profile") {
            Some((_, v)) => Self::profile(v)?,
            None => Self::default(),
        };
        for (k, v) in kv.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let field = schema()
            .iter()
            .find(|f| f.key == key)
            .ok_or_else(|| Error::config(format!("{key}: unknown configuration key")))?;
        (field.set)(self, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        schema().iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    /// Applies `key=value` overrides in order, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}`: expected key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Every key with its resolved value, in schema order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in schema() {
            s.push_str(f.key);
            s.push_str(" = ");
            s.push_str(&(f.get)(self));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("run.seeds: at least one seed is required"));
        }
        self.env.validate()?;
        self.reward.validate().map_err(|e| Error::config(format!("reward: {e}")))?;
        agent_config(self, 0).validate().map_err(|e| Error::config(format!("agent: {e}")))?;
        self.explore.validate().map_err(|e| Error::config(format!("explore: {e}")))?;
        self.train.validate().map_err(|e| Error::config(format!("trainer: {e}")))?;
        if !(0.0..1.0).contains(&self.eval.density) {
            return Err(Error::config("eval.density: must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub struct Field {
    pub key: &'static str,
    pub doc: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<()>,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("{key}: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! field {
    ($key:literal, $doc:literal, $($path:ident).+) => {
        Field {
            key: $key,
            doc: $doc,
            get: |c| c.$($path).+.to_string(),
            set: |c, v| {
                c.$($path).+ = parse($key, v)?;
                Ok(())
            },
        }
    };
}

macro_rules! list_field {
    ($key:literal, $doc:literal, $($path:ident).+) => {
        Field {
            key: $key,
            doc: $doc,
            get: |c| join(&c.$($path).+),
            set: |c, v| {
                c.$($path).+ = parse_list($key, v)?;
                Ok(())
            },
        }
    };
}

static SCHEMA: std::sync::OnceLock<Vec<Field>> = std::sync::OnceLock::new();

/// Every accepted configuration key.
pub fn schema() -> &'static [Field] {
    SCHEMA.get_or_init(|| {
        vec![
            Field {
                key: "run.mode",
                doc: "full | hpa_mo | hpa | da_mo",
                get: |c| c.mode.name().to_string(),
                set: |c, v| {
                    c.mode = v.parse().map_err(|e: Error| Error::config(format!("run.mode: {e}")))?;
                    Ok(())
                },
            },
            list_field!("run.seeds", "comma-separated training seeds", seeds),
            Field {
                key: "run.out",
                doc: "output directory",
                get: |c| c.out.display().to_string(),
                set: |c, v| {
                    c.out = PathBuf::from(v);
                    Ok(())
                },
            },
            field!("env.lane_count", "number of lanes", env.road.lane_count),
            field!("env.lane_width", "lane width (m)", env.road.lane_width),
            field!("env.road_length", "ring road length (m)", env.road.length),
            field!("env.dt", "simulation step (s)", env.dt),
            field!("env.max_episode_time", "episode time cap (s)", env.max_episode_time),
            field!("env.wheelbase", "vehicle wheelbase (m)", env.vehicle.wheelbase),
            field!("env.vehicle_length", "vehicle length (m)", env.vehicle.length),
            field!("env.vehicle_width", "vehicle width (m)", env.vehicle.width),
            field!("env.max_steer", "steering limit (rad)", env.vehicle.max_steer),
            field!("env.max_speed", "speed limit (m/s)", env.vehicle.max_speed),
            field!("env.max_accel", "ego acceleration limit (m/s^2)", env.vehicle.max_accel),
            Field {
                key: "env.desired_speed_range",
                doc: "traffic desired speed range lo,hi (m/s)",
                get: |c| format!("{},{}", c.env.desired_speed_range.0, c.env.desired_speed_range.1),
                set: |c, v| {
                    c.env.desired_speed_range = pair("env.desired_speed_range", v)?;
                    Ok(())
                },
            },
            Field {
                key: "env.ego_speed_range",
                doc: "initial ego speed range lo,hi (m/s)",
                get: |c| format!("{},{}", c.env.ego_speed_range.0, c.env.ego_speed_range.1),
                set: |c, v| {
                    c.env.ego_speed_range = pair("env.ego_speed_range", v)?;
                    Ok(())
                },
            },
            field!("env.capacity_per_lane_km", "vehicles per lane-km at V/C 1", env.capacity_per_lane_km),
            field!("env.placement_retries", "spawn attempts per vehicle", env.placement_retries),
            field!("env.mobil_interval", "seconds between lane-change evaluations", env.mobil_interval),
            field!("env.sv_lateral_gain", "traffic lateral tracking gain (1/s)", env.sv_lateral_gain),
            field!("env.sv_max_lateral_speed", "traffic lateral speed limit (m/s)", env.sv_max_lateral_speed),
            field!("idm.time_headway", "IDM time headway (s)", env.idm.time_headway),
            field!("idm.min_gap", "IDM standstill gap (m)", env.idm.min_gap),
            field!("idm.max_accel", "IDM maximum acceleration (m/s^2)", env.idm.max_accel),
            field!("idm.comfort_decel", "IDM comfortable deceleration (m/s^2)", env.idm.comfort_decel),
            field!("idm.exponent", "IDM acceleration exponent", env.idm.exponent),
            field!("idm.max_brake", "IDM braking limit (m/s^2)", env.idm.max_brake),
            field!("mobil.politeness", "MOBIL politeness", env.mobil.politeness),
            field!("mobil.accel_threshold", "MOBIL incentive threshold (m/s^2)", env.mobil.accel_threshold),
            field!("mobil.safe_decel", "MOBIL safe braking limit (m/s^2)", env.mobil.safe_decel),
            field!("reward.target_speed", "target speed (m/s)", reward.target_speed),
            field!("reward.low_speed", "low-speed penalty threshold (m/s)", reward.low_speed),
            field!("reward.ttc_horizon", "TTC saturation (s)", reward.ttc_horizon),
            field!("reward.max_steer", "steering normalizer (rad)", reward.max_steer),
            field!("reward.max_accel", "acceleration normalizer (m/s^2)", reward.max_accel),
            list_field!("reward.weights", "objective weights safe,general", reward.weights),
            field!("reward.eff_negated", "penalize speed deviation (true) or reward it (false)", reward.eff_negated),
            field!("agent.ensemble_size", "critics per objective", agent.ensemble_size),
            Field {
                key: "agent.loss_weights",
                doc: "critic loss weights own,ensemble,overall,convergence",
                get: |c| join(&c.agent.loss_weights),
                set: |c, v| {
                    let l: Vec<f64> = parse_list("agent.loss_weights", v)?;
                    c.agent.loss_weights = l
                        .try_into()
                        .map_err(|_| Error::config("agent.loss_weights: expected four values"))?;
                    Ok(())
                },
            },
            field!("agent.gamma", "discount", agent.gamma),
            field!("agent.critic_lr", "critic step size", agent.critic_lr),
            field!("agent.actor_lr", "actor step size", agent.actor_lr),
            field!("agent.tau", "soft update rate", agent.tau),
            list_field!("agent.hidden", "hidden layer widths", agent.hidden),
            field!("bounds.min_turn_radius", "minimum turning radius (m)", agent.bounds.min_turn_radius),
            field!("bounds.max_brake", "braking used for the minimum path length (m/s^2)", agent.bounds.max_brake),
            field!("bounds.path_length_cap", "maximum path length (m)", agent.bounds.path_length_cap),
            field!("bounds.accel_limit", "acceleration parameter range (m/s^2)", agent.bounds.accel_limit),
            field!("explore.K", "exploration candidates", explore.candidates),
            field!("explore.variance_threshold", "state variance threshold for sampling options", explore.variance_threshold),
            field!("explore.weight_floor", "final exploration weight", explore.weight_floor),
            field!("explore.noise_scale", "random-exploration noise std at full weight", explore.noise_scale),
            field!("trainer.T", "training steps", train.total_steps),
            field!("trainer.warmup", "transitions stored before updates begin", train.warmup),
            field!("trainer.batch_size", "update batch size", train.batch_size),
            field!("trainer.buffer_capacity", "replay capacity", train.buffer_capacity),
            field!("trainer.density", "training V/C ratio", train.density),
            field!("trainer.checkpoint_every", "intermediate checkpoint period (0 = off)", train.checkpoint_every),
            field!("trainer.eval_every", "in-training evaluation period (0 = off)", train.eval_every),
            field!("trainer.eval_episodes", "episodes per in-training evaluation", train.eval_episodes),
            field!("trainer.nonfinite_limit", "tolerated consecutive skipped updates", train.nonfinite_limit),
            field!("eval.episodes", "evaluation episodes", eval.episodes),
            field!("eval.seed", "evaluation seed", eval.seed),
            field!("eval.density", "evaluation V/C ratio", eval.density),
            field!("control.stanley_k_e", "Stanley cross-track gain", control.stanley.k_e),
            field!("control.stanley_v_soft", "Stanley speed softening (m/s)", control.stanley.v_soft),
            field!("control.path_points", "guiding path sample count", control.path_points),
            field!("control.pid_kp", "lane-centre PID offset gain", control.pid.k_p),
            field!("control.pid_kd", "lane-centre PID rate gain", control.pid.k_d),
            field!("control.pid_k_heading", "lane-centre PID heading gain", control.pid.k_heading),
            field!("control.speed_gain", "discrete-only speed tracking gain (1/s)", control.speed_gain),
            field!("control.lane_change_debounce", "lane-change debounce (s)", control.lane_change_debounce),
        ]
    })
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::config(format!("{key}: expected two values"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_table_values() {
        let c = RunConfig::default();
        assert_eq!(c.agent.ensemble_size, 6);
        assert_eq!(c.agent.loss_weights, [0.5, 0.2, 0.2, 0.1]);
        assert_eq!(c.agent.hidden, vec![256, 256, 256]);
        assert_eq!((c.agent.gamma, c.agent.critic_lr, c.agent.actor_lr, c.agent.tau), (0.9, 0.01, 0.001, 0.005));
        assert_eq!(c.train.total_steps, 200_000);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.buffer_capacity, 40_000);
        assert_eq!(c.explore.candidates, 10);
        assert_eq!(c.reward.weights, vec![0.4, 0.6]);
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::desk();
        c.apply_overrides(&["trainer.T=1000", "agent.hidden=16,8", "run.mode=hpa"]).unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_text().contains("trainer.T = 1000\n"));
    }

    #[test]
    fn unknown_and_bad_keys_are_named() {
        let e = RunConfig::from_text("trainer.Tx = 5").unwrap_err().to_string();
        assert!(e.contains("trainer.Tx"), "{e}");
        let e = RunConfig::from_text("agent.gamma = fast").unwrap_err().to_string();
        assert!(e.contains("agent.gamma"), "{e}");
        let e = RunConfig::from_text("agent.gamma = 1.5").unwrap_err().to_string();
        assert!(e.contains("agent"), "{e}");
        assert!(RunConfig::from_text("run.mode = dqn").is_err());
    }

    #[test]
    fn profile_selects_base() {
        let c = RunConfig::from_text("profile = desk\ntrainer.T = 10\n").unwrap();
        assert_eq!(c.train.total_steps, 10);
        assert_eq!(c.train.density, 0.3);
    }

    #[test]
    fn every_key_reads_back() {
        let c = RunConfig::default();
        for f in schema() {
            let v = c.get(f.key).unwrap();
            let mut d = c.clone();
            d.set(f.key, &v).unwrap();
            assert_eq!(d, c, "{}", f.key);
            assert!(!f.doc.is_empty());
        }
    }
}
