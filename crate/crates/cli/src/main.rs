use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hpa_moec::agent::MoecAgent;
use hpa_moec::config::RunConfig;
use hpa_moec::env::write_trajectory_csv;
use hpa_moec::highd::{self, FixtureSpec, Recording};
use hpa_moec::metrics::{aggregate, summary_text, write_ego_trace, write_metrics_csv, Aggregate, EpisodeMetrics};
use hpa_moec::trainer::{self, ActionScheme, AblationMode, EvalReport, GreedyPolicy, Policy};
use hpa_moec::{Error, Result};

const OUT_ENV: &str = "HPA_MOEC_OUT";

#[derive(Parser, Debug)]
#[command(name = "hpa-moec", version, about = "Lane-change planning with hybrid actions and ensemble critics")]
struct Cli {
    /// Configuration file (flat `section.key = value` text). Defaults to the built-in profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// `key=value` override applied after the configuration file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Single seed replacing `run.seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory. The HPA_MOEC_OUT environment variable takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent per seed.
    Train,
    /// Evaluate a checkpoint in the simulator or on a recording.
    Eval(EvalArgs),
    /// Replay a recording with one vehicle driven by the agent.
    Replay(ReplayArgs),
    /// Train and evaluate several ablation modes on shared seeds.
    Ablate(AblateArgs),
    /// Write a synthetic recording.
    Fixture(FixtureArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Sim,
    Highd,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory; a freshly initialised agent is used when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Episode count; defaults to `eval.episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum, default_value = "sim")]
    source: Source,
    /// Recording directory for `--source highd`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Minimum recorded length, in steps, of a substituted vehicle.
    #[arg(long, default_value_t = 50)]
    min_steps: usize,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Recording directory holding tracks.csv and meta.txt.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vehicle to substitute; drawn from the recording with the seed when absent.
    #[arg(long)]
    ego: Option<i64>,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 50)]
    min_steps: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "full,hpa_mo,hpa,da_mo")]
    modes: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Scenario {
    Empty,
    Constant,
    Platoon,
    CutIn,
    FreeFlow,
    StoppedLeader,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long, value_enum)]
    scenario: Scenario,
    #[arg(long, default_value_t = 5)]
    vehicles: usize,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Initial speed for constant, platoon and stopped-leader scenarios.
    #[arg(long, default_value_t = 12.0)]
    speed: f64,
    /// Spacing between platoon members or distance to the stopped leader.
    #[arg(long, default_value_t = 30.0)]
    gap: f64,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read config file {}: {e}", path.display())))?;
            RunConfig::from_text(&text).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    run.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        run.seeds = vec![seed];
    }
    if let Some(out) = std::env::var_os(OUT_ENV).map(PathBuf::from).or_else(|| cli.out.clone()) {
        run.out = out;
    }
    run.validate()?;
    Ok(run)
}

fn load_agent(checkpoint: Option<&Path>, run: &RunConfig) -> Result<MoecAgent> {
    match checkpoint {
        Some(dir) => {
            let (agent, step) = MoecAgent::load(dir)?;
            trainer::check_checkpoint(&agent, run)?;
            log::info!("loaded checkpoint {} at step {step}", dir.display());
            Ok(agent)
        }
        None => {
            log::warn!("no checkpoint given; evaluating a freshly initialised agent");
            MoecAgent::new(trainer::agent_config(run, run.seeds[0]))
        }
    }
}

fn write_report(dir: &Path, label: &str, report: &EvalReport) -> Result<String> {
    fs::create_dir_all(dir.join("traces"))?;
    write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &report.episodes)?;
    for (k, trace) in report.traces.iter().enumerate() {
        write_ego_trace(fs::File::create(dir.join("traces").join(format!("episode_{k:04}.csv")))?, trace)?;
    }
    let summary = summary_text(label, report.aggregate.as_ref());
    fs::write(dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn replay_report(
    agent: &MoecAgent,
    run: &RunConfig,
    rec: &Recording,
    egos: &[i64],
    min_steps: usize,
    dir: &Path,
) -> Result<String> {
    let scheme = ActionScheme::for_mode(run.mode, &run.control, &run.reward);
    let mut make = || -> Box<dyn Policy + '_> {
        Box::new(GreedyPolicy {
            agent,
            scheme: scheme.clone(),
        })
    };
    let (report, logs) = highd::evaluate_replay(&mut make, rec, egos, run, min_steps)?;
    let summary = write_report(dir, "replay", &report)?;
    let mut lines = String::from("episode,ego_id\n");
    for (k, (id, log)) in egos.iter().zip(&logs).enumerate() {
        lines.push_str(&format!("{k},{id}\n"));
        write_trajectory_csv(fs::File::create(dir.join("traces").join(format!("traffic_{k:04}.csv")))?, log)?;
    }
    fs::write(dir.join("egos.csv"), lines)?;
    Ok(summary)
}

fn cmd_train(run: &RunConfig) -> Result<()> {
    for &seed in &run.seeds {
        let dir = run.out.join(format!("seed_{seed}"));
        let out = trainer::train(run, seed, Some(&dir))?;
        println!(
            "seed {seed}: {} steps, {} episodes, {} unsafe events, {} updates -> {}",
            run.train.total_steps,
            out.episodes,
            out.unsafe_events,
            out.updates,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_eval(run: &RunConfig, args: &EvalArgs) -> Result<()> {
    let agent = load_agent(args.checkpoint.as_deref(), run)?;
    let episodes = args.episodes.unwrap_or(run.eval.episodes);
    let summary = match args.source {
        Source::Sim => {
            let report = trainer::evaluate(&agent, run, episodes)?;
            write_report(&run.out, "eval", &report)?
        }
        Source::Highd => {
            let data = args
                .data
                .as_deref()
                .ok_or_else(|| Error::config("--source highd requires --data <dir>"))?;
            let rec = Recording::load(data, run.env.dt)?;
            let egos = if episodes == 0 {
                Vec::new()
            } else {
                highd::pick_egos(&rec, episodes, args.min_steps, run.seeds[0])?
            };
            replay_report(&agent, run, &rec, &egos, args.min_steps, &run.out)?
        }
    };
    print!("{summary}");
    Ok(())
}

fn cmd_replay(run: &RunConfig, args: &ReplayArgs) -> Result<()> {
    let agent = load_agent(args.checkpoint.as_deref(), run)?;
    let rec = Recording::load(&args.data, run.env.dt)?;
    let egos = match args.ego {
        Some(id) => vec![id; args.episodes],
        None => highd::pick_egos(&rec, args.episodes, args.min_steps, run.seeds[0])?,
    };
    print!("{}", replay_report(&agent, run, &rec, &egos, args.min_steps, &run.out)?);
    Ok(())
}

fn cmd_ablate(run: &RunConfig, args: &AblateArgs) -> Result<()> {
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<AblationMode>())
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<(AblationMode, Option<Aggregate>)> = Vec::new();
    let mut summary = String::new();
    for &mode in &modes {
        let mut cfg = run.clone();
        cfg.mode = mode;
        let mut pooled: Vec<EpisodeMetrics> = Vec::new();
        for &seed in &run.seeds {
            let dir = run.out.join(mode.name()).join(format!("seed_{seed}"));
            let out = trainer::train(&cfg, seed, Some(&dir))?;
            let report = trainer::evaluate(&out.agent, &cfg, cfg.eval.episodes)?;
            write_report(&dir.join("eval"), mode.name(), &report)?;
            pooled.extend(report.episodes);
        }
        let agg = aggregate(&pooled);
        summary.push_str(&summary_text(mode.name(), agg.as_ref()));
        rows.push((mode, agg));
    }
    let mut csv = String::from("mode,episodes,AR,AS,NL,VS,VA,CR\n");
    for (mode, agg) in &rows {
        match agg {
            Some(a) => csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                mode.name(),
                a.episodes,
                a.ar,
                a.as_,
                a.nl,
                a.vs,
                a.va,
                a.cr
            )),
            None => csv.push_str(&format!("{},0,,,,,,\n", mode.name())),
        }
    }
    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join("ablation.csv"), csv)?;
    fs::write(run.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_fixture(run: &RunConfig, args: &FixtureArgs) -> Result<()> {
    if args.duration.is_nan() || args.duration <= 0.0 {
        return Err(Error::config("--duration must be positive"));
    }
    let spec = match args.scenario {
        Scenario::Empty => FixtureSpec::default(),
        Scenario::Constant => FixtureSpec::platoon(1, args.speed, args.gap, args.duration),
        Scenario::Platoon => FixtureSpec::platoon(args.vehicles, args.speed, args.gap, args.duration),
        Scenario::CutIn => FixtureSpec::cut_in(args.duration),
        Scenario::FreeFlow => FixtureSpec::free_flow(args.vehicles, args.duration, run.seeds[0]),
        Scenario::StoppedLeader => FixtureSpec::stopped_leader(args.gap, args.speed, args.duration),
    };
    highd::make_fixture(&spec, &run.out)?;
    println!("wrote {} vehicles to {}", spec.vehicles.len(), run.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let run = load_config(cli)?;
    match &cli.command {
        Command::Train => cmd_train(&run),
        Command::Eval(a) => cmd_eval(&run, a),
        Command::Replay(a) => cmd_replay(&run, a),
        Command::Ablate(a) => cmd_ablate(&run, a),
        Command::Fixture(a) => cmd_fixture(&run, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
