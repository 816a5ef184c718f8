use hpa_moec::agent::MoecAgent;
use hpa_moec::config::RunConfig;
use hpa_moec::env::{Controls, DrivingEnv};
use hpa_moec::trainer::{self, AblationMode, FnPolicy};

fn tiny(mode: AblationMode, steps: u64) -> RunConfig {
    let mut run = RunConfig::desk();
    run.mode = mode;
    run.train.total_steps = steps;
    run.train.warmup = 64;
    run.train.batch_size = 16;
    run.agent.hidden = vec![8];
    run.eval.episodes = 2;
    run.env.max_episode_time = 20.0;
    run
}

#[test]
fn desk_smoke_run_has_finite_losses_and_decaying_weight() {
    let mut run = RunConfig::desk();
    run.train.total_steps = 5000;
    let out = trainer::train(&run, 0, None).unwrap();
    assert_eq!(out.log.len(), 5000);
    assert_eq!(out.updates, 5000 - run.train.warmup as u64 + 1);
    assert!(out.log.iter().all(|r| r.critic_loss.is_finite() && r.actor_loss.is_finite() && r.total_reward.is_finite()));
    assert!(out.log.windows(2).all(|w| w[1].weight <= w[0].weight));
    assert!(out.path_builds > 0);
}

#[test]
fn no_updates_before_warmup() {
    let mut run = tiny(AblationMode::Full, 50);
    run.train.warmup = 100;
    let out = trainer::train(&run, 1, None).unwrap();
    assert_eq!(out.updates, 0);
    assert!(out.log.iter().all(|r| r.critic_loss == 0.0 && r.actor_loss == 0.0));
}

#[test]
fn discrete_mode_never_builds_paths() {
    let out = trainer::train(&tiny(AblationMode::DaMo, 300), 2, None).unwrap();
    assert_eq!(out.path_builds, 0);
    assert!(out.updates > 0);
}

#[test]
fn single_objective_mode_trains_one_critic_group() {
    let out = trainer::train(&tiny(AblationMode::Hpa, 200), 3, None).unwrap();
    assert_eq!(out.agent.config().objectives, 1);
    assert_eq!(out.agent.config().weights, vec![1.0]);
}

#[test]
fn evaluation_is_deterministic_and_empty_is_none() {
    let run = tiny(AblationMode::Full, 0);
    let agent = MoecAgent::new(trainer::agent_config(&run, 4)).unwrap();
    let a = trainer::evaluate(&agent, &run, 2).unwrap();
    let b = trainer::evaluate(&agent, &run, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.aggregate.is_some());
    let none = trainer::evaluate(&agent, &run, 0).unwrap();
    assert!(none.aggregate.is_none() && none.episodes.is_empty());
}

#[test]
fn braking_alone_on_an_empty_road_matches_closed_form() {
    let mut run = RunConfig::default();
    run.eval.density = 0.0;
    run.env.ego_speed_range = (12.0, 12.0);
    run.env.max_episode_time = 10.0;
    let (v0, a, dt) = (12.0, run.env.vehicle.max_accel, run.env.dt);
    let steps = (run.env.max_episode_time / dt).round() as usize;

    let mut brake = FnPolicy(|_: &dyn DrivingEnv| Controls { steer: 0.0, accel: -1e3 });
    let report = trainer::evaluate_with(&mut brake, &run, 1).unwrap();
    let m = report.episodes[0];
    let expect_speed = (1..=steps).map(|k| (v0 - a * dt * k as f64).max(0.0)).sum::<f64>() / steps as f64;
    assert_eq!(m.steps, steps);
    assert_eq!(m.cr, 0.0);
    assert_eq!(m.lane_changes, 0);
    assert!((m.avg_speed - expect_speed).abs() < 1e-9, "{} vs {expect_speed}", m.avg_speed);
    assert_eq!(m.accel_var, 0.0);
    assert_eq!(m.steer_var, 0.0);

    let mut coast = FnPolicy(|_: &dyn DrivingEnv| Controls::default());
    let m = trainer::evaluate_with(&mut coast, &run, 1).unwrap().episodes[0];
    assert!((m.avg_speed - v0).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_and_mode_check() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny(AblationMode::HpaMo, 150);
    let out = trainer::train(&run, 6, Some(dir.path())).unwrap();
    for f in ["train_log.csv", "uncertainty.csv", "resolved.cfg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let (loaded, step) = MoecAgent::load(&dir.path().join("checkpoint")).unwrap();
    assert_eq!(step, 150);
    let a = trainer::evaluate(&out.agent, &run, 1).unwrap();
    let b = trainer::evaluate(&loaded, &run, 1).unwrap();
    assert_eq!(a, b);
    trainer::check_checkpoint(&loaded, &run).unwrap();

    let mut other = run.clone();
    other.mode = AblationMode::Full;
    assert!(trainer::check_checkpoint(&loaded, &other).is_err());
    other.mode = AblationMode::Hpa;
    assert!(trainer::check_checkpoint(&loaded, &other).is_err());
}

#[test]
fn same_seed_same_log() {
    let run = tiny(AblationMode::Full, 150);
    let a = trainer::train(&run, 7, None).unwrap();
    let b = trainer::train(&run, 7, None).unwrap();
    assert_eq!(a.log, b.log);
    let c = trainer::train(&run, 8, None).unwrap();
    assert_ne!(a.log, c.log);
}
