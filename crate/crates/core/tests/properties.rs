use hpa_moec::agent::{AgentConfig, MoecAgent, Transition};
use hpa_moec::env::OBS_DIM;
use hpa_moec::explore::{candidate_set, exploration_weight, softmax, uncertainty};
use hpa_moec::highd::{parse_tracks, write_tracks, Carriageway, Direction, FixtureSpec, FixtureVehicle, TrackSample};
use hpa_moec::metrics::{lane_change_count, variance};
use hpa_moec::trainer::ReplayBuffer;
use proptest::prelude::*;

fn transition(k: usize) -> Transition {
    Transition {
        state: [k as f64; OBS_DIM],
        option: k % 3,
        params: [0.0; 6],
        rewards: vec![k as f64],
        next_state: [0.0; OBS_DIM],
        done: false,
    }
}

fn fixture_csv(spec: &FixtureSpec) -> String {
    let mut s = String::from("frame,id,x,y,width,height,xVelocity,yVelocity,laneId\n");
    for (frame, id, x, y, vx, vy, lane) in spec.records() {
        s.push_str(&format!(
            "{frame},{id},{x},{y},{},{},{vx},{vy},{lane}\n",
            spec.vehicle_length, spec.vehicle_width
        ));
    }
    s
}

fn arb_fixture() -> impl Strategy<Value = FixtureSpec> {
    prop::collection::vec(
        (0usize..3, 0.0f64..200.0, 0.0f64..25.0, -2.0f64..1.0, prop::option::of((0.5f64..5.0, 0usize..3, 1.0f64..4.0)), any::<bool>()),
        0..5,
    )
    .prop_map(|vs| {
        let mut spec = FixtureSpec::default();
        for (k, (lane, x0, speed, accel, lc, upper)) in vs.into_iter().enumerate() {
            let mut v = FixtureVehicle::new(k as i64 + 1, lane, x0, speed, 8.0);
            v.accel = accel;
            v.lane_change = lc;
            v.direction = if upper { Direction::Upper } else { Direction::Lower };
            spec.vehicles.push(v);
        }
        spec
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_buffer_keeps_newest(capacity in 1usize..40, inserts in 0usize..120) {
        let mut buf = ReplayBuffer::new(capacity);
        for k in 0..inserts {
            buf.push(transition(k));
            prop_assert!(buf.len() <= capacity);
        }
        let kept: Vec<f64> = buf.iter().map(|t| t.rewards[0]).collect();
        let expect: Vec<f64> = (inserts.saturating_sub(capacity)..inserts).map(|k| k as f64).collect();
        prop_assert_eq!(kept, expect);
    }

    #[test]
    fn weight_decays_strictly_then_holds(total in 2u64..5000, floor in 1e-4f64..0.5) {
        let mut prev = exploration_weight(0, total, floor);
        prop_assert!((prev - 1.0).abs() < 1e-15);
        for t in 1..=total {
            let w = exploration_weight(t, total, floor);
            prop_assert!(w < prev);
            prev = w;
        }
        prop_assert!((prev - floor).abs() < 1e-12);
        prop_assert_eq!(exploration_weight(total + 7, total, floor), exploration_weight(total, total, floor));
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(v in prop::array::uniform3(-30.0f64..30.0), shift in -100.0f64..100.0) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        let q = softmax(&v.map(|x| x + shift));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn candidates_are_saturated(mu in prop::array::uniform6(-1.0f64..1.0), g in prop::array::uniform6(-50.0f64..50.0), weight in 0.0f64..1.0, k in 1usize..12) {
        let c = candidate_set(&mu, &g, k, weight);
        prop_assert_eq!(c.len(), k + 1);
        prop_assert_eq!(c[0], mu);
        prop_assert!(c.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn variance_is_non_negative(v in prop::collection::vec(-1e3f64..1e3, 0..50)) {
        prop_assert!(variance(&v) >= 0.0);
    }

    #[test]
    fn lane_changes_never_exceed_transitions(lanes in prop::collection::vec(0usize..3, 0..200)) {
        let transitions = lanes.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(lane_change_count(&lanes, 0.1, 1.0) <= transitions);
        prop_assert!(lane_change_count(&lanes, 0.1, 0.0) <= transitions);
    }

    #[test]
    fn resampled_tracks_round_trip(spec in arb_fixture()) {
        let dt = 0.1;
        let first = parse_tracks(fixture_csv(&spec).as_bytes(), spec.frame_rate, dt).unwrap();
        let mut buf = Vec::new();
        write_tracks(&mut buf, &first).unwrap();
        let second = parse_tracks(buf.as_slice(), 1.0 / dt, dt).unwrap();
        prop_assert_eq!(first.tracks.len(), spec.vehicles.len());
        prop_assert_eq!(second.tracks.len(), first.tracks.len());
        for (id, a) in &first.tracks {
            let b = &second.tracks[id];
            prop_assert_eq!(a.samples.len(), b.samples.len());
            for (p, q) in a.samples.iter().zip(&b.samples) {
                prop_assert_eq!(p.tick, q.tick);
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
                prop_assert_eq!(p.lane_id, q.lane_id);
            }
        }
    }

    #[test]
    fn lane_ids_round_trip_through_the_simulator_frame(spec in arb_fixture()) {
        let meta = spec.meta();
        for (frame, id, x, y, vx, vy, lane_id) in spec.records() {
            let dir = spec.vehicles.iter().find(|v| v.id == id).unwrap().direction;
            let c = Carriageway::new(&meta, dir);
            let s = TrackSample { tick: frame, x, y, vx, vy, lane_id };
            let (_, y_sim, _, _) = c.to_sim(&s, spec.vehicle_length, spec.vehicle_width);
            prop_assert_eq!(c.lane_id(c.lane_at(y_sim)), lane_id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn state_variance_ignores_critic_order(seed in 0u64..1000, rot in 1usize..3) {
        let cfg = AgentConfig {
            ensemble_size: 3,
            hidden: vec![5],
            seed,
            ..AgentConfig::default()
        };
        let agent = MoecAgent::new(cfg.clone()).unwrap();
        let critics: Vec<Vec<_>> = (0..2)
            .map(|i| (0..3).map(|j| agent.critic(i, (j + rot) % 3).clone()).collect())
            .collect();
        let permuted = MoecAgent::from_networks(cfg, agent.actor().clone(), critics).unwrap();
        let mut s = [0.0; OBS_DIM];
        for (k, v) in s.iter_mut().enumerate() {
            *v = ((seed as f64 + k as f64) * 0.37).sin() * 3.0;
        }
        let p = [0.1, -0.4, 0.3, 0.9, -0.7, 0.2];
        let a = uncertainty(&agent, &s, &p).unwrap();
        let b = uncertainty(&permuted, &s, &p).unwrap();
        prop_assert!((a.state - b.state).abs() < 1e-12);
        for (x, y) in a.per_option.iter().zip(&b.per_option) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
