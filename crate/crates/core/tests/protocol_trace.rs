use hbsel_core::channel::ChannelState;
use hbsel_core::protocol::{episode_seed, update_cumulative_rate, SeedStream, Simulator};
use hbsel_core::schedulers::{AdaptiveTopK, FixedSet, Greedy, Idle, TopK, UserSelector};
use hbsel_core::SystemConfig;

fn quick_config(users: usize, steps: usize, n_s: usize) -> SystemConfig {
    let mut cfg = SystemConfig::default();
    cfg.num_users = users;
    cfg.n_max = users.min(4);
    cfg.n_rf = cfg.n_max;
    cfg.steps = steps;
    cfg.n_s = n_s;
    cfg
}

#[test]
fn single_slot_single_user() {
    let cfg = quick_config(1, 1, 40);
    let sim = Simulator::new(cfg.clone()).unwrap();
    let t = sim.run_episode(0, 5, &Greedy, true).unwrap();
    let slot = &t.slots.as_ref().unwrap()[0];
    assert_eq!(slot.selected, vec![0]);
    let r = slot.rates[0];
    assert!(r > 0.0);
    assert_eq!(t.final_rates[0], (1.0 - cfg.delta) * 1.0 + cfg.delta * r);
}

#[test]
fn beam_sweeps_happen_once_per_long_block() {
    let cfg = quick_config(5, 120, 40);
    let sim = Simulator::new(cfg).unwrap();
    let t = sim.run_episode(0, 1, &TopK(Some(1)), true).unwrap();
    assert_eq!(t.beam_sweeps, 3);
    let slots = t.slots.unwrap();
    let sweeps: Vec<usize> = slots.iter().filter(|s| s.beam_sweep).map(|s| s.t).collect();
    assert_eq!(sweeps, vec![1, 41, 81]);
    for block in slots.chunks(40) {
        for s in &block[1..] {
            assert_eq!(s.beam_indices, block[0].beam_indices);
        }
    }
}

#[test]
fn weights_are_reciprocal_rates_and_ema_holds() {
    let cfg = quick_config(8, 60, 20);
    let sim = Simulator::new(cfg.clone()).unwrap();
    for selector in [&Greedy as &dyn UserSelector, &AdaptiveTopK, &TopK(None)] {
        let t = sim.run_episode(3, 77, selector, true).unwrap();
        let slots = t.slots.unwrap();
        let mut previous = vec![1.0; cfg.num_users];
        for s in &slots {
            for i in 0..cfg.num_users {
                assert_eq!(s.weights[i], 1.0 / previous[i]);
                assert!((s.weights[i] * previous[i] - 1.0).abs() <= 1e-12);
                let expected = update_cumulative_rate(previous[i], s.rates[i], cfg.delta);
                assert_eq!(s.cumulative[i], expected);
                if !s.selected.contains(&i) || !s.feasible {
                    assert_eq!(s.rates[i], 0.0);
                    assert_eq!(s.cumulative[i], (1.0 - cfg.delta) * previous[i]);
                }
                assert!(s.cumulative[i] > 0.0);
            }
            let q: f64 = s.weights.iter().zip(&s.rates).map(|(w, r)| w * r).sum();
            assert!((q - s.q).abs() <= 1e-12 * q.max(1.0));
            previous = s.cumulative.clone();
        }
        assert_eq!(previous, t.final_rates);
    }
}

#[test]
fn starved_users_gain_weight_geometrically() {
    let cfg = quick_config(4, 30, 10);
    let sim = Simulator::new(cfg.clone()).unwrap();
    let t = sim.run_episode(0, 9, &FixedSet(vec![0]), true).unwrap();
    for s in t.slots.unwrap() {
        let k = (s.t - 1) as i32;
        for i in 1..4 {
            let expected = (1.0 - cfg.delta).powi(-k);
            assert!(
                (s.weights[i] - expected).abs() <= 1e-12 * expected,
                "slot {} user {i}",
                s.t
            );
        }
    }
}

#[test]
fn every_scheduler_sees_the_same_channels() {
    let cfg = quick_config(10, 50, 20);
    let sim = Simulator::new(cfg.clone()).unwrap();
    let seed = episode_seed(cfg.seed, SeedStream::Test, 4);
    let record = |sel: &dyn UserSelector| {
        let mut states: Vec<ChannelState> = Vec::new();
        let mut beams = Vec::new();
        sim.run_episode_observed(4, seed, sel, false, &mut |v| {
            states.push(v.state.clone());
            beams.push(v.ctx.beams.indices.clone());
        })
        .unwrap();
        (states, beams)
    };
    let (s0, b0) = record(&Greedy);
    for sel in [&Idle as &dyn UserSelector, &TopK(Some(1)), &AdaptiveTopK] {
        let (s, b) = record(sel);
        assert_eq!(b, b0);
        assert_eq!(s.len(), s0.len());
        for (x, y) in s.iter().zip(&s0) {
            for i in 0..cfg.num_users {
                let (a, c) = (x.channel(i), y.channel(i));
                assert!(a
                    .iter()
                    .zip(c)
                    .all(|(p, q)| p.re.to_bits() == q.re.to_bits()
                        && p.im.to_bits() == q.im.to_bits()));
            }
        }
    }
}

#[test]
fn episodes_are_reproducible() {
    let cfg = quick_config(6, 30, 10);
    let sim = Simulator::new(cfg).unwrap();
    let a = sim
        .run_episodes(SeedStream::Test, 0..3, &Greedy, true)
        .unwrap();
    let b = sim
        .run_episodes(SeedStream::Test, 0..3, &Greedy, true)
        .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.final_rates, y.final_rates);
        let sx: Vec<_> = x
            .slots
            .as_ref()
            .unwrap()
            .iter()
            .map(|s| (s.selected.clone(), s.q))
            .collect();
        let sy: Vec<_> = y
            .slots
            .as_ref()
            .unwrap()
            .iter()
            .map(|s| (s.selected.clone(), s.q))
            .collect();
        assert_eq!(sx, sy);
    }
}

#[test]
fn idle_scheduler_serves_nobody() {
    let cfg = quick_config(3, 10, 5);
    let sim = Simulator::new(cfg.clone()).unwrap();
    let t = sim.run_episode(0, 3, &Idle, false).unwrap();
    assert!(t.selected_counts.iter().all(|&c| c == 0));
    let expected = (1.0 - cfg.delta).powi(10);
    assert!(t.final_rates.iter().all(|&r| (r - expected).abs() < 1e-15));
}
