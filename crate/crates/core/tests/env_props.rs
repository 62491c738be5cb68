use coopshap::env::{
    coalition_reward, individual_reward, observe, reset, scripted_driver_action, step, EnvConfig,
    Maneuver, VehicleAction, WorldState, OBS_DIM,
};
use coopshap::game::CoalitionMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_actions(rng: &mut ChaCha8Rng, n: usize) -> Vec<VehicleAction> {
    (0..n)
        .map(|_| VehicleAction::one_hot(Maneuver::ALL[rng.random_range(0..4)]))
        .collect()
}

fn check_state(s: &WorldState, cfg: &EnvConfig) {
    if let Some(gap) = s.min_same_lane_gap(cfg) {
        assert!(gap > 0.0, "step {}: overlap, gap {gap}", s.step);
    }
    for v in &s.vehicles {
        assert!((0.0..=cfg.v_max).contains(&v.velocity));
        assert!(v.acceleration.abs() <= cfg.a_max);
        assert!((0.0..cfg.loop_length).contains(&v.position));
    }
}

#[test]
fn random_rollouts_never_collide() {
    let mut total = 0;
    for (n, seed) in [(4, 1u64), (12, 2), (20, 3), (30, 4), (9, 5)] {
        let cfg = EnvConfig {
            n_vehicles: n,
            n_cavs: n,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = reset(&cfg, seed).unwrap();
        check_state(&s, &cfg);
        for _ in 0..2_000 {
            let out = step(&s, &random_actions(&mut rng, n), &cfg).unwrap();
            assert!(out.rewards.iter().all(|r| *r >= 0.0));
            s = out.state;
            check_state(&s, &cfg);
            total += 1;
        }
    }
    assert_eq!(total, 10_000);
}

#[test]
fn scripted_traffic_never_collides() {
    let cfg = EnvConfig {
        n_vehicles: 24,
        n_cavs: 0,
        ..Default::default()
    };
    let mut s = reset(&cfg, 11).unwrap();
    for _ in 0..2_000 {
        let actions: Vec<_> = (0..cfg.n_vehicles)
            .map(|i| scripted_driver_action(&s, i, &cfg).unwrap())
            .collect();
        s = step(&s, &actions, &cfg).unwrap().state;
        check_state(&s, &cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_is_deterministic(seed in any::<u64>(), n in 1usize..16) {
        let cfg = EnvConfig { n_vehicles: n, n_cavs: n, ..Default::default() };
        let s = reset(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = random_actions(&mut rng, n);
        prop_assert_eq!(step(&s, &actions, &cfg).unwrap(), step(&s, &actions, &cfg).unwrap());
    }

    #[test]
    fn rollouts_keep_gaps(seed in any::<u64>(), n in 2usize..31) {
        let cfg = EnvConfig { n_vehicles: n, n_cavs: n, ..Default::default() };
        let mut s = reset(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..50 {
            s = step(&s, &random_actions(&mut rng, n), &cfg).unwrap().state;
            prop_assert!(s.min_same_lane_gap(&cfg).is_none_or(|g| g > 0.0));
        }
    }

    #[test]
    fn coalition_reward_is_additive(
        r in proptest::collection::vec(0.0f64..100.0, 8),
        c in 0u32..256,
        d in 0u32..256,
    ) {
        let (c, d) = (CoalitionMask::from_bits(c), CoalitionMask::from_bits(d));
        let lhs = coalition_reward(&r, c.union(d)).unwrap() + coalition_reward(&r, c.intersection(d)).unwrap();
        let rhs = coalition_reward(&r, c).unwrap() + coalition_reward(&r, d).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn rewards_are_nonnegative(v in 0.0f64..33.0, a in -4.0f64..4.0, m in 0usize..4, seed in any::<u64>()) {
        let cfg = EnvConfig::default();
        let mut veh = reset(&cfg, seed).unwrap().vehicles[0];
        veh.velocity = v;
        veh.acceleration = a;
        prop_assert!(individual_reward(&veh, Maneuver::ALL[m], &cfg) >= 0.0);
    }

    #[test]
    fn observations_have_fixed_length(seed in any::<u64>(), n in 1usize..31) {
        let cfg = EnvConfig { n_vehicles: n, n_cavs: 0, ..Default::default() };
        let s = reset(&cfg, seed).unwrap();
        for i in 0..n {
            let o = observe(&s, i, &cfg);
            prop_assert_eq!(o.len(), OBS_DIM);
            prop_assert!(o.iter().all(|x| x.is_finite()));
        }
    }
}
