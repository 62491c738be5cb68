use coopshap::env::EnvConfig;
use coopshap::game::CoalitionMask;
use coopshap::marl::{Algorithm, StepRecord, Trainer, TrainerConfig, UpdateOutcome};

fn small() -> TrainerConfig {
    TrainerConfig {
        hidden: vec![16, 16],
        batch_size: 8,
        warmup_batches: 2,
        buffer_capacity: 1_000,
        noise_decay_episodes: 4,
        ..Default::default()
    }
}

fn env(n_vehicles: usize, n_cavs: usize) -> EnvConfig {
    EnvConfig {
        n_vehicles,
        n_cavs,
        ..Default::default()
    }
}

#[test]
fn zero_steps_means_no_updates() {
    let mut t = Trainer::new(Algorithm::Shapley, &env(4, 3), small(), 1).unwrap();
    let m = t.train_episode(&env(4, 3), 0, 7, None).unwrap();
    assert_eq!(m.steps, 0);
    assert_eq!(m.updates, 0);
    assert_eq!(m.system_reward, 0.0);
    assert!(m.critic_loss.is_none());
    assert!(t.buffer.is_empty());
}

#[test]
fn updates_wait_for_a_warm_buffer() {
    let e = env(3, 3);
    let mut t = Trainer::new(Algorithm::Shapley, &e, small(), 1).unwrap();
    let before = t.clone();
    assert_eq!(t.update().unwrap(), UpdateOutcome::NotReady);
    assert_eq!(t, before);
    t.train_episode(&e, 20, 0, None).unwrap();
    assert!(matches!(t.update().unwrap(), UpdateOutcome::Updated { .. }));
}

#[test]
fn lone_cav_always_forms_the_singleton_coalition() {
    let e = env(5, 1);
    let mut t = Trainer::new(Algorithm::Shapley, &e, small(), 3).unwrap();
    let mut seen = Vec::new();
    let mut obs = |r: &StepRecord<'_>| seen.push(r.coalition);
    for ep in 0..3 {
        t.train_episode(&e, 20, ep, Some(&mut obs)).unwrap();
    }
    assert_eq!(seen.len(), 60);
    assert!(seen.iter().all(|c| *c == CoalitionMask::singleton(0)));
    assert!(t.buffer.slots().iter().all(|tr| tr.coalition == CoalitionMask::singleton(0)));
}

#[test]
fn training_is_reproducible() {
    let e = env(6, 4);
    let run = || {
        let mut t = Trainer::new(Algorithm::Shapley, &e, small(), 42).unwrap();
        (0..4)
            .map(|ep| t.train_episode(&e, 20, ep, None).unwrap())
            .collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.iter().any(|m| m.updates > 0));
}

#[test]
fn single_agent_baselines_coincide() {
    let e = env(4, 1);
    let run = |alg| {
        let mut t = Trainer::new(alg, &e, small(), 9).unwrap();
        let metrics: Vec<_> = (0..4)
            .map(|ep| t.train_episode(&e, 20, ep, None).unwrap())
            .collect();
        (metrics, t.agents.actors, t.agents.critics)
    };
    let (m1, a1, c1) = run(Algorithm::Maddpg);
    let (m2, a2, c2) = run(Algorithm::Independent);
    assert_eq!(m1, m2);
    assert_eq!(a1, a2);
    assert_eq!(c1, c2);
}

#[test]
fn system_reward_matches_step_trace() {
    let e = env(6, 3);
    let mut t = Trainer::new(Algorithm::Maddpg, &e, small(), 5).unwrap();
    let mut total = 0.0;
    let mut obs = |r: &StepRecord<'_>| {
        total += r.rewards.iter().sum::<f64>();
    };
    let m = t.train_episode(&e, 25, 3, Some(&mut obs)).unwrap();
    assert_eq!(m.system_reward, total);
    assert!((0.0..=3.0).contains(&m.mean_comfort));
}

#[test]
fn evaluation_is_greedy_and_pure() {
    let e = env(6, 3);
    let mut t = Trainer::new(Algorithm::Shapley, &e, small(), 5).unwrap();
    t.train_episode(&e, 25, 0, None).unwrap();
    let before = t.clone();
    let a = t.evaluate(&e, 50, 99, None).unwrap();
    assert_eq!(a, t.evaluate(&e, 50, 99, None).unwrap());
    assert_eq!(t, before);
}

#[test]
fn mismatched_environment_is_rejected() {
    let mut t = Trainer::new(Algorithm::Shapley, &env(4, 2), small(), 0).unwrap();
    assert!(t.train_episode(&env(4, 3), 5, 0, None).is_err());
    let big = TrainerConfig { n_exact: 2, ..small() };
    assert!(Trainer::new(Algorithm::Shapley, &env(4, 3), big, 0).is_err());
}
