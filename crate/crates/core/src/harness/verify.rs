//! Randomized property checks run by the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{checkpoint_bytes, checkpoint_from_bytes, RunState};
use super::config::RunConfig;
use crate::env::{reset, step, EnvConfig, Maneuver, VehicleAction};
use crate::game::{
    format_game, is_convex, core_violations, parse_game, random_supermodular_game, shapley_exact,
    shapley_permutation_mc, CharacteristicTable, PermutationSampling, SUM_TOL,
};
use crate::marl::Algorithm;
use crate::nn::{backward, forward, soft_update, NetSpec, ParamVector};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// First failing case, if any.
    pub failure: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<Option<String>>;

fn random_game(rng: &mut ChaCha8Rng, n: usize) -> CharacteristicTable {
    CharacteristicTable::from_fn(n, |c| {
        if c.is_empty() {
            0.0
        } else {
            rng.random_range(0.0..10.0)
        }
    })
    .expect("finite nonnegative worths")
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn efficiency(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=7);
    let g = random_game(rng, n);
    let x = shapley_exact(&g)?;
    Ok((!close(x.total(), g.grand_value(), SUM_TOL))
        .then(|| format!("n={n}: sum {} vs v(N) {}", x.total(), g.grand_value())))
}

fn symmetry(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(2..=7);
    let by_size: Vec<f64> = (0..=n).map(|s| if s == 0 { 0.0 } else { rng.random_range(0.0..10.0) }).collect();
    let g = CharacteristicTable::from_fn(n, |c| by_size[c.len()])?;
    let x = shapley_exact(&g)?;
    let share = g.grand_value() / n as f64;
    Ok(x.iter()
        .position(|xi| !close(*xi, share, 1e-9))
        .map(|i| format!("n={n}: agent {} gets {} instead of {share}", i + 1, x[i])))
}

fn dummy(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=6);
    let base = random_game(rng, n);
    let c = rng.random_range(0.0..5.0);
    let g = CharacteristicTable::from_fn(n + 1, |s| {
        base.value(s.without(n)) + if s.contains(n) { c } else { 0.0 }
    })?;
    let x = shapley_exact(&g)?;
    Ok((!close(x[n], c, 1e-9)).then(|| format!("dummy paid {} instead of {c}", x[n])))
}

fn additivity(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=6);
    let (a, b) = (random_game(rng, n), random_game(rng, n));
    let (xa, xb, xs) = (shapley_exact(&a)?, shapley_exact(&b)?, shapley_exact(&a.add(&b)?)?);
    Ok((0..n)
        .find(|&i| !close(xs[i], xa[i] + xb[i], 1e-9))
        .map(|i| format!("agent {}: {} vs {}", i + 1, xs[i], xa[i] + xb[i])))
}

fn permutation_average(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=6);
    let g = random_game(rng, n);
    let exact = shapley_exact(&g)?;
    let all = shapley_permutation_mc(&g, PermutationSampling::Exhaustive)?;
    Ok((0..n)
        .find(|&i| (exact[i] - all[i]).abs() > 1e-9)
        .map(|i| format!("agent {}: {} vs {}", i + 1, exact[i], all[i])))
}

fn supermodular_core(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=7);
    let g = random_supermodular_game(n, rng.random())?;
    if !is_convex(&g)?.is_convex() {
        return Ok(Some(format!("generated game with n={n} is not convex")));
    }
    let x = shapley_exact(&g)?;
    let report = core_violations(&g, &x)?;
    Ok((!report.in_core()).then(|| format!("Shapley value outside the core: {:?}", report.violations)))
}

fn game_format(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(0..=6);
    let g = random_game(rng, n);
    let back = parse_game(&format_game(&g))?;
    Ok((back != g).then(|| format!("n={n} table changed after a round trip")))
}

fn network_gradient(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let input = rng.random_range(1..=5);
    let hidden = rng.random_range(1..=6);
    let output = rng.random_range(1..=3);
    let spec = NetSpec::mlp(input, &[hidden], output)?;
    let params = ParamVector::init(&spec, rng);
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = backward(&spec, &params, &x, &up)?;
    let objective = |p: &ParamVector, x: &[f64]| -> Result<f64> {
        Ok(forward(&spec, p, x)?.iter().zip(&up).map(|(o, u)| o * u).sum())
    };
    let h = 1e-6;
    let raw = params.clone().into_vec();
    for k in 0..raw.len() {
        let mut plus = raw.clone();
        let mut minus = raw.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (objective(&ParamVector::from_vec(&spec, plus)?, &x)?
            - objective(&ParamVector::from_vec(&spec, minus)?, &x)?)
            / (2.0 * h);
        if (fd - g.params[k]).abs() > 1e-6 * (1.0 + fd.abs()) {
            return Ok(Some(format!("parameter {k}: analytic {} vs numeric {fd}", g.params[k])));
        }
    }
    for k in 0..input {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (objective(&params, &plus)? - objective(&params, &minus)?) / (2.0 * h);
        if (fd - g.input[k]).abs() > 1e-6 * (1.0 + fd.abs()) {
            return Ok(Some(format!("input {k}: analytic {} vs numeric {fd}", g.input[k])));
        }
    }
    Ok(None)
}

fn soft_update_bounds(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let spec = NetSpec::mlp(3, &[4], 2)?;
    let a = ParamVector::init(&spec, rng);
    let b = ParamVector::init(&spec, rng);
    if soft_update(&a, &a, rng.random())? != a {
        return Ok(Some("equal networks moved".into()));
    }
    if soft_update(&a, &b, 1.0)? != b || soft_update(&a, &b, 0.0)? != a {
        return Ok(Some("tau of 0 or 1 did not copy".into()));
    }
    Ok(None)
}

fn traffic_invariants(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let n = rng.random_range(1..=24);
    let cfg = EnvConfig {
        n_vehicles: n,
        n_cavs: rng.random_range(0..=n),
        ..Default::default()
    };
    let mut state = reset(&cfg, rng.random())?;
    for t in 0..200 {
        let actions: Vec<VehicleAction> = (0..n)
            .map(|_| VehicleAction::one_hot(Maneuver::ALL[rng.random_range(0..4)]))
            .collect();
        let out = step(&state, &actions, &cfg)?;
        state = out.state;
        for (i, v) in state.vehicles.iter().enumerate() {
            if !(0.0..=cfg.v_max).contains(&v.velocity) || v.acceleration.abs() > cfg.a_max + 1e-12 {
                return Ok(Some(format!("step {t}, vehicle {i}: v={} a={}", v.velocity, v.acceleration)));
            }
        }
        if let Some(gap) = state.min_same_lane_gap(&cfg).filter(|g| *g <= 0.0) {
            return Ok(Some(format!("step {t}: gap {gap}")));
        }
        if let Some(r) = out.rewards.iter().find(|r| **r < 0.0) {
            return Ok(Some(format!("step {t}: negative reward {r}")));
        }
    }
    Ok(None)
}

fn reset_determinism(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let cfg = EnvConfig {
        n_vehicles: rng.random_range(1..=12),
        n_cavs: 0,
        ..Default::default()
    };
    let seed = rng.random();
    Ok((reset(&cfg, seed)? != reset(&cfg, seed)?).then(|| format!("seed {seed} gave two states")))
}

fn checkpoint_round_trip(rng: &mut ChaCha8Rng) -> Result<Option<String>> {
    let mut config = RunConfig {
        algorithm: [Algorithm::Shapley, Algorithm::Maddpg, Algorithm::Independent][rng.random_range(0..3)],
        episodes: 3,
        steps: 8,
        ..Default::default()
    };
    config.env.n_vehicles = 3;
    config.env.n_cavs = 3;
    config.trainer.hidden = vec![6];
    config.trainer.batch_size = 4;
    config.trainer.warmup_batches = 1;
    let mut state = RunState::new(&config, rng.random())?;
    state.run_to_end(None)?;
    let bytes = checkpoint_bytes(&state);
    let back = checkpoint_bytes(&checkpoint_from_bytes(&bytes)?);
    Ok((back != bytes).then(|| format!("{} checkpoint changed after a round trip", config.algorithm)))
}

const CHECKS: [(&str, usize, Check); 12] = [
    ("shapley efficiency", 200, efficiency),
    ("shapley symmetry", 200, symmetry),
    ("shapley dummy", 200, dummy),
    ("shapley additivity", 200, additivity),
    ("exhaustive permutation average", 100, permutation_average),
    ("supermodular games are convex with core Shapley value", 100, supermodular_core),
    ("game file round trip", 200, game_format),
    ("network gradients match finite differences", 50, network_gradient),
    ("soft update bounds", 50, soft_update_bounds),
    ("traffic safety invariants", 20, traffic_invariants),
    ("reset determinism", 50, reset_determinism),
    ("checkpoint round trip", 3, checkpoint_round_trip),
];

/// Runs every check with cases drawn from `seed`; a check stops at its first failure.
pub fn run_verification(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, cases, check)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name.len() as u64);
            let mut failure = None;
            for case in 0..cases {
                failure = match check(&mut rng) {
                    Ok(f) => f,
                    Err(e) => Some(format!("error: {e}")),
                }
                .map(|f| format!("case {case}: {f}"));
                if failure.is_some() {
                    break;
                }
            }
            CheckResult { name, cases, failure }
        })
        .collect()
}
