//! Solution concepts over explicit characteristic tables.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coalition::CoalitionMask;
use super::table::{CharacteristicTable, Outcome, PayoffVector};
use crate::error::{invalid, Error, Result};

/// Default cap on the agent count for exhaustive `2^n` / `4^n` enumeration.
pub const DEFAULT_N_EXACT: usize = 12;

/// Tolerance for identities that hold exactly in real arithmetic.
pub const EXACT_TOL: f64 = 1e-12;

/// Tolerance for quantities accumulated over many table entries.
pub const SUM_TOL: f64 = 1e-9;

/// Largest `n` for which all `n!` permutations are enumerated.
pub const MAX_EXHAUSTIVE_PERMUTATIONS_N: usize = 10;

/// Shapley weights `w[s] = s!(n-s-1)!/n!` for `s = 0..n`.
///
/// Built by the running product `w[s] = w[s-1] * s / (n-s)` starting from
/// `w[0] = 1/n`, so no factorial is ever formed.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut w = Vec::with_capacity(n);
    w.push(1.0 / n as f64);
    for s in 1..n {
        let prev = w[s - 1];
        w.push(prev * s as f64 / (n - s) as f64);
    }
    w
}

/// How permutations are drawn by [`Solver::shapley_permutation_mc`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermutationSampling {
    /// `samples` uniform permutations from a ChaCha8 stream seeded with `seed`.
    Random { samples: usize, seed: u64 },
    /// Every permutation once, in ascending lexicographic rank.
    Exhaustive,
}

/// Verdict of [`Solver::is_convex`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convexity {
    Convex,
    /// The lexicographically smallest pair `(C, D)` (by mask value) with
    /// `v(C ∪ D) + v(C ∩ D) < v(C) + v(D)`.
    Violated {
        c: CoalitionMask,
        d: CoalitionMask,
    },
}

impl Convexity {
    pub fn is_convex(&self) -> bool {
        matches!(self, Convexity::Convex)
    }
}

/// Result of a core membership scan.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreReport {
    /// Coalitions with `x(C) < v(C)`, ascending by mask.
    pub violations: Vec<CoalitionMask>,
    /// Whether `x(N) <= v(N)`, i.e. the grand coalition can afford `x`.
    pub grand_feasible: bool,
}

impl CoreReport {
    pub fn is_stable(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn in_core(&self) -> bool {
        self.violations.is_empty() && self.grand_feasible
    }
}

/// Exact solution-concept engine with a configurable enumeration cap.
#[derive(Clone, Copy, Debug)]
pub struct Solver {
    pub n_exact: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            n_exact: DEFAULT_N_EXACT,
        }
    }
}

impl Solver {
    pub fn new(n_exact: usize) -> Self {
        Solver { n_exact }
    }

    fn check_capacity(&self, n: usize) -> Result<()> {
        if n > self.n_exact {
            return Err(Error::Capacity {
                what: "agent count for exact enumeration (n_exact)",
                got: n,
                limit: self.n_exact,
            });
        }
        Ok(())
    }

    /// Shapley value by direct summation over coalitions.
    pub fn shapley_exact(&self, game: &CharacteristicTable) -> Result<PayoffVector> {
        let n = game.n();
        self.check_capacity(n)?;
        let w = shapley_weights(n);
        let mut phi = vec![0.0; n];
        for c in CoalitionMask::all(n) {
            let vc = game.value(c);
            let wc = match w.get(c.len()) {
                Some(w) => *w,
                None => continue,
            };
            for (i, p) in phi.iter_mut().enumerate() {
                if !c.contains(i) {
                    *p += wc * (game.value(c.with(i)) - vc);
                }
            }
        }
        Ok(PayoffVector::new(phi))
    }

    /// Mean marginal contribution over sampled (or all) join orders.
    pub fn shapley_permutation_mc(
        &self,
        game: &CharacteristicTable,
        sampling: PermutationSampling,
    ) -> Result<PayoffVector> {
        let n = game.n();
        let mut acc = vec![0.0; n];
        let mut order: Vec<usize> = (0..n).collect();
        let count = match sampling {
            PermutationSampling::Random { samples, seed } => {
                if samples == 0 {
                    return Err(invalid("permutation sample count must be at least 1"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..samples {
                    order.shuffle(&mut rng);
                    accumulate_marginals(game, &order, &mut acc);
                }
                samples as f64
            }
            PermutationSampling::Exhaustive => {
                if n > MAX_EXHAUSTIVE_PERMUTATIONS_N {
                    return Err(Error::Capacity {
                        what: "agent count for exhaustive permutation enumeration",
                        got: n,
                        limit: MAX_EXHAUSTIVE_PERMUTATIONS_N,
                    });
                }
                let mut count = 0u64;
                loop {
                    accumulate_marginals(game, &order, &mut acc);
                    count += 1;
                    if !next_permutation(&mut order) {
                        break;
                    }
                }
                count as f64
            }
        };
        Ok(PayoffVector::new(
            acc.into_iter().map(|a| a / count).collect(),
        ))
    }

    /// Supermodularity scan over all `4^n` ordered pairs of coalitions.
    pub fn is_convex(&self, game: &CharacteristicTable) -> Result<Convexity> {
        let n = game.n();
        self.check_capacity(n)?;
        for c in CoalitionMask::all(n) {
            let vc = game.value(c);
            for d in CoalitionMask::all(n) {
                let lhs = game.value(c.union(d)) + game.value(c.intersection(d));
                if lhs < vc + game.value(d) - EXACT_TOL {
                    return Ok(Convexity::Violated { c, d });
                }
            }
        }
        Ok(Convexity::Convex)
    }

    /// Coalitions that would gain by deviating from payoff `x`.
    pub fn core_violations(
        &self,
        game: &CharacteristicTable,
        x: &PayoffVector,
    ) -> Result<CoreReport> {
        let n = game.n();
        self.check_capacity(n)?;
        if x.len() != n {
            return Err(invalid(format!(
                "payoff has {} entries for a {n}-agent game",
                x.len()
            )));
        }
        let violations = CoalitionMask::all(n)
            .filter(|c| x.coalition_sum(*c) < game.value(*c) - SUM_TOL)
            .collect();
        Ok(CoreReport {
            violations,
            grand_feasible: x.total() <= game.grand_value() + SUM_TOL,
        })
    }
}

fn accumulate_marginals(game: &CharacteristicTable, order: &[usize], acc: &mut [f64]) {
    let mut prefix = CoalitionMask::EMPTY;
    let mut prev = 0.0;
    for &i in order {
        prefix = prefix.with(i);
        let v = game.value(prefix);
        acc[i] += v - prev;
        prev = v;
    }
}

/// Advances `p` to the next permutation in lexicographic order; returns
/// `false` (leaving `p` unchanged) when `p` is already the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Shapley value with the default enumeration cap.
pub fn shapley_exact(game: &CharacteristicTable) -> Result<PayoffVector> {
    Solver::default().shapley_exact(game)
}

/// Permutation-sampling Shapley estimate with the default solver.
pub fn shapley_permutation_mc(
    game: &CharacteristicTable,
    sampling: PermutationSampling,
) -> Result<PayoffVector> {
    Solver::default().shapley_permutation_mc(game, sampling)
}

pub fn is_convex(game: &CharacteristicTable) -> Result<Convexity> {
    Solver::default().is_convex(game)
}

pub fn core_violations(game: &CharacteristicTable, x: &PayoffVector) -> Result<CoreReport> {
    Solver::default().core_violations(game, x)
}

/// Payoffs from joining in `order` (zero-based agent indices):
/// `x[order[j]] = v(order[..=j]) - v(order[..j])`.
pub fn marginal_vector(game: &CharacteristicTable, order: &[usize]) -> Result<PayoffVector> {
    let n = game.n();
    let mut seen = CoalitionMask::EMPTY;
    for &i in order {
        if i >= n || seen.contains(i) {
            return Err(invalid(format!(
                "order {order:?} is not a permutation of 0..{n}"
            )));
        }
        seen = seen.with(i);
    }
    if order.len() != n {
        return Err(invalid(format!(
            "order has {} entries for a {n}-agent game",
            order.len()
        )));
    }
    let mut x = vec![0.0; n];
    accumulate_marginals(game, order, &mut x);
    Ok(PayoffVector::new(x))
}

/// Whether every block of the outcome is paid exactly its worth.
pub fn efficiency_check(game: &CharacteristicTable, outcome: &Outcome) -> bool {
    outcome.payoff().len() == game.n()
        && outcome.structure().iter().all(|c| {
            (outcome.payoff().coalition_sum(*c) - game.value(*c)).abs() <= SUM_TOL
        })
}

/// The game `v(C) = Σ_{i∈C} individual[i]`.
pub fn additive_game(individual: &[f64]) -> Result<CharacteristicTable> {
    if let Some((i, x)) = individual
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x < 0.0)
    {
        return Err(invalid(format!(
            "individual value of agent {} is {x}; must be finite and nonnegative",
            i + 1
        )));
    }
    CharacteristicTable::from_fn(individual.len(), |c| {
        c.members().map(|i| individual[i]).sum()
    })
}

/// `v(C) = (Σ_{i∈C} w_i)^2` for explicit weights.
pub fn squared_additive_game(weights: &[f64]) -> Result<CharacteristicTable> {
    let base = additive_game(weights)?;
    let values = base.values().iter().map(|s| s * s).collect();
    CharacteristicTable::new(weights.len(), values)
}

/// A convex game `v(C) = (Σ_{i∈C} w_i)^2` with `w_i ~ U(0, 1]` drawn from `seed`.
pub fn random_supermodular_game(n: usize, seed: u64) -> Result<CharacteristicTable> {
    if n == 0 {
        return Err(invalid("supermodular game needs at least one agent"));
    }
    Solver::default().check_capacity(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
    squared_additive_game(&w)
}
