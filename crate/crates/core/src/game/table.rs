use std::ops::{Deref, Index};

use super::coalition::{CoalitionMask, MAX_AGENTS};
use crate::error::{invalid, Error, Result};

/// Explicit characteristic function `v: 2^N -> R>=0` of a TU game.
///
/// `values[mask]` is the worth of the coalition encoded by `mask`. The empty
/// coalition is worth exactly zero and every entry is finite and nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicTable {
    n: usize,
    values: Vec<f64>,
}

impl CharacteristicTable {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(n, values, false)
    }

    /// Like [`CharacteristicTable::new`] but admits negative worths, as
    /// produced by a learned value estimate.
    pub fn signed(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(n, values, true)
    }

    fn build(n: usize, values: Vec<f64>, allow_negative: bool) -> Result<Self> {
        if n > MAX_AGENTS {
            return Err(Error::Capacity {
                what: "agent count",
                got: n,
                limit: MAX_AGENTS,
            });
        }
        if values.len() != 1 << n {
            return Err(invalid(format!(
                "table for {n} agents needs {} entries, got {}",
                1usize << n,
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(invalid(format!(
                "empty coalition must be worth 0, got {}",
                values[0]
            )));
        }
        if let Some((mask, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || (!allow_negative && **v < 0.0))
        {
            return Err(invalid(format!(
                "coalition {} has invalid worth {v}",
                CoalitionMask::from_bits(mask as u32)
            )));
        }
        Ok(CharacteristicTable { n, values })
    }

    /// Builds a table by evaluating `f` on every non-empty coalition.
    pub fn from_fn(n: usize, mut f: impl FnMut(CoalitionMask) -> f64) -> Result<Self> {
        if n > MAX_AGENTS {
            return Err(Error::Capacity {
                what: "agent count",
                got: n,
                limit: MAX_AGENTS,
            });
        }
        let values = CoalitionMask::all(n)
            .map(|c| if c.is_empty() { 0.0 } else { f(c) })
            .collect();
        Self::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, coalition: CoalitionMask) -> f64 {
        self.values[coalition.index()]
    }

    pub fn grand_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise sum `v1 + v2` of two games over the same agent set.
    pub fn add(&self, other: &CharacteristicTable) -> Result<CharacteristicTable> {
        if self.n != other.n {
            return Err(invalid(format!(
                "cannot add games over {} and {} agents",
                self.n, other.n
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.n, values)
    }
}

impl Index<CoalitionMask> for CharacteristicTable {
    type Output = f64;

    fn index(&self, c: CoalitionMask) -> &f64 {
        &self.values[c.index()]
    }
}

/// Per-agent payoffs `x = (x^1, .., x^n)`.
///
/// Nonnegativity is a property of feasible outcomes, not of the vector
/// itself: Shapley values of non-monotone games can be negative, so it is
/// checked by [`Outcome::is_feasible`] rather than at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffVector(Vec<f64>);

impl PayoffVector {
    pub fn new(x: Vec<f64>) -> Self {
        PayoffVector(x)
    }

    /// `x(C)`, the total paid to the members of `coalition`.
    pub fn coalition_sum(&self, coalition: CoalitionMask) -> f64 {
        coalition.members().map(|i| self.0[i]).sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|x| *x >= 0.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PayoffVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PayoffVector {
    fn from(x: Vec<f64>) -> Self {
        PayoffVector(x)
    }
}

/// A coalition structure (partition of the agents) plus a payoff vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    structure: Vec<CoalitionMask>,
    payoff: PayoffVector,
}

impl Outcome {
    /// Validates that `structure` partitions `{0..n}` where `n = payoff.len()`.
    pub fn new(structure: Vec<CoalitionMask>, payoff: PayoffVector) -> Result<Self> {
        let n = payoff.len();
        if n == 0 || n > MAX_AGENTS {
            return Err(invalid(format!("outcome over {n} agents")));
        }
        let mut seen = CoalitionMask::EMPTY;
        for block in &structure {
            if block.is_empty() {
                return Err(invalid("coalition structure contains an empty block"));
            }
            if !block.is_disjoint(seen) {
                return Err(invalid(format!("block {block} overlaps another block")));
            }
            seen = seen.union(*block);
        }
        if seen != CoalitionMask::grand(n) {
            return Err(invalid(format!(
                "coalition structure covers {seen}, expected all {n} agents"
            )));
        }
        Ok(Outcome { structure, payoff })
    }

    /// The single-block outcome `({N}, x)`.
    pub fn grand(payoff: PayoffVector) -> Result<Self> {
        let n = payoff.len();
        Self::new(vec![CoalitionMask::grand(n)], payoff)
    }

    pub fn structure(&self) -> &[CoalitionMask] {
        &self.structure
    }

    pub fn payoff(&self) -> &PayoffVector {
        &self.payoff
    }

    /// Outcome conditions: `x^i >= 0` and `x(C^j) <= v(C^j)` for every block
    /// (the latter up to `tol`).
    pub fn is_feasible(&self, game: &CharacteristicTable, tol: f64) -> bool {
        self.payoff.len() == game.n()
            && self.payoff.is_nonnegative()
            && self
                .structure
                .iter()
                .all(|c| self.payoff.coalition_sum(*c) <= game.value(*c) + tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonzero_empty_value() {
        let err = CharacteristicTable::new(1, vec![1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("empty coalition"));
    }

    #[test]
    fn rejects_negative_and_wrong_length() {
        assert!(CharacteristicTable::new(1, vec![0.0, -1.0]).is_err());
        assert!(CharacteristicTable::new(2, vec![0.0, 1.0]).is_err());
        assert!(CharacteristicTable::new(21, vec![]).is_err());
    }

    #[test]
    fn outcome_requires_partition() {
        let x = PayoffVector::new(vec![1.0, 1.0, 1.0]);
        let s = |b: u32| CoalitionMask::from_bits(b);
        assert!(Outcome::new(vec![s(0b011), s(0b100)], x.clone()).is_ok());
        assert!(Outcome::new(vec![s(0b011), s(0b110)], x.clone()).is_err());
        assert!(Outcome::new(vec![s(0b011)], x.clone()).is_err());
        assert!(Outcome::new(vec![s(0b111), s(0)], x).is_err());
    }

    #[test]
    fn feasibility_checks_blocks() {
        let game = CharacteristicTable::from_fn(2, |c| c.len() as f64).unwrap();
        let ok = Outcome::grand(PayoffVector::new(vec![1.0, 1.0])).unwrap();
        let over = Outcome::grand(PayoffVector::new(vec![2.0, 1.0])).unwrap();
        let neg = Outcome::grand(PayoffVector::new(vec![-1.0, 1.0])).unwrap();
        assert!(ok.is_feasible(&game, 1e-9));
        assert!(!over.is_feasible(&game, 1e-9));
        assert!(!neg.is_feasible(&game, 1e-9));
    }
}
