use std::fmt;

/// Largest agent count a [`CoalitionMask`] can describe.
pub const MAX_AGENTS: usize = 20;

/// A set of agents encoded as a bitmask; bit `i` is agent `i` (zero-based).
///
/// Displayed with one-based labels, so `CoalitionMask::from_bits(0b101)`
/// prints as `{1,3}`.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoalitionMask(u32);

impl CoalitionMask {
    pub const EMPTY: CoalitionMask = CoalitionMask(0);

    pub const fn from_bits(bits: u32) -> Self {
        CoalitionMask(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The grand coalition `{0..n}`.
    pub fn grand(n: usize) -> Self {
        debug_assert!(n <= MAX_AGENTS);
        CoalitionMask(((1u64 << n) - 1) as u32)
    }

    pub fn singleton(agent: usize) -> Self {
        debug_assert!(agent < MAX_AGENTS);
        CoalitionMask(1 << agent)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Self {
        members
            .into_iter()
            .fold(Self::EMPTY, |acc, i| acc.with(i))
    }

    pub fn contains(self, agent: usize) -> bool {
        agent < 32 && self.0 & (1 << agent) != 0
    }

    pub fn with(self, agent: usize) -> Self {
        CoalitionMask(self.0 | (1 << agent))
    }

    pub fn without(self, agent: usize) -> Self {
        CoalitionMask(self.0 & !(1 << agent))
    }

    pub fn union(self, other: Self) -> Self {
        CoalitionMask(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        CoalitionMask(self.0 & other.0)
    }

    /// Complement relative to the grand coalition of `n` agents.
    pub fn complement(self, n: usize) -> Self {
        CoalitionMask(!self.0 & Self::grand(n).0)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in ascending order.
    pub fn members(self) -> Members {
        Members(self.0)
    }

    /// Iterates every subset of the grand coalition of `n`, by ascending mask.
    pub fn all(n: usize) -> impl Iterator<Item = CoalitionMask> {
        (0..(1u32 << n)).map(CoalitionMask)
    }
}

impl fmt::Debug for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        f.write_str("}")
    }
}

/// Iterator over the members of a [`CoalitionMask`].
#[derive(Clone, Debug)]
pub struct Members(u32);

impl Iterator for Members {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Members {}
