//! Transferable-utility games: coalitions, characteristic tables and the
//! solution concepts used to reallocate a shared reward.

mod coalition;
mod io;
mod solution;
mod table;

pub use coalition::{CoalitionMask, Members, MAX_AGENTS};
pub use io::{format_game, parse_game};
pub use solution::{
    additive_game, core_violations, efficiency_check, is_convex, marginal_vector,
    random_supermodular_game, shapley_exact, shapley_permutation_mc, shapley_weights,
    squared_additive_game, Convexity, CoreReport, PermutationSampling, Solver, DEFAULT_N_EXACT,
    EXACT_TOL, MAX_EXHAUSTIVE_PERMUTATIONS_N, SUM_TOL,
};
pub use table::{CharacteristicTable, Outcome, PayoffVector};
