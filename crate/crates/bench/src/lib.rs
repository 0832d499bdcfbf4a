//! Benchmark fixtures shared by the criterion targets.

use sckls_core::simulation::{gen_dgp, grid_counts, Dataset, DgpSpec};
use sckls_core::{uniform_grid, EvalGrid};

/// Cobb–Douglas sample with its default uniform grid of about `m` points.
pub fn fixture(d: usize, n: usize, m: usize, seed: u64) -> (Dataset, EvalGrid) {
    let data = gen_dgp(&DgpSpec::cobb_douglas(d, n, seed)).expect("valid spec");
    let grid = uniform_grid(&data.x, &grid_counts(m, d)).expect("non-degenerate inputs");
    (data, grid)
}
