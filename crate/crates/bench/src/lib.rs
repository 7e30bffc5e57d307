//! Fixtures shared by the kernel benchmarks.

use sdr_core::linop::gen_neumann;
use sdr_core::SparseMatrix;

/// Shifted Neumann Laplacian on a `grid x grid` mesh and a smooth,
/// deterministic right-hand side.
pub fn neumann_fixture(grid: usize) -> (SparseMatrix, Vec<f64>) {
    let a = gen_neumann(grid, 1e-4).expect("grid >= 2");
    let n = grid * grid;
    let b = (0..n).map(|i| (0.37 * i as f64).sin() + 0.1).collect();
    (a, b)
}
