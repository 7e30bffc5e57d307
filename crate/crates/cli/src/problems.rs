//! Problem generators for the experiments.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdr_core::linop::{gen_convdiff, gen_neumann, parse_matrix_market};
use sdr_core::{LinearOperator, ProblemInstance, SparseMatrix};

use crate::campaign::RhsSpec;

pub fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One shifted Neumann matrix shared by `systems` Gaussian right-hand sides.
pub fn neumann(grid: usize, shift: f64, systems: usize, tol: f64, seed: u64) -> Result<Vec<ProblemInstance>> {
    let a = Arc::new(gen_neumann(grid, shift)?);
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..systems)
        .map(|i| Ok(ProblemInstance::new(a.clone(), gaussian(n, &mut rng), format!("neumann-{i}"), tol)?))
        .collect()
}

pub fn convdiff(n: usize, alphas: &[f64], tol: f64) -> Result<Vec<ProblemInstance>> {
    alphas
        .iter()
        .map(|&alpha| {
            let a = Arc::new(gen_convdiff(n, alpha)?);
            let b = vec![1.0; a.nrows()];
            Ok(ProblemInstance::new(a, b, format!("convdiff-alpha{alpha}"), tol)?)
        })
        .collect()
}

pub fn read_matrix(path: &Path) -> Result<SparseMatrix> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let a = parse_matrix_market(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if a.nrows() != a.ncols() {
        bail!("{} is {}x{}, expected a square matrix", path.display(), a.nrows(), a.ncols());
    }
    Ok(a)
}

pub fn rhs(spec: &RhsSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    match spec {
        RhsSpec::Ones => Ok(vec![1.0; n]),
        RhsSpec::Random => Ok(gaussian(n, &mut ChaCha8Rng::seed_from_u64(seed))),
        RhsSpec::File(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let b = text
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().with_context(|| format!("bad value `{tok}` in {}", path.display())))
                .collect::<Result<Vec<_>>>()?;
            if b.len() != n {
                bail!("{} holds {} values, the matrix has {n} rows", path.display(), b.len());
            }
            Ok(b)
        }
    }
}
