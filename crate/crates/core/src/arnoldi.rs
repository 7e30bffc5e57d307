//! Truncated Arnoldi with one sketch per iteration.
//!
//! Each new basis vector is orthogonalized (single-pass modified Gram-Schmidt)
//! against the previous `t` vectors only, so `V` is not orthonormal in general
//! while `H` is banded. The sketches `SV` and `SAV = SV H` are kept in sync
//! so that `S A V_j = S V_{j+1} H_j` holds without sketching `A v_j`.

use nalgebra::{DMatrix, DMatrixView};

use crate::dense;
use crate::driver::Counters;
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::sketch::SketchOperator;

/// Relative threshold for declaring `H(j+1, j)` zero.
pub const BREAKDOWN_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continued,
    /// `A v_j` lies (numerically) in the span of the current basis.
    Breakdown,
}

#[derive(Debug, Clone)]
pub struct KrylovState {
    n: usize,
    t: usize,
    m_max: usize,
    beta: f64,
    v: DMatrix<f64>,
    h: DMatrix<f64>,
    sv: DMatrix<f64>,
    sav: DMatrix<f64>,
    steps: usize,
    broke_down: bool,
}

/// Starts a basis at `r0 / ‖r0‖`, sketching `r0` once.
pub fn init_krylov(
    r0: &[f64],
    sketch: &SketchOperator,
    t: usize,
    m_max: usize,
    counters: &mut Counters,
) -> Result<KrylovState> {
    if r0.len() != sketch.n() {
        return Err(Error::DimensionMismatch {
            expected: sketch.n(),
            got: r0.len(),
        });
    }
    if t == 0 || m_max == 0 {
        return Err(Error::InvalidArgument("t and m_max must be positive".into()));
    }
    let beta = dense::norm(r0);
    counters.inner_products += 1;
    if beta == 0.0 {
        return Err(Error::ZeroResidual);
    }
    let n = r0.len();
    let s = sketch.s();
    let mut v = DMatrix::zeros(n, m_max + 1);
    let mut sv = DMatrix::zeros(s, m_max + 1);
    for (d, x) in v.as_mut_slice()[..n].iter_mut().zip(r0) {
        *d = x / beta;
    }
    let mut sr0 = vec![0.0; s];
    sketch.apply_into(r0, &mut sr0);
    counters.sketches += 1;
    for (d, x) in sv.column_mut(0).iter_mut().zip(&sr0) {
        *d = x / beta;
    }
    Ok(KrylovState {
        n,
        t,
        m_max,
        beta,
        v,
        h: DMatrix::zeros(m_max + 1, m_max),
        sv,
        sav: DMatrix::zeros(s, m_max),
        steps: 0,
        broke_down: false,
    })
}

impl KrylovState {
    /// One truncated Arnoldi step: one matvec, `min(j, t)` inner products for
    /// the window plus one norm, and one sketch of the new basis vector.
    pub fn arnoldi_step<A: LinearOperator + ?Sized>(
        &mut self,
        a: &A,
        sketch: &SketchOperator,
        counters: &mut Counters,
    ) -> Result<StepOutcome> {
        if self.steps >= self.m_max {
            return Err(Error::InvalidArgument("Krylov state is full".into()));
        }
        if self.broke_down {
            return Err(Error::InvalidArgument("Arnoldi already broke down".into()));
        }
        let j = self.steps;
        let n = self.n;
        let mut w = vec![0.0; n];
        a.apply_into(self.col(j), &mut w);
        counters.matvecs += 1;

        let lo = (j + 1).saturating_sub(self.t);
        let mut sumsq = 0.0;
        for i in lo..=j {
            let vi = &self.v.as_slice()[i * n..(i + 1) * n];
            let hij = dense::dot(vi, &w);
            dense::axpy(-hij, vi, &mut w);
            self.h[(i, j)] = hij;
            sumsq += hij * hij;
        }
        counters.inner_products += j + 1 - lo;
        let hnext = dense::norm(&w);
        counters.inner_products += 1;
        self.h[(j + 1, j)] = hnext;

        let scale = (sumsq + hnext * hnext).sqrt();
        let outcome = if hnext <= BREAKDOWN_TOL * scale {
            self.h[(j + 1, j)] = 0.0;
            self.broke_down = true;
            StepOutcome::Breakdown
        } else {
            let dst = &mut self.v.as_mut_slice()[(j + 1) * n..(j + 2) * n];
            for (d, x) in dst.iter_mut().zip(&w) {
                *d = x / hnext;
            }
            let s = self.sv.nrows();
            let mut svn = vec![0.0; s];
            sketch.apply_into(&self.v.as_slice()[(j + 1) * n..(j + 2) * n], &mut svn);
            counters.sketches += 1;
            self.sv.column_mut(j + 1).copy_from_slice(&svn);
            StepOutcome::Continued
        };

        // SAV(:, j) = SV(:, lo..=j+1) H(lo..=j+1, j)
        let s = self.sv.nrows();
        let mut col = vec![0.0; s];
        let top = if self.broke_down { j } else { j + 1 };
        for i in lo..=top {
            let hij = self.h[(i, j)];
            dense::axpy(hij, &self.sv.as_slice()[i * s..(i + 1) * s], &mut col);
        }
        self.sav.column_mut(j).copy_from_slice(&col);
        self.steps += 1;
        Ok(outcome)
    }

    /// Column `i` of `V`.
    pub fn col(&self, i: usize) -> &[f64] {
        &self.v.as_slice()[i * self.n..(i + 1) * self.n]
    }

    /// Completed Arnoldi steps `j`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn broke_down(&self) -> bool {
        self.broke_down
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// `S r0`, reconstructed from the first sketched basis vector.
    pub fn sr0(&self) -> Vec<f64> {
        self.sv.column(0).iter().map(|x| x * self.beta).collect()
    }

    /// First `p` basis vectors (`N x p`).
    pub fn v(&self, p: usize) -> DMatrixView<'_, f64> {
        self.v.columns(0, p)
    }

    /// `H(0..=j, 0..j)` for `j` completed steps.
    pub fn h(&self) -> DMatrixView<'_, f64> {
        self.h.view((0, 0), (self.steps + 1, self.steps))
    }

    pub fn sv(&self, p: usize) -> DMatrixView<'_, f64> {
        self.sv.columns(0, p)
    }

    pub fn sav(&self) -> DMatrixView<'_, f64> {
        self.sav.columns(0, self.steps)
    }

    pub fn sav_col(&self, j: usize) -> &[f64] {
        let s = self.sav.nrows();
        &self.sav.as_slice()[j * s..(j + 1) * s]
    }
}
