//! GMRES-SDR cycle loop, sequences of systems and the classical baseline.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arnoldi::{init_krylov, KrylovState, StepOutcome, BREAKDOWN_TOL};
use crate::dense;
use crate::error::{Error, Result};
use crate::linop::{LinearOperator, ProblemSequence, SparseMatrix};
use crate::lsq::{givens_qr, whitened_hessenberg, AppendOutcome, GivensDiagnostics, TrackedLsq};
use crate::recycle::{
    extract, refresh_for_new_matrix, sketched_blocks, update_recycle, Provenance, RecycleSpace, RefreshMode,
};
use crate::sketch::SketchOperator;

/// Work counters. Inner products count length-`N` dot products and norms only;
/// true-residual checks count as matvecs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub matvecs: usize,
    pub inner_products: usize,
    pub sketches: usize,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.matvecs += o.matvecs;
        self.inner_products += o.inner_products;
        self.sketches += o.sketches;
    }
}

/// How the recycle space is carried to the next problem of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Same matrix: reuse `(U, SU, SAU)` unchanged. A changed matrix is
    /// handled as in [`Variant::Exact`].
    Reuse,
    /// Recompute `S A U` with the new matrix.
    Exact,
    /// Keep the stale `S A U`.
    Inexact,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(Variant::Reuse),
            "exact" => Ok(Variant::Exact),
            "inexact" => Ok(Variant::Inexact),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Krylov steps per cycle.
    pub m: usize,
    /// Truncation window of the Arnoldi process.
    pub t: usize,
    /// Recycle rank.
    pub k: usize,
    /// Sketch dimension (ignored with `identity_sketch`).
    pub s: usize,
    /// Target relative residual `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub safety_init: f64,
    /// Maximum number of cycles per system.
    pub max_restarts: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Relative singular-value cutoff in the harmonic Ritz extraction.
    pub rank_tol: f64,
    pub identity_sketch: bool,
    /// A cycle whose final sketched residual exceeds this fraction of its
    /// starting value ends the solve as diverged.
    pub stagnation_ratio: f64,
    /// Record `‖v‖/‖Sv‖` per iteration and `‖r‖/‖Sr‖` per cycle. These
    /// diagnostics are not counted in [`Counters`].
    #[serde(default)]
    pub trace_distortion: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m: 100,
            t: 2,
            k: 20,
            s: 1200,
            tol: 1e-6,
            safety_init: 1.4,
            max_restarts: 10,
            seed: 0,
            variant: Variant::Reuse,
            rank_tol: crate::recycle::DEFAULT_RANK_TOL,
            identity_sketch: false,
            stagnation_ratio: 0.99,
            trace_distortion: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.t == 0 || self.max_restarts == 0 {
            return bad("m, t and max_restarts must be positive".into());
        }
        if self.k >= self.m {
            return bad(format!("k = {} must be smaller than m = {}", self.k, self.m));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol = {} must lie in (0, 1)", self.tol));
        }
        if !(self.safety_init >= 1.0) {
            return bad(format!("safety = {} must be at least 1", self.safety_init));
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol < 1.0) {
            return bad(format!("rank_tol = {} must lie in [0, 1)", self.rank_tol));
        }
        if !self.identity_sketch {
            if self.s < 2 * (self.m + self.k) {
                return bad(format!("s = {} must be at least 2(m + k) = {}", self.s, 2 * (self.m + self.k)));
            }
            if self.s >= n {
                return bad(format!("s = {} must be smaller than N = {n}", self.s));
            }
        } else if self.m + self.k > n {
            return bad(format!("m + k = {} exceeds N = {n}", self.m + self.k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxRestarts,
    Breakdown,
    Diverged,
}

/// One true-residual evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    /// Total Krylov iterations at the time of the check.
    pub iteration: usize,
    pub cycle: usize,
    /// Unsketched residual norm.
    pub residual: f64,
    /// Sketched residual norm that triggered the check.
    pub sres: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolveEvent {
    /// Recycle columns removed because `SAU` lost rank.
    RecycleColumnsDropped { cycle: usize, columns: Vec<usize> },
    /// A Krylov column of `SAW` was numerically dependent and got zero weight.
    RankDeficientKrylovColumn { cycle: usize, iteration: usize },
    /// The recycle rank was raised by one to keep a conjugate pair.
    PairExtended { cycle: usize, k: usize },
    /// Fewer than `k` singular values of `SAW` passed the cutoff.
    RankShrunk { cycle: usize, rank: usize },
    ArnoldiBreakdown { cycle: usize, iteration: usize },
    /// The variant `reuse` met a new matrix and refreshed exactly.
    MatrixChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub label: String,
    /// Sketched residual norm after every Krylov iteration.
    pub sres_history: Vec<f64>,
    pub true_residuals: Vec<ResidualCheck>,
    pub counters: Counters,
    pub iterations: usize,
    pub cycles: usize,
    pub rhs_norm: f64,
    pub final_relative_residual: f64,
    pub status: SolveStatus,
    pub safety: f64,
    /// Numerical rank of `SAW` in each cycle's extraction.
    pub extraction_ranks: Vec<usize>,
    /// Harmonic Ritz values `(re, im)` selected in the last cycle.
    pub ritz_values: Vec<[f64; 2]>,
    pub recycle_provenance: Option<Provenance>,
    pub events: Vec<SolveEvent>,
    /// `‖v_{j+1}‖ / ‖S v_{j+1}‖` after every iteration (only when tracing).
    pub basis_distortion: Vec<f64>,
    /// `(iteration, ‖r‖ / ‖S r‖)` for the true residual at each cycle end
    /// (only when tracing).
    pub residual_distortion: Vec<(usize, f64)>,
}

impl SolveReport {
    fn new(label: &str, rhs_norm: f64, safety: f64) -> Self {
        Self {
            label: label.to_string(),
            sres_history: Vec::new(),
            true_residuals: Vec::new(),
            counters: Counters::default(),
            iterations: 0,
            cycles: 0,
            rhs_norm,
            final_relative_residual: f64::NAN,
            status: SolveStatus::MaxRestarts,
            safety,
            extraction_ranks: Vec::new(),
            ritz_values: Vec::new(),
            recycle_provenance: None,
            events: Vec::new(),
            basis_distortion: Vec::new(),
            residual_distortion: Vec::new(),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Result of a single cycle.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub x_update: Vec<f64>,
    /// `r0 - A x_update`, computed explicitly.
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub steps: usize,
    pub converged: bool,
    pub breakdown: bool,
    /// `‖S r0‖`.
    pub sres_start: f64,
    pub sres_end: f64,
}

fn apply<A: LinearOperator + ?Sized>(a: &A, x: &[f64], counters: &mut Counters) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    a.apply_into(x, &mut y);
    counters.matvecs += 1;
    y
}

/// Sketched GMRES with deflated restarting. The recycle space lives in the
/// solver and is carried across cycles and across calls to [`GmresSdr::solve`].
#[derive(Debug, Clone)]
pub struct GmresSdr {
    config: SolverConfig,
    sketch: SketchOperator,
    space: RecycleSpace,
}

impl GmresSdr {
    pub fn new(n: usize, config: SolverConfig) -> Result<Self> {
        config.validate(n)?;
        let sketch = if config.identity_sketch {
            SketchOperator::identity(n)
        } else {
            SketchOperator::new(n, config.s, config.seed)?
        };
        Ok(Self::assemble(config, sketch))
    }

    /// Uses a caller-supplied sketch; `config.s` and `config.seed` are ignored.
    pub fn with_sketch(config: SolverConfig, sketch: SketchOperator) -> Result<Self> {
        let mut probe = config.clone();
        probe.identity_sketch = true;
        probe.validate(sketch.n())?;
        if sketch.s() < config.m + config.k + 1 {
            return Err(Error::InvalidArgument(format!(
                "sketch dimension {} cannot hold m + k + 1 = {} columns",
                sketch.s(),
                config.m + config.k + 1
            )));
        }
        Ok(Self::assemble(config, sketch))
    }

    fn assemble(config: SolverConfig, sketch: SketchOperator) -> Self {
        let space = RecycleSpace::empty(sketch.n(), sketch.s());
        Self { config, sketch, space }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn sketch(&self) -> &SketchOperator {
        &self.sketch
    }

    pub fn recycle_space(&self) -> &RecycleSpace {
        &self.space
    }

    pub fn set_recycle_space(&mut self, space: RecycleSpace) -> Result<()> {
        if space.u.nrows() != self.sketch.n() || space.su.nrows() != self.sketch.s() {
            return Err(Error::DimensionMismatch {
                expected: self.sketch.n(),
                got: space.u.nrows(),
            });
        }
        self.space = space;
        Ok(())
    }

    pub fn clear_recycle_space(&mut self) {
        self.space = RecycleSpace::empty(self.sketch.n(), self.sketch.s());
    }

    /// Adapts the recycle space to the next system. `matrix_changed` selects
    /// between plain reuse and the refresh of `S A U` dictated by the variant.
    pub fn prepare_next<A: LinearOperator + ?Sized>(
        &mut self,
        a: &A,
        matrix_changed: bool,
        counters: &mut Counters,
    ) -> Option<SolveEvent> {
        if self.space.is_empty() {
            return None;
        }
        let space = std::mem::replace(&mut self.space, RecycleSpace::empty(0, 0));
        let mut event = None;
        self.space = if !matrix_changed {
            RecycleSpace {
                provenance: Provenance::Reused,
                ..space
            }
        } else {
            let mode = match self.config.variant {
                Variant::Inexact => RefreshMode::Inexact,
                Variant::Exact => RefreshMode::Exact,
                Variant::Reuse => {
                    event = Some(SolveEvent::MatrixChanged);
                    RefreshMode::Exact
                }
            };
            refresh_for_new_matrix(space, a, &self.sketch, mode, counters)
        };
        event
    }

    /// One cycle of GMRES-SDR from the residual `r0`. `tol_abs` is the absolute
    /// residual target and `safety` the running ratio between true and
    /// sketched residual norms. Iteration history is appended to `report`.
    pub fn solve_cycle<A: LinearOperator + ?Sized>(
        &mut self,
        a: &A,
        r0: &[f64],
        tol_abs: f64,
        safety: &mut f64,
        report: &mut SolveReport,
    ) -> Result<CycleOutcome> {
        let n = self.sketch.n();
        if r0.len() != n || a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if r0.len() != n { r0.len() } else { a.nrows() },
            });
        }
        let (m, t) = (self.config.m, self.config.t);
        let cycle = report.cycles;
        let counters = &mut report.counters;
        let mut state = init_krylov(r0, &self.sketch, t.min(m), m, counters)?;
        let sr0 = state.sr0();
        let sres_start = dense::norm(&sr0);

        let mut lsq = self.recycle_lsq(&sr0, cycle, &mut report.events)?;
        let kh = self.space.k();

        let mut outcome = CycleOutcome {
            x_update: vec![0.0; n],
            residual: r0.to_vec(),
            residual_norm: state.beta(),
            steps: 0,
            converged: false,
            breakdown: false,
            sres_start,
            sres_end: lsq.sres(),
        };

        for j in 0..m {
            let step = state.arnoldi_step(a, &self.sketch, counters)?;
            let broke = step == StepOutcome::Breakdown;
            if lsq.append(state.sav_col(j))? == AppendOutcome::RankDeficient {
                report.events.push(SolveEvent::RankDeficientKrylovColumn {
                    cycle,
                    iteration: report.iterations + 1,
                });
            }
            report.iterations += 1;
            let sres = lsq.sres();
            report.sres_history.push(sres);
            outcome.steps = j + 1;
            outcome.sres_end = sres;
            if self.config.trace_distortion {
                let sv = state.sv(j + 2);
                report
                    .basis_distortion
                    .push(dense::norm(state.col(j + 1)) / sv.column(j + 1).norm());
            }
            if broke {
                outcome.breakdown = true;
                report.events.push(SolveEvent::ArnoldiBreakdown {
                    cycle,
                    iteration: report.iterations,
                });
            }
            let last = j + 1 == m || broke;
            if sres < tol_abs / *safety || last {
                let y = lsq.solve();
                let (yu, yv) = y.split_at(kh);
                let mut x = &self.space.u * DVector::from_column_slice(yu);
                x.gemv(1.0, &state.v(j + 1), &DVector::from_column_slice(yv), 1.0);
                let ax = apply(a, x.as_slice(), counters);
                let r: Vec<f64> = r0.iter().zip(&ax).map(|(ri, axi)| ri - axi).collect();
                let res = dense::norm(&r);
                counters.inner_products += 1;
                report.true_residuals.push(ResidualCheck {
                    iteration: report.iterations,
                    cycle,
                    residual: res,
                    sres,
                });
                outcome.x_update = x.as_slice().to_vec();
                outcome.residual = r;
                outcome.residual_norm = res;
                if res < tol_abs {
                    outcome.converged = true;
                    break;
                }
                if last {
                    break;
                }
                if sres > 0.0 {
                    *safety = safety.max(res / sres);
                }
            }
        }

        if self.config.trace_distortion {
            let sr = self.sketch.apply(&outcome.residual)?;
            report
                .residual_distortion
                .push((report.iterations, outcome.residual_norm / dense::norm(&sr)));
        }
        self.deflate(&state, outcome.steps, cycle, report);
        Ok(outcome)
    }

    /// Least-squares tracker with the recycle columns `SAU` already appended.
    /// Recycle columns that make `SAU` rank deficient are dropped.
    fn recycle_lsq(&mut self, sr0: &[f64], cycle: usize, events: &mut Vec<SolveEvent>) -> Result<TrackedLsq> {
        let cap = self.space.k() + self.config.m;
        loop {
            let mut lsq = TrackedLsq::new(sr0, cap);
            for c in 0..self.space.k() {
                lsq.append(self.space.sau.column(c).as_slice())?;
            }
            let bad = lsq.qr().deficient().to_vec();
            if bad.is_empty() {
                return Ok(lsq);
            }
            self.space.drop_columns(&bad);
            events.push(SolveEvent::RecycleColumnsDropped { cycle, columns: bad });
        }
    }

    /// End-of-cycle harmonic Ritz extraction over `[U, V(:, 1:j)]`.
    fn deflate(&mut self, state: &KrylovState, j: usize, cycle: usize, report: &mut SolveReport) {
        let k = self.config.k;
        if k == 0 || j == 0 {
            return;
        }
        let (saw, sw) = sketched_blocks(&self.space, state, j);
        let Ok((pencil, sel)) = extract(&saw, &sw, k, self.config.rank_tol) else {
            return;
        };
        report.extraction_ranks.push(pencil.rank());
        if sel.shrunk {
            report.events.push(SolveEvent::RankShrunk {
                cycle,
                rank: pencil.rank(),
            });
        }
        if sel.pair_extended {
            report.events.push(SolveEvent::PairExtended { cycle, k: sel.k() });
        }
        report.ritz_values = sel.theta.iter().map(|z| [z.re, z.im]).collect();
        self.space = update_recycle(state, &self.space, &sel.coeffs, &mut report.counters);
    }

    /// Solves `A x = b` with restarts, starting from `x0` (zero if `None`).
    pub fn solve<A: LinearOperator + ?Sized>(
        &mut self,
        a: &A,
        b: &[f64],
        x0: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveReport)> {
        self.solve_labeled(a, b, x0, "")
    }

    pub fn solve_labeled<A: LinearOperator + ?Sized>(
        &mut self,
        a: &A,
        b: &[f64],
        x0: Option<&[f64]>,
        label: &str,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.sketch.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        if let Some(x0) = x0 {
            if x0.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
            }
        }
        let bnorm = dense::norm(b);
        let mut safety = self.config.safety_init;
        let mut report = SolveReport::new(label, bnorm, safety);
        report.counters.inner_products += 1;
        report.recycle_provenance = (!self.space.is_empty()).then_some(self.space.provenance);
        if bnorm == 0.0 {
            report.status = SolveStatus::Converged;
            report.final_relative_residual = 0.0;
            return Ok((vec![0.0; n], report));
        }
        let tol_abs = self.config.tol * bnorm;

        let (mut x, mut r, mut rnorm) = match x0 {
            Some(x0) => {
                let ax = apply(a, x0, &mut report.counters);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
                let rn = dense::norm(&r);
                report.counters.inner_products += 1;
                (x0.to_vec(), r, rn)
            }
            None => (vec![0.0; n], b.to_vec(), bnorm),
        };

        if rnorm < tol_abs {
            report.status = SolveStatus::Converged;
        }
        while report.status != SolveStatus::Converged && report.cycles < self.config.max_restarts {
            let out = self.solve_cycle(a, &r, tol_abs, &mut safety, &mut report)?;
            report.cycles += 1;
            dense::axpy(1.0, &out.x_update, &mut x);
            r = out.residual;
            rnorm = out.residual_norm;
            if out.converged {
                report.status = SolveStatus::Converged;
            } else if out.breakdown {
                report.status = SolveStatus::Breakdown;
                break;
            } else if out.sres_end >= self.config.stagnation_ratio * out.sres_start {
                report.status = SolveStatus::Diverged;
                break;
            }
        }
        report.safety = safety;
        report.final_relative_residual = rnorm / bnorm;
        Ok((x, report))
    }
}

/// One entry of [`solve_sequence`]'s output.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub solution: Vec<f64>,
    pub report: SolveReport,
}

/// Solves the systems of `seq` in order, threading the recycle space through
/// them. A failing problem is recorded and the sequence continues.
pub fn solve_sequence(seq: &ProblemSequence, cfg: &SolverConfig) -> Result<Vec<Result<SequenceOutcome>>> {
    let mut solver = GmresSdr::new(seq.dim(), cfg.clone())?;
    Ok(solver.solve_sequence(seq))
}

impl GmresSdr {
    /// [`solve_sequence`] starting from the solver's current recycle space,
    /// which is treated as belonging to the first matrix of `seq`.
    pub fn solve_sequence(&mut self, seq: &ProblemSequence) -> Vec<Result<SequenceOutcome>> {
        let mut out = Vec::with_capacity(seq.len());
        let mut prev: Option<&Arc<SparseMatrix>> = None;
        for inst in seq.instances() {
            let mut prep = Counters::default();
            let event = match prev {
                Some(p) => self.prepare_next(inst.matrix.as_ref(), !Arc::ptr_eq(p, &inst.matrix), &mut prep),
                None => None,
            };
            prev = Some(&inst.matrix);
            let res = self
                .solve_labeled(inst.matrix.as_ref(), &inst.rhs, None, &inst.label)
                .map(|(solution, mut report)| {
                    report.counters += prep;
                    report.events.extend(event);
                    SequenceOutcome { solution, report }
                });
            if res.is_err() {
                self.clear_recycle_space();
            }
            out.push(res);
        }
        out
    }
}

/// Classical restarted GMRES(m) with full modified Gram-Schmidt. The
/// `sres_history` of the report holds the Givens residual estimates.
pub fn solve_gmres_baseline<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    m: usize,
    tol: f64,
    max_restarts: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if m == 0 || max_restarts == 0 {
        return Err(Error::InvalidArgument("m and max_restarts must be positive".into()));
    }
    let bnorm = dense::norm(b);
    let mut report = SolveReport::new("", bnorm, 1.0);
    report.counters.inner_products += 1;
    if bnorm == 0.0 {
        report.status = SolveStatus::Converged;
        report.final_relative_residual = 0.0;
        return Ok((vec![0.0; n], report));
    }
    let tol_abs = tol * bnorm;
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = match x0 {
        Some(x0) => {
            let ax = apply(a, x0, &mut report.counters);
            b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect()
        }
        None => b.to_vec(),
    };
    let mut rnorm = dense::norm(&r);
    report.counters.inner_products += 1;
    if rnorm < tol_abs {
        report.status = SolveStatus::Converged;
    }

    while report.status != SolveStatus::Converged && report.cycles < max_restarts {
        let cycle = report.cycles;
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / rnorm).collect()];
        let mut h = DMatrix::zeros(m + 1, m);
        let mut cs: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = rnorm;
        let mut rr = DMatrix::zeros(m, m);
        let mut broke = false;
        let mut steps = 0;
        for j in 0..m {
            let mut w = apply(a, &v[j], &mut report.counters);
            let mut sumsq = 0.0;
            for (i, vi) in v.iter().enumerate() {
                let hij = dense::dot(vi, &w);
                dense::axpy(-hij, vi, &mut w);
                h[(i, j)] = hij;
                sumsq += hij * hij;
            }
            let hn = dense::norm(&w);
            report.counters.inner_products += j + 2;
            broke = hn <= BREAKDOWN_TOL * (sumsq + hn * hn).sqrt();
            h[(j + 1, j)] = if broke { 0.0 } else { hn };
            // rotate the new column and annihilate its subdiagonal
            let mut col: Vec<f64> = (0..=j + 1).map(|i| h[(i, j)]).collect();
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (p, q) = (col[i], col[i + 1]);
                col[i] = c * p + s * q;
                col[i + 1] = -s * p + c * q;
            }
            let rho = col[j].hypot(col[j + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
            col[j] = rho;
            cs.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g[j + 1] = -s * gj;
            for i in 0..=j {
                rr[(i, j)] = col[i];
            }
            report.iterations += 1;
            steps = j + 1;
            let est = g[j + 1].abs();
            report.sres_history.push(est);
            if est < tol_abs || broke || j + 1 == m {
                break;
            }
            if !broke {
                v.push(w.iter().map(|wi| wi / hn).collect());
            }
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for l in i + 1..steps {
                acc -= rr[(i, l)] * y[l];
            }
            y[i] = if rr[(i, i)] == 0.0 { 0.0 } else { acc / rr[(i, i)] };
        }
        for (yi, vi) in y.iter().zip(&v) {
            dense::axpy(*yi, vi, &mut x);
        }
        let ax = apply(a, &x, &mut report.counters);
        r = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        rnorm = dense::norm(&r);
        report.counters.inner_products += 1;
        report.cycles += 1;
        report.true_residuals.push(ResidualCheck {
            iteration: report.iterations,
            cycle,
            residual: rnorm,
            sres: g[steps].abs(),
        });
        if rnorm < tol_abs {
            report.status = SolveStatus::Converged;
        } else if broke {
            report.status = SolveStatus::Breakdown;
            break;
        }
    }
    report.final_relative_residual = rnorm / bnorm;
    Ok((x, report))
}

/// Whitened representation of a sketched Arnoldi relation after `j` steps:
/// with `S V_{j+1} = W R`, the sketched GMRES problem becomes
/// `min ‖rhs - Ĥ y‖` where `Ĥ = R H` and `rhs = ‖r0‖ R(0,0) e1`.
#[derive(Debug, Clone)]
pub struct WhitenedSystem {
    pub h_hat: DMatrix<f64>,
    pub rhs: Vec<f64>,
}

pub fn whiten(state: &KrylovState) -> WhitenedSystem {
    let j = state.steps();
    let (_, h_hat) = whitened_hessenberg(state.sv(j + 1), state.h());
    // R = W^T S V_{j+1}; its (0,0) entry is the first diagonal of the QR
    let r00 = {
        let qr = state.sv(j + 1).into_owned().qr();
        qr.r()[(0, 0)]
    };
    let mut rhs = vec![0.0; j + 1];
    rhs[0] = state.beta() * r00;
    WhitenedSystem { h_hat, rhs }
}

/// Sketched GMRES iterate after `j` steps through the whitened Givens path,
/// together with the Givens sines and cosines.
pub fn sketched_gmres_iterate(state: &KrylovState, x0: &[f64], j: usize) -> Result<(Vec<f64>, GivensDiagnostics)> {
    let w = whiten(state);
    let sub = w.h_hat.view((0, 0), (j + 1, j)).into_owned();
    let qr = givens_qr(&sub, &w.rhs[..=j])?;
    let y = qr.solve(j)?;
    let mut x = DVector::from_column_slice(x0);
    x.gemv(1.0, &state.v(j), &DVector::from_vec(y), 1.0);
    Ok((x.as_slice().to_vec(), qr.diagnostics))
}

/// Sketched FOM iterate: solves the square system `Ĥ_m y = ‖S r0‖ e1` built
/// from the first `m` rows of the whitened Hessenberg matrix.
pub fn sketched_fom_iterate(state: &KrylovState, x0: &[f64]) -> Result<Vec<f64>> {
    let m = state.steps();
    let w = whiten(state);
    let sq = w.h_hat.view((0, 0), (m, m)).into_owned();
    let lu = sq.lu();
    let rhs = DVector::from_column_slice(&w.rhs[..m]);
    let y = lu.solve(&rhs).ok_or(Error::FomBreakdown)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::FomBreakdown);
    }
    let mut x = DVector::from_column_slice(x0);
    x.gemv(1.0, &state.v(m), &y, 1.0);
    Ok(x.as_slice().to_vec())
}

/// Runs up to `m` truncated Arnoldi steps from `r0` without solving.
pub fn build_krylov<A: LinearOperator + ?Sized>(
    a: &A,
    r0: &[f64],
    sketch: &SketchOperator,
    t: usize,
    m: usize,
) -> Result<KrylovState> {
    let mut c = Counters::default();
    let mut st = init_krylov(r0, sketch, t, m, &mut c)?;
    for _ in 0..m {
        if st.arnoldi_step(a, sketch, &mut c)? == StepOutcome::Breakdown {
            break;
        }
    }
    Ok(st)
}
