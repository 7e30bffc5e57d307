//! Incremental QR of the sketched basis image `SAW = [SAU, SAV]` and the
//! Givens-rotation machinery of the whitened (Hessenberg) formulation.

use nalgebra::{DMatrix, DMatrixView};

use crate::dense;
use crate::error::{Error, Result};

/// Relative threshold below which an appended column is treated as lying in
/// the span of the previous ones.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended,
    /// The column was kept with `R(p, p) = 0` and a zero `Q` column.
    RankDeficient,
}

/// Thin QR factorization grown one column at a time by classical
/// Gram-Schmidt with one reorthogonalization pass.
#[derive(Debug, Clone)]
pub struct IncrementalQR {
    s: usize,
    q: Vec<f64>,
    r: DMatrix<f64>,
    p: usize,
    deficient: Vec<usize>,
}

impl IncrementalQR {
    pub fn new(s: usize, capacity: usize) -> Self {
        Self {
            s,
            q: Vec::with_capacity(s * capacity),
            r: DMatrix::zeros(capacity, capacity),
            p: 0,
            deficient: Vec::new(),
        }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Number of appended columns.
    pub fn ncols(&self) -> usize {
        self.p
    }

    /// Indices of columns flagged rank-deficient.
    pub fn deficient(&self) -> &[usize] {
        &self.deficient
    }

    pub fn q_col(&self, i: usize) -> &[f64] {
        &self.q[i * self.s..(i + 1) * self.s]
    }

    pub fn q(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.q, self.s, self.p)
    }

    pub fn r(&self) -> DMatrixView<'_, f64> {
        self.r.view((0, 0), (self.p, self.p))
    }

    pub fn qr_append(&mut self, col: &[f64]) -> Result<AppendOutcome> {
        if col.len() != self.s {
            return Err(Error::DimensionMismatch {
                expected: self.s,
                got: col.len(),
            });
        }
        if self.p >= self.s {
            return Err(Error::InvalidArgument(
                "cannot append more columns than rows".into(),
            ));
        }
        let p = self.p;
        if p >= self.r.nrows() {
            let cap = (2 * self.r.nrows()).max(p + 1);
            let old = std::mem::replace(&mut self.r, DMatrix::zeros(0, 0));
            self.r = old.resize(cap, cap, 0.0);
        }
        let norm0 = dense::norm(col);
        let mut w = col.to_vec();
        for _pass in 0..2 {
            for i in 0..p {
                let qi = &self.q[i * self.s..(i + 1) * self.s];
                let c = dense::dot(qi, &w);
                self.r[(i, p)] += c;
                dense::axpy(-c, qi, &mut w);
            }
        }
        let rho = dense::norm(&w);
        let outcome = if norm0 == 0.0 || rho <= RANK_TOL * norm0 {
            self.r[(p, p)] = 0.0;
            self.q.extend(std::iter::repeat_n(0.0, self.s));
            self.deficient.push(p);
            AppendOutcome::RankDeficient
        } else {
            self.r[(p, p)] = rho;
            self.q.extend(w.iter().map(|x| x / rho));
            AppendOutcome::Appended
        };
        self.p += 1;
        Ok(outcome)
    }

    /// Solves `R y = c` by back substitution. Deficient columns get `y = 0`
    /// when `skip_deficient`, otherwise they are an error.
    fn back_solve(&self, c: &[f64], skip_deficient: bool) -> Result<Vec<f64>> {
        let p = self.p;
        let mut y = vec![0.0; p];
        for i in (0..p).rev() {
            if self.r[(i, i)] == 0.0 {
                if skip_deficient {
                    continue;
                }
                return Err(Error::SingularFactor { column: i });
            }
            let mut acc = c[i];
            for l in i + 1..p {
                acc -= self.r[(i, l)] * y[l];
            }
            y[i] = acc / self.r[(i, i)];
        }
        Ok(y)
    }
}

/// Minimizes `‖SAW y - rhs‖` over the factored columns. Returns `y` and the
/// residual norm.
pub fn ls_solve(qr: &IncrementalQR, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    if rhs.len() != qr.s {
        return Err(Error::DimensionMismatch {
            expected: qr.s,
            got: rhs.len(),
        });
    }
    let mut res = rhs.to_vec();
    let mut c = vec![0.0; qr.p];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = dense::dot(qr.q_col(i), &res);
        dense::axpy(-*ci, qr.q_col(i), &mut res);
    }
    let y = qr.back_solve(&c, false)?;
    Ok((y, dense::norm(&res)))
}

/// Incremental QR paired with a fixed right-hand side. The projected
/// coefficients `Q* rhs` and the residual vector are updated per column so
/// that `sres` costs O(s) per appended column.
#[derive(Debug, Clone)]
pub struct TrackedLsq {
    qr: IncrementalQR,
    qtb: Vec<f64>,
    resid: Vec<f64>,
}

impl TrackedLsq {
    pub fn new(rhs: &[f64], capacity: usize) -> Self {
        Self {
            qr: IncrementalQR::new(rhs.len(), capacity),
            qtb: Vec::with_capacity(capacity),
            resid: rhs.to_vec(),
        }
    }

    pub fn append(&mut self, col: &[f64]) -> Result<AppendOutcome> {
        let out = self.qr.qr_append(col)?;
        let qi = self.qr.q_col(self.qr.p - 1);
        let c = dense::dot(qi, &self.resid);
        dense::axpy(-c, qi, &mut self.resid);
        self.qtb.push(c);
        Ok(out)
    }

    /// Current sketched residual norm `‖rhs - SAW y‖`.
    pub fn sres(&self) -> f64 {
        dense::norm(&self.resid)
    }

    /// Least-squares coefficients; deficient columns receive zero weight.
    pub fn solve(&self) -> Vec<f64> {
        self.qr
            .back_solve(&self.qtb, true)
            .expect("skip_deficient never fails")
    }

    pub fn qr(&self) -> &IncrementalQR {
        &self.qr
    }

    pub fn ncols(&self) -> usize {
        self.qr.p
    }
}

// ---------------------------------------------------------------------------
// Givens machinery for the whitened formulation

/// Per-step Givens sines/cosines (absolute values) and the implied sketched
/// residual norms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GivensDiagnostics {
    pub sines: Vec<f64>,
    pub cosines: Vec<f64>,
    pub sres: Vec<f64>,
}

/// Result of reducing an upper-Hessenberg `(p+1) x p` matrix to triangular
/// form with Givens rotations, applied to a right-hand side as well.
#[derive(Debug, Clone)]
pub struct GivensQr {
    pub diagnostics: GivensDiagnostics,
    /// `p x p` upper triangular factor.
    pub r: DMatrix<f64>,
    /// Rotated right-hand side, length `p + 1`.
    pub g: Vec<f64>,
}

impl GivensQr {
    /// Minimizer of `‖H y - rhs‖` using the first `j` columns.
    pub fn solve(&self, j: usize) -> Result<Vec<f64>> {
        let mut y = vec![0.0; j];
        for i in (0..j).rev() {
            if self.r[(i, i)] == 0.0 {
                return Err(Error::SingularFactor { column: i });
            }
            let mut acc = self.g[i];
            for l in i + 1..j {
                acc -= self.r[(i, l)] * y[l];
            }
            y[i] = acc / self.r[(i, i)];
        }
        Ok(y)
    }
}

fn check_hessenberg(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() != h.ncols() + 1 {
        return Err(Error::InvalidArgument(format!(
            "expected (p+1) x p, got {} x {}",
            h.nrows(),
            h.ncols()
        )));
    }
    for j in 0..h.ncols() {
        for i in j + 2..h.nrows() {
            if h[(i, j)] != 0.0 {
                return Err(Error::NotHessenberg { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Givens QR of an upper-Hessenberg matrix with a general right-hand side.
pub fn givens_qr(h: &DMatrix<f64>, rhs: &[f64]) -> Result<GivensQr> {
    check_hessenberg(h)?;
    let p = h.ncols();
    if rhs.len() != p + 1 {
        return Err(Error::DimensionMismatch {
            expected: p + 1,
            got: rhs.len(),
        });
    }
    let mut r = h.clone();
    let mut g = rhs.to_vec();
    let mut cs: Vec<(f64, f64)> = Vec::with_capacity(p);
    let mut diag = GivensDiagnostics::default();
    for j in 0..p {
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, b) = (r[(i, j)], r[(i + 1, j)]);
            r[(i, j)] = c * a + s * b;
            r[(i + 1, j)] = -s * a + c * b;
        }
        let (a, b) = (r[(j, j)], r[(j + 1, j)]);
        let rho = a.hypot(b);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
        r[(j, j)] = rho;
        r[(j + 1, j)] = 0.0;
        let (ga, gb) = (g[j], g[j + 1]);
        g[j] = c * ga + s * gb;
        g[j + 1] = -s * ga + c * gb;
        cs.push((c, s));
        diag.sines.push(s.abs());
        diag.cosines.push(c.abs());
        diag.sres.push(g[j + 1].abs());
    }
    Ok(GivensQr {
        diagnostics: diag,
        r: r.rows(0, p).into_owned(),
        g,
    })
}

/// Givens sines of `H` and the sketched residual sequence
/// `sres_j = beta * prod_{i<=j} |s_i|` for the right-hand side `beta e1`.
pub fn givens_residual_track(h: &DMatrix<f64>, beta: f64) -> Result<GivensDiagnostics> {
    let mut rhs = vec![0.0; h.nrows()];
    rhs[0] = beta;
    let mut d = givens_qr(h, &rhs)?.diagnostics;
    let mut acc = beta.abs();
    for (k, s) in d.sines.iter().enumerate() {
        acc *= s;
        d.sres[k] = acc;
    }
    Ok(d)
}

/// Multiplier `sqrt((s^2 + 2 eps (1 + c)) / (1 - eps^2))` of the progressive
/// true-residual bound.
pub fn residual_bound_multiplier(sine: f64, cosine: f64, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps_hat = {eps} must lie in [0, 1)")));
    }
    Ok(((sine * sine + 2.0 * eps * (1.0 + cosine)) / (1.0 - eps * eps)).sqrt())
}

/// Bound on `‖r_m‖` from `‖r_{m-1}‖ <= prev_estimate` using the latest
/// sine/cosine of `diag`.
pub fn estimate_true_residual(diag: &GivensDiagnostics, eps_hat: f64, prev_estimate: f64) -> Result<f64> {
    let (s, c) = match (diag.sines.last(), diag.cosines.last()) {
        (Some(&s), Some(&c)) => (s, c),
        _ => return Err(Error::InvalidArgument("no Givens rotations recorded".into())),
    };
    Ok(residual_bound_multiplier(s, c, eps_hat)? * prev_estimate)
}

/// Whitens a truncated sketched Arnoldi relation `S A V = S V_+ H`:
/// with `S V_+ = W R`, returns `(W, R H)` where `R H` is upper Hessenberg.
pub fn whitened_hessenberg(sv: DMatrixView<'_, f64>, h: DMatrixView<'_, f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = sv.into_owned().qr();
    let (w, r) = (qr.q(), qr.r());
    let hh = &r * h;
    (w, hh)
}

/// Augmented variant: with `[SAU, S V_+] = W R`, returns `(W, G)` where
/// `G = R * blockdiag(I_k, H)` is upper Hessenberg with a triangular leading
/// `k x k` block.
pub fn augmented_hessenberg(
    sau: DMatrixView<'_, f64>,
    sv: DMatrixView<'_, f64>,
    h: DMatrixView<'_, f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = sau.ncols();
    let (mp1, m) = (h.nrows(), h.ncols());
    let mut basis = DMatrix::zeros(sau.nrows(), k + mp1);
    basis.columns_mut(0, k).copy_from(&sau);
    basis.columns_mut(k, mp1).copy_from(&sv);
    let qr = basis.qr();
    let (w, r) = (qr.q(), qr.r());
    let mut block = DMatrix::zeros(k + mp1, k + m);
    block.view_mut((0, 0), (k, k)).fill_with_identity();
    block.view_mut((k, k), (mp1, m)).copy_from(&h);
    let g = &r * block;
    (w, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn build(m: &DMatrix<f64>) -> IncrementalQR {
        let mut qr = IncrementalQR::new(m.nrows(), 4);
        for j in 0..m.ncols() {
            qr.qr_append(m.column(j).as_slice()).unwrap();
        }
        qr
    }

    #[test]
    fn unit_vectors_give_identity() {
        let mut qr = IncrementalQR::new(4, 2);
        qr.qr_append(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        qr.qr_append(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(qr.r().into_owned(), DMatrix::<f64>::identity(2, 2));
        assert_eq!(qr.q_col(1), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reproduces_random_columns() {
        let m = random_matrix(200, 100, 1);
        let qr = build(&m);
        let rec = qr.q() * qr.r();
        assert!((&rec - &m).norm() / m.norm() <= 1e-12);
        let qtq = qr.q().transpose() * qr.q();
        assert!((qtq - DMatrix::<f64>::identity(100, 100)).amax() <= 1e-10);
        assert!((0..100).all(|i| qr.r()[(i, i)] >= 0.0));
    }

    #[test]
    fn repeated_column_is_flagged() {
        let mut qr = IncrementalQR::new(5, 2);
        let c = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(qr.qr_append(&c).unwrap(), AppendOutcome::Appended);
        assert_eq!(qr.qr_append(&c).unwrap(), AppendOutcome::RankDeficient);
        assert_eq!(qr.deficient(), &[1]);
        assert!(matches!(
            ls_solve(&qr, &[1.0; 5]),
            Err(Error::SingularFactor { column: 1 })
        ));
    }

    #[test]
    fn rejects_more_columns_than_rows() {
        let mut qr = IncrementalQR::new(1, 1);
        qr.qr_append(&[1.0]).unwrap();
        assert!(qr.qr_append(&[2.0]).is_err());
    }

    #[test]
    fn identity_system_is_exact() {
        let qr = build(&DMatrix::identity(3, 3));
        let (y, sres) = ls_solve(&qr, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
        assert_eq!(sres, 0.0);
    }

    #[test]
    fn matches_normal_equations() {
        let m = random_matrix(9, 2, 3);
        let b: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let qr = build(&m);
        let (y, sres) = ls_solve(&qr, &b).unwrap();
        let bv = nalgebra::DVector::from_column_slice(&b);
        let yo = (m.transpose() * &m).lu().solve(&(m.transpose() * &bv)).unwrap();
        for i in 0..2 {
            assert!((y[i] - yo[i]).abs() < 1e-10);
        }
        let res = (&bv - &m * &yo).norm();
        assert!((sres - res).abs() < 1e-12);
        // sketched Petrov-Galerkin condition
        let r = &bv - &m * nalgebra::DVector::from_column_slice(&y);
        assert!((m.transpose() * r).amax() <= 1e-10 * bv.norm() * qr.r().norm());
    }

    #[test]
    fn orthogonal_rhs_gives_zero_solution() {
        let qr = build(&DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
        let (y, sres) = ls_solve(&qr, &[0.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![0.0]);
        assert_eq!(sres, 5.0);
    }

    #[test]
    fn tracked_sres_matches_direct_and_is_monotone() {
        let m = random_matrix(40, 12, 8);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut t = TrackedLsq::new(&b, 2);
        let mut prev = f64::INFINITY;
        for j in 0..12 {
            t.append(m.column(j).as_slice()).unwrap();
            let (_, direct) = ls_solve(t.qr(), &b).unwrap();
            assert!((t.sres() - direct).abs() < 1e-12);
            assert!(t.sres() <= prev + 1e-15);
            prev = t.sres();
            let y = t.solve();
            let (yd, _) = ls_solve(t.qr(), &b).unwrap();
            assert!(dense::rel_diff(&y, &yd) < 1e-12);
        }
    }

    #[test]
    fn tracked_solve_skips_deficient_column() {
        let mut t = TrackedLsq::new(&[1.0, 1.0, 0.0], 2);
        t.append(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.append(&[2.0, 0.0, 0.0]).unwrap(), AppendOutcome::RankDeficient);
        t.append(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.solve(), vec![1.0, 0.0, 1.0]);
        assert_eq!(t.sres(), 0.0);
    }

    #[test]
    fn givens_one_column_exact() {
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let d = givens_residual_track(&h, 1.0).unwrap();
        assert_eq!(d.sines, vec![0.0]);
        assert_eq!(d.sres, vec![0.0]);
    }

    #[test]
    fn givens_rejects_non_hessenberg() {
        let mut h = DMatrix::zeros(3, 2);
        h[(2, 0)] = 1.0;
        assert!(matches!(
            givens_residual_track(&h, 1.0),
            Err(Error::NotHessenberg { row: 2, col: 0 })
        ));
    }

    #[test]
    fn givens_product_matches_direct_ls() {
        let mut h = random_matrix(6, 5, 2);
        for j in 0..5 {
            for i in j + 2..6 {
                h[(i, j)] = 0.0;
            }
        }
        let beta = 1.7;
        let d = givens_residual_track(&h, beta).unwrap();
        let mut e1 = nalgebra::DVector::zeros(6);
        e1[0] = beta;
        for j in 1..=5 {
            let hj = h.view((0, 0), (6, j)).into_owned();
            let y = crate::dense::pinv(&hj, 1e-14) * &e1;
            let res = (&e1 - &hj * y).norm();
            assert!((d.sres[j - 1] - res).abs() < 1e-12);
        }
        for (s, c) in d.sines.iter().zip(&d.cosines) {
            assert!((s * s + c * c - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bound_multiplier_cases() {
        let d = GivensDiagnostics {
            sines: vec![0.6],
            cosines: vec![0.8],
            sres: vec![0.6],
        };
        assert!((estimate_true_residual(&d, 0.0, 2.0).unwrap() - 1.2).abs() < 1e-15);
        let m = residual_bound_multiplier(0.0, 1.0, 0.5).unwrap();
        assert!((m - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(residual_bound_multiplier(0.1, 0.9, 1.0).is_err());
    }
}
