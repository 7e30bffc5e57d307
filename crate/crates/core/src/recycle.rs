//! Sketched harmonic-Ritz extraction and recycle-space maintenance.
//!
//! Given the sketched images `SAW` and `SW` of the search space
//! `W = [U, V_j]`, the sketched harmonic Ritz problem
//! `(SAW)^+ SW y = mu y` (with `mu = 1/theta`) is regularized through a
//! truncated SVD `SAW ≈ U_l Σ_l V_l*`, which turns it into the pencil
//! `(M_l, Σ_l)` with `M_l = U_l* SW V_l`. The `k` largest-modulus `mu` are
//! moved to the top of an ordered Schur form of `Σ_l^{-1} M_l` and the
//! leading Schur vectors, mapped back through `V_l`, give the coefficients
//! of the new recycle space in terms of `W`.

use std::io::{Read, Write};

use nalgebra::{Complex, DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::arnoldi::KrylovState;
use crate::driver::Counters;
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::sketch::SketchOperator;

/// Default relative cutoff for the truncated SVD.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Extracted in the current problem.
    Fresh,
    /// Carried to a new right-hand side with the same matrix.
    Reused,
    /// `SAU` recomputed for a new matrix.
    ExactResketch,
    /// `SAU` carried over from the previous matrix.
    InexactCarryover,
}

impl Provenance {
    fn to_byte(self) -> u8 {
        match self {
            Provenance::Fresh => 0,
            Provenance::Reused => 1,
            Provenance::ExactResketch => 2,
            Provenance::InexactCarryover => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Provenance::Fresh,
            1 => Provenance::Reused,
            2 => Provenance::ExactResketch,
            3 => Provenance::InexactCarryover,
            _ => return None,
        })
    }
}

/// Augmentation triple `(U, SU, SAU)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecycleSpace {
    pub u: DMatrix<f64>,
    pub su: DMatrix<f64>,
    pub sau: DMatrix<f64>,
    pub provenance: Provenance,
}

const DUMP_MAGIC: &[u8; 8] = b"SDRRCY01";

impl RecycleSpace {
    pub fn empty(n: usize, s: usize) -> Self {
        Self {
            u: DMatrix::zeros(n, 0),
            su: DMatrix::zeros(s, 0),
            sau: DMatrix::zeros(s, 0),
            provenance: Provenance::Fresh,
        }
    }

    /// Sketches `U` and `A U` explicitly (`k` matvecs, `2k` sketches).
    pub fn from_basis<A: LinearOperator + ?Sized>(
        u: DMatrix<f64>,
        a: &A,
        sketch: &SketchOperator,
        counters: &mut Counters,
    ) -> Self {
        let su = sketch.apply_columns(&u);
        let mut au = DMatrix::zeros(u.nrows(), u.ncols());
        for j in 0..u.ncols() {
            let mut y = vec![0.0; u.nrows()];
            a.apply_into(u.column(j).as_slice(), &mut y);
            au.column_mut(j).copy_from_slice(&y);
        }
        let sau = sketch.apply_columns(&au);
        counters.matvecs += u.ncols();
        counters.sketches += 2 * u.ncols();
        Self {
            u,
            su,
            sau,
            provenance: Provenance::Fresh,
        }
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.k() == 0
    }

    /// Removes the listed columns from all three blocks.
    pub fn drop_columns(&mut self, cols: &[usize]) {
        if cols.is_empty() {
            return;
        }
        let keep: Vec<usize> = (0..self.k()).filter(|j| !cols.contains(j)).collect();
        self.u = self.u.select_columns(&keep);
        self.su = self.su.select_columns(&keep);
        self.sau = self.sau.select_columns(&keep);
    }

    /// Largest relative defects `‖S U - SU‖/‖SU‖` and `‖S A U - SAU‖/‖SAU‖`.
    pub fn consistency<A: LinearOperator + ?Sized>(&self, a: &A, sketch: &SketchOperator) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 0.0);
        }
        let su = sketch.apply_columns(&self.u);
        let mut au = DMatrix::zeros(self.u.nrows(), self.k());
        for j in 0..self.k() {
            let mut y = vec![0.0; self.u.nrows()];
            a.apply_into(self.u.column(j).as_slice(), &mut y);
            au.column_mut(j).copy_from_slice(&y);
        }
        let sau = sketch.apply_columns(&au);
        (
            (&su - &self.su).norm() / self.su.norm(),
            (&sau - &self.sau).norm() / self.sau.norm(),
        )
    }

    /// Binary dump: magic, `n`, `s`, `k` as little-endian u64, a provenance
    /// byte, then `U`, `SU`, `SAU` as column-major little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for d in [self.u.nrows(), self.su.nrows(), self.k()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[self.provenance.to_byte()])?;
        for m in [&self.u, &self.su, &self.sau] {
            for x in m.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("recycle dump: {msg}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *d = u64::from_le_bytes(b) as usize;
        }
        let [n, s, k] = dims;
        let mut pb = [0u8; 1];
        r.read_exact(&mut pb)?;
        let provenance = Provenance::from_byte(pb[0]).ok_or_else(|| bad("bad provenance byte"))?;
        let mut read_block = |rows: usize| -> Result<DMatrix<f64>> {
            let mut data = vec![0.0; rows * k];
            let mut b = [0u8; 8];
            for x in data.iter_mut() {
                r.read_exact(&mut b)?;
                *x = f64::from_le_bytes(b);
            }
            Ok(DMatrix::from_vec(rows, k, data))
        };
        let u = read_block(n)?;
        let su = read_block(s)?;
        let sau = read_block(s)?;
        Ok(Self {
            u,
            su,
            sau,
            provenance,
        })
    }
}

/// Truncated SVD of `SAW` and, once `SW` is supplied, the projected matrix
/// `M_l = U_l* SW V_l`.
#[derive(Debug, Clone)]
pub struct HarmonicPencil {
    pub u_l: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_l: DMatrix<f64>,
    pub m_l: DMatrix<f64>,
}

impl HarmonicPencil {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn with_sw(mut self, sw: &DMatrix<f64>) -> Self {
        self.m_l = self.u_l.transpose() * sw * &self.v_l;
        self
    }
}

/// Keeps the singular triplets with `σ_i > rank_tol * σ_max`.
pub fn truncated_svd(saw: &DMatrix<f64>, rank_tol: f64) -> Result<HarmonicPencil> {
    if saw.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let (sv, u, v) = crate::dense::sorted_svd(saw);
    let smax = sv[0];
    let l = sv.iter().take_while(|&&x| x > rank_tol * smax).count();
    Ok(HarmonicPencil {
        u_l: u.columns(0, l).into_owned(),
        sigma: sv.iter().take(l).copied().collect(),
        v_l: v.columns(0, l).into_owned(),
        m_l: DMatrix::zeros(0, 0),
    })
}

/// Selected harmonic Ritz directions.
#[derive(Debug, Clone)]
pub struct HarmonicSelection {
    /// Real `(k_hat + j) x k_eff` coefficient block with orthonormal columns
    /// spanning the selected right deflating subspace, mapped through `V_l`.
    pub coeffs: DMatrix<f64>,
    /// Selected pencil eigenvalues `mu`, in selection order.
    pub mu: Vec<C64>,
    /// Harmonic Ritz values `theta = 1 / mu`.
    pub theta: Vec<C64>,
    pub k_requested: usize,
    /// `k` was cut down to the numerical rank `l`.
    pub shrunk: bool,
    /// `k` was extended by one to keep a complex-conjugate pair together.
    pub pair_extended: bool,
}

impl HarmonicSelection {
    pub fn k(&self) -> usize {
        self.coeffs.ncols()
    }
}

/// Ordering key: larger `|mu|` first, then larger real part, then input order.
fn selection_order(mu: &[C64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| {
        mu[b].norm()
            .total_cmp(&mu[a].norm())
            .then(mu[b].re.total_cmp(&mu[a].re))
            .then(a.cmp(&b))
    });
    order
}

/// Picks `k` eigenvalues by [`selection_order`], keeping conjugate pairs
/// together.
fn select(mu: &[C64], k: usize) -> Vec<usize> {
    let scale = mu.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let real_tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut used = vec![false; mu.len()];
    let mut chosen = Vec::with_capacity(k + 1);
    for i in selection_order(mu) {
        if chosen.len() >= k {
            break;
        }
        if used[i] {
            continue;
        }
        used[i] = true;
        chosen.push(i);
        if mu[i].im.abs() > real_tol {
            let target = mu[i].conj();
            let partner = (0..mu.len())
                .filter(|&j| !used[j])
                .min_by(|&a, &b| (mu[a] - target).norm().total_cmp(&(mu[b] - target).norm()));
            if let Some(j) = partner {
                used[j] = true;
                chosen.push(j);
            }
        }
    }
    chosen
}

/// Swaps diagonal entries `i` and `i+1` of the upper triangular `t`,
/// updating the Schur vectors `q`.
fn swap_adjacent(t: &mut DMatrix<C64>, q: &mut DMatrix<C64>, i: usize) {
    let (a, b, c) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i + 1)]);
    if a == c {
        return;
    }
    // eigenvector of the 2x2 block for eigenvalue c
    let (x0, x1) = (b, c - a);
    let nrm = (x0.norm_sqr() + x1.norm_sqr()).sqrt();
    let (g0, g1) = (x0 / nrm, x1 / nrm);
    // G = [[g0, -conj(g1)], [g1, conj(g0)]]
    let n = t.nrows();
    for r in 0..n {
        let (ti, tj) = (t[(r, i)], t[(r, i + 1)]);
        t[(r, i)] = ti * g0 + tj * g1;
        t[(r, i + 1)] = -ti * g1.conj() + tj * g0.conj();
        let (qi, qj) = (q[(r, i)], q[(r, i + 1)]);
        q[(r, i)] = qi * g0 + qj * g1;
        q[(r, i + 1)] = -qi * g1.conj() + qj * g0.conj();
    }
    for col in 0..n {
        let (ti, tj) = (t[(i, col)], t[(i + 1, col)]);
        t[(i, col)] = g0.conj() * ti + g1.conj() * tj;
        t[(i + 1, col)] = -g1 * ti + g0 * tj;
    }
    t[(i + 1, i)] = C64::new(0.0, 0.0);
}

/// Ordered complex Schur form `X = Q T Q*` with the eigenvalues at the listed
/// diagonal positions moved, in order, to the top. Returns `(Q, T)`.
pub fn ordered_schur(x: &DMatrix<f64>, wanted: &[usize]) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let xc = x.map(|v| C64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(xc, f64::EPSILON, 10_000).ok_or(Error::NoConvergence)?;
    let (mut q, mut t) = schur.unpack();
    // perm[pos] = original diagonal index currently at `pos`
    let mut perm: Vec<usize> = (0..t.nrows()).collect();
    for (target, &w) in wanted.iter().enumerate() {
        let mut pos = perm.iter().position(|&p| p == w).expect("valid index");
        while pos > target {
            swap_adjacent(&mut t, &mut q, pos - 1);
            perm.swap(pos - 1, pos);
            pos -= 1;
        }
    }
    Ok((q, t))
}

/// Eigenvalues of `X` (diagonal of its complex Schur form), unordered.
pub fn schur_eigenvalues(x: &DMatrix<f64>) -> Result<Vec<C64>> {
    let xc = x.map(|v| C64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(xc, f64::EPSILON, 10_000).ok_or(Error::NoConvergence)?;
    let (_, t) = schur.unpack();
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Real orthonormal basis of a conjugation-closed complex subspace.
fn realify(z: &DMatrix<C64>) -> DMatrix<f64> {
    let (rows, k) = z.shape();
    let mut parts = DMatrix::zeros(rows, 2 * k);
    for j in 0..k {
        for i in 0..rows {
            parts[(i, j)] = z[(i, j)].re;
            parts[(i, k + j)] = z[(i, j)].im;
        }
    }
    let (_, u, _) = crate::dense::sorted_svd(&parts);
    u.columns(0, k).into_owned()
}

/// Selects the `k` largest-modulus eigenvalues of the pencil `(M_l, Σ_l)` and
/// returns the corresponding coefficient block `V_l Z(:, 1:k)`.
pub fn harmonic_pairs(pencil: &HarmonicPencil, k: usize) -> Result<HarmonicSelection> {
    let l = pencil.rank();
    if pencil.m_l.shape() != (l, l) {
        return Err(Error::InvalidArgument("pencil has no M_l; call with_sw first".into()));
    }
    let shrunk = k > l;
    let k_eff = k.min(l);
    if k_eff == 0 {
        return Ok(HarmonicSelection {
            coeffs: DMatrix::zeros(pencil.v_l.nrows(), 0),
            mu: vec![],
            theta: vec![],
            k_requested: k,
            shrunk,
            pair_extended: false,
        });
    }
    // right eigenvectors of the pencil are eigenvectors of Σ^{-1} M
    let mut x = pencil.m_l.clone();
    for (i, s) in pencil.sigma.iter().enumerate() {
        x.row_mut(i).scale_mut(1.0 / s);
    }
    let eig = schur_eigenvalues(&x)?;
    let chosen = select(&eig, k_eff);
    let (q, t) = ordered_schur(&x, &chosen)?;
    let kk = chosen.len();
    let z = realify(&q.columns(0, kk).into_owned());
    let mu: Vec<C64> = (0..kk).map(|i| t[(i, i)]).collect();
    let theta = mu.iter().map(|m| C64::new(1.0, 0.0) / m).collect();
    Ok(HarmonicSelection {
        coeffs: &pencil.v_l * z,
        mu,
        theta,
        k_requested: k,
        shrunk,
        pair_extended: kk > k_eff,
    })
}

/// Sketched harmonic Ritz extraction over `W` given `SAW` and `SW`.
pub fn extract(
    saw: &DMatrix<f64>,
    sw: &DMatrix<f64>,
    k: usize,
    rank_tol: f64,
) -> Result<(HarmonicPencil, HarmonicSelection)> {
    let pencil = truncated_svd(saw, rank_tol)?.with_sw(sw);
    let sel = harmonic_pairs(&pencil, k)?;
    Ok((pencil, sel))
}

fn hcat(a: DMatrixView<'_, f64>, b: DMatrixView<'_, f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(&a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(&b);
    out
}

/// `SAW = [SAU, SAV(:, 1:j)]` and `SW = [SU, SV(:, 1:j)]`.
pub fn sketched_blocks(old: &RecycleSpace, state: &KrylovState, j: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let saw = hcat(old.sau.columns(0, old.k()), state.sav().columns(0, j));
    let sw = hcat(old.su.columns(0, old.k()), state.sv(j));
    (saw, sw)
}

/// New recycle space from the coefficient block: every block of
/// `[U, V(:, 1:j)]`, `[SU, SV]`, `[SAU, SAV]` is right-multiplied by the same
/// coefficients, so no matvecs and no sketches are spent. Columns of `U` are
/// scaled to unit norm (the same scaling is applied to `SU` and `SAU`).
pub fn update_recycle(
    state: &KrylovState,
    old: &RecycleSpace,
    coeffs: &DMatrix<f64>,
    counters: &mut Counters,
) -> RecycleSpace {
    let kh = old.k();
    let j = coeffs.nrows() - kh;
    let (cu, cv) = (coeffs.rows(0, kh), coeffs.rows(kh, j));
    let mut u = &old.u * cu + state.v(j) * cv;
    let mut su = &old.su * cu + state.sv(j) * cv;
    let mut sau = &old.sau * cu + state.sav().columns(0, j) * cv;
    counters.inner_products += u.ncols();
    let mut keep = Vec::with_capacity(u.ncols());
    for c in 0..u.ncols() {
        let nrm = u.column(c).norm();
        if nrm.is_finite() && nrm > 0.0 {
            u.column_mut(c).scale_mut(1.0 / nrm);
            su.column_mut(c).scale_mut(1.0 / nrm);
            sau.column_mut(c).scale_mut(1.0 / nrm);
            keep.push(c);
        }
    }
    if keep.len() < u.ncols() {
        u = u.select_columns(&keep);
        su = su.select_columns(&keep);
        sau = sau.select_columns(&keep);
    }
    RecycleSpace {
        u,
        su,
        sau,
        provenance: Provenance::Fresh,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshMode {
    /// Recompute `S A_new U` (k matvecs and k sketches).
    Exact,
    /// Keep `S A_old U`.
    Inexact,
}

/// Prepares a recycle space for a new system matrix.
pub fn refresh_for_new_matrix<A: LinearOperator + ?Sized>(
    space: RecycleSpace,
    a_new: &A,
    sketch: &SketchOperator,
    mode: RefreshMode,
    counters: &mut Counters,
) -> RecycleSpace {
    match mode {
        RefreshMode::Inexact => RecycleSpace {
            provenance: Provenance::InexactCarryover,
            ..space
        },
        RefreshMode::Exact => {
            let n = space.u.nrows();
            let mut sau = DMatrix::zeros(sketch.s(), space.k());
            let mut au = vec![0.0; n];
            let mut col = vec![0.0; sketch.s()];
            for j in 0..space.k() {
                a_new.apply_into(space.u.column(j).as_slice(), &mut au);
                sketch.apply_into(&au, &mut col);
                sau.column_mut(j).copy_from_slice(&col);
            }
            counters.matvecs += space.k();
            counters.sketches += space.k();
            RecycleSpace {
                sau,
                provenance: Provenance::ExactResketch,
                ..space
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arnoldi::init_krylov;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn diag_pencil(m: &[f64], sigma: &[f64]) -> HarmonicPencil {
        let l = m.len();
        HarmonicPencil {
            u_l: DMatrix::identity(l, l),
            sigma: sigma.to_vec(),
            v_l: DMatrix::identity(l, l),
            m_l: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(m)),
        }
    }

    /// Largest principal angle sine between the column spans of `a` and `b`.
    fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let qa = a.clone().qr().q();
        let qb = b.clone().qr().q();
        let proj = &qa * (qa.transpose() * &qb);
        (qb - proj).norm()
    }

    #[test]
    fn truncated_svd_explicit_diagonal() {
        let saw = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[3.0, 2.0, 1e-20]));
        let p = truncated_svd(&saw, 1e-14).unwrap();
        assert_eq!(p.rank(), 2);
        assert!((p.sigma[0] - 3.0).abs() < 1e-15 && (p.sigma[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_svd_detects_rank() {
        let saw = random_matrix(80, 5, 1) * random_matrix(5, 30, 2);
        let p = truncated_svd(&saw, 1e-12).unwrap();
        assert_eq!(p.rank(), 5);
        let rec = &p.u_l * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.sigma.clone())) * p.v_l.transpose();
        assert!((rec - &saw).norm() <= 1e-12 * saw.norm());
    }

    #[test]
    fn truncated_svd_full_rank_reconstructs() {
        let saw = random_matrix(60, 20, 3);
        let p = truncated_svd(&saw, 0.0).unwrap();
        assert_eq!(p.rank(), 20);
        let rec = &p.u_l * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.sigma.clone())) * p.v_l.transpose();
        assert!((rec - &saw).norm() <= 1e-12 * saw.norm());
        assert!(p.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(matches!(truncated_svd(&DMatrix::zeros(3, 2), 0.0), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn diagonal_pencil_picks_largest_mu() {
        let sel = harmonic_pairs(&diag_pencil(&[4.0, 1.0], &[1.0, 1.0]), 1).unwrap();
        assert_eq!(sel.k(), 1);
        assert!((sel.mu[0].re - 4.0).abs() < 1e-14);
        assert!((sel.theta[0].re - 0.25).abs() < 1e-14);
        assert!((sel.coeffs[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(sel.coeffs[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn diagonal_pencils_select_exact_top_k() {
        let m = [0.5, -7.0, 3.0, 2.0, -0.1, 6.0];
        let sigma = [2.0, 1.0, 1.0, 0.5, 0.25, 1.0];
        let sel = harmonic_pairs(&diag_pencil(&m, &sigma), 3).unwrap();
        let mut got: Vec<f64> = sel.mu.iter().map(|z| z.re).collect();
        got.sort_by(f64::total_cmp);
        // mu = m / sigma = [0.25, -7, 3, 4, -0.4, 6]
        assert_eq!(got.len(), 3);
        for (g, e) in got.iter().zip([-7.0, 4.0, 6.0]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_break_on_real_part() {
        let sel = harmonic_pairs(&diag_pencil(&[-2.0, 2.0, 1.0], &[1.0; 3]), 1).unwrap();
        assert!((sel.mu[0].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn conjugate_pair_extends_k() {
        // rotation-scaling block has eigenvalues 3 ± 2i (modulus > 1)
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 3.0;
        m[(0, 1)] = -2.0;
        m[(1, 0)] = 2.0;
        m[(1, 1)] = 3.0;
        m[(2, 2)] = 1.0;
        let pencil = HarmonicPencil {
            u_l: DMatrix::identity(3, 3),
            sigma: vec![1.0; 3],
            v_l: DMatrix::identity(3, 3),
            m_l: m,
        };
        let sel = harmonic_pairs(&pencil, 1).unwrap();
        assert!(sel.pair_extended);
        assert_eq!(sel.k(), 2);
        let e3 = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert!((e3.transpose() * &sel.coeffs).amax() < 1e-12);
    }

    #[test]
    fn shrinks_k_to_rank() {
        let sel = harmonic_pairs(&diag_pencil(&[1.0, 2.0], &[1.0, 1.0]), 5).unwrap();
        assert!(sel.shrunk);
        assert_eq!(sel.k(), 2);
    }

    #[test]
    fn ordered_schur_matches_eigenvector_selection() {
        for seed in 0..10 {
            let x = random_matrix(12, 12, 100 + seed);
            let eig = schur_eigenvalues(&x).unwrap();
            let chosen = select(&eig, 4);
            let (q, t) = ordered_schur(&x, &chosen).unwrap();
            let kk = chosen.len();
            // reordered Schur form is still a similarity and triangular
            let xc = x.map(|v| C64::new(v, 0.0));
            assert!((&q * &t * q.adjoint() - &xc).norm() < 1e-10 * x.norm());
            for i in 0..12 {
                for j in 0..i {
                    assert!(t[(i, j)].norm() < 1e-12);
                }
            }
            let mut lead: Vec<C64> = (0..kk).map(|i| t[(i, i)]).collect();
            let mut want: Vec<C64> = chosen.iter().map(|&i| eig[i]).collect();
            let key = |z: &C64| (z.re * 1e6).round() as i64 * 1_000_000_007 + (z.im * 1e6).round() as i64;
            lead.sort_by_key(key);
            want.sort_by_key(key);
            for (a, b) in lead.iter().zip(&want) {
                assert!((a - b).norm() < 1e-8 * (1.0 + b.norm()));
            }
            // same subspace as the span of the selected eigenvectors, obtained
            // independently by shifted inverse iteration
            let zr = realify(&q.columns(0, kk).into_owned());
            let mut ev = DMatrix::zeros(12, kk);
            for (c, &i) in chosen.iter().enumerate() {
                let shift = eig[i] * C64::new(1.0 + 1e-10, 0.0);
                let lu = (&xc - DMatrix::<C64>::identity(12, 12) * shift).lu();
                let mut v = DMatrix::from_fn(12, 1, |r, _| C64::new(1.0 + r as f64, 0.5));
                for _ in 0..3 {
                    v = lu.solve(&v).unwrap();
                    let nv = v.norm();
                    v /= C64::new(nv, 0.0);
                }
                ev.set_column(c, &v.column(0));
            }
            let evr = realify(&ev);
            let gap = subspace_gap(&zr, &evr);
            assert!(gap < 1e-8, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn dump_round_trip() {
        let space = RecycleSpace {
            u: random_matrix(7, 2, 1),
            su: random_matrix(3, 2, 2),
            sau: random_matrix(3, 2, 3),
            provenance: Provenance::ExactResketch,
        };
        let mut buf = Vec::new();
        space.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 24 + 1 + 8 * (14 + 6 + 6));
        let back = RecycleSpace::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, space);
        buf[0] = b'X';
        assert!(RecycleSpace::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn update_spends_no_matvecs_or_sketches_and_stays_consistent() {
        let n = 60;
        let a = random_matrix(n, n, 9) * 0.2 + DMatrix::<f64>::identity(n, n) * 2.0;
        let sk = SketchOperator::new(n, 40, 4).unwrap();
        let mut c = Counters::default();
        let old = RecycleSpace::from_basis(random_matrix(n, 3, 5), &a, &sk, &mut c);
        let r0: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut st = init_krylov(&r0, &sk, 2, 8, &mut c).unwrap();
        for _ in 0..8 {
            st.arnoldi_step(&a, &sk, &mut c).unwrap();
        }
        let (saw, sw) = sketched_blocks(&old, &st, 8);
        let (_, sel) = extract(&saw, &sw, 4, DEFAULT_RANK_TOL).unwrap();
        let before = c;
        let new = update_recycle(&st, &old, &sel.coeffs, &mut c);
        assert_eq!(c.matvecs, before.matvecs);
        assert_eq!(c.sketches, before.sketches);
        assert!(new.k() >= 4);
        let (du, dau) = new.consistency(&a, &sk);
        assert!(du < 1e-10 && dau < 1e-10, "{du} {dau}");
        for j in 0..new.k() {
            assert!((new.u.column(j).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_selection_gives_empty_space() {
        let n = 20;
        let a = DMatrix::<f64>::identity(n, n) * 3.0 + random_matrix(n, n, 1) * 0.1;
        let sk = SketchOperator::identity(n);
        let mut c = Counters::default();
        let old = RecycleSpace::empty(n, n);
        let mut st = init_krylov(&vec![1.0; n], &sk, 3, 4, &mut c).unwrap();
        for _ in 0..4 {
            st.arnoldi_step(&a, &sk, &mut c).unwrap();
        }
        let (saw, sw) = sketched_blocks(&old, &st, 4);
        let (_, sel) = extract(&saw, &sw, 0, DEFAULT_RANK_TOL).unwrap();
        let new = update_recycle(&st, &old, &sel.coeffs, &mut c);
        assert!(new.is_empty());
    }

    #[test]
    fn refresh_modes() {
        let n = 30;
        let a = random_matrix(n, n, 2) + DMatrix::<f64>::identity(n, n) * 4.0;
        let sk = SketchOperator::new(n, 12, 1).unwrap();
        let mut c = Counters::default();
        let space = RecycleSpace::from_basis(random_matrix(n, 4, 3), &a, &sk, &mut c);
        let mut c2 = Counters::default();
        let same = refresh_for_new_matrix(space.clone(), &a, &sk, RefreshMode::Exact, &mut c2);
        assert!((&same.sau - &space.sau).amax() <= 1e-12 * space.sau.amax());
        assert_eq!(c2.matvecs, 4);
        assert_eq!(same.provenance, Provenance::ExactResketch);
        let mut c3 = Counters::default();
        let carried = refresh_for_new_matrix(space.clone(), &a, &sk, RefreshMode::Inexact, &mut c3);
        assert_eq!(c3.matvecs, 0);
        assert_eq!(carried.provenance, Provenance::InexactCarryover);
        assert_eq!(carried.sau, space.sau);
    }
}
