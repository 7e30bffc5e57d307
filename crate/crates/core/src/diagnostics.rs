//! Dense diagnostics for small instances: sketched projectors, the residual
//! chain, the subspace-angle bound, augmented-subproblem equivalence and
//! classical GMRES / harmonic Ritz oracles.
//!
//! Everything here assembles `N x N` or `s x N` matrices and is meant for
//! `N` in the hundreds at most.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sketch::{subspace_distortion, SketchOperator};

const PINV_EPS: f64 = 1e-13;

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    crate::dense::pinv(m, PINV_EPS)
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Least-squares minimizer of `‖b - M y‖` via the pseudo-inverse.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    pinv(m) * b
}

/// Projector defects for a basis `B` (either `V_m` or a recycle block `U`).
#[derive(Debug, Clone, Copy)]
pub struct ProjectorDefects {
    /// `‖Φ̂² - Φ̂‖ / ‖Φ̂‖` with `Φ̂ = AB (SAB)^+ S`.
    pub phi_idempotency: f64,
    /// `‖Π̂² - Π̂‖ / ‖Π̂‖` with `Π̂ = B (SAB)^+ S A`.
    pub pi_idempotency: f64,
    /// `‖S Φ̂ - Ψ S‖ / ‖S‖` with `Ψ` the orthogonal projector onto range(SAB).
    pub intertwining: f64,
    /// Worst relative distance of `Φ̂ x` from range(AB) over the unit vectors.
    pub range_defect: f64,
}

/// Dense sketched projectors built from `B`, `A` and `S`.
pub fn projectors(b: &DMatrix<f64>, a: &DMatrix<f64>, sketch: &SketchOperator) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = sketch.to_dense();
    let ab = a * b;
    let p = pinv(&(&s * &ab));
    let phi = &ab * &p * &s;
    let pi = b * &p * &s * a;
    (phi, pi)
}

pub fn projector_check(b: &DMatrix<f64>, a: &DMatrix<f64>, sketch: &SketchOperator) -> ProjectorDefects {
    let s = sketch.to_dense();
    let (phi, pi) = projectors(b, a, sketch);
    let sab = &s * a * b;
    let psi = &sab * pinv(&sab);
    let rel = |m: DMatrix<f64>, scale: f64| m.norm() / scale.max(f64::MIN_POSITIVE);
    let ab = a * b;
    let (sv, q, _) = crate::dense::sorted_svd(&ab);
    let rank = sv.iter().filter(|&&x| x > 1e-12 * sv[0]).count();
    let q = q.columns(0, rank).into_owned();
    let mut range_defect = 0.0f64;
    for j in 0..phi.ncols() {
        let y = phi.column(j).into_owned();
        let ny = y.norm();
        if ny > 0.0 {
            let proj = &q * (q.transpose() * &y);
            range_defect = range_defect.max((y - proj).norm() / ny);
        }
    }
    ProjectorDefects {
        phi_idempotency: rel(&phi * &phi - &phi, phi.norm()),
        pi_idempotency: rel(&pi * &pi - &pi, pi.norm()),
        intertwining: rel(&s * &phi - &psi * &s, s.norm()),
        range_defect,
    }
}

/// Norms entering the residual chain of sketched GMRES over `span(V)`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualChain {
    /// Exact minimal residual `‖r_m‖` over `r0 - A span(V)`.
    pub r: f64,
    /// Unsketched norm of the sketched solution's residual `‖r̃_m‖`.
    pub r_tilde: f64,
    pub s_r_tilde: f64,
    pub s_r: f64,
    /// Exact distortion of `S` on `span[r0, V, AV]`.
    pub eps_hat: f64,
}

impl ResidualChain {
    /// The four inequalities
    /// `‖r‖ ≤ ‖r̃‖ ≤ ‖Sr̃‖/√(1-ε) ≤ ‖Sr‖/√(1-ε) ≤ √((1+ε)/(1-ε)) ‖r‖`,
    /// each with relative slack `slack`.
    pub fn inequalities(&self, slack: f64) -> [bool; 4] {
        let e = self.eps_hat;
        let d = (1.0 - e).sqrt();
        let le = |a: f64, b: f64| a <= b * (1.0 + slack) + slack * f64::MIN_POSITIVE;
        [
            le(self.r, self.r_tilde),
            le(self.r_tilde, self.s_r_tilde / d),
            le(self.s_r_tilde / d, self.s_r / d),
            le(self.s_r / d, ((1.0 + e) / (1.0 - e)).sqrt() * self.r),
        ]
    }
}

pub fn residual_chain(
    a: &DMatrix<f64>,
    r0: &[f64],
    v: &DMatrix<f64>,
    sketch: &SketchOperator,
) -> Result<ResidualChain> {
    let s = sketch.to_dense();
    let r0 = DVector::from_column_slice(r0);
    let av = a * v;
    let y = lstsq(&av, &r0);
    let r = &r0 - &av * y;
    let yt = lstsq(&(&s * &av), &(&s * &r0));
    let rt = &r0 - &av * yt;
    let basis = hcat(&[&DMatrix::from_column_slice(r0.len(), 1, r0.as_slice()), v, &av]);
    let eps_hat = subspace_distortion(sketch, &basis);
    if eps_hat >= 1.0 {
        return Err(Error::InvalidArgument(format!("sketch is not an embedding (eps = {eps_hat})")));
    }
    Ok(ResidualChain {
        r: r.norm(),
        r_tilde: rt.norm(),
        s_r_tilde: (&s * &rt).norm(),
        s_r: (&s * &r).norm(),
        eps_hat,
    })
}

/// Angle-based bound on the sketched residual.
#[derive(Debug, Clone, Copy)]
pub struct AngleBound {
    pub r_tilde: f64,
    /// `‖r0‖ √((sin²θ + 4ε)/(1 - ε²))` with `θ = ∠(r0, A span(V))`.
    pub bound: f64,
    pub sin_theta: f64,
    pub eps_hat: f64,
}

impl AngleBound {
    pub fn holds(&self, slack: f64) -> bool {
        self.r_tilde <= self.bound * (1.0 + slack)
    }
}

pub fn angle_bound(a: &DMatrix<f64>, r0: &[f64], v: &DMatrix<f64>, sketch: &SketchOperator) -> Result<AngleBound> {
    let chain = residual_chain(a, r0, v, sketch)?;
    let r0n = DVector::from_column_slice(r0).norm();
    let sin_theta = chain.r / r0n;
    let e = chain.eps_hat;
    Ok(AngleBound {
        r_tilde: chain.r_tilde,
        bound: r0n * ((sin_theta * sin_theta + 4.0 * e) / (1.0 - e * e)).sqrt(),
        sin_theta,
        eps_hat: e,
    })
}

/// Both sides of the augmented-subproblem decomposition.
#[derive(Debug, Clone)]
pub struct AugmentedEquivalence {
    /// `[U, V] y` with `y` minimizing `‖S(r0 - A[U, V] y)‖`.
    pub direct: DVector<f64>,
    /// `Π̂_U η0 + (I - Π̂_U) t_m`, with `η0` the correction `U (SAU)^+ S r0`
    /// and `t_m` the sketched GMRES solution of the projected system.
    pub split: DVector<f64>,
}

impl AugmentedEquivalence {
    pub fn relative_gap(&self) -> f64 {
        (&self.direct - &self.split).norm() / self.direct.norm().max(f64::MIN_POSITIVE)
    }
}

pub fn augmented_equivalence(
    a: &DMatrix<f64>,
    r0: &[f64],
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    sketch: &SketchOperator,
) -> AugmentedEquivalence {
    let s = sketch.to_dense();
    let r0 = DVector::from_column_slice(r0);
    let sr0 = &s * &r0;
    let w = hcat(&[u, v]);
    let saw = &s * a * &w;
    let direct = &w * lstsq(&saw, &sr0);

    let sau = &s * a * u;
    let sau_p = pinv(&sau);
    let psi_u = &sau * &sau_p;
    let proj = DMatrix::<f64>::identity(s.nrows(), s.nrows()) - psi_u;
    let sav = &s * a * v;
    let z = lstsq(&(&proj * &sav), &(&proj * &sr0));
    let t_m = v * z;
    let pi_u = u * &sau_p * &s * a;
    let eta_part = u * (&sau_p * &sr0);
    let split = &eta_part + &t_m - &pi_u * &t_m;
    AugmentedEquivalence { direct, split }
}

/// Orthonormal Krylov basis `Q_{m+1}` and Hessenberg `H` of classical
/// Arnoldi with re-orthogonalization. Stops early on breakdown.
pub fn dense_arnoldi(a: &DMatrix<f64>, r0: &[f64], m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut q = DMatrix::zeros(n, m + 1);
    let mut h = DMatrix::zeros(m + 1, m);
    let r0 = DVector::from_column_slice(r0);
    q.set_column(0, &(&r0 / r0.norm()));
    let mut steps = m;
    for j in 0..m {
        let mut w = a * q.column(j);
        for _ in 0..2 {
            for i in 0..=j {
                let c = q.column(i).dot(&w);
                w.axpy(-c, &q.column(i).into_owned(), 1.0);
                h[(i, j)] += c;
            }
        }
        let hn = w.norm();
        h[(j + 1, j)] = hn;
        if hn <= 1e-14 * a.norm() {
            steps = j + 1;
            break;
        }
        q.set_column(j + 1, &(w / hn));
    }
    (
        q.columns(0, steps + 1).into_owned(),
        h.view((0, 0), (steps + 1, steps)).into_owned(),
    )
}

/// Classical GMRES iterate after `m` steps from `x0`.
pub fn dense_gmres(a: &DMatrix<f64>, b: &[f64], x0: &[f64], m: usize) -> Vec<f64> {
    let x0v = DVector::from_column_slice(x0);
    let r0 = DVector::from_column_slice(b) - a * &x0v;
    let (q, h) = dense_arnoldi(a, r0.as_slice(), m);
    let mut rhs = DVector::zeros(h.nrows());
    rhs[0] = r0.norm();
    let y = lstsq(&h, &rhs);
    let x = x0v + q.columns(0, h.ncols()) * y;
    x.as_slice().to_vec()
}

/// Classical FOM iterate after `m` steps from `x0`.
pub fn dense_fom(a: &DMatrix<f64>, b: &[f64], x0: &[f64], m: usize) -> Result<Vec<f64>> {
    let x0v = DVector::from_column_slice(x0);
    let r0 = DVector::from_column_slice(b) - a * &x0v;
    let (q, h) = dense_arnoldi(a, r0.as_slice(), m);
    let p = h.ncols();
    let sq = h.view((0, 0), (p, p)).into_owned();
    let mut rhs = DVector::zeros(p);
    rhs[0] = r0.norm();
    let y = sq.lu().solve(&rhs).ok_or(Error::FomBreakdown)?;
    Ok((x0v + q.columns(0, p) * y).as_slice().to_vec())
}

/// Harmonic Ritz values of `A` on `K_m(A, r0)` from the classical formula
/// `θ ∈ eig(H_m + h²_{m+1,m} H_m^{-T} e_m e_m^T)`.
pub fn dense_harmonic_ritz(a: &DMatrix<f64>, r0: &[f64], m: usize) -> Result<Vec<Complex<f64>>> {
    let (_, h) = dense_arnoldi(a, r0, m);
    let p = h.ncols();
    let hm = h.view((0, 0), (p, p)).into_owned();
    let beta = h[(p, p - 1)];
    let mut em = DVector::zeros(p);
    em[p - 1] = 1.0;
    let f = hm
        .transpose()
        .lu()
        .solve(&em)
        .ok_or_else(|| Error::SingularFactor { column: p - 1 })?;
    let mut g = hm;
    for i in 0..p {
        g[(i, p - 1)] += beta * beta * f[i];
    }
    Ok(g.complex_eigenvalues().iter().copied().collect())
}
