//! Small BLAS-1 style kernels over slices, plus a sorted thin SVD.

use nalgebra::DMatrix;

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += x[i] * y[i];
        acc[1] += x[i + 1] * y[i + 1];
        acc[2] += x[i + 2] * y[i + 2];
        acc[3] += x[i + 3] * y[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y += a * x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn scale(a: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= a;
    }
}

/// Relative max-abs difference, `max|a-b| / max(max|b|, tiny)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    num / den.max(f64::MIN_POSITIVE)
}

/// Thin SVD `m = U diag(σ) V^T` with `σ` in descending order.
/// Returns `(σ, U, V)`.
pub fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let p = r.min(c);
    if p == 0 {
        return (Vec::new(), DMatrix::zeros(r, 0), DMatrix::zeros(c, 0));
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("SVD iteration did not converge");
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let sigma: Vec<f64> = (0..p).map(|i| fs[i]).collect();
    let u = DMatrix::from_fn(r, p, |i, j| fu[(i, j)]);
    let v = DMatrix::from_fn(c, p, |i, j| fv[(i, j)]);
    (sigma, u, v)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    sorted_svd(m).0
}

/// Moore-Penrose pseudo-inverse, discarding `σ_i <= rtol * σ_max`.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (s, u, v) = sorted_svd(m);
    let cut = rtol * s.first().copied().unwrap_or(0.0);
    let l = s.iter().take_while(|&&x| x > cut && x > 0.0).count();
    let mut vs = v.columns(0, l).into_owned();
    for (j, sj) in s.iter().take(l).enumerate() {
        vs.column_mut(j).scale_mut(1.0 / sj);
    }
    vs * u.columns(0, l).transpose()
}
