//! Subspace embedding `S = P F E`: random signs, an orthonormal DCT-II and
//! uniform row subsampling, scaled by `sqrt(n / s)` so that `E‖Sv‖² = ‖v‖²`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dense;
use crate::error::{Error, Result};

#[derive(Clone)]
enum Kind {
    Identity,
    Srdct {
        sign_flips: Vec<f64>,
        selected_rows: Vec<usize>,
        seed: u64,
        fft: Arc<dyn Fft<f64>>,
        /// `scale * c_k * exp(-i pi k / 2n)` for each selected row `k`
        twiddles: Vec<Complex64>,
    },
}

/// Linear map from `R^n` to `R^s`. Immutable and shareable between threads.
#[derive(Clone)]
pub struct SketchOperator {
    n: usize,
    s: usize,
    kind: Kind,
}

impl fmt::Debug for SketchOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("SketchOperator");
        d.field("n", &self.n).field("s", &self.s);
        match &self.kind {
            Kind::Identity => d.field("kind", &"identity"),
            Kind::Srdct { seed, .. } => d.field("kind", &"srdct").field("seed", seed),
        };
        d.finish()
    }
}

impl SketchOperator {
    /// Subsampled randomized DCT, fully determined by `(n, s, seed)`.
    pub fn new(n: usize, s: usize, seed: u64) -> Result<Self> {
        if s == 0 || s >= n {
            return Err(Error::InvalidArgument(format!(
                "sketch dimension s = {s} must satisfy 0 < s < n = {n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sign_flips: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut selected_rows = rand::seq::index::sample(&mut rng, n, s).into_vec();
        selected_rows.sort_unstable();

        let fft = FftPlanner::new().plan_fft_forward(n);
        let scale = (n as f64 / s as f64).sqrt();
        let nf = n as f64;
        let twiddles = selected_rows
            .iter()
            .map(|&k| {
                let ck = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                let phase = -std::f64::consts::PI * k as f64 / (2.0 * nf);
                Complex64::from_polar(scale * ck, phase)
            })
            .collect();
        Ok(Self {
            n,
            s,
            kind: Kind::Srdct {
                sign_flips,
                selected_rows,
                seed,
                fft,
                twiddles,
            },
        })
    }

    /// `S = I` with `s = n`; every sketched formula collapses to its classical form.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            s: n,
            kind: Kind::Identity,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.kind {
            Kind::Identity => None,
            Kind::Srdct { seed, .. } => Some(*seed),
        }
    }

    pub fn sign_flips(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Identity => None,
            Kind::Srdct { sign_flips, .. } => Some(sign_flips),
        }
    }

    pub fn selected_rows(&self) -> Option<&[usize]> {
        match &self.kind {
            Kind::Identity => None,
            Kind::Srdct { selected_rows, .. } => Some(selected_rows),
        }
    }

    /// Checked application.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.s];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    /// Writes `S v` into `out` (length `s`).
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(out.len(), self.s);
        match &self.kind {
            Kind::Identity => out.copy_from_slice(v),
            Kind::Srdct {
                sign_flips,
                selected_rows,
                fft,
                twiddles,
                ..
            } => {
                // Makhoul's reordering turns an n-point DCT-II into an n-point FFT
                let n = self.n;
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                let half = n.div_ceil(2);
                for i in 0..half {
                    buf[i].re = v[2 * i] * sign_flips[2 * i];
                }
                for i in 0..n / 2 {
                    buf[n - 1 - i].re = v[2 * i + 1] * sign_flips[2 * i + 1];
                }
                fft.process(&mut buf);
                for ((o, &k), w) in out.iter_mut().zip(selected_rows).zip(twiddles) {
                    *o = (w * buf[k]).re;
                }
            }
        }
    }

    /// Sketches every column of `m` (n x c) into an s x c matrix.
    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n);
        let mut out = DMatrix::zeros(self.s, m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j).into_owned();
            let mut o = vec![0.0; self.s];
            self.apply_into(col.as_slice(), &mut o);
            out.column_mut(j).copy_from_slice(&o);
        }
        out
    }

    /// Explicit `s x n` matrix. Test-scale only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.apply_columns(&DMatrix::identity(self.n, self.n))
    }
}

/// Empirical distortion `max |‖Sv‖²/‖v‖² - 1|` over sampled vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionEstimate {
    pub epsilon_hat: f64,
    pub samples: usize,
}

fn ratio_defect(sketch: &SketchOperator, v: &[f64]) -> Option<f64> {
    let nv = dense::dot(v, v);
    if nv == 0.0 {
        return None;
    }
    let sv = sketch.apply(v).ok()?;
    Some((dense::dot(&sv, &sv) / nv - 1.0).abs())
}

/// Samples each basis vector plus `random_combinations` Gaussian combinations
/// of the basis; the result is at least the per-vector maximum.
pub fn measure_distortion(
    sketch: &SketchOperator,
    basis: &[Vec<f64>],
    random_combinations: usize,
    seed: u64,
) -> Result<DistortionEstimate> {
    if basis.is_empty() {
        return Err(Error::InvalidArgument("empty basis".into()));
    }
    if let Some(b) = basis.iter().find(|b| b.len() != sketch.n()) {
        return Err(Error::DimensionMismatch {
            expected: sketch.n(),
            got: b.len(),
        });
    }
    let mut eps = 0.0f64;
    let mut samples = 0;
    for b in basis {
        if let Some(d) = ratio_defect(sketch, b) {
            eps = eps.max(d);
            samples += 1;
        }
    }
    if basis.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0.0; sketch.n()];
        for _ in 0..random_combinations {
            v.iter_mut().for_each(|x| *x = 0.0);
            for b in basis {
                let c: f64 = rng.sample(StandardNormal);
                dense::axpy(c, b, &mut v);
            }
            if let Some(d) = ratio_defect(sketch, &v) {
                eps = eps.max(d);
                samples += 1;
            }
        }
    }
    Ok(DistortionEstimate {
        epsilon_hat: eps,
        samples,
    })
}

/// Exact embedding distortion of `S` on `span(columns)`: with `Q` an
/// orthonormal basis of the span, `max_i |σ_i(SQ)² - 1|`. Directions with
/// relative singular value below `1e-12` are treated as outside the span.
pub fn subspace_distortion(sketch: &SketchOperator, columns: &DMatrix<f64>) -> f64 {
    assert_eq!(columns.nrows(), sketch.n());
    let (sv, u, _) = dense::sorted_svd(columns);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0.0;
    }
    let rank = sv.iter().take_while(|&&x| x > 1e-12 * smax).count();
    let q = u.columns(0, rank).into_owned();
    let ssv = dense::singular_values(&sketch.apply_columns(&q));
    // a sketch with fewer rows than `rank` annihilates the excess directions
    ssv.iter()
        .chain(std::iter::repeat_n(&0.0, rank.saturating_sub(ssv.len())))
        .map(|s| (s * s - 1.0).abs())
        .fold(0.0, f64::max)
}
