//! Sparse matrices, Matrix Market I/O and the synthetic problem families.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Anything that can apply `y = A x` for a square or rectangular operator.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Writes `A x` into `y`. Lengths are the caller's responsibility.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);
}

/// Checked `A x`.
pub fn matvec<A: LinearOperator + ?Sized>(a: &A, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: x.len(),
        });
    }
    let mut y = vec![0.0; a.nrows()];
    a.apply_into(x, &mut y);
    Ok(y)
}

/// Compressed sparse row matrix of `f64`.
///
/// Column indices are strictly increasing within each row and explicit zeros
/// are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSR arrays.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return Err(Error::InvalidArgument(
                "row_offsets must have length nrows + 1 and start at 0".into(),
            ));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::InvalidArgument(
                "col_indices/values length disagrees with row_offsets".into(),
            ));
        }
        for r in 0..nrows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::InvalidArgument("row_offsets not nondecreasing".into()));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= ncols) {
                return Err(Error::InvalidArgument(format!("column index out of range in row {r}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::InvalidArgument(format!(
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_indices.push(c);
            values.push(v);
        }
        let mut keep_cols = Vec::with_capacity(values.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(col_indices).zip(values) {
            if v != 0.0 {
                row_offsets[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices: keep_cols,
            values: keep_vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Drops exact zeros of a dense matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    t.push((r, c, a[(r, c)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] = v;
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let t = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, t).expect("indices in range")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            (lo..hi).map(move |p| (r, self.col_indices[p], self.values[p]))
        })
    }

    /// Value at `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        match self.col_indices[lo..hi].binary_search(&c) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    /// Returns `self + alpha * other` (same shape).
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                got: other.nrows,
            });
        }
        let t = self
            .iter()
            .chain(other.iter().map(|(r, c, v)| (r, c, alpha * v)))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, t)
    }
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for p in lo..hi {
                acc += self.values[p] * x[self.col_indices[p]];
            }
            *yr = acc;
        }
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let xv = nalgebra::DVectorView::from_slice(x, x.len());
        let mut yv = nalgebra::DVectorViewMut::from_slice(y, self.nrows());
        yv.gemv(1.0, self, &xv, 0.0);
    }
}

impl<T: LinearOperator + Send + ?Sized> LinearOperator for Arc<T> {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }

    fn ncols(&self) -> usize {
        (**self).ncols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
}

// ---------------------------------------------------------------------------
// Matrix Market

#[derive(Clone, Copy, PartialEq)]
enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Clone, Copy, PartialEq)]
enum MmField {
    Real,
    Pattern,
}

#[derive(Clone, Copy, PartialEq)]
enum MmSymmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

fn mm_err(line: usize, msg: impl Into<String>) -> Error {
    Error::MatrixMarket {
        line,
        msg: msg.into(),
    }
}

/// Reads a Matrix Market file (coordinate or array; real, integer or pattern;
/// general, symmetric or skew-symmetric). Symmetric storage is expanded.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<SparseMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (hline, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(mm_err(1, "empty input")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(mm_err(hline, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    let format = match tokens[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(mm_err(hline, format!("unknown format '{other}'"))),
    };
    let field = match tokens[3].as_str() {
        "real" | "double" | "integer" => MmField::Real,
        "pattern" if format == MmFormat::Coordinate => MmField::Pattern,
        "complex" => return Err(mm_err(hline, "complex matrices are not supported")),
        other => return Err(mm_err(hline, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        "skew-symmetric" => MmSymmetry::SkewSymmetric,
        other => return Err(mm_err(hline, format!("unsupported symmetry '{other}'"))),
    };

    // skip comments and blank lines up to the size line
    let mut last_line = hline;
    let mut next_data = || -> Result<Option<(usize, String)>> {
        for (n, l) in lines.by_ref() {
            let l = l?;
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            return Ok(Some((n, t.to_string())));
        }
        Ok(None)
    };

    let (sline, size) = next_data()?.ok_or_else(|| mm_err(hline + 1, "missing size line"))?;
    last_line = last_line.max(sline);
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| mm_err(sline, format!("bad size line: {e}")))?;

    let parse_f = |line: usize, s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| mm_err(line, format!("bad value '{s}': {e}")))
    };

    let mut triplets = Vec::new();
    let (nrows, ncols) = match format {
        MmFormat::Coordinate => {
            if dims.len() != 3 {
                return Err(mm_err(sline, "coordinate size line needs 'rows cols nnz'"));
            }
            let (nr, nc, nnz) = (dims[0], dims[1], dims[2]);
            for k in 0..nnz {
                let (ln, text) = next_data()?.ok_or_else(|| {
                    mm_err(last_line + 1, format!("truncated body: expected {nnz} entries, found {k}"))
                })?;
                last_line = ln;
                let f: Vec<&str> = text.split_whitespace().collect();
                let need = if field == MmField::Pattern { 2 } else { 3 };
                if f.len() < need {
                    return Err(mm_err(ln, format!("expected {need} fields, found {}", f.len())));
                }
                let r: usize = f[0].parse().map_err(|e| mm_err(ln, format!("bad row index: {e}")))?;
                let c: usize = f[1].parse().map_err(|e| mm_err(ln, format!("bad column index: {e}")))?;
                if r == 0 || c == 0 || r > nr || c > nc {
                    return Err(mm_err(ln, format!("index ({r}, {c}) out of bounds for {nr}x{nc}")));
                }
                let v = match field {
                    MmField::Pattern => 1.0,
                    MmField::Real => parse_f(ln, f[2])?,
                };
                push_sym(&mut triplets, symmetry, r - 1, c - 1, v);
            }
            (nr, nc)
        }
        MmFormat::Array => {
            if dims.len() != 2 {
                return Err(mm_err(sline, "array size line needs 'rows cols'"));
            }
            let (nr, nc) = (dims[0], dims[1]);
            // column-major; symmetric variants store the lower triangle only
            let mut positions = Vec::new();
            for c in 0..nc {
                let start = match symmetry {
                    MmSymmetry::General => 0,
                    MmSymmetry::Symmetric => c,
                    MmSymmetry::SkewSymmetric => c + 1,
                };
                for r in start..nr {
                    positions.push((r, c));
                }
            }
            let total = positions.len();
            for (k, (r, c)) in positions.into_iter().enumerate() {
                let (ln, text) = next_data()?.ok_or_else(|| {
                    mm_err(last_line + 1, format!("truncated body: expected {total} values, found {k}"))
                })?;
                last_line = ln;
                let tok = text.split_whitespace().next().unwrap_or("");
                let v = parse_f(ln, tok)?;
                push_sym(&mut triplets, symmetry, r, c, v);
            }
            (nr, nc)
        }
    };
    SparseMatrix::from_triplets(nrows, ncols, triplets)
}

fn push_sym(t: &mut Vec<(usize, usize, f64)>, sym: MmSymmetry, r: usize, c: usize, v: f64) {
    t.push((r, c, v));
    if r != c {
        match sym {
            MmSymmetry::General => {}
            MmSymmetry::Symmetric => t.push((c, r, v)),
            MmSymmetry::SkewSymmetric => t.push((c, r, -v)),
        }
    }
}

/// Writes coordinate/real/general format with 17 significant digits.
pub fn write_matrix_market<W: Write>(a: &SparseMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows, a.ncols, a.nnz())?;
    for (r, c, v) in a.iter() {
        writeln!(w, "{} {} {:.16e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Problem generators

/// Five-point Neumann Laplacian on a `grid_side x grid_side` grid with
/// mirror boundary neighbours, shifted by `shift * I`.
///
/// Every row of the unshifted matrix sums to zero.
pub fn gen_neumann(grid_side: usize, shift: f64) -> Result<SparseMatrix> {
    if grid_side < 2 {
        return Err(Error::InvalidArgument("grid_side must be >= 2".into()));
    }
    let g = grid_side;
    let idx = |i: usize, j: usize| i * g + j;
    let reflect = |k: isize| -> usize {
        if k < 0 {
            1
        } else if k as usize >= g {
            g - 2
        } else {
            k as usize
        }
    };
    let mut t = Vec::with_capacity(5 * g * g);
    for i in 0..g {
        for j in 0..g {
            let row = idx(i, j);
            t.push((row, row, 4.0 + shift));
            let (ii, jj) = (i as isize, j as isize);
            for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                t.push((row, idx(reflect(ii + di), reflect(jj + dj)), -1.0));
            }
        }
    }
    SparseMatrix::from_triplets(g * g, g * g, t)
}

/// `(L ⊗ I + I ⊗ L) + alpha (D ⊗ I + I ⊗ D)` with
/// `L = (n+1)^2 tridiag(1, -2, 1)` and `D = (n+1)/2 tridiag(-1, 0, 1)`.
pub fn gen_convdiff(n: usize, alpha: f64) -> Result<SparseMatrix> {
    if n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    let h2 = ((n + 1) * (n + 1)) as f64;
    let d = (n + 1) as f64 / 2.0;
    // 1D stencils as (offset, value)
    let lap = [(-1isize, h2), (0, -2.0 * h2), (1, h2)];
    let conv = [(-1isize, -alpha * d), (1, alpha * d)];
    let mut t = Vec::with_capacity(5 * n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for &(off, v) in lap.iter().chain(conv.iter()) {
                // X ⊗ I couples (i, j) to (i + off, j)
                let k = i as isize + off;
                if k >= 0 && (k as usize) < n {
                    t.push((row, k as usize * n + j, v));
                }
                // I ⊗ X couples (i, j) to (i, j + off)
                let l = j as isize + off;
                if l >= 0 && (l as usize) < n {
                    t.push((row, i * n + l as usize, v));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n * n, n * n, t)
}

/// One linear system of a sequence.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub matrix: Arc<SparseMatrix>,
    pub rhs: Vec<f64>,
    pub label: String,
    pub target_tol: f64,
}

impl ProblemInstance {
    pub fn new(
        matrix: Arc<SparseMatrix>,
        rhs: Vec<f64>,
        label: impl Into<String>,
        target_tol: f64,
    ) -> Result<Self> {
        if rhs.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: rhs.len(),
            });
        }
        if !(target_tol > 0.0 && target_tol < 1.0) {
            return Err(Error::InvalidArgument("target_tol must lie in (0, 1)".into()));
        }
        Ok(Self {
            matrix,
            rhs,
            label: label.into(),
            target_tol,
        })
    }
}

/// Ordered systems of equal dimension.
#[derive(Debug, Clone)]
pub struct ProblemSequence {
    instances: Vec<ProblemInstance>,
    shared_matrix: bool,
}

impl ProblemSequence {
    pub fn new(instances: Vec<ProblemInstance>) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty problem sequence".into()))?;
        let n = first.matrix.nrows();
        if let Some(bad) = instances.iter().find(|p| p.matrix.nrows() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.matrix.nrows(),
            });
        }
        let shared_matrix = instances
            .iter()
            .all(|p| Arc::ptr_eq(&p.matrix, &first.matrix));
        Ok(Self {
            instances,
            shared_matrix,
        })
    }

    pub fn instances(&self) -> &[ProblemInstance] {
        &self.instances
    }

    pub fn shared_matrix(&self) -> bool {
        self.shared_matrix
    }

    pub fn dim(&self) -> usize {
        self.instances[0].matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, density: f64, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.random::<f64>() < density {
                    t.push((r, c, rng.random_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    fn dense_matvec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
        (0..a.nrows())
            .map(|r| (0..a.ncols()).map(|c| a[(r, c)] * x[c]).sum())
            .collect()
    }

    #[test]
    fn identity_matvec() {
        let y = matvec(&SparseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn laplacian_row_zero_on_ones() {
        // first row of the 1D Laplacian for n = 3 is 16 * [-2, 1, 0]
        let n = 3;
        let h2 = 16.0;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, -2.0 * h2));
            if i > 0 {
                t.push((i, i - 1, h2));
            }
            if i + 1 < n {
                t.push((i, i + 1, h2));
            }
        }
        let l = SparseMatrix::from_triplets(n, n, t).unwrap();
        let y = matvec(&l, &[1.0; 3]).unwrap();
        assert_eq!(y[0], -16.0);
    }

    #[test]
    fn matvec_matches_dense_oracle() {
        let a = random_sparse(10, 0.4, 7);
        let d = a.to_dense();
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = matvec(&a, &x).unwrap();
        let yo = dense_matvec(&d, &x);
        for (u, v) in y.iter().zip(&yo) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        assert!(matches!(
            matvec(&SparseMatrix::identity(3), &[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 0.0)])
            .unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 1), 3.0);
    }

    #[test]
    fn from_csr_rejects_unsorted() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn mm_single_entry() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 5.0";
        let a = parse_matrix_market(text.as_bytes()).unwrap();
        assert_eq!((a.nrows(), a.ncols(), a.nnz()), (2, 2, 1));
        assert_eq!(a.get(0, 0), 5.0);
    }

    #[test]
    fn mm_symmetric_expansion() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 2\n1 1 1.0\n2 1 3\n";
        let a = parse_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(a.get(1, 0), 3.0);
        assert_eq!(a.get(0, 1), 3.0);
    }

    #[test]
    fn mm_array_format() {
        let text = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n0\n";
        let a = parse_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn mm_errors_carry_line_numbers() {
        let bad_header = "%%MatrixMarket tensor coordinate real general\n1 1 1\n1 1 1\n";
        assert!(matches!(
            parse_matrix_market(bad_header.as_bytes()),
            Err(Error::MatrixMarket { line: 1, .. })
        ));
        let oob = "%%MatrixMarket matrix coordinate real general\n% c\n2 2 1\n3 1 1.0\n";
        assert!(matches!(
            parse_matrix_market(oob.as_bytes()),
            Err(Error::MatrixMarket { line: 4, .. })
        ));
        let truncated = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(matches!(
            parse_matrix_market(truncated.as_bytes()),
            Err(Error::MatrixMarket { line: 4, .. })
        ));
    }

    #[test]
    fn mm_round_trip_random() {
        let a = random_sparse(30, 0.2, 3);
        let mut buf = Vec::new();
        write_matrix_market(&a, &mut buf).unwrap();
        let b = parse_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(a.row_offsets(), b.row_offsets());
        assert_eq!(a.col_indices(), b.col_indices());
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() <= 1e-15 * u.abs());
        }
    }

    #[test]
    fn neumann_row_sums_equal_shift() {
        for g in [2, 3, 7] {
            let a = gen_neumann(g, 0.25).unwrap();
            let y = matvec(&a, &vec![1.0; g * g]).unwrap();
            assert!(y.iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
        assert_eq!(gen_neumann(103, 1e-4).unwrap().nrows(), 10_609);
        assert!(gen_neumann(1, 0.0).is_err());
    }

    #[test]
    fn neumann_corner_row_by_hand() {
        // grid 3x3, corner (0,0): neighbours (1,0) and (0,1) each reflected twice
        let a = gen_neumann(3, 0.0).unwrap();
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), -2.0);
        assert_eq!(a.get(0, 3), -2.0);
        let off: f64 = a.iter().filter(|&(r, c, _)| r == 0 && c != 0).map(|t| t.2).sum();
        assert_eq!(off, -4.0);
    }

    #[test]
    fn convdiff_small_matches_kronecker_oracle() {
        let n = 2;
        let h2 = 9.0;
        let l = DMatrix::from_row_slice(2, 2, &[-2.0 * h2, h2, h2, -2.0 * h2]);
        let id = DMatrix::<f64>::identity(2, 2);
        let oracle = l.kronecker(&id) + id.kronecker(&l);
        let a = gen_convdiff(n, 0.0).unwrap().to_dense();
        assert_eq!(a, oracle);
        assert_eq!(a[(0, 0)], -36.0);
        assert_eq!(a.transpose(), a);

        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.5, -1.5, 0.0]);
        let skew = (d.kronecker(&id) + id.kronecker(&d)) * 5.0;
        let a5 = gen_convdiff(n, 5.0).unwrap().to_dense();
        assert!((&a5 - a5.transpose() - (&skew - skew.transpose())).amax() < 1e-12);
    }

    #[test]
    fn convdiff_symmetric_for_zero_alpha() {
        let a = gen_convdiff(6, 0.0).unwrap();
        assert_eq!(a, a.transpose());
        assert!(a.nnz() <= 5 * a.nrows());
    }

    #[test]
    fn sequence_detects_shared_matrix() {
        let a = Arc::new(SparseMatrix::identity(4));
        let p1 = ProblemInstance::new(a.clone(), vec![1.0; 4], "a", 1e-6).unwrap();
        let p2 = ProblemInstance::new(a, vec![2.0; 4], "b", 1e-6).unwrap();
        let seq = ProblemSequence::new(vec![p1, p2]).unwrap();
        assert!(seq.shared_matrix());
        assert!(ProblemSequence::new(vec![]).is_err());
        assert!(ProblemInstance::new(Arc::new(SparseMatrix::identity(2)), vec![1.0], "x", 0.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matvec_agrees_with_dense(n in 1usize..50, seed in 0u64..1000) {
            let a = random_sparse(n, 0.3, seed);
            let d = a.to_dense();
            let x: Vec<f64> = (0..n).map(|i| ((i as f64 + seed as f64) * 0.7).cos()).collect();
            let y = matvec(&a, &x).unwrap();
            let yo = dense_matvec(&d, &x);
            let scale = yo.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (u, v) in y.iter().zip(&yo) {
                proptest::prop_assert!((u - v).abs() <= 1e-13 * scale);
            }
        }

        #[test]
        fn mm_round_trip(n in 1usize..20, seed in 0u64..1000) {
            let a = random_sparse(n, 0.3, seed);
            let mut buf = Vec::new();
            write_matrix_market(&a, &mut buf).unwrap();
            let b = parse_matrix_market(buf.as_slice()).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
