//! Dense and CSR matrix primitives shared by every graph in the pipeline.
//!
//! All numerics are f64. Parallel kernels only ever split work across
//! independent output rows, so results are bit-identical for any thread
//! count.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Below this many output cells the dense/sparse kernels stay serial;
/// rayon dispatch would dominate the arithmetic.
const PAR_THRESHOLD: usize = 1 << 14;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    /// Builds from a row-major buffer; every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer holds {} values, shape {}x{} needs {}",
                values.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value in dense matrix".into()));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// self += scale * other. Shapes must match.
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Dense product self * other.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        let cols = other.cols;
        let body = |(i, out_row): (usize, &mut [f64])| {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if self.rows * cols < PAR_THRESHOLD {
            out.values.chunks_mut(cols).enumerate().for_each(body);
        } else {
            out.values.par_chunks_mut(cols).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// Stacks `top` over `bottom`; column counts must match.
    pub fn vstack(top: &DenseMatrix, bottom: &DenseMatrix) -> Result<DenseMatrix> {
        if top.cols != bottom.cols {
            return Err(Error::Dimension(format!(
                "vstack cols {} vs {}",
                top.cols, bottom.cols
            )));
        }
        let mut values = Vec::with_capacity((top.rows + bottom.rows) * top.cols);
        values.extend_from_slice(&top.values);
        values.extend_from_slice(&bottom.values);
        Ok(DenseMatrix { rows: top.rows + bottom.rows, cols: top.cols, values })
    }

    /// Splits into the first `at` rows and the rest.
    pub fn split_rows(&self, at: usize) -> (DenseMatrix, DenseMatrix) {
        assert!(at <= self.rows);
        let top = DenseMatrix {
            rows: at,
            cols: self.cols,
            values: self.values[..at * self.cols].to_vec(),
        };
        let bottom = DenseMatrix {
            rows: self.rows - at,
            cols: self.cols,
            values: self.values[at * self.cols..].to_vec(),
        };
        (top, bottom)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Compressed sparse row matrix. `col_idx` is strictly increasing inside
/// each row and every stored value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds and validates a CSR matrix from raw arrays.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = CsrMatrix { rows, cols, row_ptr, col_idx, values };
        m.validate()?;
        Ok(m)
    }

    /// Matrix with no stored entries.
    pub fn empty(rows: usize, cols: usize) -> Self {
        CsrMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from per-row entry lists; each list must be sorted by column
    /// with no duplicates.
    pub fn from_rows(cols: usize, rows_entries: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let rows = rows_entries.len();
        let nnz: usize = rows_entries.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for entries in &rows_entries {
            for &(c, v) in entries {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::new(rows, cols, row_ptr, col_idx, values)
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are an
    /// error rather than being summed, so callers cannot hide bugs.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Domain(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({}, {}) outside {}x{}",
                    r, c, rows, cols
                )));
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Column indices and values of row `i`.
    pub fn row_entries(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_range(i);
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1 {
            return Err(Error::Dimension("row_ptr length != rows + 1".into()));
        }
        if self.row_ptr[0] != 0 || *self.row_ptr.last().unwrap() != self.col_idx.len() {
            return Err(Error::Dimension("row_ptr does not span col_idx".into()));
        }
        if self.col_idx.len() != self.values.len() {
            return Err(Error::Dimension("col_idx and values length differ".into()));
        }
        for i in 0..self.rows {
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(Error::Dimension("row_ptr not monotone".into()));
            }
            let (cols, _) = self.row_entries(i);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Dimension(format!(
                        "columns not strictly increasing in row {}",
                        i
                    )));
                }
            }
            if let Some(&last) = cols.last() {
                if last >= self.cols {
                    return Err(Error::Dimension(format!("column out of range in row {}", i)));
                }
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value in sparse matrix".into()));
        }
        Ok(())
    }

    /// Per-row sums of stored values.
    pub fn row_sums(&self) -> DegreeVector {
        let values = (0..self.rows)
            .map(|i| self.row_entries(i).1.iter().sum())
            .collect();
        DegreeVector { values }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row_entries(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(i, c, v);
            }
        }
        out
    }

    /// Largest stored value, 0.0 when the matrix holds no entries.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Node degrees (or any per-row weight) of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector {
    pub values: Vec<f64>,
}

impl DegreeVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// 1 / sqrt(d) per entry; zero degrees map to 0 so isolated nodes stay
    /// isolated instead of producing infinities.
    pub fn inv_sqrt(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect()
    }
}

/// Sparse-dense product S * X.
pub fn spmm(s: &CsrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != x.rows {
        return Err(Error::Dimension(format!(
            "spmm {}x{} by {}x{}",
            s.rows, s.cols, x.rows, x.cols
        )));
    }
    let cols = x.cols;
    let mut out = DenseMatrix::zeros(s.rows, cols);
    let body = |(i, out_row): (usize, &mut [f64])| {
        let (idx, vals) = s.row_entries(i);
        for (&j, &v) in idx.iter().zip(vals) {
            let x_row = x.row(j);
            for (o, xv) in out_row.iter_mut().zip(x_row) {
                *o += v * xv;
            }
        }
    };
    if s.rows * cols < PAR_THRESHOLD {
        out.values.chunks_mut(cols).enumerate().for_each(body);
    } else {
        out.values.par_chunks_mut(cols).enumerate().for_each(body);
    }
    Ok(out)
}

fn spmv(s: &CsrMatrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let (idx, vals) = s.row_entries(i);
        let mut acc = 0.0;
        for (&j, &v) in idx.iter().zip(vals) {
            acc += v * x[j];
        }
        *o = acc;
    }
}

/// Exact transpose; no numeric drift, entry order is preserved per row.
pub fn transpose(s: &CsrMatrix) -> CsrMatrix {
    let mut counts = vec![0usize; s.cols + 1];
    for &c in &s.col_idx {
        counts[c + 1] += 1;
    }
    for i in 0..s.cols {
        counts[i + 1] += counts[i];
    }
    let row_ptr = counts.clone();
    let mut cursor = counts;
    let mut col_idx = vec![0usize; s.nnz()];
    let mut values = vec![0.0; s.nnz()];
    for i in 0..s.rows {
        let (idx, vals) = s.row_entries(i);
        for (&j, &v) in idx.iter().zip(vals) {
            let p = cursor[j];
            col_idx[p] = i;
            values[p] = v;
            cursor[j] += 1;
        }
    }
    CsrMatrix { rows: s.cols, cols: s.rows, row_ptr, col_idx, values }
}

/// Symmetric degree normalization D^{-1/2} S D^{-1/2} with D the diagonal
/// of row sums. Entries must be non-negative; rows (or columns) whose
/// degree is zero come out as zeros.
pub fn normalize_sym(s: &CsrMatrix) -> Result<CsrMatrix> {
    if s.rows != s.cols {
        return Err(Error::Dimension(format!(
            "normalize_sym needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if s.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "normalize_sym requires non-negative entries".into(),
        ));
    }
    let inv = s.row_sums().inv_sqrt();
    let mut out = s.clone();
    for i in 0..out.rows {
        let r = out.row_range(i);
        for p in r {
            let j = out.col_idx[p];
            out.values[p] *= inv[i] * inv[j];
        }
    }
    Ok(out)
}

/// c*I - S. Used to turn "leftmost eigenvalue of S" questions into
/// dominant-eigenvalue questions.
pub fn shifted_negation(s: &CsrMatrix, c: f64) -> Result<CsrMatrix> {
    if s.rows != s.cols {
        return Err(Error::Dimension("shifted_negation needs a square matrix".into()));
    }
    let mut rows_entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(s.rows);
    for i in 0..s.rows {
        let (idx, vals) = s.row_entries(i);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(idx.len() + 1);
        let mut has_diag = false;
        for (&j, &v) in idx.iter().zip(vals) {
            if j == i {
                row.push((j, c - v));
                has_diag = true;
            } else {
                row.push((j, -v));
            }
        }
        if !has_diag {
            let pos = row.partition_point(|&(j, _)| j < i);
            row.insert(pos, (i, c));
        }
        rows_entries.push(row);
    }
    CsrMatrix::from_rows(s.rows, rows_entries)
}

/// Result of a power-iteration eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Dominant eigenvalue by power iteration with two convergence routes: a
/// small residual certifies a simple (or exactly repeated) real dominant
/// eigenvalue, and a two-term linear recurrence fitted over three
/// consecutive iterates captures dominant pairs that plain iteration never
/// settles on — two nearly equal real eigenvalues, or a complex conjugate
/// pair, for which the pair's common real part is returned.
///
/// Iterates on S + I rather than S: for a non-negative matrix the spectral
/// radius sits at a real eigenvalue, and the unit shift breaks the magnitude
/// tie with any mirrored negative eigenvalue (bipartite-like structures
/// otherwise never settle). The shift is subtracted from the returned value.
/// The start vector is strictly positive so it overlaps the dominant
/// eigenvector of a non-negative matrix. `tol` is relative to the estimate.
pub fn dominant_eigenvalue(
    s: &CsrMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenEstimate> {
    if s.rows != s.cols {
        return Err(Error::Dimension(format!(
            "dominant_eigenvalue needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if s.rows == 0 {
        return Err(Error::Parameter("dominant_eigenvalue on empty matrix".into()));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Parameter("tol must be positive and max_iter nonzero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..s.rows).map(|_| 0.5 + rng.random::<f64>()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut w = vec![0.0; s.rows];
    // Unit iterate one step back and the scale tying it to v: (S+I) v_prev
    // = scale_prev * v. Together with w they form the consecutive chain
    // x0 = v_prev, x1 = scale_prev * v, x2 = scale_prev * w.
    let mut v_prev: Vec<f64> = Vec::new();
    let mut scale_prev = 0.0;
    let mut mu = 0.0;
    for it in 1..=max_iter {
        spmv(s, &v, &mut w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += vi; // (S + I) v
        }
        mu = dot(&v, &w);
        let residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| {
                let r = wi - mu * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        if residual <= tol * (1.0 + mu.abs()) {
            return Ok(EigenEstimate { value: mu - 1.0, converged: true, iterations: it });
        }
        if !v_prev.is_empty() {
            // Least squares for x2 = alpha*x1 + beta*x0; the dominant pair
            // solves z^2 = alpha*z + beta. Dividing the chain by scale_prev
            // leaves x0 = v_prev/scale_prev, x1 = v, x2 = w.
            let x0: Vec<f64> = v_prev.iter().map(|x| x / scale_prev).collect();
            let (g11, g10, g00) = (dot(&v, &v), dot(&v, &x0), dot(&x0, &x0));
            let (r1, r0) = (dot(&v, &w), dot(&x0, &w));
            let det = g11 * g00 - g10 * g10;
            if det > 1e-12 * g11 * g00 {
                let alpha = (r1 * g00 - r0 * g10) / det;
                let beta = (r0 * g11 - r1 * g10) / det;
                let fit = v
                    .iter()
                    .zip(&x0)
                    .zip(&w)
                    .map(|((x1i, x0i), x2i)| {
                        let r = x2i - alpha * x1i - beta * x0i;
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt();
                let w_norm = dot(&w, &w).sqrt();
                if fit <= tol * (1.0 + w_norm) {
                    let disc = alpha * alpha + 4.0 * beta;
                    let dominant = if disc >= 0.0 {
                        let root = disc.sqrt();
                        if alpha >= 0.0 { (alpha + root) / 2.0 } else { (alpha - root) / 2.0 }
                    } else {
                        alpha / 2.0 // conjugate pair: common real part
                    };
                    return Ok(EigenEstimate {
                        value: dominant - 1.0,
                        converged: true,
                        iterations: it,
                    });
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // (S + I) v vanished; the estimate cannot improve.
            return Ok(EigenEstimate { value: mu - 1.0, converged: false, iterations: it });
        }
        v_prev = std::mem::take(&mut v);
        scale_prev = norm;
        v = w.iter().map(|wi| wi / norm).collect();
    }
    Ok(EigenEstimate { value: mu - 1.0, converged: false, iterations: max_iter })
}
