//! Dense row-major matrices, seeded randomness, and the statistical
//! primitives the rest of the crate builds on.
//!
//! Orientation convention: rows are samples, columns are features/neurons.
//! All arithmetic is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2-D array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::InvalidArgument(
                    "ragged rows passed to Matrix::from_rows".into(),
                ));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_matrix(&self, r: usize) -> Matrix {
        Matrix {
            rows: 1,
            cols: self.cols,
            data: self.row(r).to_vec(),
        }
    }

    /// New matrix holding the rows of `self` selected by `idx`, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// `a * b`. Rows of the output are computed independently (parallel when the
/// `parallel` feature is on); the inner summation order is fixed, so results
/// are identical in both modes.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    let a_data = &a.data;
    let b_data = &b.data;
    crate::for_each_row_chunk(&mut out, m.max(1), |i, out_row| {
        if m == 0 {
            return;
        }
        let a_row = &a_data[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b_data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// Seeded deterministic random stream. The same seed yields the same draw
/// sequence on every platform. Not safe for concurrent mutation; parallel
/// call sites derive independent child streams with [`RngState::child`].
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this state's seed and `index`
    /// (splitmix64 over the pair). Does not advance `self`.
    pub fn child(&self, index: u64) -> RngState {
        let mut z = self
            .seed
            .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        RngState::new(z ^ (z >> 31))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.gaussian()).collect();
        Matrix {
            rows,
            cols,
            data,
        }
    }

    /// Fisher-Yates shuffle of `items`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// Random matrix with orthonormal columns (rows >= cols) or orthonormal rows
/// (rows < cols). Built by modified Gram-Schmidt on a seeded Gaussian draw;
/// the implicit triangular factor has a positive diagonal, which makes the
/// result a deterministic function of the seed.
pub fn semi_orthogonal_init(rows: usize, cols: usize, rng: &mut RngState) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "semi_orthogonal_init requires rows >= 1 and cols >= 1".into(),
        ));
    }
    if rows >= cols {
        let g = rng.gaussian_matrix(rows, cols);
        orthonormalize_columns(g)
    } else {
        let g = rng.gaussian_matrix(cols, rows);
        Ok(orthonormalize_columns(g)?.transpose())
    }
}

/// Modified Gram-Schmidt over columns; requires rows >= cols.
fn orthonormalize_columns(m: Matrix) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    // Column-major scratch for contiguous column access.
    let mut col_major = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            col_major[c * rows + r] = m.get(r, c);
        }
    }
    for c in 0..cols {
        let (done, rest) = col_major.split_at_mut(c * rows);
        let current = &mut rest[..rows];
        for prev in done.chunks_exact(rows) {
            let dot: f64 = prev.iter().zip(current.iter()).map(|(a, b)| a * b).sum();
            for (x, &p) in current.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm: f64 = current.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArgument(
                "degenerate Gaussian draw during orthonormalization".into(),
            ));
        }
        for x in current.iter_mut() {
            *x /= norm;
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, col_major[c * rows + r]);
        }
    }
    Ok(out)
}

/// Per-column statistics from [`standardize_columns`], reusable on test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

/// Center and scale each column to mean 0 / variance 1 (population variance).
/// Zero-variance columns map to all-zeros and record a stddev of 0.
pub fn standardize_columns(x: &Matrix) -> Result<(Matrix, ColumnStats)> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(
            "standardize_columns requires at least 2 rows".into(),
        ));
    }
    let stats = fit_column_stats(x);
    let out = apply_standardization(x, &stats)?;
    Ok((out, stats))
}

pub fn fit_column_stats(x: &Matrix) -> ColumnStats {
    let (n, d) = x.shape();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut vars = vec![0.0; d];
    for r in 0..n {
        for ((s, &v), &m) in vars.iter_mut().zip(x.row(r)).zip(&means) {
            let dv = v - m;
            *s += dv * dv;
        }
    }
    let stddevs = vars.iter().map(|s| (s / n as f64).sqrt()).collect();
    ColumnStats { means, stddevs }
}

/// Apply previously fitted statistics. Columns whose fitted stddev is 0 map
/// to zero.
pub fn apply_standardization(x: &Matrix, stats: &ColumnStats) -> Result<Matrix> {
    if x.cols() != stats.means.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_standardization",
            left: x.shape(),
            right: (1, stats.means.len()),
        });
    }
    let mut out = x.clone();
    let d = x.cols();
    for r in 0..out.rows() {
        let row = &mut out.as_mut_slice()[r * d..(r + 1) * d];
        for ((v, &m), &s) in row.iter_mut().zip(&stats.means).zip(&stats.stddevs) {
            *v = if s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }
    Ok(out)
}

/// Pearson correlations between all pairs of columns (rows = samples).
/// Zero-variance columns correlate 0 against everything; the diagonal is 1.
pub fn pearson_correlation_matrix(x: &Matrix) -> Result<Matrix> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(
            "pearson_correlation_matrix requires at least 2 rows".into(),
        ));
    }
    let (n, d) = x.shape();
    let stats = fit_column_stats(x);
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let a = row[i] - stats.means[i];
            for j in i..d {
                cov[i * d + j] += a * (row[j] - stats.means[j]);
            }
        }
    }
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = if i == j {
                1.0
            } else if stats.stddevs[i] > 0.0 && stats.stddevs[j] > 0.0 {
                let denom = stats.stddevs[i] * stats.stddevs[j] * n as f64;
                (cov[i * d + j] / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}
