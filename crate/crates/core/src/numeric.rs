//! Dense linear-algebra substrate.
//!
//! Storage is row-major `f32`; every reduction accumulates in `f64` in a
//! fixed left-to-right order so results are reproducible run to run.

use std::fmt;

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-6;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows. An empty iterator yields a
    /// `0 x cols` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} values", r.len()),
                    format!("{cols} columns"),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics, so special-case empty column count.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "vstack",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 + *b as f64) as f32)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// Inner product accumulated in four interleaved lanes, combined in a
/// fixed order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len());
    let (head, tail) = (n / 4 * 4, n % 4);
    let mut lanes = [0.0f64; 4];
    for (ca, cb) in a[..head].chunks_exact(4).zip(b[..head].chunks_exact(4)) {
        for l in 0..4 {
            lanes[l] += ca[l] as f64 * cb[l] as f64;
        }
    }
    let mut total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for k in head..head + tail {
        total += a[k] as f64 * b[k] as f64;
    }
    total
}

pub fn squared_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Matrix product `a * b`.
///
/// Every output entry accumulates its `k` terms in ascending order; rows
/// are processed four at a time so each row of `b` is read once per block.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.dims(), b.dims()));
    }
    const BLOCK: usize = 4;
    let n = b.cols;
    let mut out = Vec::with_capacity(a.rows * n);
    let mut acc = vec![0.0f64; BLOCK * n];
    let mut i0 = 0;
    while i0 < a.rows {
        let rows = BLOCK.min(a.rows - i0);
        acc.iter_mut().for_each(|v| *v = 0.0);
        let (acc0, rest) = acc.split_at_mut(n);
        let (acc1, rest) = rest.split_at_mut(n);
        let (acc2, acc3) = rest.split_at_mut(n);
        for k in 0..a.cols {
            let coef = |r: usize| if r < rows { a.get(i0 + r, k) as f64 } else { 0.0 };
            let (c0, c1, c2, c3) = (coef(0), coef(1), coef(2), coef(3));
            let brow = b.row(k);
            for j in 0..n {
                let bj = brow[j] as f64;
                acc0[j] += c0 * bj;
                acc1[j] += c1 * bj;
                acc2[j] += c2 * bj;
                acc3[j] += c3 * bj;
            }
        }
        for r in 0..rows {
            out.extend(acc[r * n..(r + 1) * n].iter().map(|v| *v as f32));
        }
        i0 += rows;
    }
    Ok(Matrix {
        rows: a.rows,
        cols: n,
        data: out,
    })
}

/// `x * w + bias`, the affine map used by every projection in the runtime.
pub fn linear(x: &Matrix, w: &Matrix, bias: &[f32]) -> Result<Matrix> {
    if bias.len() != w.cols {
        return Err(Error::shape(
            "linear bias",
            w.dims(),
            format!("{} bias values", bias.len()),
        ));
    }
    let mut out = matmul(x, w)?;
    for r in 0..out.rows {
        for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
            *v = (*v as f64 + *b as f64) as f32;
        }
    }
    Ok(out)
}

/// Softmax of a single row computed in `f64`, max-subtracted.
pub fn softmax_f64(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(m.data.len());
    let mut buf = Vec::with_capacity(m.cols);
    for r in m.iter_rows() {
        buf.clear();
        buf.extend(r.iter().map(|v| *v as f64));
        data.extend(softmax_f64(&buf).into_iter().map(|v| v as f32));
    }
    Matrix {
        rows: m.rows,
        cols: m.cols,
        data,
    }
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
/// A zero-norm row has similarity 0 with everything.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("cosine_matrix", a.dims(), b.dims()));
    }
    let norms_a: Vec<f64> = a.iter_rows().map(|r| squared_norm(r).sqrt()).collect();
    let norms_b: Vec<f64> = b.iter_rows().map(|r| squared_norm(r).sqrt()).collect();
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for (ra, na) in a.iter_rows().zip(&norms_a) {
        for (rb, nb) in b.iter_rows().zip(&norms_b) {
            let denom = na * nb;
            let c = if denom > 0.0 { dot(ra, rb) / denom } else { 0.0 };
            data.push(c.clamp(-1.0, 1.0) as f32);
        }
    }
    Ok(Matrix {
        rows: a.rows,
        cols: b.rows,
        data,
    })
}

pub fn layer_norm(x: &Matrix, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Matrix> {
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(Error::shape(
            "layer_norm",
            x.dims(),
            format!("gamma {} / beta {}", gamma.len(), beta.len()),
        ));
    }
    let n = x.cols as f64;
    let mut data = Vec::with_capacity(x.data.len());
    for r in x.iter_rows() {
        let mean = r.iter().fold(0.0f64, |a, v| a + *v as f64) / n;
        let var = r
            .iter()
            .fold(0.0f64, |a, v| a + (*v as f64 - mean).powi(2))
            / n;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for ((v, g), b) in r.iter().zip(gamma).zip(beta) {
            data.push(((*v as f64 - mean) * inv * *g as f64 + *b as f64) as f32);
        }
    }
    Ok(Matrix {
        rows: x.rows,
        cols: x.cols,
        data,
    })
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact (erf-based) GELU, elementwise.
pub fn gelu(x: &Matrix) -> Matrix {
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x
            .data
            .iter()
            .map(|v| gelu_scalar(*v as f64) as f32)
            .collect(),
    }
}
