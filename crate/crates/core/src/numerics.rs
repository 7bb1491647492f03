// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense f32 kernels used by the forward pass and the analyses.
//!
//! Every reduction runs left to right in index order, so results are
//! bit-reproducible for identical inputs regardless of the calling thread.

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix, rejecting length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Kernels whose outputs are finite by construction skip the scan.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f32) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    /// Adds `other` elementwise in place.
    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Adds `bias` to every row in place.
    pub(crate) fn add_row_bias(&mut self, bias: &[f32]) {
        debug_assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            for (a, b) in row.iter_mut().zip(bias) {
                *a += *b;
            }
        }
    }
}

/// Standard matrix product `a × b`.
///
/// Each output entry accumulates `a[i][k] * b[k][j]` for ascending `k`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let n = b.cols;
    let mut out = vec![0.0f32; a.rows * n];
    for (i, out_row) in out.chunks_exact_mut(n.max(1)).enumerate().take(a.rows) {
        let a_row = a.row(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(a.rows, n, out))
}

/// Numerically stable softmax of one slice, in place.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax applied independently to every row.
pub fn row_softmax(a: &Matrix) -> Result<Matrix> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::Shape(format!(
            "softmax of empty {}x{} matrix",
            a.rows, a.cols
        )));
    }
    let mut out = a.clone();
    for row in out.data.chunks_exact_mut(a.cols) {
        softmax_in_place(row);
    }
    Ok(out)
}

/// Default epsilon for both normalization kinds.
pub const DEFAULT_NORM_EPS: f32 = 1e-5;

/// `x / sqrt(mean(x²) + eps) * gain`.
pub fn rms_norm(x: &[f32], gain: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gain.len() {
        return Err(Error::Shape(format!(
            "rms_norm input length {} vs gain length {}",
            x.len(),
            gain.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rms_norm_into(x, gain, eps, &mut out);
    Ok(out)
}

pub(crate) fn rms_norm_into(x: &[f32], gain: &[f32], eps: f32, out: &mut [f32]) {
    let mut sum_sq = 0.0f32;
    for v in x {
        sum_sq += v * v;
    }
    let scale = 1.0 / (sum_sq / x.len() as f32 + eps).sqrt();
    for ((o, v), g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * scale * g;
    }
}

/// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
pub fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::Shape(format!(
            "layer_norm input length {} vs gain {} / bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gain, Some(bias), eps, &mut out);
    Ok(out)
}

pub(crate) fn layer_norm_into(
    x: &[f32],
    gain: &[f32],
    bias: Option<&[f32]>,
    eps: f32,
    out: &mut [f32],
) {
    let n = x.len() as f32;
    let mut sum = 0.0f32;
    for v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut sum_sq = 0.0f32;
    for v in x {
        let d = v - mean;
        sum_sq += d * d;
    }
    let scale = 1.0 / (sum_sq / n + eps).sqrt();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (x[i] - mean) * scale * gain[i];
    }
    if let Some(bias) = bias {
        for (o, b) in out.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

#[inline]
pub(crate) fn silu_scalar(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Elementwise `x · sigmoid(x)`.
pub fn silu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| silu_scalar(v)).collect()
}

#[inline]
pub(crate) fn gelu_tanh_scalar(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// Tanh approximation of GELU, as used by GPT-2 checkpoints.
pub fn gelu_tanh(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| gelu_tanh_scalar(v)).collect()
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
///
/// Accumulates in f64; fails on zero-norm inputs.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}
