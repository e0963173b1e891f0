use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating point element type of tensors and parameters.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` for strided `m x k` by `k x n` operands.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must
    /// lie inside the pointed-to allocations, and `c` must not alias `a`/`b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view description used by [`gemm_acc`].
#[derive(Clone, Copy)]
pub(crate) struct Strided {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    pub fn rows(offset: usize, cols: usize) -> Self {
        Strided {
            offset,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        Strided {
            offset,
            rs: 1,
            cs: cols,
        }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c += a * b` with bounds checked against the backing slices.
pub(crate) fn gemm_acc<S: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    av: Strided,
    b: &[S],
    bv: Strided,
    c: &mut [S],
    cv: Strided,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(av.last(m, k) < a.len());
    assert!(bv.last(k, n) < b.len());
    assert!(cv.last(m, n) < c.len());
    // SAFETY: extents checked above; `c` is a distinct mutable borrow.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            S::one(),
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

/// Time-major array: `timesteps` rows of `channels` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D<S = f32> {
    data: Vec<S>,
    timesteps: usize,
    channels: usize,
}

impl<S: Real> Tensor2D<S> {
    pub fn zeros(timesteps: usize, channels: usize) -> Self {
        assert!(channels >= 1, "tensor needs at least one channel");
        Tensor2D {
            data: vec![S::zero(); timesteps * channels],
            timesteps,
            channels,
        }
    }

    pub fn from_vec(timesteps: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("tensor needs at least one channel"));
        }
        if data.len() != timesteps * channels {
            return Err(Error::shape(format!(
                "{} values cannot fill a {timesteps}x{channels} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("tensor values must be finite"));
        }
        Ok(Tensor2D {
            data,
            timesteps,
            channels,
        })
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let channels = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(rows.len(), channels, rows.concat())
    }

    pub(crate) fn from_raw(timesteps: usize, channels: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), timesteps * channels);
        Tensor2D {
            data,
            timesteps,
            channels,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.timesteps, self.channels)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [S] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn get(&self, t: usize, c: usize) -> S {
        self.data[t * self.channels + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: S) {
        self.data[t * self.channels + c] = v;
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Tensor2D::from_raw(
            end - start,
            self.channels,
            self.data[start * self.channels..end * self.channels].to_vec(),
        )
    }

    pub fn cast<T: Real>(&self) -> Tensor2D<T> {
        Tensor2D {
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
            timesteps: self.timesteps,
            channels: self.channels,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `v` to every row.
    pub fn add_row_broadcast(&mut self, v: &[S]) {
        assert_eq!(v.len(), self.channels);
        for row in self.data.chunks_exact_mut(self.channels) {
            for (a, &b) in row.iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    /// Sum over time of every channel.
    pub fn column_sums(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.channels];
        for row in self.data.chunks_exact(self.channels) {
            for (a, &b) in out.iter_mut().zip(row) {
                *a += b;
            }
        }
        out
    }

    pub fn scale(&mut self, s: S) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Convolution parameters.
///
/// Weights are stored lag-major: `weights[(lag * c_in + i) * c_out + o]`
/// multiplies input channel `i` read `lag * dilation` steps before the
/// output position (for causal use) into output channel `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel<S = f32> {
    pub weights: Vec<S>,
    pub bias: Vec<S>,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub dilation: usize,
}

impl<S: Real> ConvKernel<S> {
    pub fn zeros(width: usize, c_in: usize, c_out: usize, dilation: usize) -> Self {
        assert!(width >= 1 && dilation >= 1 && c_in >= 1 && c_out >= 1);
        ConvKernel {
            weights: vec![S::zero(); width * c_in * c_out],
            bias: vec![S::zero(); c_out],
            width,
            c_in,
            c_out,
            dilation,
        }
    }

    pub fn new(
        width: usize,
        c_in: usize,
        c_out: usize,
        dilation: usize,
        weights: Vec<S>,
        bias: Vec<S>,
    ) -> Result<Self> {
        if width == 0 || dilation == 0 {
            return Err(Error::config("kernel width and dilation must be >= 1"));
        }
        if weights.len() != width * c_in * c_out || bias.len() != c_out {
            return Err(Error::shape(format!(
                "kernel {width}x{c_in}x{c_out} needs {} weights and {c_out} biases, got {} and {}",
                width * c_in * c_out,
                weights.len(),
                bias.len()
            )));
        }
        Ok(ConvKernel {
            weights,
            bias,
            width,
            c_in,
            c_out,
            dilation,
        })
    }

    /// Zero kernel of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.width, self.c_in, self.c_out, self.dilation)
    }

    /// The `c_in x c_out` matrix applied at `lag`.
    pub fn tap(&self, lag: usize) -> &[S] {
        let n = self.c_in * self.c_out;
        &self.weights[lag * n..(lag + 1) * n]
    }

    pub fn tap_mut(&mut self, lag: usize) -> &mut [S] {
        let n = self.c_in * self.c_out;
        &mut self.weights[lag * n..(lag + 1) * n]
    }

    pub fn w(&self, lag: usize, i: usize, o: usize) -> S {
        self.weights[(lag * self.c_in + i) * self.c_out + o]
    }

    pub fn set_w(&mut self, lag: usize, i: usize, o: usize, v: S) {
        self.weights[(lag * self.c_in + i) * self.c_out + o] = v;
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights followed by biases.
    pub fn values(&self) -> impl Iterator<Item = &S> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|v| *v = S::zero());
    }

    pub fn cast<T: Real>(&self) -> ConvKernel<T> {
        ConvKernel {
            weights: self.weights.iter().map(|v| T::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| T::lit(v.as_f64())).collect(),
            width: self.width,
            c_in: self.c_in,
            c_out: self.c_out,
            dilation: self.dilation,
        }
    }

    /// Same lag structure, `lag * dilation` steps per tap.
    pub fn span(&self) -> usize {
        (self.width - 1) * self.dilation
    }

    /// `input_row * W_lag` accumulated into `out`.
    pub(crate) fn accumulate_tap(&self, lag: usize, input_row: &[S], out: &mut [S]) {
        let tap = self.tap(lag);
        for (i, &x) in input_row.iter().enumerate() {
            if x == S::zero() {
                continue;
            }
            let w = &tap[i * self.c_out..(i + 1) * self.c_out];
            for (o, &wv) in out.iter_mut().zip(w) {
                *o += x * wv;
            }
        }
    }
}
