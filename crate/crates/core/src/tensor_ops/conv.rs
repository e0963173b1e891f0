use super::tensor::{gemm_acc, ConvKernel, Real, Strided, Tensor2D};
use crate::{Error, Result};

fn check_input<S: Real>(input: &Tensor2D<S>, kernel: &ConvKernel<S>) -> Result<()> {
    if input.channels() != kernel.c_in {
        return Err(Error::shape(format!(
            "input is {}x{} but kernel expects {} input channels (kernel {}x{}x{})",
            input.timesteps(),
            input.channels(),
            kernel.c_in,
            kernel.width,
            kernel.c_in,
            kernel.c_out
        )));
    }
    Ok(())
}

/// Row offset read by `lag`: output row `t` reads input row `t - offset`.
fn lag_offset<S: Real>(kernel: &ConvKernel<S>, lag: usize, lead: usize) -> isize {
    (lag * kernel.dilation) as isize - lead as isize
}

/// Output rows `[out_start, out_start + m)` read input rows `[in_start, in_start + m)`.
fn overlap(t: usize, offset: isize) -> Option<(usize, usize, usize)> {
    let shift = offset.unsigned_abs();
    if shift >= t {
        return None;
    }
    let m = t - shift;
    if offset >= 0 {
        Some((shift, 0, m))
    } else {
        Some((0, shift, m))
    }
}

fn conv_forward<S: Real>(input: &Tensor2D<S>, kernel: &ConvKernel<S>, lead: usize) -> Tensor2D<S> {
    let t = input.timesteps();
    let (ci, co) = (kernel.c_in, kernel.c_out);
    let mut out = Tensor2D::zeros(t, co);
    out.add_row_broadcast(&kernel.bias);
    for lag in 0..kernel.width {
        let Some((out_start, in_start, m)) = overlap(t, lag_offset(kernel, lag, lead)) else {
            continue;
        };
        gemm_acc(
            m,
            ci,
            co,
            input.data(),
            Strided::rows(in_start * ci, ci),
            &kernel.weights,
            Strided::rows(lag * ci * co, co),
            out.data_mut(),
            Strided::rows(out_start * co, co),
        );
    }
    out
}

fn conv_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    input: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    grad_kernel: &mut ConvKernel<S>,
    lead: usize,
) -> Result<Tensor2D<S>> {
    check_input(input, kernel)?;
    if grad_out.shape() != (input.timesteps(), kernel.c_out) {
        return Err(Error::shape(format!(
            "output gradient is {:?}, forward output was {:?}",
            grad_out.shape(),
            (input.timesteps(), kernel.c_out)
        )));
    }
    if grad_kernel.weights.len() != kernel.weights.len() || grad_kernel.bias.len() != kernel.c_out
    {
        return Err(Error::shape("gradient accumulator does not match kernel"));
    }
    let t = input.timesteps();
    let (ci, co) = (kernel.c_in, kernel.c_out);
    let mut grad_in = Tensor2D::zeros(t, ci);
    for (g, s) in grad_kernel.bias.iter_mut().zip(grad_out.column_sums()) {
        *g += s;
    }
    for lag in 0..kernel.width {
        let Some((out_start, in_start, m)) = overlap(t, lag_offset(kernel, lag, lead)) else {
            continue;
        };
        // dW_lag += X[in]^T * dY[out]
        gemm_acc(
            ci,
            m,
            co,
            input.data(),
            Strided::transposed(in_start * ci, ci),
            grad_out.data(),
            Strided::rows(out_start * co, co),
            &mut grad_kernel.weights,
            Strided::rows(lag * ci * co, co),
        );
        // dX[in] += dY[out] * W_lag^T
        gemm_acc(
            m,
            co,
            ci,
            grad_out.data(),
            Strided::rows(out_start * co, co),
            &kernel.weights,
            Strided::transposed(lag * ci * co, co),
            grad_in.data_mut(),
            Strided::rows(in_start * ci, ci),
        );
    }
    Ok(grad_in)
}

/// Dilated causal convolution with left zero padding.
///
/// `out[t] = b + sum_lag in[t - lag * dilation] * W_lag`, so `out[t]` reads
/// only `in[t - dilation * (width - 1) ..= t]` and the output keeps the
/// input's length.
pub fn causal_conv<S: Real>(input: &Tensor2D<S>, kernel: &ConvKernel<S>) -> Result<Tensor2D<S>> {
    check_input(input, kernel)?;
    Ok(conv_forward(input, kernel, 0))
}

/// Explicit tap-loop form of [`causal_conv`]; kept as the reference the
/// blocked version is tested against.
pub fn causal_conv_naive<S: Real>(
    input: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
) -> Result<Tensor2D<S>> {
    check_input(input, kernel)?;
    let mut out = Tensor2D::zeros(input.timesteps(), kernel.c_out);
    for t in 0..input.timesteps() {
        for o in 0..kernel.c_out {
            let mut acc = kernel.bias[o];
            for lag in 0..kernel.width {
                let back = lag * kernel.dilation;
                if back > t {
                    break;
                }
                for i in 0..kernel.c_in {
                    acc += input.get(t - back, i) * kernel.w(lag, i, o);
                }
            }
            out.set(t, o, acc);
        }
    }
    Ok(out)
}

/// Adjoint of [`causal_conv`]. Accumulates into `grad_kernel` and returns
/// the gradient with respect to `input`.
pub fn causal_conv_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    input: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    grad_kernel: &mut ConvKernel<S>,
) -> Result<Tensor2D<S>> {
    conv_backward(grad_out, input, kernel, grad_kernel, 0)
}

fn check_pointwise<S: Real>(kernel: &ConvKernel<S>) -> Result<()> {
    if kernel.width != 1 {
        return Err(Error::config(format!(
            "1x1 convolution needs filter width 1, got {}",
            kernel.width
        )));
    }
    Ok(())
}

/// Per-timestep affine map `in[t] * W + b`.
pub fn conv1x1<S: Real>(input: &Tensor2D<S>, kernel: &ConvKernel<S>) -> Result<Tensor2D<S>> {
    check_pointwise(kernel)?;
    causal_conv(input, kernel)
}

pub fn conv1x1_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    input: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    grad_kernel: &mut ConvKernel<S>,
) -> Result<Tensor2D<S>> {
    check_pointwise(kernel)?;
    conv_backward(grad_out, input, kernel, grad_kernel, 0)
}

/// Non-causal convolution centred on each output position (odd widths).
///
/// `out[t] = b + sum_lag in[t + half - lag * dilation] * W_lag` where
/// `half = dilation * (width - 1) / 2`, zero padded on both sides.
pub fn same_conv<S: Real>(input: &Tensor2D<S>, kernel: &ConvKernel<S>) -> Result<Tensor2D<S>> {
    check_input(input, kernel)?;
    check_odd(kernel)?;
    Ok(conv_forward(input, kernel, kernel.span() / 2))
}

pub fn same_conv_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    input: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    grad_kernel: &mut ConvKernel<S>,
) -> Result<Tensor2D<S>> {
    check_odd(kernel)?;
    conv_backward(grad_out, input, kernel, grad_kernel, kernel.span() / 2)
}

fn check_odd<S: Real>(kernel: &ConvKernel<S>) -> Result<()> {
    if kernel.width % 2 == 0 {
        return Err(Error::config("same-padded convolution needs an odd width"));
    }
    Ok(())
}
