use super::tensor::{gemm_acc, ConvKernel, Real, Strided, Tensor2D};
use crate::{Error, Result};

fn check(cond: &Tensor2D<impl Real>, kernel_in: usize, width: usize, factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    if width != factor {
        return Err(Error::config(format!(
            "transposed kernel width {width} must equal the upsample factor {factor}"
        )));
    }
    if cond.channels() != kernel_in {
        return Err(Error::shape(format!(
            "conditioning has {} channels, kernel expects {kernel_in}",
            cond.channels()
        )));
    }
    Ok(())
}

/// Learned upsampling by a transposed convolution with stride = width = `factor`.
///
/// `out[k * factor + j] = b + cond[k] * W_j`. With every `W_j` the identity
/// and zero bias this is exactly [`repeat_upsample`].
pub fn upsample_transposed<S: Real>(
    cond: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    factor: usize,
) -> Result<Tensor2D<S>> {
    check(cond, kernel.c_in, kernel.width, factor)?;
    let (frames, ci, co) = (cond.timesteps(), kernel.c_in, kernel.c_out);
    let mut out = Tensor2D::zeros(frames * factor, co);
    out.add_row_broadcast(&kernel.bias);
    for j in 0..factor {
        gemm_acc(
            frames,
            ci,
            co,
            cond.data(),
            Strided::rows(0, ci),
            &kernel.weights,
            Strided::rows(j * ci * co, co),
            out.data_mut(),
            Strided { offset: j * co, rs: factor * co, cs: 1 },
        );
    }
    Ok(out)
}

/// Returns the gradient with respect to `cond`; kernel gradients accumulate.
pub fn upsample_transposed_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    cond: &Tensor2D<S>,
    kernel: &ConvKernel<S>,
    grad_kernel: &mut ConvKernel<S>,
    factor: usize,
) -> Result<Tensor2D<S>> {
    check(cond, kernel.c_in, kernel.width, factor)?;
    let (frames, ci, co) = (cond.timesteps(), kernel.c_in, kernel.c_out);
    if grad_out.shape() != (frames * factor, co) {
        return Err(Error::shape("upsample gradient does not match forward output"));
    }
    for (g, s) in grad_kernel.bias.iter_mut().zip(grad_out.column_sums()) {
        *g += s;
    }
    let mut grad_cond = Tensor2D::zeros(frames, ci);
    for j in 0..factor {
        let rows_j = Strided { offset: j * co, rs: factor * co, cs: 1 };
        gemm_acc(
            ci,
            frames,
            co,
            cond.data(),
            Strided::transposed(0, ci),
            grad_out.data(),
            rows_j,
            &mut grad_kernel.weights,
            Strided::rows(j * ci * co, co),
        );
        gemm_acc(
            frames,
            co,
            ci,
            grad_out.data(),
            rows_j,
            &kernel.weights,
            Strided::transposed(j * ci * co, co),
            grad_cond.data_mut(),
            Strided::rows(0, ci),
        );
    }
    Ok(grad_cond)
}

/// Each row duplicated `factor` times.
pub fn repeat_upsample<S: Real>(cond: &Tensor2D<S>, factor: usize) -> Result<Tensor2D<S>> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    let mut data = Vec::with_capacity(cond.data().len() * factor);
    for k in 0..cond.timesteps() {
        for _ in 0..factor {
            data.extend_from_slice(cond.row(k));
        }
    }
    Ok(Tensor2D::from_raw(cond.timesteps() * factor, cond.channels(), data))
}

pub fn repeat_upsample_backward<S: Real>(grad_out: &Tensor2D<S>, factor: usize) -> Result<Tensor2D<S>> {
    if factor == 0 || grad_out.timesteps() % factor != 0 {
        return Err(Error::shape("gradient length is not a multiple of the upsample factor"));
    }
    let frames = grad_out.timesteps() / factor;
    let mut g = Tensor2D::zeros(frames, grad_out.channels());
    for t in 0..grad_out.timesteps() {
        for (a, &b) in g.row_mut(t / factor).iter_mut().zip(grad_out.row(t)) {
            *a += b;
        }
    }
    Ok(g)
}

/// Kernel that makes [`upsample_transposed`] reproduce [`repeat_upsample`].
#[cfg(test)]
pub(crate) fn replication_kernel<S: Real>(channels: usize, factor: usize) -> ConvKernel<S> {
    let mut k = ConvKernel::zeros(factor, channels, channels, 1);
    for j in 0..factor {
        for c in 0..channels {
            k.set_w(j, c, c, S::one());
        }
    }
    k
}
