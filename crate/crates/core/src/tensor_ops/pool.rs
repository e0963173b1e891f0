use super::tensor::{Real, Tensor2D};
use crate::{Error, Result};

/// Mean over non-overlapping windows of `factor` rows. A trailing partial
/// window is dropped.
pub fn mean_pool<S: Real>(x: &Tensor2D<S>, factor: usize) -> Result<Tensor2D<S>> {
    if factor == 0 {
        return Err(Error::config("pool factor must be >= 1"));
    }
    let frames = x.timesteps() / factor;
    let c = x.channels();
    let inv = S::one() / S::lit(factor as f64);
    let mut out = Tensor2D::zeros(frames, c);
    for k in 0..frames {
        let row = out.row_mut(k);
        for t in k * factor..(k + 1) * factor {
            for (o, &v) in row.iter_mut().zip(x.row(t)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Spreads each frame gradient as `grad / factor` over its window; rows in
/// the dropped tail receive zero.
pub fn mean_pool_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    factor: usize,
    input_timesteps: usize,
) -> Result<Tensor2D<S>> {
    if factor == 0 {
        return Err(Error::config("pool factor must be >= 1"));
    }
    if grad_out.timesteps() != input_timesteps / factor {
        return Err(Error::shape(format!(
            "{} frame gradients for {input_timesteps} timesteps pooled by {factor}",
            grad_out.timesteps()
        )));
    }
    let inv = S::one() / S::lit(factor as f64);
    let mut grad = Tensor2D::zeros(input_timesteps, grad_out.channels());
    for k in 0..grad_out.timesteps() {
        for t in k * factor..(k + 1) * factor {
            for (g, &d) in grad.row_mut(t).iter_mut().zip(grad_out.row(k)) {
                *g = d * inv;
            }
        }
    }
    Ok(grad)
}
