use serde::{Deserialize, Serialize};

use crate::model::{GradientTape, WaveNetModel};
use crate::tensor_ops::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S = f32> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Real> AdamState<S> {
    pub fn for_model(model: &WaveNetModel<S>) -> Self {
        Self::with_sizes(model.kernels().iter().map(|k| k.num_params()))
    }

    pub fn with_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![S::zero(); n], vec![S::zero(); n]))
            .unzip();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the step counter once for a whole update; call before the
    /// per-buffer [`AdamState::apply`] calls of that update.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected Adam update of buffer `slot`.
    pub fn apply(&mut self, slot: usize, params: &mut [S], grads: &[S], cfg: &AdamConfig) -> Result<()> {
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        if params.len() != m.len() || grads.len() != m.len() {
            return Err(Error::State(format!(
                "optimizer buffer {slot} holds {} values but got {} parameters and {} gradients",
                m.len(),
                params.len(),
                grads.len()
            )));
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
        let step_size = S::lit(cfg.learning_rate / c1);
        let inv_c2 = S::lit(1.0 / c2);
        let eps = S::lit(cfg.eps);
        for ((p, &g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = b1 * *mi + (S::one() - b1) * g;
            *vi = b2 * *vi + (S::one() - b2) * g * g;
            *p -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam step over every parameter of `model`.
pub fn adam_update<S: Real>(
    model: &mut WaveNetModel<S>,
    tape: &GradientTape<S>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    if tape.kernels().len() != state.m.len() || model.kernels().len() != state.m.len() {
        return Err(Error::State("optimizer state does not match the model".into()));
    }
    state.begin_step();
    let mut grads = Vec::new();
    for (slot, (k, g)) in model.kernels_mut().iter_mut().zip(tape.kernels()).enumerate() {
        grads.clear();
        grads.extend(g.values().copied());
        let mut params: Vec<S> = k.values().copied().collect();
        state.apply(slot, &mut params, &grads, cfg)?;
        for (dst, src) in k.values_mut().zip(params) {
            *dst = src;
        }
    }
    Ok(())
}
