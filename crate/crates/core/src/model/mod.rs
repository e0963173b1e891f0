//! The residual/skip network and its conditioning paths.
//!
//! Data flow for an input of class indices `x[0..T]`:
//!
//! 1. `x` is embedded by a 1x1 projection of its one-hot encoding.
//! 2. Each residual layer computes
//!    `z = tanh(W_f * x + cond_f) . sigmoid(W_g * x + cond_g)` with a dilated
//!    causal convolution, adds `W_r z` to its input and `W_s z` to the skip sum.
//!    `cond_*` collects the global, local and context-stack projections that
//!    are configured.
//! 3. The head applies `relu -> 1x1 -> relu -> 1x1` to the skip sum and
//!    returns `logits[t]`, the unnormalized distribution of `x[t + 1]`.
//!
//! An optional classifier mean-pools the skip sum into frames and emits
//! per-frame label logits from two non-causal width-3 convolutions.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    doubling_schedule, receptive_field, ClassifierConfig, ConditioningConfig, ContextStackConfig,
    GlobalConditioning, LocalConditioning, ModelConfig, UpsampleMode,
};
pub use forward::ForwardPass;
pub use params::GradientTape;

pub(crate) use params::Layout;

use crate::rng::Rng64;
use crate::tensor_ops::{ConvKernel, Real, Tensor2D};
use crate::{Error, Result};
use params::KernelSpec;

/// Conditioning supplied alongside an input sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditioningInput {
    /// One vector for the whole sequence, e.g. a one-hot speaker id.
    pub global: Option<Vec<f32>>,
    /// Control-rate series; `timesteps * upsample_factor` must equal the
    /// audio length.
    pub local: Option<Tensor2D<f32>>,
}

impl ConditioningInput {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn global_one_hot(class: usize, dim: usize) -> Result<Self> {
        if class >= dim {
            return Err(Error::config(format!(
                "conditioning class {class} is outside [0, {dim})"
            )));
        }
        let mut v = vec![0.0; dim];
        v[class] = 1.0;
        Ok(ConditioningInput {
            global: Some(v),
            local: None,
        })
    }

    pub fn with_local(mut self, series: Tensor2D<f32>) -> Self {
        self.local = Some(series);
        self
    }
}

/// Parameters plus the layout that ties them to a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct WaveNetModel<S = f32> {
    config: ModelConfig,
    pub(crate) layout: Layout,
    specs: Vec<KernelSpec>,
    pub(crate) params: Vec<ConvKernel<S>>,
    version: u64,
}

impl<S: Real> WaveNetModel<S> {
    /// Randomly initialized model; identical seeds give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        let params = params::initialize(&specs, &mut Rng64::new(seed));
        Ok(WaveNetModel {
            config,
            layout,
            specs,
            params,
            version: 0,
        })
    }

    /// Every parameter zero, including the upsampler.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        let params = params::allocate(&specs);
        Ok(WaveNetModel {
            config,
            layout,
            specs,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.config)
    }

    pub fn kernels(&self) -> &[ConvKernel<S>] {
        &self.params
    }

    /// Mutable parameters. Invalidates outstanding forward passes.
    pub fn kernels_mut(&mut self) -> &mut [ConvKernel<S>] {
        self.version += 1;
        &mut self.params
    }

    /// Name of each kernel, in declaration order.
    pub fn kernel_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn kernel_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn kernel(&self, name: &str) -> Option<&ConvKernel<S>> {
        self.kernel_index(name).map(|i| &self.params[i])
    }

    pub fn kernel_mut(&mut self, name: &str) -> Option<&mut ConvKernel<S>> {
        let i = self.kernel_index(name)?;
        self.version += 1;
        Some(&mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(ConvKernel::num_params).sum()
    }

    pub fn new_tape(&self) -> GradientTape<S> {
        GradientTape {
            grads: params::allocate(&self.specs),
        }
    }

    /// Same model in another precision.
    pub fn cast<T: Real>(&self) -> WaveNetModel<T> {
        WaveNetModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(ConvKernel::cast).collect(),
            version: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flat_map(ConvKernel::values).all(|v| v.is_finite())
    }

    /// L2 norm of each kernel, paired with its name.
    pub fn parameter_norms(&self) -> Vec<(String, f64)> {
        self.specs
            .iter()
            .zip(&self.params)
            .map(|(s, k)| {
                let n = k.values().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                (s.name.clone(), n)
            })
            .collect()
    }

    /// Parameters in declaration order, weights before biases per kernel.
    pub fn flat_params(&self) -> Vec<S> {
        self.params.iter().flat_map(|k| k.values().copied()).collect()
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<ConvKernel<S>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        if params.len() != specs.len() {
            return Err(Error::Format(format!(
                "config declares {} kernels, payload has {}",
                specs.len(),
                params.len()
            )));
        }
        for (i, (k, s)) in params.iter().zip(&specs).enumerate() {
            if (k.width, k.c_in, k.c_out, k.dilation) != (s.width, s.c_in, s.c_out, s.dilation) {
                return Err(Error::Format(format!(
                    "kernel {i} ({}) is {}x{}x{} dilation {} in the payload but {}x{}x{} dilation {} in the config",
                    s.name, k.width, k.c_in, k.c_out, k.dilation, s.width, s.c_in, s.c_out, s.dilation
                )));
            }
        }
        Ok(WaveNetModel {
            config,
            layout,
            specs,
            params,
            version: 0,
        })
    }
}
