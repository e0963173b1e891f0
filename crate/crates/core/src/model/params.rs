use crate::rng::Rng64;
use crate::tensor_ops::{ConvKernel, Real};

use super::config::{ModelConfig, UpsampleMode};

/// Filter/gate projection pair for one conditioning source in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct CondPair {
    pub filter: usize,
    pub gate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub dilation: usize,
    pub filter: usize,
    pub gate: usize,
    pub global: Option<CondPair>,
    pub local: Option<CondPair>,
    /// One pair per context stack.
    pub context: Vec<CondPair>,
    pub residual: usize,
    pub skip: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContextLayerSlots {
    pub dilation: usize,
    pub filter: usize,
    pub gate: usize,
    pub residual: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContextSlots {
    pub pool_factor: usize,
    pub input: usize,
    pub layers: Vec<ContextLayerSlots>,
}

/// Index of every parameter kernel in the store, derived from the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub upsampler: Option<usize>,
    pub context: Vec<ContextSlots>,
    pub layers: Vec<LayerSlots>,
    pub head_hidden: usize,
    pub head_out: usize,
    pub classifier: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Uniform,
    Zero,
    Replicate,
}

#[derive(Debug, Clone)]
pub(crate) struct KernelSpec {
    pub name: String,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub dilation: usize,
    pub init: Init,
}

struct Builder {
    specs: Vec<KernelSpec>,
}

impl Builder {
    fn add(&mut self, name: String, width: usize, c_in: usize, c_out: usize, dilation: usize, init: Init) -> usize {
        self.specs.push(KernelSpec {
            name,
            width,
            c_in,
            c_out,
            dilation,
            init,
        });
        self.specs.len() - 1
    }

    fn pair(&mut self, prefix: &str, c_in: usize, c_out: usize) -> CondPair {
        CondPair {
            filter: self.add(format!("{prefix}.filter"), 1, c_in, c_out, 1, Init::Zero),
            gate: self.add(format!("{prefix}.gate"), 1, c_in, c_out, 1, Init::Zero),
        }
    }
}

impl Layout {
    /// Parameter declaration order; checkpoints store kernels in this order.
    pub fn build(cfg: &ModelConfig) -> (Layout, Vec<KernelSpec>) {
        let mut b = Builder { specs: Vec::new() };
        let (r, s, fw) = (cfg.residual_channels, cfg.skip_channels, cfg.filter_width);

        let embedding = b.add("embedding".into(), 1, cfg.num_classes, r, 1, Init::Uniform);
        let upsampler = cfg.conditioning.local.and_then(|l| match l.mode {
            UpsampleMode::Transposed => Some(b.add(
                "local.upsampler".into(),
                l.upsample_factor,
                l.dim,
                l.dim,
                1,
                Init::Replicate,
            )),
            UpsampleMode::Repeat => None,
        });

        let context = cfg
            .context_stacks
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let input = b.add(format!("context{i}.input"), 1, cfg.num_classes, c.channels, 1, Init::Uniform);
                let layers = c
                    .dilation_schedule
                    .iter()
                    .enumerate()
                    .map(|(k, &d)| ContextLayerSlots {
                        dilation: d,
                        filter: b.add(format!("context{i}.layer{k}.filter"), fw, c.channels, c.channels, d, Init::Uniform),
                        gate: b.add(format!("context{i}.layer{k}.gate"), fw, c.channels, c.channels, d, Init::Uniform),
                        residual: b.add(format!("context{i}.layer{k}.residual"), 1, c.channels, c.channels, 1, Init::Zero),
                    })
                    .collect();
                ContextSlots {
                    pool_factor: c.pool_factor,
                    input,
                    layers,
                }
            })
            .collect();

        let layers = cfg
            .dilation_schedule
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let p = format!("layer{k}");
                let filter = b.add(format!("{p}.filter"), fw, r, r, d, Init::Uniform);
                let gate = b.add(format!("{p}.gate"), fw, r, r, d, Init::Uniform);
                let global = cfg
                    .conditioning
                    .global
                    .map(|g| b.pair(&format!("{p}.global"), g.dim, r));
                let local = cfg
                    .conditioning
                    .local
                    .map(|l| b.pair(&format!("{p}.local"), l.dim, r));
                let context = cfg
                    .context_stacks
                    .iter()
                    .enumerate()
                    .map(|(i, c)| b.pair(&format!("{p}.context{i}"), c.channels, r))
                    .collect();
                let residual = b.add(format!("{p}.residual"), 1, r, r, 1, Init::Zero);
                let skip = b.add(format!("{p}.skip"), 1, r, s, 1, Init::Uniform);
                LayerSlots {
                    dilation: d,
                    filter,
                    gate,
                    global,
                    local,
                    context,
                    residual,
                    skip,
                }
            })
            .collect();

        let head_hidden = b.add("head.hidden".into(), 1, s, s, 1, Init::Uniform);
        let head_out = b.add("head.out".into(), 1, s, cfg.num_classes, 1, Init::Uniform);
        let classifier = cfg.classifier.map(|c| {
            (
                b.add("classifier.hidden".into(), 3, s, s, 1, Init::Uniform),
                b.add("classifier.out".into(), 3, s, c.num_labels, 1, Init::Uniform),
            )
        });

        (
            Layout {
                embedding,
                upsampler,
                context,
                layers,
                head_hidden,
                head_out,
                classifier,
            },
            b.specs,
        )
    }
}

pub(crate) fn allocate<S: Real>(specs: &[KernelSpec]) -> Vec<ConvKernel<S>> {
    specs
        .iter()
        .map(|s| ConvKernel::zeros(s.width, s.c_in, s.c_out, s.dilation))
        .collect()
}

/// Uniform in `+-sqrt(1 / (width * c_in))` for ordinary kernels, zero for
/// conditioning projections and residual 1x1s, identity taps for the
/// transposed upsampler. Biases start at zero.
pub(crate) fn initialize<S: Real>(specs: &[KernelSpec], rng: &mut Rng64) -> Vec<ConvKernel<S>> {
    let mut kernels = allocate::<S>(specs);
    for (k, spec) in kernels.iter_mut().zip(specs) {
        match spec.init {
            Init::Uniform => {
                let bound = (1.0 / (spec.width * spec.c_in) as f64).sqrt();
                k.weights
                    .iter_mut()
                    .for_each(|w| *w = S::lit(rng.uniform(-bound, bound)));
            }
            Init::Zero => {}
            Init::Replicate => {
                for j in 0..spec.width {
                    for c in 0..spec.c_in.min(spec.c_out) {
                        k.set_w(j, c, c, S::one());
                    }
                }
            }
        }
    }
    kernels
}

/// Per-parameter gradient accumulators, one kernel-shaped buffer per
/// parameter kernel of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<S = f32> {
    pub(crate) grads: Vec<ConvKernel<S>>,
}

impl<S: Real> GradientTape<S> {
    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(ConvKernel::fill_zero);
    }

    pub fn kernels(&self) -> &[ConvKernel<S>] {
        &self.grads
    }

    pub fn kernels_mut(&mut self) -> &mut [ConvKernel<S>] {
        &mut self.grads
    }

    pub fn values(&self) -> impl Iterator<Item = &S> {
        self.grads.iter().flat_map(ConvKernel::values)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values().all(|v| *v == S::zero())
    }

    /// `self += other`, kernel by kernel.
    pub fn accumulate(&mut self, other: &GradientTape<S>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, &y) in a.values_mut().zip(b.values()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        for k in &mut self.grads {
            k.values_mut().for_each(|v| *v *= s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }
}
