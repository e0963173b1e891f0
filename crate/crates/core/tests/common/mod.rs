#![allow(dead_code)]

use wavenet::model::{
    ClassifierConfig, ConditioningInput, ContextStackConfig, GlobalConditioning,
    LocalConditioning, ModelConfig, UpsampleMode, WaveNetModel,
};
use wavenet::rng::Rng64;
use wavenet::tensor_ops::{Real, Tensor2D};
use wavenet::training::Segment;

/// Two residual layers of four channels with every conditioning path and
/// the frame classifier switched on.
pub fn reference_config() -> ModelConfig {
    ModelConfig {
        num_classes: 256,
        residual_channels: 4,
        skip_channels: 4,
        filter_width: 2,
        dilation_schedule: vec![1, 2],
        conditioning: wavenet::model::ConditioningConfig {
            global: Some(GlobalConditioning { dim: 2 }),
            local: Some(LocalConditioning {
                dim: 3,
                upsample_factor: 4,
                mode: UpsampleMode::Transposed,
            }),
        },
        context_stacks: vec![],
        classifier: Some(ClassifierConfig {
            num_labels: 3,
            pool_factor: 8,
        }),
    }
}

pub fn with_context(mut cfg: ModelConfig) -> ModelConfig {
    cfg.context_stacks.push(ContextStackConfig {
        dilation_schedule: vec![1, 2],
        channels: 2,
        pool_factor: 4,
    });
    cfg
}

/// Every parameter uniform in `[-scale, scale]`.
pub fn randomize<S: Real>(model: &mut WaveNetModel<S>, seed: u64, scale: f64) {
    let mut rng = Rng64::new(seed);
    for k in model.kernels_mut() {
        k.values_mut().for_each(|v| *v = S::lit(rng.uniform(-scale, scale)));
    }
}

pub fn random_classes(rng: &mut Rng64, n: usize, num_classes: usize) -> Vec<u16> {
    (0..n).map(|_| rng.below(num_classes) as u16).collect()
}

/// Conditioning matching `cfg` for an input of `t` samples.
pub fn random_cond(cfg: &ModelConfig, rng: &mut Rng64, t: usize) -> ConditioningInput {
    let mut cond = ConditioningInput::none();
    if let Some(g) = cfg.conditioning.global {
        cond = ConditioningInput::global_one_hot(rng.below(g.dim), g.dim).unwrap();
    }
    if let Some(l) = cfg.conditioning.local {
        let frames = t / l.upsample_factor;
        let data = (0..frames * l.dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        cond.local = Some(Tensor2D::from_vec(frames, l.dim, data).unwrap());
    }
    cond
}

pub fn reference_segment(cfg: &ModelConfig, seed: u64, t: usize) -> Segment {
    let mut rng = Rng64::new(seed);
    let all = random_classes(&mut rng, t + 1, cfg.num_classes);
    let cond = random_cond(cfg, &mut rng, t);
    let frame_labels = cfg.classifier.map(|c| {
        (0..t / c.pool_factor).map(|_| rng.below(c.num_labels)).collect()
    });
    Segment {
        input: all[..t].to_vec(),
        targets: all[1..].to_vec(),
        cond,
        frame_labels,
    }
}
