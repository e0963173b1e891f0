//! Teacher-forced maximum-likelihood training.
//!
//! One forward pass scores every position of a segment: the input is
//! `clip[o .. o + n]` and the targets are `clip[o + 1 .. o + n + 1]`. Losses
//! are in nats per sample; divide by `ln 2` for bits.

mod adam;
mod gradcheck;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckGroup, GradCheckOptions, GradCheckReport};

use crate::codec::QuantizedWaveform;
use crate::model::{save_checkpoint, ConditioningInput, GradientTape, WaveNetModel};
use crate::rng::Rng64;
use crate::tensor_ops::{softmax_xent, Real, Tensor2D};
use crate::{Error, Result};

fn default_validate_every() -> usize {
    100
}

/// Missing fields take their [`Default`] values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_segments: usize,
    pub segment_length: usize,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub classifier_loss_weight: f64,
    #[serde(default)]
    pub validation_fraction: f64,
    /// Validation cadence in steps; the final step is always validated.
    #[serde(default = "default_validate_every")]
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_segments: 1,
            segment_length: 1024,
            max_steps: 1000,
            seed: 0,
            classifier_loss_weight: 0.0,
            validation_fraction: 0.0,
            validate_every: default_validate_every(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self, receptive_field: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a finite non-negative number"));
        }
        for (v, name) in [(self.adam_beta1, "adam_beta1"), (self.adam_beta2, "adam_beta2")] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.batch_segments == 0 {
            return Err(Error::config("batch_segments must be >= 1"));
        }
        if self.segment_length < receptive_field {
            return Err(Error::config(format!(
                "segment_length {} is shorter than the receptive field {receptive_field}",
                self.segment_length
            )));
        }
        if !(0.0..=1.0).contains(&self.classifier_loss_weight) {
            return Err(Error::config("classifier_loss_weight must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must be in [0, 1)"));
        }
        if self.validate_every == 0 {
            return Err(Error::config("validate_every must be >= 1"));
        }
        Ok(())
    }
}

/// One training recording with whatever conditioning accompanies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub audio: QuantizedWaveform,
    pub global_class: Option<usize>,
    /// Control-rate features covering the clip.
    pub local: Option<Tensor2D<f32>>,
    /// One label per classifier frame of the clip.
    pub frame_labels: Option<Vec<usize>>,
}

impl Clip {
    pub fn new(audio: QuantizedWaveform) -> Self {
        Clip {
            audio,
            global_class: None,
            local: None,
            frame_labels: None,
        }
    }

    pub fn with_global_class(mut self, class: usize) -> Self {
        self.global_class = Some(class);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn new(clips: Vec<Clip>) -> Self {
        Dataset { clips }
    }

    /// Whole clips held out for validation: the last
    /// `floor(len * fraction)` clips, always leaving one for training.
    pub fn split(&self, fraction: f64) -> (Vec<&Clip>, Vec<&Clip>) {
        let n = self.clips.len();
        let n_val = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1));
        let (train, val) = self.clips.split_at(n - n_val);
        (train.iter().collect(), val.iter().collect())
    }
}

/// An aligned (input, target) window with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub input: Vec<u16>,
    pub targets: Vec<u16>,
    pub cond: ConditioningInput,
    pub frame_labels: Option<Vec<usize>>,
}

/// Loss terms of one forward pass, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub nll: f64,
    pub frame_xent: Option<f64>,
}

fn to_usize(classes: &[u16]) -> Vec<usize> {
    classes.iter().map(|&c| c as usize).collect()
}

/// Mean next-sample negative log-likelihood in nats per sample.
pub fn nll_loss<S: Real>(logits: &Tensor2D<S>, targets: &[u16]) -> Result<f64> {
    Ok(softmax_xent(logits, &to_usize(targets), None)?.0)
}

/// `(1 - weight) * next_sample_nll + weight * frame_xent`.
pub fn dual_loss(next_sample_nll: f64, frame_xent: f64, weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::config(format!(
            "classifier loss weight {weight} is outside [0, 1]"
        )));
    }
    Ok((1.0 - weight) * next_sample_nll + weight * frame_xent)
}

fn cond_for_clip(model_dim: Option<usize>, clip: &Clip, local: Option<Tensor2D<f32>>) -> Result<ConditioningInput> {
    let mut cond = match (model_dim, clip.global_class) {
        (Some(dim), Some(c)) => ConditioningInput::global_one_hot(c, dim)?,
        (Some(_), None) => return Err(Error::data("model expects a global class for every clip")),
        (None, Some(_)) => return Err(Error::data("clip has a global class but the model is unconditioned")),
        (None, None) => ConditioningInput::none(),
    };
    cond.local = local;
    Ok(cond)
}

/// Loss of one segment; when `tape` is given, also accumulates `scale`
/// times the gradient of the total loss.
pub fn segment_loss<S: Real>(
    model: &WaveNetModel<S>,
    segment: &Segment,
    classifier_weight: f64,
    tape: Option<(&mut GradientTape<S>, f64)>,
) -> Result<LossParts> {
    if segment.targets.len() != segment.input.len() {
        return Err(Error::shape(format!(
            "{} targets for {} inputs",
            segment.targets.len(),
            segment.input.len()
        )));
    }
    let pass = model.forward_pass(&segment.input, &segment.cond, 0, tape.is_some())?;
    let (nll, grad_logits) = softmax_xent(pass.logits(), &to_usize(&segment.targets), None)?;
    let classifier = pass.frame_logits().zip(segment.frame_labels.as_ref());
    let (total, frame_xent, grad_frames) = match classifier {
        Some((frames, labels)) if classifier_weight > 0.0 => {
            let n = frames.timesteps();
            if labels.len() < n {
                return Err(Error::data(format!(
                    "{} frame labels for {n} frames",
                    labels.len()
                )));
            }
            let (xent, g) = softmax_xent(frames, &labels[..n], None)?;
            (dual_loss(nll, xent, classifier_weight)?, Some(xent), Some(g))
        }
        _ => (nll, None, None),
    };
    if let Some((tape, scale)) = tape {
        let mut gl = grad_logits;
        let w = if grad_frames.is_some() { 1.0 - classifier_weight } else { 1.0 };
        gl.scale(S::lit(w * scale));
        let gf = grad_frames.map(|mut g| {
            g.scale(S::lit(classifier_weight * scale));
            g
        });
        model.backward(&pass, &gl, gf.as_ref(), tape)?;
    }
    Ok(LossParts {
        total,
        nll,
        frame_xent,
    })
}

/// Draws training segments from clips with a seeded generator.
pub struct SegmentSampler<'a> {
    clips: Vec<&'a Clip>,
    length: usize,
    align: usize,
    global_dim: Option<usize>,
    local_factor: Option<usize>,
    frame_pool: Option<usize>,
    rng: Rng64,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl<'a> SegmentSampler<'a> {
    pub fn new<S: Real>(model: &WaveNetModel<S>, clips: Vec<&'a Clip>, length: usize, rng: Rng64) -> Result<Self> {
        let cfg = model.config();
        let local_factor = cfg.conditioning.local.map(|l| l.upsample_factor);
        let frame_pool = cfg.classifier.map(|c| c.pool_factor);
        let align = [local_factor, frame_pool]
            .into_iter()
            .flatten()
            .fold(1, |a, b| a / gcd(a, b) * b);
        if clips.is_empty() {
            return Err(Error::data("no clips to train on"));
        }
        for (i, c) in clips.iter().enumerate() {
            if c.audio.len() < align + 1 {
                return Err(Error::data(format!("clip {i} is too short to form a segment")));
            }
        }
        Ok(SegmentSampler {
            clips,
            length,
            align,
            global_dim: cfg.conditioning.global.map(|g| g.dim),
            local_factor,
            frame_pool,
            rng,
        })
    }

    /// Segment of `clip` starting at `offset` with `n` inputs.
    pub fn cut(&self, clip: &Clip, offset: usize, n: usize) -> Result<Segment> {
        let classes = &clip.audio.classes;
        let local = match (self.local_factor, &clip.local) {
            (Some(f), Some(series)) => {
                let (a, b) = (offset / f, (offset + n) / f);
                if b > series.timesteps() {
                    return Err(Error::data("local features do not cover the clip"));
                }
                Some(series.slice_rows(a, b))
            }
            (Some(_), None) => return Err(Error::data("model expects local features for every clip")),
            _ => None,
        };
        let frame_labels = match (self.frame_pool, &clip.frame_labels) {
            (Some(p), Some(labels)) => {
                let a = offset / p;
                let b = (a + n / p).min(labels.len());
                Some(labels[a.min(b)..b].to_vec())
            }
            _ => None,
        };
        Ok(Segment {
            input: classes[offset..offset + n].to_vec(),
            targets: classes[offset + 1..offset + n + 1].to_vec(),
            cond: cond_for_clip(self.global_dim, clip, local)?,
            frame_labels,
        })
    }

    pub fn sample(&mut self) -> Result<Segment> {
        let clip = self.clips[self.rng.below(self.clips.len())];
        let avail = clip.audio.len() - 1;
        let n = self.length.min(avail) / self.align * self.align;
        let slots = (avail - n) / self.align + 1;
        let offset = self.rng.below(slots) * self.align;
        self.cut(clip, offset, n)
    }

    /// The whole clip as one segment, trimmed to the alignment.
    pub fn whole(&self, clip: &Clip) -> Result<Segment> {
        let n = (clip.audio.len() - 1) / self.align * self.align;
        self.cut(clip, 0, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Objective that was minimized (the dual loss when a classifier trains).
    pub loss: f64,
    pub nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_xent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn validation(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records.iter().filter_map(|r| r.val_loss.map(|v| (r.step, v)))
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.records.last().map(|r| r.nll)
    }
}

/// Mean next-sample NLL over whole clips, weighted by sample count.
pub fn evaluate_nll<S: Real>(model: &WaveNetModel<S>, clips: &[&Clip]) -> Result<f64> {
    let sampler = SegmentSampler::new(model, clips.to_vec(), usize::MAX, Rng64::new(0))?;
    let (mut total, mut count) = (0.0, 0usize);
    for clip in clips {
        let seg = sampler.whole(clip)?;
        let logits = model.forward(&seg.input, &seg.cond)?;
        total += nll_loss(&logits, &seg.targets)? * seg.input.len() as f64;
        count += seg.input.len();
    }
    Ok(total / count as f64)
}

/// Adam training for `config.max_steps` steps. `on_record` sees every
/// record as soon as it is produced. A checkpoint is written to
/// `checkpoint` at the end when given.
pub fn train<S: Real>(
    model: &mut WaveNetModel<S>,
    dataset: &Dataset,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainReport> {
    config.validate(model.receptive_field())?;
    let (train_clips, val_clips) = dataset.split(config.validation_fraction);
    let mut sampler = SegmentSampler::new(
        model,
        train_clips,
        config.segment_length,
        Rng64::with_stream(config.seed, 1),
    )?;
    let adam = config.adam();
    let mut state = AdamState::for_model(model);
    let mut tape = model.new_tape();
    let mut report = TrainReport::default();
    let scale = 1.0 / config.batch_segments as f64;

    for step in 1..=config.max_steps {
        let started = Instant::now();
        tape.zero();
        let (mut loss, mut nll, mut xent) = (0.0, 0.0, None::<f64>);
        for _ in 0..config.batch_segments {
            let seg = sampler.sample()?;
            let parts = segment_loss(model, &seg, config.classifier_loss_weight, Some((&mut tape, scale)))?;
            loss += parts.total * scale;
            nll += parts.nll * scale;
            if let Some(x) = parts.frame_xent {
                *xent.get_or_insert(0.0) += x * scale;
            }
        }
        if !loss.is_finite() || !tape.values().all(|v| v.is_finite()) {
            return Err(diverged(model, step, loss));
        }
        adam_update(model, &tape, &mut state, &adam)?;
        if !model.all_finite() {
            return Err(diverged(model, step, loss));
        }
        let val_loss = if !val_clips.is_empty()
            && (step % config.validate_every == 0 || step == config.max_steps)
        {
            Some(evaluate_nll(model, &val_clips)?)
        } else {
            None
        };
        let record = TrainRecord {
            step,
            loss,
            nll,
            frame_xent: xent,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_record(&record);
        report.records.push(record);
    }

    if let Some(path) = checkpoint {
        save_checkpoint(model, path)?;
        report.final_checkpoint = Some(path.to_path_buf());
    }
    Ok(report)
}

fn diverged<S: Real>(model: &WaveNetModel<S>, step: usize, loss: f64) -> Error {
    let norms = model
        .parameter_norms()
        .into_iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Error::Diverged(format!("non-finite loss {loss} at step {step}; parameter norms: {norms}"))
}
