use crate::codec::check_classes;
use crate::tensor_ops::{
    causal_conv, causal_conv_backward, conv1x1, conv1x1_backward, gated_activation,
    gated_activation_backward, mean_pool, mean_pool_backward, relu, relu_backward,
    repeat_upsample, same_conv, same_conv_backward, upsample_transposed,
    upsample_transposed_backward, ConvKernel, Real, Tensor2D,
};
use crate::{Error, Result};

use super::config::UpsampleMode;
use super::params::{CondPair, GradientTape};
use super::{ConditioningInput, WaveNetModel};

struct LayerSaved<S> {
    input: Tensor2D<S>,
    filter_pre: Tensor2D<S>,
    gate_pre: Tensor2D<S>,
    z: Tensor2D<S>,
}

struct ContextSaved<S> {
    frames: usize,
    layers: Vec<LayerSaved<S>>,
    /// Stack output mapped to the main window's audio positions.
    window: Tensor2D<S>,
}

struct ClassifierSaved<S> {
    pooled: Tensor2D<S>,
    hidden_pre: Tensor2D<S>,
    hidden: Tensor2D<S>,
}

struct Saved<S> {
    /// Full input; the main stack reads `classes[crop_start..]`.
    classes: Vec<u16>,
    global: Option<Tensor2D<S>>,
    local_raw: Option<Tensor2D<S>>,
    local_window: Option<Tensor2D<S>>,
    context: Vec<ContextSaved<S>>,
    layers: Vec<LayerSaved<S>>,
    skip: Tensor2D<S>,
    head_in: Tensor2D<S>,
    head_hidden_pre: Tensor2D<S>,
    head_hidden: Tensor2D<S>,
    classifier: Option<ClassifierSaved<S>>,
}

/// Result of a forward evaluation, optionally with the activations the
/// backward pass needs.
pub struct ForwardPass<S = f32> {
    version: u64,
    crop_start: usize,
    total_len: usize,
    logits: Tensor2D<S>,
    frame_logits: Option<Tensor2D<S>>,
    saved: Option<Saved<S>>,
}

impl<S: Real> ForwardPass<S> {
    /// `logits[t]` scores the class of the sample following window position `t`.
    pub fn logits(&self) -> &Tensor2D<S> {
        &self.logits
    }

    pub fn frame_logits(&self) -> Option<&Tensor2D<S>> {
        self.frame_logits.as_ref()
    }

    pub fn into_logits(self) -> Tensor2D<S> {
        self.logits
    }

    /// First input position covered by the logits.
    pub fn crop_start(&self) -> usize {
        self.crop_start
    }

    pub fn has_saved_activations(&self) -> bool {
        self.saved.is_some()
    }
}

/// `out[t] = bias + sum over t' in frame(t) of W[classes[t']] / pool`,
/// the 1x1 projection of mean-pooled one-hot vectors.
fn embed_pooled<S: Real>(classes: &[u16], pool: usize, k: &ConvKernel<S>) -> Tensor2D<S> {
    let frames = classes.len() / pool;
    let inv = S::one() / S::lit(pool as f64);
    let mut out = Tensor2D::zeros(frames, k.c_out);
    for f in 0..frames {
        let row = out.row_mut(f);
        for &c in &classes[f * pool..(f + 1) * pool] {
            let w = &k.weights[c as usize * k.c_out..(c as usize + 1) * k.c_out];
            for (o, &wv) in row.iter_mut().zip(w) {
                *o += wv;
            }
        }
        for (o, &b) in row.iter_mut().zip(&k.bias) {
            *o = *o * inv + b;
        }
    }
    out
}

fn embed_pooled_backward<S: Real>(
    grad: &Tensor2D<S>,
    classes: &[u16],
    pool: usize,
    gk: &mut ConvKernel<S>,
) {
    let inv = S::one() / S::lit(pool as f64);
    for f in 0..grad.timesteps() {
        let g = grad.row(f);
        for (b, &v) in gk.bias.iter_mut().zip(g) {
            *b += v;
        }
        for &c in &classes[f * pool..(f + 1) * pool] {
            let co = gk.c_out;
            let w = &mut gk.weights[c as usize * co..(c as usize + 1) * co];
            for (wv, &v) in w.iter_mut().zip(g) {
                *wv += v * inv;
            }
        }
    }
}

/// Frame whose stack output is visible at audio position `t`: frame `k`
/// covers samples `[k p, (k + 1) p)` and is usable once its last sample is
/// known, i.e. from position `k p + p - 1` on.
pub(crate) fn context_frame_at(t: usize, pool: usize) -> Option<usize> {
    ((t + 1) / pool).checked_sub(1)
}

fn one_row<S: Real>(v: &[f32]) -> Tensor2D<S> {
    Tensor2D::from_raw(1, v.len(), v.iter().map(|&x| S::lit(x as f64)).collect())
}

struct LayerOut<S> {
    saved: LayerSaved<S>,
    output: Tensor2D<S>,
}

fn gated_residual<S: Real>(
    x: Tensor2D<S>,
    filter: &ConvKernel<S>,
    gate: &ConvKernel<S>,
    residual: &ConvKernel<S>,
    mut filter_pre: Tensor2D<S>,
    mut gate_pre: Tensor2D<S>,
) -> Result<LayerOut<S>> {
    filter_pre.add_assign(&causal_conv(&x, filter)?);
    gate_pre.add_assign(&causal_conv(&x, gate)?);
    let z = gated_activation(&filter_pre, &gate_pre)?;
    let mut output = conv1x1(&z, residual)?;
    output.add_assign(&x);
    Ok(LayerOut {
        saved: LayerSaved {
            input: x,
            filter_pre,
            gate_pre,
            z,
        },
        output,
    })
}

impl<S: Real> WaveNetModel<S> {
    fn check_inputs(&self, classes: &[u16], cond: &ConditioningInput) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::data("input must contain at least one sample"));
        }
        check_classes(classes, self.config().num_classes)?;
        let cfg = &self.config().conditioning;
        match (&cfg.global, &cond.global) {
            (Some(g), Some(v)) if v.len() != g.dim => {
                return Err(Error::config(format!(
                    "global conditioning vector has {} entries, model expects {}",
                    v.len(),
                    g.dim
                )))
            }
            (Some(_), None) => return Err(Error::config("model expects a global conditioning vector")),
            (None, Some(_)) => {
                return Err(Error::config("model has no global conditioning but a vector was supplied"))
            }
            _ => {}
        }
        match (&cfg.local, &cond.local) {
            (Some(l), Some(series)) => {
                if series.channels() != l.dim {
                    return Err(Error::config(format!(
                        "local series has {} channels, model expects {}",
                        series.channels(),
                        l.dim
                    )));
                }
                if series.timesteps() * l.upsample_factor != classes.len() {
                    return Err(Error::shape(format!(
                        "local series of {} frames upsampled by {} gives {} steps, audio has {}",
                        series.timesteps(),
                        l.upsample_factor,
                        series.timesteps() * l.upsample_factor,
                        classes.len()
                    )));
                }
            }
            (Some(_), None) => return Err(Error::config("model expects a local conditioning series")),
            (None, Some(_)) => {
                return Err(Error::config("model has no local conditioning but a series was supplied"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Upsampled local conditioning over the whole input.
    pub(crate) fn upsample_local(&self, series: &Tensor2D<S>) -> Result<Tensor2D<S>> {
        let l = self
            .config()
            .conditioning
            .local
            .ok_or_else(|| Error::config("model has no local conditioning"))?;
        match (l.mode, self.layout.upsampler) {
            (UpsampleMode::Transposed, Some(k)) => {
                upsample_transposed(series, &self.params[k], l.upsample_factor)
            }
            _ => repeat_upsample(series, l.upsample_factor),
        }
    }

    /// Runs context stack `i` over the full input and returns the per-layer
    /// activations together with the frame-rate output.
    fn run_context(&self, i: usize, classes: &[u16]) -> Result<(Vec<LayerSaved<S>>, Tensor2D<S>)> {
        let slots = &self.layout.context[i];
        let mut x = embed_pooled(classes, slots.pool_factor, &self.params[slots.input]);
        let mut layers = Vec::with_capacity(slots.layers.len());
        for l in &slots.layers {
            let zeros = Tensor2D::zeros(x.timesteps(), x.channels());
            let out = gated_residual(
                x,
                &self.params[l.filter],
                &self.params[l.gate],
                &self.params[l.residual],
                zeros.clone(),
                zeros,
            )?;
            layers.push(out.saved);
            x = out.output;
        }
        Ok((layers, x))
    }

    fn context_window(&self, i: usize, frames_out: &Tensor2D<S>, start: usize, end: usize) -> Tensor2D<S> {
        let pool = self.layout.context[i].pool_factor;
        let mut w = Tensor2D::zeros(end - start, frames_out.channels());
        for t in start..end {
            if let Some(k) = context_frame_at(t, pool) {
                w.row_mut(t - start).copy_from_slice(frames_out.row(k));
            }
        }
        w
    }

    fn cond_term(
        &self,
        pair: CondPair,
        source: &Tensor2D<S>,
        steps: usize,
        filter_pre: &mut Tensor2D<S>,
        gate_pre: &mut Tensor2D<S>,
    ) -> Result<()> {
        let f = conv1x1(source, &self.params[pair.filter])?;
        let g = conv1x1(source, &self.params[pair.gate])?;
        if source.timesteps() == steps {
            filter_pre.add_assign(&f);
            gate_pre.add_assign(&g);
        } else {
            // one global row, broadcast over time
            filter_pre.add_row_broadcast(f.row(0));
            gate_pre.add_row_broadcast(g.row(0));
        }
        Ok(())
    }

    /// Full forward evaluation over `classes[crop_start..]`, with context
    /// stacks reading the whole input.
    pub fn forward_pass(
        &self,
        classes: &[u16],
        cond: &ConditioningInput,
        crop_start: usize,
        save: bool,
    ) -> Result<ForwardPass<S>> {
        self.check_inputs(classes, cond)?;
        let total = classes.len();
        if crop_start >= total {
            return Err(Error::data(format!(
                "crop start {crop_start} leaves no samples of a {total}-sample input"
            )));
        }
        let window = &classes[crop_start..];
        let steps = window.len();
        let r = self.config().residual_channels;

        let global = cond.global.as_deref().map(one_row::<S>);
        let local_raw = cond.local.as_ref().map(|s| s.cast::<S>());
        let local_window = match &local_raw {
            Some(raw) => Some(self.upsample_local(raw)?.slice_rows(crop_start, total)),
            None => None,
        };

        let mut context = Vec::with_capacity(self.layout.context.len());
        for i in 0..self.layout.context.len() {
            let (layers, out) = self.run_context(i, classes)?;
            let window = self.context_window(i, &out, crop_start, total);
            context.push(ContextSaved {
                frames: out.timesteps(),
                layers,
                window,
            });
        }

        let mut x = embed_pooled(window, 1, &self.params[self.layout.embedding]);
        let mut skip = Tensor2D::zeros(steps, self.config().skip_channels);
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for slots in &self.layout.layers {
            let mut filter_pre = Tensor2D::zeros(steps, r);
            let mut gate_pre = Tensor2D::zeros(steps, r);
            if let (Some(pair), Some(h)) = (slots.global, &global) {
                self.cond_term(pair, h, steps, &mut filter_pre, &mut gate_pre)?;
            }
            if let (Some(pair), Some(y)) = (slots.local, &local_window) {
                self.cond_term(pair, y, steps, &mut filter_pre, &mut gate_pre)?;
            }
            for (pair, ctx) in slots.context.iter().zip(&context) {
                self.cond_term(*pair, &ctx.window, steps, &mut filter_pre, &mut gate_pre)?;
            }
            let out = gated_residual(
                x,
                &self.params[slots.filter],
                &self.params[slots.gate],
                &self.params[slots.residual],
                filter_pre,
                gate_pre,
            )?;
            skip.add_assign(&conv1x1(&out.saved.z, &self.params[slots.skip])?);
            x = out.output;
            if save {
                layers.push(out.saved);
            }
        }

        let head_in = relu(&skip);
        let head_hidden_pre = conv1x1(&head_in, &self.params[self.layout.head_hidden])?;
        let head_hidden = relu(&head_hidden_pre);
        let logits = conv1x1(&head_hidden, &self.params[self.layout.head_out])?;

        let (frame_logits, classifier) = match (self.layout.classifier, self.config().classifier) {
            (Some((hidden_k, out_k)), Some(cfg)) => {
                let pooled = mean_pool(&skip, cfg.pool_factor)?;
                let hidden_pre = same_conv(&pooled, &self.params[hidden_k])?;
                let hidden = relu(&hidden_pre);
                let frame_logits = same_conv(&hidden, &self.params[out_k])?;
                (
                    Some(frame_logits),
                    Some(ClassifierSaved {
                        pooled,
                        hidden_pre,
                        hidden,
                    }),
                )
            }
            _ => (None, None),
        };

        let saved = save.then(|| Saved {
            classes: classes.to_vec(),
            global,
            local_raw,
            local_window,
            context,
            layers,
            skip,
            head_in,
            head_hidden_pre,
            head_hidden,
            classifier,
        });
        Ok(ForwardPass {
            version: self.version(),
            crop_start,
            total_len: total,
            logits,
            frame_logits,
            saved,
        })
    }

    /// Next-sample logits for every position of `classes`.
    pub fn forward(&self, classes: &[u16], cond: &ConditioningInput) -> Result<Tensor2D<S>> {
        Ok(self.forward_pass(classes, cond, 0, false)?.logits)
    }

    /// Runs the context stacks over the whole input and the main stack over
    /// only its last `window` samples; returns logits for that window.
    pub fn forward_with_context(
        &self,
        classes: &[u16],
        cond: &ConditioningInput,
        window: usize,
    ) -> Result<Tensor2D<S>> {
        if self.config().context_stacks.is_empty() {
            return Err(Error::config("model has no context stack"));
        }
        let need = self.config().context_requirement();
        if classes.len() < need {
            return Err(Error::data(format!(
                "input has {} samples, context stacks need at least {need}",
                classes.len()
            )));
        }
        if window == 0 || window > classes.len() {
            return Err(Error::data(format!(
                "window {window} must be in [1, {}]",
                classes.len()
            )));
        }
        Ok(self
            .forward_pass(classes, cond, classes.len() - window, false)?
            .logits)
    }

    /// Per-frame label logits from the classifier head alongside the
    /// next-sample logits. A trailing partial frame is ignored.
    pub fn classify_frames(
        &self,
        classes: &[u16],
        cond: &ConditioningInput,
    ) -> Result<(Tensor2D<S>, Tensor2D<S>)> {
        if self.config().classifier.is_none() {
            return Err(Error::config("model has no classifier head"));
        }
        let pass = self.forward_pass(classes, cond, 0, false)?;
        Ok((pass.frame_logits.expect("classifier configured"), pass.logits))
    }

    /// Accumulates the gradient of a loss into `tape`, given the loss
    /// gradient with respect to the next-sample logits and, when the model
    /// has a classifier, the frame logits.
    pub fn backward(
        &self,
        pass: &ForwardPass<S>,
        grad_logits: &Tensor2D<S>,
        grad_frames: Option<&Tensor2D<S>>,
        tape: &mut GradientTape<S>,
    ) -> Result<()> {
        let saved = pass
            .saved
            .as_ref()
            .ok_or_else(|| Error::State("forward pass did not save activations".into()))?;
        if pass.version != self.version() {
            return Err(Error::State(
                "parameters changed since the forward pass was recorded".into(),
            ));
        }
        if tape.grads.len() != self.params.len() {
            return Err(Error::State("gradient tape belongs to a different model".into()));
        }
        if grad_logits.shape() != pass.logits.shape() {
            return Err(Error::shape(format!(
                "logit gradient is {:?}, logits are {:?}",
                grad_logits.shape(),
                pass.logits.shape()
            )));
        }
        let g = &mut tape.grads;
        let lay = &self.layout;

        let d_hidden = conv1x1_backward(
            grad_logits,
            &saved.head_hidden,
            &self.params[lay.head_out],
            &mut g[lay.head_out],
        )?;
        let d_hidden_pre = relu_backward(&d_hidden, &saved.head_hidden_pre);
        let d_head_in = conv1x1_backward(
            &d_hidden_pre,
            &saved.head_in,
            &self.params[lay.head_hidden],
            &mut g[lay.head_hidden],
        )?;
        let mut d_skip = relu_backward(&d_head_in, &saved.skip);

        if let Some(df) = grad_frames {
            let (Some((hk, ok)), Some(cs), Some(cfg)) =
                (lay.classifier, &saved.classifier, self.config().classifier)
            else {
                return Err(Error::config("frame gradient given but model has no classifier head"));
            };
            let frame_shape = pass.frame_logits.as_ref().map(Tensor2D::shape);
            if Some(df.shape()) != frame_shape {
                return Err(Error::shape("frame gradient does not match frame logits"));
            }
            let d_h = same_conv_backward(df, &cs.hidden, &self.params[ok], &mut g[ok])?;
            let d_hp = relu_backward(&d_h, &cs.hidden_pre);
            let d_pooled = same_conv_backward(&d_hp, &cs.pooled, &self.params[hk], &mut g[hk])?;
            d_skip.add_assign(&mean_pool_backward(&d_pooled, cfg.pool_factor, d_skip.timesteps())?);
        }

        let steps = d_skip.timesteps();
        let r = self.config().residual_channels;
        let mut d_x = Tensor2D::zeros(steps, r);
        let mut d_local = saved
            .local_window
            .as_ref()
            .map(|y| Tensor2D::zeros(y.timesteps(), y.channels()));
        let mut d_context: Vec<Tensor2D<S>> = saved
            .context
            .iter()
            .map(|c| Tensor2D::zeros(c.window.timesteps(), c.window.channels()))
            .collect();

        for (slots, ls) in lay.layers.iter().zip(&saved.layers).rev() {
            let mut d_z = conv1x1_backward(&d_skip, &ls.z, &self.params[slots.skip], &mut g[slots.skip])?;
            d_z.add_assign(&conv1x1_backward(
                &d_x,
                &ls.z,
                &self.params[slots.residual],
                &mut g[slots.residual],
            )?);
            let (d_f, d_g) = gated_activation_backward(&d_z, &ls.filter_pre, &ls.gate_pre)?;

            if let (Some(pair), Some(h)) = (slots.global, &saved.global) {
                let sum_f = Tensor2D::from_raw(1, r, d_f.column_sums());
                let sum_g = Tensor2D::from_raw(1, r, d_g.column_sums());
                conv1x1_backward(&sum_f, h, &self.params[pair.filter], &mut g[pair.filter])?;
                conv1x1_backward(&sum_g, h, &self.params[pair.gate], &mut g[pair.gate])?;
            }
            if let (Some(pair), Some(y), Some(dy)) = (slots.local, &saved.local_window, d_local.as_mut()) {
                dy.add_assign(&conv1x1_backward(&d_f, y, &self.params[pair.filter], &mut g[pair.filter])?);
                dy.add_assign(&conv1x1_backward(&d_g, y, &self.params[pair.gate], &mut g[pair.gate])?);
            }
            for ((pair, ctx), dc) in slots.context.iter().zip(&saved.context).zip(d_context.iter_mut()) {
                dc.add_assign(&conv1x1_backward(&d_f, &ctx.window, &self.params[pair.filter], &mut g[pair.filter])?);
                dc.add_assign(&conv1x1_backward(&d_g, &ctx.window, &self.params[pair.gate], &mut g[pair.gate])?);
            }

            let mut d_in = causal_conv_backward(&d_f, &ls.input, &self.params[slots.filter], &mut g[slots.filter])?;
            d_in.add_assign(&causal_conv_backward(&d_g, &ls.input, &self.params[slots.gate], &mut g[slots.gate])?);
            d_in.add_assign(&d_x);
            d_x = d_in;
        }
        embed_pooled_backward(&d_x, &saved.classes[pass.crop_start..], 1, &mut g[lay.embedding]);

        if let (Some(k), Some(dy), Some(raw)) = (lay.upsampler, &d_local, &saved.local_raw) {
            let factor = self.config().conditioning.local.map_or(1, |l| l.upsample_factor);
            let mut full = Tensor2D::zeros(pass.total_len, dy.channels());
            full.data_mut()[pass.crop_start * dy.channels()..].copy_from_slice(dy.data());
            upsample_transposed_backward(&full, raw, &self.params[k], &mut g[k], factor)?;
        }

        for (i, (ctx, d_window)) in saved.context.iter().zip(&d_context).enumerate() {
            let slots = &lay.context[i];
            let pool = slots.pool_factor;
            let mut d_out = Tensor2D::zeros(ctx.frames, d_window.channels());
            for t in 0..d_window.timesteps() {
                if let Some(k) = context_frame_at(t + pass.crop_start, pool) {
                    for (a, &b) in d_out.row_mut(k).iter_mut().zip(d_window.row(t)) {
                        *a += b;
                    }
                }
            }
            let mut d_x = d_out;
            for (l, ls) in slots.layers.iter().zip(&ctx.layers).rev() {
                let d_z = conv1x1_backward(&d_x, &ls.z, &self.params[l.residual], &mut g[l.residual])?;
                let (d_f, d_g) = gated_activation_backward(&d_z, &ls.filter_pre, &ls.gate_pre)?;
                let mut d_in = causal_conv_backward(&d_f, &ls.input, &self.params[l.filter], &mut g[l.filter])?;
                d_in.add_assign(&causal_conv_backward(&d_g, &ls.input, &self.params[l.gate], &mut g[l.gate])?);
                d_in.add_assign(&d_x);
                d_x = d_in;
            }
            embed_pooled_backward(&d_x, &saved.classes, pool, &mut g[slots.input]);
        }
        Ok(())
    }
}
