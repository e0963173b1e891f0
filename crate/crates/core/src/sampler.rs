//! Sequential generation with per-layer ring buffers.
//!
//! Each residual layer keeps the last `dilation * (filter_width - 1)` of its
//! inputs (the previous layer's post-residual outputs), so producing one more
//! sample reads a fixed number of cached rows no matter how long the history
//! is. Context stacks keep the same kind of cache at their pooled rate and
//! refresh their conditioning once a pooled frame is complete.
//!
//! Without a primer the stream starts from one silence sample (class
//! `num_classes / 2`) on top of zero-padded history, the same padding the
//! batch forward pass uses.

use crate::codec::QuantizedWaveform;
use crate::model::{ConditioningInput, WaveNetModel};
use crate::rng::Rng64;
use crate::tensor_ops::{sigmoid, softmax_row, ConvKernel, Real, Tensor2D};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Sample,
    Argmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub num_samples: usize,
    pub conditioning: ConditioningInput,
    pub temperature: f64,
    pub mode: SampleMode,
    pub seed: u64,
    pub primer: Option<QuantizedWaveform>,
    pub sample_rate_hz: u32,
}

impl GenerationRequest {
    pub fn new(num_samples: usize, seed: u64) -> Self {
        GenerationRequest {
            num_samples,
            conditioning: ConditioningInput::none(),
            temperature: 1.0,
            mode: SampleMode::Sample,
            seed,
            primer: None,
            sample_rate_hz: 16_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("num_samples must be >= 1"));
        }
        check_temperature(self.temperature)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Fixed-capacity history of rows; `get(lag)` is the row pushed `lag`
/// pushes ago. Starts zero-filled.
#[derive(Debug, Clone)]
struct Ring<S> {
    data: Vec<S>,
    width: usize,
    capacity: usize,
    head: usize,
}

impl<S: Real> Ring<S> {
    fn new(capacity: usize, width: usize) -> Self {
        Ring {
            data: vec![S::zero(); capacity * width],
            width,
            capacity,
            head: 0,
        }
    }

    fn get(&self, lag: usize) -> &[S] {
        debug_assert!(lag >= 1 && lag <= self.capacity);
        let i = (self.head + self.capacity - lag) % self.capacity;
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn push(&mut self, row: &[S]) {
        if self.capacity == 0 {
            return;
        }
        self.data[self.head * self.width..(self.head + 1) * self.width].copy_from_slice(row);
        self.head = (self.head + 1) % self.capacity;
    }
}

fn affine<S: Real>(k: &ConvKernel<S>, input: &[S]) -> Vec<S> {
    let mut out = k.bias.clone();
    k.accumulate_tap(0, input, &mut out);
    out
}

/// `tanh(f) * sigmoid(g)` of a dilated causal conv at the newest position.
struct GatedStep<'a, S> {
    filter: &'a ConvKernel<S>,
    gate: &'a ConvKernel<S>,
}

impl<S: Real> GatedStep<'_, S> {
    fn run(&self, x: &[S], ring: &Ring<S>, f: &mut [S], g: &mut [S], reads: &mut usize) -> Vec<S> {
        for (acc, &b) in f.iter_mut().zip(&self.filter.bias) {
            *acc += b;
        }
        for (acc, &b) in g.iter_mut().zip(&self.gate.bias) {
            *acc += b;
        }
        self.filter.accumulate_tap(0, x, f);
        self.gate.accumulate_tap(0, x, g);
        for lag in 1..self.filter.width {
            let past = ring.get(lag * self.filter.dilation);
            *reads += 1;
            self.filter.accumulate_tap(lag, past, f);
            self.gate.accumulate_tap(lag, past, g);
        }
        f.iter().zip(g.iter()).map(|(&a, &b)| a.tanh() * sigmoid(b)).collect()
    }
}

#[derive(Debug, Clone)]
struct ContextState<S> {
    pending: Vec<u16>,
    rings: Vec<Ring<S>>,
    /// Per main layer (filter, gate) projection of the latest stack output.
    terms: Vec<(Vec<S>, Vec<S>)>,
}

/// Incremental generation state for one sequence.
#[derive(Debug, Clone)]
pub struct SamplerState<S = f32> {
    t: usize,
    rings: Vec<Ring<S>>,
    global_terms: Vec<Option<(Vec<S>, Vec<S>)>>,
    local: Option<Tensor2D<S>>,
    context: Vec<ContextState<S>>,
    rng: Rng64,
    last_reads: usize,
    last_distribution: Option<Vec<f64>>,
}

impl<S: Real> SamplerState<S> {
    /// Number of samples consumed so far.
    pub fn timestep(&self) -> usize {
        self.t
    }

    /// Cached rows read during the most recent step.
    pub fn last_step_reads(&self) -> usize {
        self.last_reads
    }

    /// Capacity of each main-layer ring buffer.
    pub fn buffer_capacities(&self) -> Vec<usize> {
        self.rings.iter().map(|r| r.capacity).collect()
    }

    pub fn last_distribution(&self) -> Option<&[f64]> {
        self.last_distribution.as_deref()
    }
}

/// Zero-filled state for `request`, warmed by teacher-forcing its primer.
pub fn init_state<S: Real>(model: &WaveNetModel<S>, request: &GenerationRequest) -> Result<SamplerState<S>> {
    request.validate()?;
    let cfg = model.config();
    let lay = &model.layout;
    let cond = &request.conditioning;

    let global_terms = match (&cfg.conditioning.global, &cond.global) {
        (Some(g), Some(h)) if h.len() == g.dim => {
            let h: Vec<S> = h.iter().map(|&v| S::lit(v as f64)).collect();
            lay.layers
                .iter()
                .map(|l| {
                    l.global.map(|p| (affine(&model.params[p.filter], &h), affine(&model.params[p.gate], &h)))
                })
                .collect()
        }
        (Some(g), Some(h)) => {
            return Err(Error::config(format!(
                "global conditioning vector has {} entries, model expects {}",
                h.len(),
                g.dim
            )))
        }
        (Some(_), None) => return Err(Error::config("model expects a global conditioning vector")),
        (None, Some(_)) => return Err(Error::config("model has no global conditioning but a vector was supplied")),
        (None, None) => vec![None; lay.layers.len()],
    };

    let primer_len = request.primer.as_ref().map_or(0, QuantizedWaveform::len);
    let steps_needed = primer_len.max(1) + request.num_samples - 1;
    let local = match (&cfg.conditioning.local, &cond.local) {
        (Some(l), Some(series)) => {
            if series.channels() != l.dim {
                return Err(Error::config(format!(
                    "local series has {} channels, model expects {}",
                    series.channels(),
                    l.dim
                )));
            }
            if series.timesteps() * l.upsample_factor < steps_needed {
                return Err(Error::data(format!(
                    "local series covers {} samples but generation needs {steps_needed}",
                    series.timesteps() * l.upsample_factor
                )));
            }
            Some(model.upsample_local(&series.cast::<S>())?)
        }
        (Some(_), None) => return Err(Error::config("model expects a local conditioning series")),
        (None, Some(_)) => return Err(Error::config("model has no local conditioning but a series was supplied")),
        (None, None) => None,
    };

    let r = cfg.residual_channels;
    let rings = lay
        .layers
        .iter()
        .map(|l| Ring::new(l.dilation * (cfg.filter_width - 1), r))
        .collect();
    let context = lay
        .context
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let ch = cfg.context_stacks[i].channels;
            let zero = vec![S::zero(); ch];
            ContextState {
                pending: Vec::with_capacity(c.pool_factor),
                rings: c.layers.iter().map(|l| Ring::new(l.dilation * (cfg.filter_width - 1), ch)).collect(),
                terms: lay
                    .layers
                    .iter()
                    .map(|l| {
                        let p = l.context[i];
                        (affine(&model.params[p.filter], &zero), affine(&model.params[p.gate], &zero))
                    })
                    .collect(),
            }
        })
        .collect();

    let mut state = SamplerState {
        t: 0,
        rings,
        global_terms,
        local,
        context,
        rng: Rng64::new(request.seed),
        last_reads: 0,
        last_distribution: None,
    };
    if let Some(primer) = &request.primer {
        for &c in &primer.classes {
            step(model, &mut state, c)?;
        }
    }
    Ok(state)
}

fn context_step<S: Real>(model: &WaveNetModel<S>, i: usize, cs: &mut ContextState<S>, reads: &mut usize) {
    let slots = &model.layout.context[i];
    let emb = &model.params[slots.input];
    let inv = S::one() / S::lit(slots.pool_factor as f64);
    let mut x = vec![S::zero(); emb.c_out];
    for &c in &cs.pending {
        let w = &emb.weights[c as usize * emb.c_out..(c as usize + 1) * emb.c_out];
        for (o, &v) in x.iter_mut().zip(w) {
            *o += v;
        }
    }
    for (o, &b) in x.iter_mut().zip(&emb.bias) {
        *o = *o * inv + b;
    }
    cs.pending.clear();
    for (l, ring) in slots.layers.iter().zip(cs.rings.iter_mut()) {
        let ch = x.len();
        let (mut f, mut g) = (vec![S::zero(); ch], vec![S::zero(); ch]);
        let unit = GatedStep {
            filter: &model.params[l.filter],
            gate: &model.params[l.gate],
        };
        let z = unit.run(&x, ring, &mut f, &mut g, reads);
        let mut out = affine(&model.params[l.residual], &z);
        for (o, &v) in out.iter_mut().zip(&x) {
            *o += v;
        }
        ring.push(&x);
        x = out;
    }
    for (terms, l) in cs.terms.iter_mut().zip(&model.layout.layers) {
        let p = l.context[i];
        *terms = (affine(&model.params[p.filter], &x), affine(&model.params[p.gate], &x));
    }
}

/// Feeds `prev_class` as the newest input and returns the distribution of
/// the sample that follows it.
pub fn step<S: Real>(model: &WaveNetModel<S>, state: &mut SamplerState<S>, prev_class: u16) -> Result<Vec<f64>> {
    let cfg = model.config();
    if prev_class as usize >= cfg.num_classes {
        return Err(Error::data(format!(
            "class {prev_class} is outside [0, {})",
            cfg.num_classes
        )));
    }
    let t = state.t;
    let lay = &model.layout;
    let local_row = match &state.local {
        Some(y) if t >= y.timesteps() => {
            return Err(Error::data(format!(
                "local conditioning ends at step {}, cannot generate step {t}",
                y.timesteps()
            )))
        }
        Some(y) => Some(y.row(t).to_vec()),
        None => None,
    };
    let mut reads = 0;

    for (i, cs) in state.context.iter_mut().enumerate() {
        cs.pending.push(prev_class);
        if cs.pending.len() == lay.context[i].pool_factor {
            context_step(model, i, cs, &mut reads);
        }
    }

    let emb = &model.params[lay.embedding];
    let mut x: Vec<S> = emb.weights[prev_class as usize * emb.c_out..(prev_class as usize + 1) * emb.c_out]
        .iter()
        .zip(&emb.bias)
        .map(|(&w, &b)| w + b)
        .collect();
    let mut skip = vec![S::zero(); cfg.skip_channels];
    let r = cfg.residual_channels;

    for (li, (slots, ring)) in lay.layers.iter().zip(state.rings.iter_mut()).enumerate() {
        let (mut f, mut g) = (vec![S::zero(); r], vec![S::zero(); r]);
        if let Some((gf, gg)) = &state.global_terms[li] {
            add(&mut f, gf);
            add(&mut g, gg);
        }
        if let (Some(p), Some(y)) = (slots.local, &local_row) {
            add(&mut f, &affine(&model.params[p.filter], y));
            add(&mut g, &affine(&model.params[p.gate], y));
        }
        for cs in &state.context {
            let (cf, cg) = &cs.terms[li];
            add(&mut f, cf);
            add(&mut g, cg);
        }
        let unit = GatedStep {
            filter: &model.params[slots.filter],
            gate: &model.params[slots.gate],
        };
        let z = unit.run(&x, ring, &mut f, &mut g, &mut reads);
        add(&mut skip, &affine(&model.params[slots.skip], &z));
        let mut out = affine(&model.params[slots.residual], &z);
        add(&mut out, &x);
        ring.push(&x);
        x = out;
    }

    let relu = |v: Vec<S>| -> Vec<S> { v.into_iter().map(|a| a.max(S::zero())).collect() };
    let hidden = relu(affine(&model.params[lay.head_hidden], &relu(skip)));
    let logits = affine(&model.params[lay.head_out], &hidden);
    let dist = softmax_row(&logits);

    state.t += 1;
    state.last_reads = reads;
    state.last_distribution = Some(dist.clone());
    Ok(dist)
}

fn add<S: Real>(acc: &mut [S], v: &[S]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `softmax(log p / temperature)`; temperature 1 leaves `p` unchanged.
pub fn temperature_scale(distribution: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if temperature == 1.0 {
        return Ok(distribution.to_vec());
    }
    let logs: Vec<f64> = distribution.iter().map(|&p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Generated audio plus its mean negative log-likelihood (nats/sample)
/// under the unscaled model distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub waveform: QuantizedWaveform,
    pub mean_nll: f64,
}

pub fn generate<S: Real>(model: &WaveNetModel<S>, request: &GenerationRequest) -> Result<Generation> {
    let mut state = init_state(model, request)?;
    let silence = (model.config().num_classes / 2) as u16;
    let mut dist = match state.last_distribution.take() {
        Some(d) => d,
        None => step(model, &mut state, silence)?,
    };
    let mut classes = Vec::with_capacity(request.num_samples);
    let mut nll = 0.0;
    for i in 0..request.num_samples {
        let c = match request.mode {
            SampleMode::Argmax => argmax(&dist),
            SampleMode::Sample => {
                let scaled = temperature_scale(&dist, request.temperature)?;
                state.rng.categorical(&scaled)
            }
        };
        nll -= dist[c].ln();
        classes.push(c as u16);
        if i + 1 < request.num_samples {
            dist = step(model, &mut state, c as u16)?;
        }
    }
    Ok(Generation {
        waveform: QuantizedWaveform {
            classes,
            sample_rate_hz: request.sample_rate_hz,
        },
        mean_nll: nll / request.num_samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn ring_returns_lagged_rows() {
        let mut r = Ring::<f32>::new(3, 1);
        assert_eq!(r.get(3), &[0.0]);
        for v in 1..=5 {
            r.push(&[v as f32]);
        }
        assert_eq!((r.get(1)[0], r.get(2)[0], r.get(3)[0]), (5.0, 4.0, 3.0));
    }

    #[test]
    fn temperature_cases() {
        let p = [0.1, 0.6, 0.3];
        let same = temperature_scale(&p, 1.0).unwrap();
        assert!(same.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-9));
        let cold = temperature_scale(&p, 1e-3).unwrap();
        assert!((cold[1] - 1.0).abs() < 1e-12);
        // p^(1/2) normalized: sqrt(0.8) = 2 sqrt(0.2)
        let warm = temperature_scale(&[0.8, 0.2], 2.0).unwrap();
        assert!((warm[0] - 2.0 / 3.0).abs() < 1e-12 && (warm[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(temperature_scale(&p, 0.0), Err(Error::Config(_))));
        assert!(temperature_scale(&p, -1.0).is_err());
    }

    fn small() -> WaveNetModel<f32> {
        let mut cfg = ModelConfig::new(3, 3, 4, 1);
        cfg.num_classes = 16;
        WaveNetModel::new(cfg, 7).unwrap()
    }

    #[test]
    fn fresh_state_is_zeroed() {
        let m = small();
        let s = init_state(&m, &GenerationRequest::new(4, 0)).unwrap();
        assert_eq!(s.timestep(), 0);
        assert_eq!(s.buffer_capacities(), vec![1, 2, 4]);
        assert!(s.rings.iter().all(|r| r.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn primer_equals_manual_steps() {
        let m = small();
        let primer = QuantizedWaveform::new(vec![3, 9, 1, 15, 4], 16_000, 16).unwrap();
        let mut req = GenerationRequest::new(4, 0);
        req.primer = Some(primer.clone());
        let warmed = init_state(&m, &req).unwrap();
        let mut manual = init_state(&m, &GenerationRequest::new(4, 0)).unwrap();
        for &c in &primer.classes {
            step(&m, &mut manual, c).unwrap();
        }
        assert_eq!(warmed.timestep(), 5);
        assert_eq!(warmed.last_distribution(), manual.last_distribution());
        for (a, b) in warmed.rings.iter().zip(&manual.rings) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut cfg = ModelConfig::new(3, 3, 2, 1);
        cfg.num_classes = 16;
        let m = WaveNetModel::<f32>::zeroed(cfg).unwrap();
        let mut s = init_state(&m, &GenerationRequest::new(1, 0)).unwrap();
        for c in [8u16, 3, 15] {
            let d = step(&m, &mut s, c).unwrap();
            assert!(d.iter().all(|&p| p == 1.0 / 16.0));
        }
    }

    #[test]
    fn errors() {
        let m = small();
        let mut s = init_state(&m, &GenerationRequest::new(1, 0)).unwrap();
        assert!(matches!(step(&m, &mut s, 16), Err(Error::Data(_))));
        assert!(init_state(&m, &GenerationRequest::new(0, 0)).is_err());
        let mut req = GenerationRequest::new(2, 0);
        req.temperature = 0.0;
        assert!(matches!(generate(&m, &req), Err(Error::Config(_))));
        let mut req = GenerationRequest::new(2, 0);
        req.conditioning = ConditioningInput::global_one_hot(0, 2).unwrap();
        assert!(matches!(generate(&m, &req), Err(Error::Config(_))));
    }
}
