//! 16-bit mono PCM WAV files and synthetic test signals.

use std::f64::consts::TAU;
use std::io::{Read, Seek, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{dequantize_class, CompandingParams, ContinuousWaveform};
use crate::rng::Rng64;
use crate::{Error, Result};

/// The only stream layout accepted: 16-bit linear PCM, one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate_hz: u32,
}

impl WavSpec {
    pub const BITS_PER_SAMPLE: u16 = 16;
    pub const CHANNELS: u16 = 1;

    fn hound(self) -> hound::WavSpec {
        hound::WavSpec {
            channels: Self::CHANNELS,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: Self::BITS_PER_SAMPLE,
            sample_format: hound::SampleFormat::Int,
        }
    }
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        // hound reports short reads as `Other` with "Failed to read enough bytes."
        hound::Error::IoError(e) if matches!(e.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) => {
            Error::Integrity(format!("truncated WAV data: {e}"))
        }
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::Format(format!("malformed WAV: {msg}")),
        hound::Error::Unsupported => Error::Format("audio_format: only linear PCM (1) is accepted".into()),
        other => Error::Format(format!("unsupported WAV: {other}")),
    }
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<ContinuousWaveform> {
    let mut wav = hound::WavReader::new(reader).map_err(wav_error)?;
    let spec = wav.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format("audio_format: only linear PCM (1) is accepted, got IEEE float".into()));
    }
    if spec.channels != WavSpec::CHANNELS {
        return Err(Error::Format(format!("channels: expected 1, got {}", spec.channels)));
    }
    if spec.bits_per_sample != WavSpec::BITS_PER_SAMPLE {
        return Err(Error::Format(format!(
            "bits_per_sample: expected 16, got {}",
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Format("sample_rate: must be positive".into()));
    }
    let expected = wav.len() as usize;
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    if samples.len() != expected {
        return Err(Error::Integrity(format!(
            "data chunk declares {expected} samples but holds {}",
            samples.len()
        )));
    }
    ContinuousWaveform::new(samples, spec.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<ContinuousWaveform> {
    let file = std::fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(file))
}

/// `round(x * 32768)` with halves away from zero, clamped to the int16 range.
pub fn to_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav_to<W: Write + Seek>(w: &ContinuousWaveform, writer: W) -> Result<()> {
    let spec = WavSpec {
        sample_rate_hz: w.sample_rate_hz,
    };
    let mut out = hound::WavWriter::new(writer, spec.hound()).map_err(wav_error)?;
    {
        let mut samples = out.get_i16_writer(w.samples.len() as u32);
        for &s in &w.samples {
            samples.write_sample(to_pcm16(s));
        }
        samples.flush().map_err(wav_error)?;
    }
    out.finalize().map_err(wav_error)
}

pub fn write_wav(w: &ContinuousWaveform, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_wav_to(w, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Sine,
    /// Equal-weight sum of sines at `frequency_hz` and each extra frequency,
    /// with seeded random phases, scaled so the peak is at most `amplitude`.
    SineMixture,
    Square,
    MarkovNoise,
}

/// First-order Markov chain over quantizer classes. Each state emits the
/// center amplitude of its class, so the quantized signal is exactly the
/// chain's state sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSpec {
    pub classes: Vec<u16>,
    /// Row-stochastic; `transitions[i][j]` is `P(next = j | current = i)`.
    pub transitions: Vec<Vec<f64>>,
    #[serde(default)]
    pub companding: CompandingParams,
}

impl Default for MarkovSpec {
    /// Four levels, each mostly stepping to a neighbour.
    fn default() -> Self {
        MarkovSpec {
            classes: vec![64, 112, 144, 192],
            transitions: vec![
                vec![0.1, 0.7, 0.1, 0.1],
                vec![0.1, 0.1, 0.7, 0.1],
                vec![0.1, 0.1, 0.1, 0.7],
                vec![0.7, 0.1, 0.1, 0.1],
            ],
            companding: CompandingParams::default(),
        }
    }
}

impl MarkovSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.classes.len();
        if n == 0 {
            return Err(Error::config("markov chain needs at least one state"));
        }
        if self.transitions.len() != n {
            return Err(Error::config(format!(
                "transition matrix has {} rows for {n} states",
                self.transitions.len()
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config(format!("transition row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::config(format!("transition row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("transition row {i} sums to {sum}, expected 1")));
            }
        }
        let mut seen = self.classes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != n {
            return Err(Error::config("markov states must use distinct classes"));
        }
        if let Some(&c) = self.classes.iter().find(|&&c| c as usize >= self.companding.num_classes) {
            return Err(Error::config(format!("markov class {c} is outside the quantizer range")));
        }
        Ok(())
    }

    /// Stationary distribution, found by iterating the lazy chain
    /// `(I + P) / 2` (same fixed point, but aperiodic).
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.classes.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next: Vec<f64> = pi.iter().map(|p| 0.5 * p).collect();
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    next[j] += 0.5 * pi[i] * p;
                }
            }
            let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if change < 1e-15 {
                break;
            }
        }
        pi
    }

    /// `sum_i pi_i * H(P_i)` in nats per sample.
    pub fn entropy_rate(&self) -> f64 {
        self.stationary()
            .iter()
            .zip(&self.transitions)
            .map(|(&pi, row)| {
                pi * row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>()
            })
            .sum()
    }

    /// State index sequence of length `n`, starting from a stationary draw.
    pub fn states(&self, n: usize, rng: &mut Rng64) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return out;
        }
        let mut s = rng.categorical(&self.stationary());
        out.push(s);
        for _ in 1..n {
            s = rng.categorical(&self.transitions[s]);
            out.push(s);
        }
        out
    }
}

fn default_rate() -> u32 {
    16_000
}

fn default_amplitude() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    #[serde(default)]
    pub frequency_hz: f64,
    /// Peak level; markov noise emits its class levels instead.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    /// Additional components of a sine mixture.
    #[serde(default)]
    pub extra_frequencies_hz: Vec<f64>,
    /// Chain for markov noise; [`MarkovSpec::default`] when absent.
    #[serde(default)]
    pub markov: Option<MarkovSpec>,
}

impl SyntheticSpec {
    pub fn sine(frequency_hz: f64, amplitude: f64, duration_s: f64, sample_rate_hz: u32) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Sine,
            frequency_hz,
            amplitude,
            duration_s,
            seed: 0,
            sample_rate_hz,
            extra_frequencies_hz: vec![],
            markov: None,
        }
    }

    pub fn markov_noise(markov: MarkovSpec, duration_s: f64, sample_rate_hz: u32, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::MarkovNoise,
            markov: Some(markov),
            seed,
            ..Self::sine(0.0, 1.0, duration_s, sample_rate_hz)
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config(format!("duration_s must be non-negative, got {}", self.duration_s)));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::config(format!("amplitude must be in [0, 1], got {}", self.amplitude)));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let freqs: Vec<f64> = match self.kind {
            SyntheticKind::MarkovNoise => vec![],
            SyntheticKind::SineMixture => std::iter::once(self.frequency_hz)
                .chain(self.extra_frequencies_hz.iter().copied())
                .collect(),
            SyntheticKind::Sine | SyntheticKind::Square => vec![self.frequency_hz],
        };
        for f in freqs {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config(format!("frequency must be positive, got {f}")));
            }
            if f >= nyquist {
                return Err(Error::config(format!(
                    "frequency {f} Hz aliases at {} Hz sampling (Nyquist {nyquist} Hz)",
                    self.sample_rate_hz
                )));
            }
        }
        if self.kind == SyntheticKind::MarkovNoise {
            self.markov.clone().unwrap_or_default().validate()?;
        }
        Ok(())
    }
}

pub fn synth(spec: &SyntheticSpec) -> Result<ContinuousWaveform> {
    spec.validate()?;
    let n = spec.num_samples();
    let rate = spec.sample_rate_hz as f64;
    let a = spec.amplitude;
    let samples: Vec<f64> = match spec.kind {
        SyntheticKind::Sine => (0..n).map(|t| a * (TAU * spec.frequency_hz * t as f64 / rate).sin()).collect(),
        SyntheticKind::Square => (0..n)
            .map(|t| {
                let phase = (spec.frequency_hz * t as f64 / rate).fract();
                if phase < 0.5 {
                    a
                } else {
                    -a
                }
            })
            .collect(),
        SyntheticKind::SineMixture => {
            let mut rng = Rng64::new(spec.seed);
            let parts: Vec<(f64, f64)> = std::iter::once(spec.frequency_hz)
                .chain(spec.extra_frequencies_hz.iter().copied())
                .map(|f| (f, rng.uniform(0.0, TAU)))
                .collect();
            let k = parts.len() as f64;
            (0..n)
                .map(|t| {
                    let s: f64 = parts.iter().map(|&(f, ph)| (TAU * f * t as f64 / rate + ph).sin()).sum();
                    a * s / k
                })
                .collect()
        }
        SyntheticKind::MarkovNoise => {
            let chain = spec.markov.clone().unwrap_or_default();
            let levels = chain
                .classes
                .iter()
                .map(|&c| dequantize_class(c, &chain.companding))
                .collect::<Result<Vec<_>>>()?;
            chain
                .states(n, &mut Rng64::new(spec.seed))
                .into_iter()
                .map(|s| levels[s])
                .collect()
        }
    };
    ContinuousWaveform::new(samples.into_iter().map(|v| v as f32).collect(), spec.sample_rate_hz)
}
