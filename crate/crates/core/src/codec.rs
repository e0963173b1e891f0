//! Mu-law companding and uniform quantization of companded amplitudes.
//!
//! Amplitudes in `[-1, 1]` are companded with
//! `f(x) = sign(x) * ln(1 + mu|x|) / ln(1 + mu)`, then split into
//! `num_classes` equal-width bins over the companded range. Bins are
//! half-open `[lo, hi)` except the last one, which also takes `+1.0`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompandingParams {
    pub mu: u32,
    pub num_classes: usize,
}

impl Default for CompandingParams {
    fn default() -> Self {
        CompandingParams {
            mu: 255,
            num_classes: 256,
        }
    }
}

impl CompandingParams {
    pub fn new(mu: u32, num_classes: usize) -> Result<Self> {
        if mu == 0 {
            return Err(Error::config("mu must be positive"));
        }
        if num_classes < 2 || num_classes > u16::MAX as usize + 1 {
            return Err(Error::config(format!(
                "num_classes must be in [2, 65536], got {num_classes}"
            )));
        }
        Ok(CompandingParams { mu, num_classes })
    }

    /// Class index whose bin contains amplitude zero.
    pub fn silence_class(&self) -> u16 {
        (self.num_classes / 2) as u16
    }
}

/// Audio samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousWaveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl ContinuousWaveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.abs() <= 1.0))
        {
            return Err(Error::Domain(format!(
                "sample {i} has amplitude {s}, outside [-1, 1]"
            )));
        }
        Ok(ContinuousWaveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Sequence of class indices, the model's input and target alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedWaveform {
    pub classes: Vec<u16>,
    pub sample_rate_hz: u32,
}

impl QuantizedWaveform {
    pub fn new(classes: Vec<u16>, sample_rate_hz: u32, num_classes: usize) -> Result<Self> {
        check_classes(&classes, num_classes)?;
        if sample_rate_hz == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(QuantizedWaveform {
            classes,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

pub(crate) fn check_classes(classes: &[u16], num_classes: usize) -> Result<()> {
    match classes.iter().position(|&c| c as usize >= num_classes) {
        Some(i) => Err(Error::data(format!(
            "class {} at position {i} is outside [0, {})",
            classes[i], num_classes
        ))),
        None => Ok(()),
    }
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if v.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {v} is outside [-1, 1]")))
    }
}

pub fn mulaw_compand(x: f64, params: &CompandingParams) -> Result<f64> {
    check_unit(x, "amplitude")?;
    let mu = params.mu as f64;
    let mag = (mu * x.abs()).ln_1p() / mu.ln_1p();
    Ok(if x.is_sign_negative() { -mag } else { mag })
}

pub fn mulaw_expand(y: f64, params: &CompandingParams) -> Result<f64> {
    check_unit(y, "companded value")?;
    let mu = params.mu as f64;
    let mag = (y.abs() * mu.ln_1p()).exp_m1() / mu;
    Ok(if y.is_sign_negative() { -mag } else { mag })
}

/// Class of a single amplitude.
pub fn quantize_sample(x: f64, params: &CompandingParams) -> Result<u16> {
    let y = mulaw_compand(x, params)?;
    let n = params.num_classes;
    let bin = ((y + 1.0) / 2.0 * n as f64).floor();
    Ok(bin.clamp(0.0, (n - 1) as f64) as u16)
}

/// Amplitude reconstructed from the companded-space center of a bin.
pub fn dequantize_class(c: u16, params: &CompandingParams) -> Result<f64> {
    let n = params.num_classes;
    if c as usize >= n {
        return Err(Error::data(format!("class {c} is outside [0, {n})")));
    }
    let y = 2.0 * (c as f64 + 0.5) / n as f64 - 1.0;
    mulaw_expand(y, params)
}

pub fn quantize(w: &ContinuousWaveform, params: &CompandingParams) -> Result<QuantizedWaveform> {
    let classes = w
        .samples
        .iter()
        .map(|&x| quantize_sample(x as f64, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedWaveform {
        classes,
        sample_rate_hz: w.sample_rate_hz,
    })
}

pub fn dequantize(q: &QuantizedWaveform, params: &CompandingParams) -> Result<ContinuousWaveform> {
    let samples = q
        .classes
        .iter()
        .map(|&c| dequantize_class(c, params).map(|x| x as f32))
        .collect::<Result<Vec<_>>>()?;
    Ok(ContinuousWaveform {
        samples,
        sample_rate_hz: q.sample_rate_hz,
    })
}

/// Lower edge, in amplitude space, of every bin plus the final `+1.0` edge.
pub fn bin_edges(params: &CompandingParams) -> Vec<f64> {
    let n = params.num_classes;
    (0..=n)
        .map(|i| {
            let y = 2.0 * i as f64 / n as f64 - 1.0;
            // y is in [-1, 1] by construction
            mulaw_expand(y.clamp(-1.0, 1.0), params).unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> CompandingParams {
        CompandingParams::default()
    }

    #[test]
    fn compand_fixed_points() {
        assert_eq!(mulaw_compand(0.0, &p()).unwrap(), 0.0);
        assert_eq!(mulaw_compand(1.0, &p()).unwrap(), 1.0);
        assert_eq!(mulaw_compand(-1.0, &p()).unwrap(), -1.0);
        // ln(26.5) / ln(256), evaluated with 40-digit arithmetic
        let v = mulaw_compand(0.1, &p()).unwrap();
        assert!((v - 0.590_990_056_820_399_9).abs() < 1e-9, "{v}");
    }

    #[test]
    fn out_of_range_amplitude_is_named() {
        let err = mulaw_compand(1.5, &p()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(err.to_string().contains("1.5"));
        assert!(mulaw_expand(-1.01, &p()).is_err());
        assert!(mulaw_compand(f64::NAN, &p()).is_err());
    }

    #[test]
    fn expand_inverts_compand() {
        assert_eq!(mulaw_expand(0.0, &p()).unwrap(), 0.0);
        assert!((mulaw_expand(1.0, &p()).unwrap() - 1.0).abs() < 1e-15);
        let y = mulaw_compand(0.1, &p()).unwrap();
        assert!((mulaw_expand(y, &p()).unwrap() - 0.1).abs() < 1e-12);
        for i in 0..=10_000 {
            let x = -1.0 + 2.0 * i as f64 / 10_000.0;
            let back = mulaw_expand(mulaw_compand(x, &p()).unwrap(), &p()).unwrap();
            assert!((back - x).abs() <= 1e-7, "x = {x}");
        }
    }

    #[test]
    fn quantize_edges_and_midpoint() {
        assert_eq!(quantize_sample(-1.0, &p()).unwrap(), 0);
        assert_eq!(quantize_sample(0.0, &p()).unwrap(), 128);
        assert_eq!(quantize_sample(1.0, &p()).unwrap(), 255);
    }

    #[test]
    fn dequantize_bin_centers() {
        // expand(1/256) and expand(-1 + 1/256), 40-digit arithmetic
        let c128 = dequantize_class(128, &p()).unwrap();
        assert!((c128 - 0.000_085_871_171_192_614_42).abs() < 1e-15, "{c128}");
        let c0 = dequantize_class(0, &p()).unwrap();
        assert!((c0 + 0.978_488_030_958_632_3).abs() < 1e-12, "{c0}");
        assert!(matches!(dequantize_class(256, &p()), Err(Error::Data(_))));
    }

    #[test]
    fn class_indices_survive_round_trip() {
        let q = QuantizedWaveform::new((0..256).collect(), 16_000, 256).unwrap();
        let back = quantize(&dequantize(&q, &p()).unwrap(), &p()).unwrap();
        assert_eq!(back.classes, q.classes);
    }

    #[test]
    fn bins_are_finer_near_zero() {
        let e = bin_edges(&p());
        let mid = e[129] - e[128];
        let top = e[256] - e[255];
        assert!(top / mid > 10.0, "ratio {}", top / mid);
    }

    #[test]
    fn waveform_validation() {
        assert!(ContinuousWaveform::new(vec![0.0, 1.2], 16_000).is_err());
        assert!(ContinuousWaveform::new(vec![0.0], 0).is_err());
        assert!(matches!(
            QuantizedWaveform::new(vec![3, 300], 16_000, 256),
            Err(Error::Data(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn odd_symmetry(x in -1.0f64..=1.0) {
                prop_assert_eq!(mulaw_compand(-x, &p()).unwrap(), -mulaw_compand(x, &p()).unwrap());
            }

            #[test]
            fn monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(mulaw_compand(lo, &p()).unwrap() <= mulaw_compand(hi, &p()).unwrap());
                prop_assert!(quantize_sample(lo, &p()).unwrap() <= quantize_sample(hi, &p()).unwrap());
            }
        }
    }
}
