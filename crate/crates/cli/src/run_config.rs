//! The `--config` document.
//!
//! ```toml
//! output_dir = "runs/sine"          # relative to this file
//!
//! [model]
//! residual_channels = 32
//! skip_channels = 32
//! dilation_schedule = [1, 2, 4, 8, 16, 32, 64]
//! # conditioning.global = { dim = 2 }
//! # conditioning.local = { dim = 8, upsample_factor = 80, mode = "repeat" }
//!
//! [train]
//! max_steps = 2000
//! segment_length = 1024
//!
//! [[data]]
//! synth = { kind = "sine", frequency_hz = 440.0, duration_s = 2.0 }
//! global_class = 0                  # needed when conditioning.global is set
//!
//! [[data]]
//! wav = "clips/speech.wav"          # 16-bit mono PCM
//! local_features = "clips/speech.features.json"   # [[f32; dim]; frames]
//! frame_labels = "clips/speech.labels.json"       # [label; frames]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use wavenet::audio_io::{read_wav, synth, SyntheticSpec};
use wavenet::codec::{quantize, CompandingParams};
use wavenet::model::ModelConfig;
use wavenet::tensor_ops::Tensor2D;
use wavenet::training::{Clip, Dataset, TrainConfig};

use crate::failure::{Context, Failure};

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: Vec<DataEntry>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataEntry {
    pub wav: Option<PathBuf>,
    pub synth: Option<SyntheticSpec>,
    pub global_class: Option<usize>,
    pub local_features: Option<PathBuf>,
    pub frame_labels: Option<PathBuf>,
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{}: file not found", path.display())))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).usage(path.display())?;
    serde_json::from_str(&text).usage(path.display())
}

/// A JSON array of equal-length rows.
pub fn read_features(path: &Path) -> Result<Tensor2D<f32>, Failure> {
    let rows: Vec<Vec<f32>> = read_json(path)?;
    Tensor2D::from_rows(&rows).usage(path.display())
}

impl RunConfig {
    /// Parses `path`, resolves relative paths against its directory and
    /// checks everything that can be checked before training starts.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).usage(path.display())?;
        let mut cfg: RunConfig = toml::from_str(&text).usage(path.display())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        for d in &mut cfg.data {
            for p in [&mut d.wav, &mut d.local_features, &mut d.frame_labels].into_iter().flatten() {
                resolve(p);
            }
        }
        cfg.check().map_err(|e| match e {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Failure> {
        self.model.validate().usage("model")?;
        if self.data.is_empty() {
            return Err(Failure::Usage("data: at least one [[data]] entry is required".into()));
        }
        let mut classes = BTreeSet::new();
        for (i, d) in self.data.iter().enumerate() {
            match (&d.wav, &d.synth) {
                (Some(p), None) => require_file(p)?,
                (None, Some(s)) => s.validate().usage(format!("data[{i}].synth"))?,
                _ => return Err(Failure::Usage(format!("data[{i}]: set exactly one of `wav` or `synth`"))),
            }
            for p in [&d.local_features, &d.frame_labels].into_iter().flatten() {
                require_file(p)?;
            }
            match (self.model.conditioning.global, d.global_class) {
                (Some(g), Some(c)) if c >= g.dim => {
                    return Err(Failure::Usage(format!(
                        "data[{i}].global_class: {c} is outside [0, {})",
                        g.dim
                    )))
                }
                (Some(_), Some(c)) => {
                    classes.insert(c);
                }
                (Some(_), None) => {
                    return Err(Failure::Usage(format!(
                        "data[{i}].global_class: required by model.conditioning.global"
                    )))
                }
                (None, Some(_)) => {
                    return Err(Failure::Usage(format!(
                        "data[{i}].global_class: model has no global conditioning"
                    )))
                }
                (None, None) => {}
            }
            if self.model.conditioning.local.is_some() != d.local_features.is_some() {
                return Err(Failure::Usage(format!(
                    "data[{i}].local_features: must be given exactly when model.conditioning.local is set"
                )));
            }
        }
        if let Some(&max) = classes.iter().next_back() {
            if classes.len() != max + 1 {
                return Err(Failure::Usage(format!(
                    "data: global classes {classes:?} are not dense in [0, {}]",
                    max
                )));
            }
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset, Failure> {
        let params = CompandingParams::new(255, self.model.num_classes).usage("model.num_classes")?;
        let mut clips = Vec::with_capacity(self.data.len());
        for (i, d) in self.data.iter().enumerate() {
            let wave = match (&d.wav, &d.synth) {
                (Some(p), _) => read_wav(p).usage(p.display())?,
                (_, Some(s)) => synth(s).usage(format!("data[{i}].synth"))?,
                _ => unreachable!("checked at load"),
            };
            let audio = quantize(&wave, &params).usage(format!("data[{i}]"))?;
            let local = d.local_features.as_deref().map(read_features).transpose()?;
            let frame_labels = d.frame_labels.as_deref().map(read_json::<Vec<usize>>).transpose()?;
            clips.push(Clip {
                audio,
                global_class: d.global_class,
                local,
                frame_labels,
            });
        }
        Ok(Dataset::new(clips))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
                cfg.dataset().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
        assert_eq!(seen, 3);
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let body = &readme[start..start + readme[start..].find("```").unwrap()];
        let cfg: RunConfig = toml::from_str(body).unwrap();
        cfg.model.validate().unwrap();
        assert_eq!(cfg.data.len(), 2);
        assert_eq!(cfg.train.max_steps, 2000);
    }
}
