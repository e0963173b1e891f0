use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_num_classes() -> usize {
    256
}

fn default_filter_width() -> usize {
    2
}

fn default_classifier_pool() -> usize {
    160
}

/// Complete architectural description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    #[serde(default = "default_filter_width")]
    pub filter_width: usize,
    pub dilation_schedule: Vec<usize>,
    #[serde(default)]
    pub conditioning: ConditioningConfig,
    #[serde(default)]
    pub context_stacks: Vec<ContextStackConfig>,
    #[serde(default)]
    pub classifier: Option<ClassifierConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    #[serde(default)]
    pub global: Option<GlobalConditioning>,
    #[serde(default)]
    pub local: Option<LocalConditioning>,
}

/// One vector per sequence, e.g. a one-hot speaker id of length `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConditioning {
    pub dim: usize,
}

/// A `dim`-channel series at `1 / upsample_factor` of the audio rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConditioning {
    pub dim: usize,
    pub upsample_factor: usize,
    #[serde(default)]
    pub mode: UpsampleMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Learned transposed convolution, initialized to replication.
    #[default]
    Transposed,
    /// Each control frame repeated across its samples.
    Repeat,
}

/// Auxiliary stack running at `1 / pool_factor` of the audio rate whose
/// output locally conditions every layer of the main stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextStackConfig {
    pub dilation_schedule: Vec<usize>,
    pub channels: usize,
    pub pool_factor: usize,
}

/// Frame classification head over mean-pooled skip features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub num_labels: usize,
    #[serde(default = "default_classifier_pool")]
    pub pool_factor: usize,
}

/// `1, 2, 4, ..., max_dilation` repeated `repeats` times.
pub fn doubling_schedule(max_dilation: usize, repeats: usize) -> Vec<usize> {
    let block: Vec<usize> = std::iter::successors(Some(1usize), |d| Some(d * 2))
        .take_while(|&d| d <= max_dilation.max(1))
        .collect();
    block.repeat(repeats)
}

fn schedule_rf(filter_width: usize, schedule: &[usize]) -> usize {
    1 + schedule.iter().map(|d| (filter_width - 1) * d).sum::<usize>()
}

/// Number of past inputs (including the current one) that can influence one
/// output of the dilated stack: `1 + sum((filter_width - 1) * dilation)`.
pub fn receptive_field(config: &ModelConfig) -> usize {
    schedule_rf(config.filter_width, &config.dilation_schedule)
}

impl ContextStackConfig {
    /// Receptive field in pooled frames.
    pub fn receptive_field(&self, filter_width: usize) -> usize {
        schedule_rf(filter_width, &self.dilation_schedule)
    }

    /// Samples of history the stack needs to fill its receptive field.
    pub fn required_samples(&self, filter_width: usize) -> usize {
        self.receptive_field(filter_width) * self.pool_factor
    }
}

impl ModelConfig {
    /// Unconditioned model with a doubling dilation schedule.
    pub fn new(
        residual_channels: usize,
        skip_channels: usize,
        max_dilation: usize,
        repeats: usize,
    ) -> Self {
        ModelConfig {
            num_classes: 256,
            residual_channels,
            skip_channels,
            filter_width: 2,
            dilation_schedule: doubling_schedule(max_dilation, repeats),
            conditioning: ConditioningConfig::default(),
            context_stacks: Vec::new(),
            classifier: None,
        }
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }

    /// Longest history any context stack reads, in samples.
    pub fn context_requirement(&self) -> usize {
        self.context_stacks
            .iter()
            .map(|c| c.required_samples(self.filter_width))
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, name: &str| {
            if v == 0 {
                Err(Error::config(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        if self.num_classes < 2 || self.num_classes > u16::MAX as usize + 1 {
            return Err(Error::config("num_classes must be in [2, 65536]"));
        }
        positive(self.residual_channels, "residual_channels")?;
        positive(self.skip_channels, "skip_channels")?;
        positive(self.filter_width, "filter_width")?;
        check_schedule(&self.dilation_schedule, "dilation_schedule")?;
        if self.filter_width < 2 {
            return Err(Error::config(format!(
                "filter_width {} gives a receptive field of 1; use at least 2",
                self.filter_width
            )));
        }
        if let Some(g) = &self.conditioning.global {
            positive(g.dim, "global conditioning dim")?;
        }
        if let Some(l) = &self.conditioning.local {
            positive(l.dim, "local conditioning dim")?;
            positive(l.upsample_factor, "upsample_factor")?;
        }
        for (i, c) in self.context_stacks.iter().enumerate() {
            check_schedule(&c.dilation_schedule, &format!("context_stacks[{i}].dilation_schedule"))?;
            positive(c.channels, "context stack channels")?;
            positive(c.pool_factor, "context stack pool_factor")?;
        }
        if let Some(c) = &self.classifier {
            positive(c.num_labels, "classifier num_labels")?;
            positive(c.pool_factor, "classifier pool_factor")?;
        }
        Ok(())
    }
}

fn check_schedule(schedule: &[usize], name: &str) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::config(format!("{name} must not be empty")));
    }
    if let Some(i) = schedule.iter().position(|&d| d == 0) {
        return Err(Error::config(format!("{name}[{i}] is 0; dilations must be >= 1")));
    }
    Ok(())
}
