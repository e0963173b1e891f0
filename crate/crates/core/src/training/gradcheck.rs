use crate::model::{GradientTape, WaveNetModel};
use crate::tensor_ops::Real;
use crate::Result;

use super::{segment_loss, Segment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub classifier_weight: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            floor: 1e-6,
            classifier_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckGroup {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckGroup> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares the analytic gradient of the segment loss with central finite
/// differences, parameter by parameter, in double precision.
pub fn gradient_check<S: Real>(
    model: &WaveNetModel<S>,
    segment: &Segment,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    gradient_check_with(model, segment, options, |_| {})
}

/// [`gradient_check`] with a hook that may modify the analytic gradients
/// before comparison.
pub fn gradient_check_with<S: Real>(
    model: &WaveNetModel<S>,
    segment: &Segment,
    options: GradCheckOptions,
    tamper: impl FnOnce(&mut GradientTape<f64>),
) -> Result<GradCheckReport> {
    let mut model = model.cast::<f64>();
    let w = options.classifier_weight;
    let mut tape = model.new_tape();
    segment_loss(&model, segment, w, Some((&mut tape, 1.0)))?;
    tamper(&mut tape);

    let names: Vec<String> = model.kernel_names().map(str::to_owned).collect();
    let mut groups = Vec::with_capacity(names.len());
    for (ki, name) in names.into_iter().enumerate() {
        let analytic: Vec<f64> = tape.kernels()[ki].values().copied().collect();
        let mut group = GradCheckGroup {
            name,
            params: analytic.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for (pi, &a) in analytic.iter().enumerate() {
            let original = *model.kernels()[ki].values().nth(pi).unwrap();
            let mut eval = |v: f64| -> Result<f64> {
                *model.kernels_mut()[ki].values_mut().nth(pi).unwrap() = v;
                Ok(segment_loss(&model, segment, w, None)?.total)
            };
            let plus = eval(original + options.eps)?;
            let minus = eval(original - options.eps)?;
            eval(original)?;
            let n = (plus - minus) / (2.0 * options.eps);
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(options.floor);
            group.max_abs_error = group.max_abs_error.max(abs);
            group.max_rel_error = group.max_rel_error.max(rel);
        }
        groups.push(group);
    }
    Ok(GradCheckReport { groups })
}
