use super::tensor::{Real, Tensor2D};
use crate::{Error, Result};

/// Numerically stable log-softmax of one row, in double precision.
pub fn log_softmax_row<S: Real>(row: &[S]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v.as_f64() - lse).collect()
}

pub fn softmax_row<S: Real>(row: &[S]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Mean categorical cross-entropy over unmasked timesteps.
///
/// Returns the loss in nats and its gradient with respect to `logits`,
/// `(softmax - onehot) / count` on unmasked rows and zero elsewhere.
pub fn softmax_xent<S: Real>(
    logits: &Tensor2D<S>,
    targets: &[usize],
    mask: Option<&[bool]>,
) -> Result<(f64, Tensor2D<S>)> {
    let (t, c) = logits.shape();
    if targets.len() != t {
        return Err(Error::shape(format!(
            "{} targets for {t} timesteps of logits",
            targets.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != t {
            return Err(Error::shape(format!("{} mask entries for {t} timesteps", m.len())));
        }
    }
    if let Some((i, &k)) = targets.iter().enumerate().find(|(_, &k)| k >= c) {
        return Err(Error::data(format!(
            "target class {k} at timestep {i} is outside [0, {c})"
        )));
    }
    let active = |i: usize| mask.map_or(true, |m| m[i]);
    let count = (0..t).filter(|&i| active(i)).count();
    let mut grad = Tensor2D::zeros(t, c);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        if !active(i) {
            continue;
        }
        let logp = log_softmax_row(logits.row(i));
        loss -= logp[target];
        for (k, (g, lp)) in grad.row_mut(i).iter_mut().zip(&logp).enumerate() {
            let onehot = if k == target { 1.0 } else { 0.0 };
            *g = S::lit((lp.exp() - onehot) * inv);
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor2D::<f64>::zeros(3, 256);
        let (loss, _) = softmax_xent(&logits, &[0, 17, 255], None).unwrap();
        assert!((loss - 5.545_177_444_479_562).abs() < 1e-12);
    }

    #[test]
    fn saturated_target_gives_zero_loss() {
        let mut logits = Tensor2D::<f32>::zeros(2, 8);
        logits.set(0, 3, 1e4);
        logits.set(1, 0, 1e4);
        let (loss, _) = softmax_xent(&logits, &[3, 0], None).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn mask_and_errors() {
        let mut logits = Tensor2D::<f64>::zeros(2, 4);
        logits.set(1, 2, 3.0);
        let (loss, grad) = softmax_xent(&logits, &[0, 1], Some(&[true, false])).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&v| v == 0.0));
        assert!(matches!(softmax_xent(&logits, &[0, 4], None), Err(Error::Data(_))));
        assert!(matches!(softmax_xent(&logits, &[0], None), Err(Error::Shape(_))));
    }

    #[test]
    fn rows_sum_to_one_and_shift_invariance() {
        let mut rng = Rng64::new(5);
        let row: Vec<f64> = (0..16).map(|_| rng.uniform(-30.0, 30.0)).collect();
        let p = softmax_row(&row);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let a = Tensor2D::from_vec(1, 16, row.clone()).unwrap();
        let b = Tensor2D::from_vec(1, 16, row.iter().map(|v| v + 123.0).collect()).unwrap();
        let (la, _) = softmax_xent(&a, &[4], None).unwrap();
        let (lb, _) = softmax_xent(&b, &[4], None).unwrap();
        assert!((la - lb).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng64::new(6);
        let logits =
            Tensor2D::from_vec(4, 8, (0..32).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        let targets = [1, 7, 0, 4];
        let (_, grad) = softmax_xent(&logits, &targets, None).unwrap();
        let eps = 1e-4;
        for i in 0..32 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let n = (softmax_xent(&p, &targets, None).unwrap().0
                - softmax_xent(&m, &targets, None).unwrap().0)
                / (2.0 * eps);
            let a = grad.data()[i];
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-5, "{i}: {a} vs {n}");
        }
    }
}
