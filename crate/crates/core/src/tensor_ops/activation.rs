use super::tensor::{Real, Tensor2D};
use crate::{Error, Result};

pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn same_shape<S: Real>(a: &Tensor2D<S>, b: &Tensor2D<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `tanh(filter_pre) * sigmoid(gate_pre)`, elementwise.
pub fn gated_activation<S: Real>(
    filter_pre: &Tensor2D<S>,
    gate_pre: &Tensor2D<S>,
) -> Result<Tensor2D<S>> {
    same_shape(filter_pre, gate_pre, "gated activation")?;
    let data = filter_pre
        .data()
        .iter()
        .zip(gate_pre.data())
        .map(|(&f, &g)| f.tanh() * sigmoid(g))
        .collect();
    Ok(Tensor2D::from_raw(
        filter_pre.timesteps(),
        filter_pre.channels(),
        data,
    ))
}

/// Returns `(grad_filter_pre, grad_gate_pre)`.
pub fn gated_activation_backward<S: Real>(
    grad_out: &Tensor2D<S>,
    filter_pre: &Tensor2D<S>,
    gate_pre: &Tensor2D<S>,
) -> Result<(Tensor2D<S>, Tensor2D<S>)> {
    same_shape(filter_pre, gate_pre, "gated activation")?;
    same_shape(grad_out, filter_pre, "gated activation gradient")?;
    let (t, c) = grad_out.shape();
    let mut gf = Vec::with_capacity(t * c);
    let mut gg = Vec::with_capacity(t * c);
    for ((&d, &f), &g) in grad_out.data().iter().zip(filter_pre.data()).zip(gate_pre.data()) {
        let th = f.tanh();
        let sg = sigmoid(g);
        gf.push(d * sg * (S::one() - th * th));
        gg.push(d * th * sg * (S::one() - sg));
    }
    Ok((Tensor2D::from_raw(t, c, gf), Tensor2D::from_raw(t, c, gg)))
}

pub fn relu<S: Real>(x: &Tensor2D<S>) -> Tensor2D<S> {
    let data = x.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor2D::from_raw(x.timesteps(), x.channels(), data)
}

/// Gradient through `relu`, given the pre-activation.
pub fn relu_backward<S: Real>(grad_out: &Tensor2D<S>, pre: &Tensor2D<S>) -> Tensor2D<S> {
    let data = grad_out
        .data()
        .iter()
        .zip(pre.data())
        .map(|(&d, &p)| if p > S::zero() { d } else { S::zero() })
        .collect();
    Tensor2D::from_raw(pre.timesteps(), pre.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn scalar(v: f64) -> Tensor2D<f64> {
        Tensor2D::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn gated_unit_values() {
        assert_eq!(gated_activation(&scalar(0.0), &scalar(0.0)).unwrap().get(0, 0), 0.0);
        let sat = gated_activation(&scalar(40.0), &scalar(40.0)).unwrap().get(0, 0);
        assert!((sat - 1.0).abs() < 1e-12);
        // tanh(1) * sigmoid(-1), 40-digit arithmetic
        let v = gated_activation(&scalar(1.0), &scalar(-1.0)).unwrap().get(0, 0);
        assert!((v - 0.204_824_214_809_825_14).abs() < 1e-12, "{v}");
        assert!(gated_activation(&Tensor2D::<f64>::zeros(2, 1), &scalar(0.0)).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-1000.0f32).is_finite());
    }

    #[test]
    fn backward_special_cases() {
        let mut rng = Rng64::new(2);
        let f = Tensor2D::from_vec(3, 2, (0..6).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let g = f.clone();
        let (gf, gg) = gated_activation_backward(&Tensor2D::zeros(3, 2), &f, &g).unwrap();
        assert!(gf.data().iter().chain(gg.data()).all(|&v| v == 0.0));

        let ones = Tensor2D::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let (_, gg) = gated_activation_backward(&ones, &Tensor2D::zeros(3, 2), &g).unwrap();
        assert!(gg.data().iter().all(|&v| v == 0.0));
        assert!(gated_activation_backward(&ones, &f, &Tensor2D::zeros(2, 2)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng64::new(3);
        let mk = |rng: &mut Rng64| {
            Tensor2D::from_vec(5, 3, (0..15).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
        };
        let (f, g, probe) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let obj = |f: &Tensor2D<f64>, g: &Tensor2D<f64>| -> f64 {
            let z = gated_activation(f, g).unwrap();
            z.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (gf, gg) = gated_activation_backward(&probe, &f, &g).unwrap();
        let eps = 1e-4;
        for i in 0..15 {
            for (which, analytic) in [(0, gf.data()[i]), (1, gg.data()[i])] {
                let (mut fp, mut fm, mut gp, mut gm) = (f.clone(), f.clone(), g.clone(), g.clone());
                if which == 0 {
                    fp.data_mut()[i] += eps;
                    fm.data_mut()[i] -= eps;
                } else {
                    gp.data_mut()[i] += eps;
                    gm.data_mut()[i] -= eps;
                }
                let n = (obj(&fp, &gp) - obj(&fm, &gm)) / (2.0 * eps);
                let rel = (analytic - n).abs() / analytic.abs().max(n.abs()).max(1e-8);
                assert!(rel < 1e-5, "elem {i} input {which}: {analytic} vs {n}");
            }
        }
    }

    #[test]
    fn relu_masks_negative_pre_activations() {
        let x = Tensor2D::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor2D::from_vec(1, 3, vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).data(), &[0.0, 0.0, 5.0]);
    }
}
