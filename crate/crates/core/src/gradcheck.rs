//! Central-difference gradient checking.
//!
//! For an op `f` and a random output cotangent `u`, the scalar
//! `φ(x) = ⟨u, f(x)⟩` has gradient `vjp(u)`. Each input coordinate is
//! perturbed by `±h` in turn and
//! `|analytic − numeric| / max(1, |analytic|, |numeric|)` is recorded.

use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
const COTANGENT_SEED: u64 = 0x6772_6164_6368_6b00;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

pub fn grad_check(op: &dyn DifferentiableOp, inputs: &[&Tensor], h: f64) -> Result<f64> {
    Ok(grad_check_seeded(op, inputs, h, COTANGENT_SEED)?.max_rel_error)
}

pub fn grad_check_seeded(op: &dyn DifferentiableOp, inputs: &[&Tensor], h: f64, seed: u64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let output = op.forward(inputs)?;
    if !output.is_finite() {
        return Err(Error::Eval(format!("{}: non-finite forward output", op.name())));
    }
    let mut rng = Rng::new(seed);
    let cotangent = Tensor::randn(output.shape(), 1.0, &mut rng);
    let analytic = op.vjp(inputs, &output, &cotangent)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Eval(format!(
            "{}: vjp returned {} cotangents for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }

    let probe = |perturbed: &[&Tensor]| -> Result<f64> {
        let y = op.forward(perturbed)?;
        if !y.is_finite() {
            return Err(Error::Eval(format!(
                "{}: non-finite forward output under perturbation",
                op.name()
            )));
        }
        Ok(cotangent.dot(&y))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (i, (input, grad)) in inputs.iter().zip(&analytic).enumerate() {
        if grad.shape() != input.shape() {
            return Err(Error::shape("grad_check", input.shape(), grad.shape()));
        }
        let mut work = (*input).clone();
        for j in 0..input.len() {
            let orig = work.data()[j];
            work.data_mut()[j] = orig + h;
            let plus = probe(&with_replaced(inputs, i, &work))?;
            work.data_mut()[j] = orig - h;
            let minus = probe(&with_replaced(inputs, i, &work))?;
            work.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if !err.is_finite() {
                return Err(Error::Eval(format!(
                    "{}: non-finite gradient at input {i}[{j}]",
                    op.name()
                )));
            }
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

fn with_replaced<'a>(inputs: &[&'a Tensor], at: usize, t: &'a Tensor) -> Vec<&'a Tensor> {
    let mut v = inputs.to_vec();
    v[at] = t;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{Scale, SoftmaxRows};

    #[test]
    fn exact_linear_derivative() {
        let x = Tensor::scalar(2.0);
        let err = grad_check(&Scale(3.0), &[&x], 1e-5).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn step_out_of_range() {
        let x = Tensor::scalar(2.0);
        assert!(matches!(grad_check(&Scale(3.0), &[&x], 1e-2), Err(Error::Config(_))));
        assert!(matches!(grad_check(&Scale(3.0), &[&x], 1e-9), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_forward_is_eval_error() {
        let x = Tensor::new(vec![1, 2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(matches!(grad_check(&SoftmaxRows, &[&x], 1e-5), Err(Error::Eval(_))));
    }

    struct WrongGrad;
    impl DifferentiableOp for WrongGrad {
        fn name(&self) -> &str {
            "wrong"
        }
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].map(|v| v * v))
        }
        fn vjp(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![Tensor::new(
                g.shape().to_vec(),
                inputs[0].data().iter().zip(g.data()).map(|(x, gv)| x * gv).collect(),
            )?])
        }
    }

    #[test]
    fn detects_wrong_vjp() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let err = grad_check(&WrongGrad, &[&x], 1e-5).unwrap();
        assert!(err > 0.1, "{err}");
    }
}
