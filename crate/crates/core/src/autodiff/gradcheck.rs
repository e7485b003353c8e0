//! Finite-difference verification of reverse-mode gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Components whose magnitudes are both below this are compared on an
/// absolute scale: `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, flat coordinate)` of the worst component.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval<F>(f: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out)
        .item()
        .ok_or_else(|| Error::NonScalarLoss(tape.value(out).shape().to_vec()))
}

/// Compares reverse-mode gradients of the scalar function `f` at `points`
/// against central differences.
pub fn grad_check<F>(f: F, points: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
        tol,
        passed: true,
    };
    let mut probe = points.to_vec();
    for (i, point) in points.iter().enumerate() {
        for j in 0..point.len() {
            let orig = point.data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((i, j));
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let report = grad_check(
            |t, v| t.elementwise_mul(v[0], v[0]),
            &[Tensor::scalar(3.0)],
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // sin with a deliberately doubled derivative
        let f = |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let x = t.value(v[0]).clone();
            let y = x.map(f64::sin);
            let s = t.custom(
                &[v[0]],
                y,
                Box::new(|g, ins, _| vec![Tensor::new(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(ins[0].data())
                        .map(|(g, x)| 2.0 * g * x.cos())
                        .collect(),
                )
                .unwrap()]),
            );
            Ok(t.sum(s))
        };
        let report = grad_check(f, &[Tensor::row(&[0.3, 1.1])], 1e-5).unwrap();
        assert!(!report.passed);
    }
}
