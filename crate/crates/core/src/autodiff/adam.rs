use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, base_lr: f64) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            base_lr,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    ///
    /// All gradients are checked before any parameter is touched, so a
    /// non-finite gradient leaves params and state unchanged.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::row(&[1.0, -2.0, 3.0])];
        let before = params.clone();
        let mut adam = AdamState::new(&params, 0.01);
        adam.step(&mut params, &[Tensor::zeros(1, 3)], &names(1), 0.01)
            .unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for g in [1e-3, 0.5, -7.0, 1e4] {
            let mut params = vec![Tensor::scalar(0.0)];
            let mut adam = AdamState::new(&params, 0.01);
            adam.step(&mut params, &[Tensor::scalar(g)], &names(1), 0.01)
                .unwrap();
            let delta = params[0].data()[0].abs();
            assert!((0.99 * 0.01..=0.01).contains(&delta), "g={g} delta={delta}");
            assert_eq!(params[0].data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = AdamState::new(&params, 0.05);
        for _ in 0..200 {
            let w = params[0].data()[0];
            let g = Tensor::scalar(2.0 * (w - 5.0));
            adam.step(&mut params, &[g], &names(1), 0.05).unwrap();
        }
        assert!((params[0].data()[0] - 5.0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = vec![Tensor::scalar(0.0), Tensor::scalar(1.0)];
        let mut adam = AdamState::new(&params, 0.01);
        let err = adam
            .step(
                &mut params,
                &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
                &["w".into(), "bias".into()],
                0.01,
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "bias"));
        assert_eq!(params[0].data()[0], 0.0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut params = vec![Tensor::row(&[0.3, -0.1])];
            let mut adam = AdamState::new(&params, 0.01);
            for i in 0..5 {
                let g = Tensor::row(&[i as f64 * 0.1, -0.2]);
                adam.step(&mut params, &[g], &names(1), 0.01).unwrap();
            }
            (params, adam)
        };
        assert_eq!(run(), run());
    }
}
