use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics of one batch-norm layer. The affine `γ`/`β` are
/// ordinary trainable parameters owned by the enclosing model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch mean and biased variance observed by a training-mode forward.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub rows: usize,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential update; the variance uses the unbiased batch estimate.
    pub fn update(&mut self, stats: &BatchStats) {
        let n = stats.rows as f64;
        let correction = n / (n - 1.0);
        for ((rm, rv), (m, v)) in self
            .running_mean
            .iter_mut()
            .zip(self.running_var.iter_mut())
            .zip(stats.mean.iter().zip(&stats.var))
        {
            *rm = (1.0 - self.momentum) * *rm + self.momentum * m;
            *rv = (1.0 - self.momentum) * *rv + self.momentum * v * correction;
        }
    }
}

/// Batch normalisation of the rows of `x`.
///
/// Training mode normalises by batch statistics and returns them so the
/// caller can fold them into the running estimates; eval mode uses the
/// running estimates and returns `None`.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &BatchNormState,
    training: bool,
) -> Result<(Var, Option<BatchStats>)> {
    let cols = tape.value(x).cols();
    if cols != state.features() {
        return Err(Error::shape(
            "batch_norm",
            format!("{cols} features vs state {}", state.features()),
        ));
    }
    if training {
        let rows = tape.value(x).rows();
        let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, state.eps)?;
        return Ok((y, Some(BatchStats { mean, var, rows })));
    }
    let neg_mean: Vec<f64> = state.running_mean.iter().map(|m| -m).collect();
    let inv_std: Vec<f64> = state
        .running_var
        .iter()
        .map(|v| 1.0 / (v + state.eps).sqrt())
        .collect();
    let shift = tape.constant(Tensor::row(&neg_mean));
    let scale = tape.constant(Tensor::row(&inv_std));
    let centred = tape.add_row(x, shift)?;
    let normed = tape.mul_row(centred, scale)?;
    let scaled = tape.mul_row(normed, gamma)?;
    Ok((tape.add_row(scaled, beta)?, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor, state: &BatchNormState, training: bool, gamma: &[f64], beta: &[f64]) -> (Tensor, Option<BatchStats>) {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.param(Tensor::row(gamma));
        let b = tape.param(Tensor::row(beta));
        let (y, stats) = batch_norm(&mut tape, xv, g, b, state, training).unwrap();
        (tape.value(y).clone(), stats)
    }

    #[test]
    fn standardised_batch_passes_through() {
        let x = Tensor::from_rows(&[[1.0], [-1.0]]).unwrap();
        let state = BatchNormState::new(1);
        let (y, _) = run(x.clone(), &state, true, &[1.0], &[0.0]);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_column_maps_to_beta() {
        let x = Tensor::from_rows(&[[3.0, 1.0], [3.0, 2.0], [3.0, 6.0]]).unwrap();
        let state = BatchNormState::new(2);
        let (y, _) = run(x, &state, true, &[2.0, 1.0], &[0.7, 0.0]);
        for r in 0..3 {
            assert!((y.get(r, 0) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let state = BatchNormState {
            running_mean: vec![1.0, -2.0],
            running_var: vec![4.0, 0.25],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        };
        let x = Tensor::from_rows(&[[3.0, 0.0], [-1.0, 1.0]]).unwrap();
        let (gamma, beta) = ([1.5, -0.5], [0.1, 0.2]);
        let (y, stats) = run(x.clone(), &state, false, &gamma, &beta);
        assert!(stats.is_none());
        for r in 0..2 {
            for c in 0..2 {
                let want = (x.get(r, c) - state.running_mean[c])
                    / (state.running_var[c] + BN_EPS).sqrt()
                    * gamma[c]
                    + beta[c];
                assert!((y.get(r, c) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_row_training_batch_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, 2.0]));
        let g = tape.param(Tensor::row(&[1.0, 1.0]));
        let b = tape.param(Tensor::row(&[0.0, 0.0]));
        let err = batch_norm(&mut tape, x, g, b, &BatchNormState::new(2), true).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(1)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut state = BatchNormState::new(1);
        let x = Tensor::from_rows(&[[0.0], [2.0]]).unwrap();
        let (_, stats) = run(x, &state, true, &[1.0], &[0.0]);
        state.update(&stats.unwrap());
        assert!((state.running_mean[0] - 0.1).abs() < 1e-15);
        // biased var 1.0, unbiased 2.0
        assert!((state.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
        assert!(state.running_var.iter().all(|v| *v >= 0.0));
    }
}
