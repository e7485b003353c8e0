use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_values, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Label, Task};

/// Output of the task head for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    /// Class probabilities `l_X`.
    Probs(Vec<f64>),
    Value(f64),
}

impl Prediction {
    pub fn from_output(output: &[f64], task: Task) -> Self {
        if task.is_classification() {
            Prediction::Probs(softmax_values(output))
        } else {
            Prediction::Value(output[0])
        }
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            Prediction::Probs(p) => Some(p),
            Prediction::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Prediction::Value(v) => Some(*v),
            Prediction::Probs(_) => None,
        }
    }

    /// Most probable class, ties to the smaller index.
    pub fn argmax(&self) -> Option<usize> {
        self.probs().map(argmax)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-example loss against a head output: cross-entropy on logits or
/// squared error.
pub fn phase1_loss(output: &[f64], label: &Label, task: Task) -> Result<f64> {
    task.check_label(label)?;
    match label {
        Label::Class(c) => {
            let m = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + output.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            Ok(lse - output[*c as usize])
        }
        Label::Value(y) => Ok((output[0] - y).powi(2)),
    }
}

/// Mean phase-1 loss over a batch of head outputs, on the tape.
pub fn batch_loss(tape: &mut Tape, output: Var, labels: &[Label], task: Task) -> Result<Var> {
    let rows = tape.value(output).rows();
    if rows != labels.len() {
        return Err(Error::shape(
            "batch_loss",
            format!("{rows} outputs for {} labels", labels.len()),
        ));
    }
    for l in labels {
        task.check_label(l)?;
    }
    if task.is_classification() {
        let cols: Vec<usize> = labels.iter().filter_map(Label::class).collect();
        let logp = tape.log_softmax_row(output);
        let picked = tape.pick_cols(logp, &cols)?;
        let m = tape.mean(picked);
        Ok(tape.scale(m, -1.0))
    } else {
        let y: Vec<f64> = labels.iter().filter_map(Label::value).collect();
        let target = tape.constant(Tensor::new(rows, 1, y)?);
        let diff = tape.sub(output, target)?;
        let sq = tape.elementwise_mul(diff, diff)?;
        Ok(tape.mean(sq))
    }
}
