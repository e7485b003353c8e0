use super::{scaled_rows, Query, Retrieved, LOG_CLAMP};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::Prediction;
use crate::graph::Label;

/// Constant inputs of the adapter loss for a batch of queries.
///
/// `z` holds, per query, the mixing targets of each slot: for
/// classification `[l_X[c], 1{l^(1) = c}, …]`, for regression
/// `[l_X, l^(1), …]`.
#[derive(Clone, Debug)]
pub struct AdapterBatch {
    queries: Tensor,
    keys: Tensor,
    z: Tensor,
    targets: Option<Tensor>,
    k: usize,
}

impl AdapterBatch {
    pub fn new(items: &[(&Query, &[Retrieved])]) -> Result<Self> {
        let Some((first, first_set)) = items.first() else {
            return Err(Error::InvalidArgument("empty adapter batch".into()));
        };
        let k = first_set.len();
        let d = first.embedding.len();
        let regression = matches!(first.prediction, Prediction::Value(_));
        let mut queries = Vec::with_capacity(items.len() * d);
        let mut keys = Vec::with_capacity(items.len() * (k + 1) * d);
        let mut z = Vec::with_capacity(items.len() * (k + 1));
        let mut targets = Vec::new();
        for (q, set) in items {
            if set.len() != k || q.embedding.len() != d {
                return Err(Error::shape(
                    "adapter_batch",
                    format!("query {} has {} retrieved of dim {}", q.id, set.len(), q.embedding.len()),
                ));
            }
            if let Some(r) = set.iter().find(|r| r.key.len() != d) {
                return Err(Error::shape("adapter_batch", format!("key of {} has dim {}", r.example_id, r.key.len())));
            }
            let rows = scaled_rows(&q.embedding, set.iter().map(|r| r.key.as_slice()));
            queries.extend_from_slice(&rows[0]);
            for row in &rows {
                keys.extend_from_slice(row);
            }
            match (&q.prediction, q.label) {
                (Prediction::Probs(p), Label::Class(c)) if !regression => {
                    let c = c as usize;
                    let own = p.get(c).ok_or_else(|| Error::IndexOutOfRange {
                        op: "adapter_batch",
                        detail: format!("class {c} >= {}", p.len()),
                    })?;
                    z.push(*own);
                    for r in set.iter() {
                        let l = r.label.class().ok_or_else(|| {
                            Error::InvalidArgument("retrieved a real label for a classification task".into())
                        })?;
                        z.push(if l == c { 1.0 } else { 0.0 });
                    }
                }
                (Prediction::Value(v), Label::Value(y)) if regression => {
                    z.push(*v);
                    for r in set.iter() {
                        z.push(r.label.value().ok_or_else(|| {
                            Error::InvalidArgument("retrieved a class label for a regression task".into())
                        })?);
                    }
                    targets.push(y);
                }
                _ => return Err(Error::InvalidArgument(format!("query {} mixes task kinds", q.id))),
            }
        }
        let n = items.len();
        Ok(Self {
            queries: Tensor::new(n, d, queries)?,
            keys: Tensor::new(n * (k + 1), d, keys)?,
            z: Tensor::new(n, k + 1, z)?,
            targets: regression.then(|| Tensor::new(n, 1, targets)).transpose()?,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }

    /// Attention weights, one row of `k + 1` per query.
    pub fn attention(&self, tape: &mut Tape, w1: Var, w2: Var, phi: Var) -> Result<Var> {
        let n = self.len();
        let slots = self.k + 1;
        let proj_dim = tape.value(w1).rows();
        let hq = tape.constant(self.queries.clone());
        let hk = tape.constant(self.keys.clone());
        let q = tape.matmul_t(hq, w1)?;
        let keys = tape.matmul_t(hk, w2)?;
        let idx: Vec<usize> = (0..n).flat_map(|b| std::iter::repeat_n(b, slots)).collect();
        let q_rep = tape.gather_rows(q, &idx)?;
        let prod = tape.elementwise_mul(q_rep, keys)?;
        let scores = tape.row_sum(prod);
        let scores = tape.reshape(scores, n, slots)?;
        let scores = tape.scale(scores, 1.0 / (proj_dim as f64).sqrt());
        let scores = tape.add_row(scores, phi)?;
        Ok(tape.softmax_row(scores))
    }

    /// Mean adapter loss over the batch.
    pub fn loss(&self, tape: &mut Tape, w1: Var, w2: Var, phi: Var) -> Result<Var> {
        let attn = self.attention(tape, w1, w2, phi)?;
        let z = tape.constant(self.z.clone());
        let weighted = tape.elementwise_mul(attn, z)?;
        let mixed = tape.row_sum(weighted);
        match &self.targets {
            None => {
                let clamped = tape.clamp_min(mixed, LOG_CLAMP);
                let logs = tape.log(clamped);
                let m = tape.mean(logs);
                Ok(tape.scale(m, -1.0))
            }
            Some(t) => {
                let t = tape.constant(t.clone());
                let diff = tape.sub(mixed, t)?;
                let sq = tape.elementwise_mul(diff, diff)?;
                Ok(tape.mean(sq))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{adapter_loss, compute_attention, AdapterParams};
    use super::*;

    fn query(id: u64, emb: Vec<f64>, pred: Prediction, label: Label) -> Query {
        Query {
            id,
            embedding: emb,
            prediction: pred,
            label,
        }
    }

    fn ret(id: u64, key: Vec<f64>, label: Label) -> Retrieved {
        Retrieved {
            example_id: id,
            key,
            label,
            distance: 0.0,
        }
    }

    #[test]
    fn tape_matches_value_ops() {
        let params = AdapterParams::init(3, 2, 2, 4).unwrap();
        let qs = [
            query(0, vec![0.1, 0.2, -0.3], Prediction::Probs(vec![0.2, 0.5, 0.3]), Label::Class(1)),
            query(1, vec![1.0, -0.5, 0.0], Prediction::Probs(vec![0.6, 0.1, 0.3]), Label::Class(2)),
        ];
        let sets = [
            vec![ret(5, vec![0.0, 1.0, 0.5], Label::Class(1)), ret(6, vec![2.0, 0.0, 0.0], Label::Class(0))],
            vec![ret(7, vec![-1.0, 1.0, 1.0], Label::Class(2)), ret(8, vec![0.3, 0.3, 0.3], Label::Class(2))],
        ];
        let items: Vec<(&Query, &[Retrieved])> = qs.iter().zip(&sets).map(|(q, s)| (q, s.as_slice())).collect();
        let batch = AdapterBatch::new(&items).unwrap();
        let mut tape = Tape::new();
        let w1 = tape.constant(params.w1().clone());
        let w2 = tape.constant(params.w2().clone());
        let phi = tape.constant(params.phi().clone());
        let attn = batch.attention(&mut tape, w1, w2, phi).unwrap();
        let loss = batch.loss(&mut tape, w1, w2, phi).unwrap();
        let mut expect = 0.0;
        for (b, (q, s)) in qs.iter().zip(&sets).enumerate() {
            let a = compute_attention(&params, &q.embedding, s).unwrap();
            for (x, y) in a.iter().zip(tape.value(attn).row_slice(b)) {
                assert!((x - y).abs() < 1e-12);
            }
            expect += adapter_loss(&a, &q.prediction, s, &q.label).unwrap() / 2.0;
        }
        assert!((tape.value(loss).item().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn regression_loss_matches() {
        let params = AdapterParams::init(2, 2, 1, 1).unwrap();
        let q = query(0, vec![0.5, 0.5], Prediction::Value(2.0), Label::Value(3.5));
        let s = vec![ret(1, vec![1.0, -1.0], Label::Value(5.0))];
        let batch = AdapterBatch::new(&[(&q, s.as_slice())]).unwrap();
        let mut tape = Tape::new();
        let w1 = tape.constant(params.w1().clone());
        let w2 = tape.constant(params.w2().clone());
        let phi = tape.constant(params.phi().clone());
        let loss = batch.loss(&mut tape, w1, w2, phi).unwrap();
        let a = compute_attention(&params, &q.embedding, &s).unwrap();
        let expect = adapter_loss(&a, &q.prediction, &s, &q.label).unwrap();
        assert!((tape.value(loss).item().unwrap() - expect).abs() < 1e-12);
    }
}
