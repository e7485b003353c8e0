//! Retrieval with dropout and the self-attention adapter that mixes the
//! model's own prediction with retrieved labels.

mod batch;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_values, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::gnn::{argmax, Prediction};
use crate::graph::Label;
use crate::index::FlatIndex;

pub use batch::AdapterBatch;
pub use train::{train_adapter, AdapterTrainConfig, AdapterTrainStats};

/// Floor applied to the mixed probability before the log in the
/// classification loss.
pub const LOG_CLAMP: f64 = 1e-12;

/// One retrieved training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub example_id: u64,
    pub key: Vec<f64>,
    pub label: Label,
    pub distance: f64,
}

/// Frozen-model outputs for one example, computed once before adapter
/// training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub prediction: Prediction,
    pub label: Label,
}

/// Top-k retrieval. In training mode `k + 1` entries are fetched and the
/// query itself is dropped, or the nearest entry when the query is not in
/// the index.
pub fn retrieve_with_dropout(
    index: &FlatIndex,
    h_x: &[f64],
    k: usize,
    training: bool,
    self_id: Option<u64>,
) -> Result<Vec<Retrieved>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = if training {
        let Some(id) = self_id else {
            return Err(Error::InvalidArgument("training retrieval needs the query id".into()));
        };
        if index.len() < k + 1 {
            return Err(Error::Index(format!(
                "training retrieval needs {} entries, index has {}",
                k + 1,
                index.len()
            )));
        }
        let mut hits = index.search(h_x, k + 1)?;
        let drop = hits.iter().position(|h| h.entry.example_id == id).unwrap_or(0);
        hits.remove(drop);
        hits
    } else {
        index.search(h_x, k)?
    };
    Ok(hits
        .into_iter()
        .map(|h| Retrieved {
            example_id: h.entry.example_id,
            key: h.entry.key.clone(),
            label: h.entry.label,
            distance: h.distance,
        })
        .collect())
}

/// Adapter weights. `w1` and `w2` are `d' × d`, `phi` is `1 × (k + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    store: ParamStore,
}

const W1: usize = 0;
const W2: usize = 1;
const PHI: usize = 2;

impl AdapterParams {
    /// `W1, W2 ~ U(±1/√d)` and `φ = 0`.
    pub fn init(dim: usize, proj_dim: usize, k: usize, seed: u64) -> Result<Self> {
        Self::check_dims(dim, proj_dim, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add_uniform("adapter.w1", proj_dim, dim, dim, &mut rng);
        store.add_uniform("adapter.w2", proj_dim, dim, dim, &mut rng);
        store.add("adapter.phi", Tensor::zeros(1, k + 1));
        Ok(Self { store })
    }

    pub fn zeros(dim: usize, proj_dim: usize, k: usize) -> Result<Self> {
        Self::from_tensors(
            Tensor::zeros(proj_dim, dim),
            Tensor::zeros(proj_dim, dim),
            Tensor::zeros(1, k + 1),
        )
    }

    pub fn from_tensors(w1: Tensor, w2: Tensor, phi: Tensor) -> Result<Self> {
        if w1.shape() != w2.shape() || phi.rows() != 1 {
            return Err(Error::shape(
                "adapter_params",
                format!("w1 {:?}, w2 {:?}, phi {:?}", w1.shape(), w2.shape(), phi.shape()),
            ));
        }
        Self::check_dims(w1.cols(), w1.rows(), phi.cols().saturating_sub(1))?;
        let mut store = ParamStore::new();
        store.add("adapter.w1", w1);
        store.add("adapter.w2", w2);
        store.add("adapter.phi", phi);
        Ok(Self { store })
    }

    fn check_dims(dim: usize, proj_dim: usize, k: usize) -> Result<()> {
        if dim == 0 || proj_dim == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "adapter needs positive dims and k, got d={dim}, d'={proj_dim}, k={k}"
            )));
        }
        Ok(())
    }

    pub fn w1(&self) -> &Tensor {
        &self.store.tensors()[W1]
    }

    pub fn w2(&self) -> &Tensor {
        &self.store.tensors()[W2]
    }

    pub fn phi(&self) -> &Tensor {
        &self.store.tensors()[PHI]
    }

    pub fn k(&self) -> usize {
        self.phi().cols() - 1
    }

    pub fn dim(&self) -> usize {
        self.w1().cols()
    }

    pub fn proj_dim(&self) -> usize {
        self.w1().rows()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }
}

/// Adapter input rows `[h_X, h^(1), …]` divided by `‖h_X‖` (left as is
/// when `h_X` is zero). Attention scores then do not grow with embedding
/// magnitude while neighbours keep their size relative to the query.
pub fn scaled_rows<'a>(h_x: &'a [f64], keys: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let norm = h_x.iter().map(|x| x * x).sum::<f64>().sqrt();
    let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    std::iter::once(h_x)
        .chain(keys)
        .map(|v| v.iter().map(|x| x * inv).collect())
        .collect()
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row_slice(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `softmax(q Kᵀ / √d' + φ)` with `q = W1 h_X` and `K_i = W2 H_i`, where
/// `H = [h_X, h^(1), …, h^(k)]`.
pub fn compute_attention(params: &AdapterParams, h_x: &[f64], retrieved: &[Retrieved]) -> Result<Vec<f64>> {
    let k = params.k();
    if retrieved.len() != k {
        return Err(Error::shape(
            "attention",
            format!("{} retrieved for k = {k}", retrieved.len()),
        ));
    }
    let d = params.dim();
    if h_x.len() != d || retrieved.iter().any(|r| r.key.len() != d) {
        return Err(Error::shape("attention", format!("embeddings must have dimension {d}")));
    }
    let rows = scaled_rows(h_x, retrieved.iter().map(|r| r.key.as_slice()));
    let q = mat_vec(params.w1(), &rows[0]);
    let scale = 1.0 / (params.proj_dim() as f64).sqrt();
    let scores: Vec<f64> = rows
        .iter()
        .zip(params.phi().data())
        .map(|(h, phi)| {
            let key = mat_vec(params.w2(), h);
            q.iter().zip(&key).map(|(a, b)| a * b).sum::<f64>() * scale + phi
        })
        .collect();
    Ok(softmax_values(&scores))
}

/// `1/(k+1)` in every slot.
pub fn uniform_attention(k: usize) -> Vec<f64> {
    vec![1.0 / (k + 1) as f64; k + 1]
}

fn check_attn(attn: &[f64], k: usize) -> Result<()> {
    if attn.len() != k + 1 {
        return Err(Error::shape(
            "adapter",
            format!("{} attention weights for {k} retrieved", attn.len()),
        ));
    }
    Ok(())
}

/// `L_X[c] = Attn_0 l_X[c] + Σ_{i: l^(i) = c} Attn_i` for every class,
/// and its argmax.
pub fn cls_predict(attn: &[f64], l_x: &[f64], retrieved: &[usize]) -> Result<(Vec<f64>, usize)> {
    check_attn(attn, retrieved.len())?;
    let mut out: Vec<f64> = l_x.iter().map(|p| attn[0] * p).collect();
    for (&c, a) in retrieved.iter().zip(&attn[1..]) {
        let slot = out.get_mut(c).ok_or_else(|| Error::IndexOutOfRange {
            op: "cls_predict",
            detail: format!("retrieved class {c} >= {}", l_x.len()),
        })?;
        *slot += a;
    }
    let best = argmax(&out);
    Ok((out, best))
}

/// `-ln(max(Attn_0 l_X[c] + Σ_{i: l^(i) = c} Attn_i, 1e-12))`.
pub fn cls_loss(attn: &[f64], l_x: &[f64], retrieved: &[usize], c: usize) -> Result<f64> {
    check_attn(attn, retrieved.len())?;
    let Some(own) = l_x.get(c) else {
        return Err(Error::IndexOutOfRange {
            op: "cls_loss",
            detail: format!("class {c} >= {}", l_x.len()),
        });
    };
    let mass = attn[0] * own
        + retrieved
            .iter()
            .zip(&attn[1..])
            .filter(|(&l, _)| l == c)
            .map(|(_, a)| a)
            .sum::<f64>();
    Ok(-mass.max(LOG_CLAMP).ln())
}

/// `Σ Attn ⊙ z` with `z = [l_X, l^(1), …, l^(k)]`.
pub fn reg_predict(attn: &[f64], l_x: f64, retrieved: &[f64]) -> Result<f64> {
    check_attn(attn, retrieved.len())?;
    Ok(attn[0] * l_x + retrieved.iter().zip(&attn[1..]).map(|(v, a)| v * a).sum::<f64>())
}

/// `(Σ Attn ⊙ z - c)²`.
pub fn reg_loss(attn: &[f64], l_x: f64, retrieved: &[f64], c: f64) -> Result<f64> {
    Ok((reg_predict(attn, l_x, retrieved)? - c).powi(2))
}

fn classes(retrieved: &[Retrieved]) -> Result<Vec<usize>> {
    retrieved
        .iter()
        .map(|r| {
            r.label
                .class()
                .ok_or_else(|| Error::InvalidArgument("retrieved a real label for a classification task".into()))
        })
        .collect()
}

fn values(retrieved: &[Retrieved]) -> Result<Vec<f64>> {
    retrieved
        .iter()
        .map(|r| {
            r.label
                .value()
                .ok_or_else(|| Error::InvalidArgument("retrieved a class label for a regression task".into()))
        })
        .collect()
}

/// Mixes a base prediction with retrieved labels under `attn`.
pub fn combine(attn: &[f64], base: &Prediction, retrieved: &[Retrieved]) -> Result<Prediction> {
    match base {
        Prediction::Probs(p) => Ok(Prediction::Probs(cls_predict(attn, p, &classes(retrieved)?)?.0)),
        Prediction::Value(v) => Ok(Prediction::Value(reg_predict(attn, *v, &values(retrieved)?)?)),
    }
}

/// Adapter loss of one example against its true label.
pub fn adapter_loss(attn: &[f64], base: &Prediction, retrieved: &[Retrieved], label: &Label) -> Result<f64> {
    match (base, label) {
        (Prediction::Probs(p), Label::Class(c)) => cls_loss(attn, p, &classes(retrieved)?, *c as usize),
        (Prediction::Value(v), Label::Value(y)) => reg_loss(attn, *v, &values(retrieved)?, *y),
        _ => Err(Error::InvalidArgument("prediction and label kinds differ".into())),
    }
}

/// Self-attention prediction.
pub fn enhanced_predict(params: &AdapterParams, query: &Query, retrieved: &[Retrieved]) -> Result<Prediction> {
    let attn = compute_attention(params, &query.embedding, retrieved)?;
    combine(&attn, &query.prediction, retrieved)
}

/// The uniform-weight ablation.
pub fn averaging_predict(base: &Prediction, retrieved: &[Retrieved]) -> Result<Prediction> {
    combine(&uniform_attention(retrieved.len()), base, retrieved)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ret(id: u64, key: Vec<f64>, label: Label) -> Retrieved {
        Retrieved {
            example_id: id,
            key,
            label,
            distance: 0.0,
        }
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let params = AdapterParams::init(3, 3, 3, 5).unwrap();
        let h = vec![0.3, -1.0, 2.0];
        let r: Vec<_> = (0..3).map(|i| ret(i, h.clone(), Label::Class(0))).collect();
        for a in compute_attention(&params, &h, &r).unwrap() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_shifts_attention() {
        let mut phi = Tensor::zeros(1, 3);
        phi.set(0, 0, 2f64.ln());
        let params = AdapterParams::from_tensors(Tensor::zeros(2, 2), Tensor::zeros(2, 2), phi).unwrap();
        let r = vec![ret(0, vec![1.0, 0.0], Label::Class(0)), ret(1, vec![0.0, 1.0], Label::Class(1))];
        let a = compute_attention(&params, &[1.0, 1.0], &r).unwrap();
        for (x, y) in a.iter().zip([0.5, 0.25, 0.25]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cls_loss_cases() {
        assert_eq!(cls_loss(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0], &[0, 0, 0], 1).unwrap(), 0.0);
        assert_eq!(cls_loss(&[0.5, 0.5], &[0.0, 1.0], &[1], 1).unwrap(), 0.0);
        let l = cls_loss(&[0.25; 4], &[0.2, 0.8], &[1, 0, 0], 1).unwrap();
        assert!((l - (-(0.45f64).ln())).abs() < 1e-12);
        let clamped = cls_loss(&[1.0, 0.0], &[1.0, 0.0], &[0], 1).unwrap();
        assert!((clamped - (-(LOG_CLAMP).ln())).abs() < 1e-9);
    }

    #[test]
    fn reg_cases() {
        assert_eq!(reg_loss(&[1.0, 0.0], 3.0, &[100.0], 3.0).unwrap(), 0.0);
        assert_eq!(reg_loss(&[0.5, 0.5], 2.0, &[4.0], 3.0).unwrap(), 0.0);
        assert_eq!(reg_loss(&[0.25, 0.75], 0.0, &[4.0], 1.0).unwrap(), 4.0);
        let u = uniform_attention(2);
        assert!((reg_predict(&u, 1.0, &[2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn prediction_cases() {
        let (l, c) = cls_predict(&[1.0, 0.0, 0.0, 0.0], &[0.1, 0.7, 0.2, 0.0], &[3, 3, 3]).unwrap();
        assert_eq!((l, c), (vec![0.1, 0.7, 0.2, 0.0], 1));
        let (_, c) = cls_predict(&[0.0, 1.0, 0.0, 0.0], &[0.9, 0.1, 0.0, 0.0], &[3, 0, 0]).unwrap();
        assert_eq!(c, 3);
        let avg = averaging_predict(
            &Prediction::Probs(vec![1.0, 0.0]),
            &(0..3).map(|i| ret(i, vec![0.0], Label::Class(1))).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(avg.probs().unwrap()[1], 0.75);
        assert_eq!(avg.argmax(), Some(1));
        let avg = averaging_predict(&Prediction::Value(2.0), &[ret(0, vec![0.0], Label::Value(4.0))]).unwrap();
        assert_eq!(avg, Prediction::Value(3.0));
    }

    #[test]
    fn out_of_range_class_is_an_error() {
        assert!(cls_predict(&[0.5, 0.5], &[0.5, 0.5], &[7]).is_err());
        assert!(cls_loss(&[0.5, 0.5], &[0.5, 0.5], &[0], 9).is_err());
    }

    #[test]
    fn zero_adapter_matches_averaging() {
        let params = AdapterParams::zeros(2, 2, 2).unwrap();
        let q = Query {
            id: 9,
            embedding: vec![0.4, -0.2],
            prediction: Prediction::Probs(vec![0.3, 0.7]),
            label: Label::Class(0),
        };
        let r = vec![ret(0, vec![1.0, 2.0], Label::Class(0)), ret(1, vec![3.0, 4.0], Label::Class(0))];
        assert_eq!(enhanced_predict(&params, &q, &r).unwrap(), averaging_predict(&q.prediction, &r).unwrap());
    }

    #[test]
    fn dropout_removes_self_or_nearest() {
        let idx = FlatIndex::build(
            (0..5).map(|i| vec![i as f64]).collect(),
            (0..5).map(|i| (i, Label::Class(0))).collect(),
        )
        .unwrap();
        let r = retrieve_with_dropout(&idx, &[2.0], 3, true, Some(2)).unwrap();
        let ids: Vec<u64> = r.iter().map(|x| x.example_id).collect();
        assert_eq!(ids, vec![1, 3, 0]);
        let r = retrieve_with_dropout(&idx, &[2.1], 2, true, Some(99)).unwrap();
        let ids: Vec<u64> = r.iter().map(|x| x.example_id).collect();
        assert_eq!(ids, vec![3, 1]);
        let r = retrieve_with_dropout(&idx, &[2.0], 2, false, None).unwrap();
        assert_eq!(r[0].example_id, 2);
        assert!(retrieve_with_dropout(&idx, &[2.0], 5, true, Some(2)).is_err());
        assert!(retrieve_with_dropout(&idx, &[2.0], 2, true, None).is_err());
    }
}
