use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::GraphBatch;
use super::layers::{encode_input, gcn_layer, gin_layer, readout, BnArgs, GinEps, GinMlp};
use super::loss::Prediction;
use super::{GnnConfig, GnnKind};
use crate::autodiff::{BatchNormState, BatchStats, Fnv, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Example, Task};

#[derive(Clone, Debug, PartialEq)]
enum LayerKind {
    Gcn {
        weight: ParamId,
    },
    Gin {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        eps: Option<ParamId>,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    kind: LayerKind,
    edge_proj: Option<ParamId>,
    bn: Option<(ParamId, ParamId)>,
}

/// Values produced by one forward pass over a [`GraphBatch`].
#[derive(Debug)]
pub struct ForwardOut {
    /// Input embeddings `h_X`, one row per example.
    pub h_x: Var,
    /// Logits (classification) or values (regression), one row per example.
    pub output: Var,
    /// Batch statistics from training-mode batch norm, one per layer.
    pub bn_stats: Vec<BatchStats>,
}

/// Embedding and base prediction of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub embedding: Vec<f64>,
    pub prediction: Prediction,
}

/// A GCN or GIN encoder with readout and a linear task head.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    config: GnnConfig,
    task: Task,
    node_dim: usize,
    edge_dim: Option<usize>,
    graphs_per_example: usize,
    params: ParamStore,
    layers: Vec<LayerIds>,
    bn: Vec<BatchNormState>,
    head_w: ParamId,
    head_b: ParamId,
}

impl GnnModel {
    pub fn new(
        config: GnnConfig,
        task: Task,
        node_dim: usize,
        edge_dim: Option<usize>,
        graphs_per_example: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if node_dim == 0 || graphs_per_example == 0 {
            return Err(Error::InvalidArgument("node_dim and graphs_per_example must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edge_dim = if config.use_edge_feat { edge_dim } else { None };
        let hidden = config.hidden_dim;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        let mut bn = Vec::new();
        let mut in_dim = node_dim;
        for t in 0..config.layers {
            let kind = match config.kind {
                GnnKind::Gcn => LayerKind::Gcn {
                    weight: params.add_uniform(format!("layer{t}.weight"), in_dim, hidden, in_dim, &mut rng),
                },
                GnnKind::Gin => LayerKind::Gin {
                    w1: params.add_uniform(format!("layer{t}.mlp.w1"), in_dim, hidden, in_dim, &mut rng),
                    b1: params.add(format!("layer{t}.mlp.b1"), Tensor::zeros(1, hidden)),
                    w2: params.add_uniform(format!("layer{t}.mlp.w2"), hidden, hidden, hidden, &mut rng),
                    b2: params.add(format!("layer{t}.mlp.b2"), Tensor::zeros(1, hidden)),
                    eps: config
                        .learn_eps
                        .then(|| params.add(format!("layer{t}.eps"), Tensor::scalar(config.gin_eps))),
                },
            };
            let edge_proj = edge_dim
                .map(|de| params.add_uniform(format!("layer{t}.edge_proj"), de, in_dim, de, &mut rng));
            let bn_ids = config.batch_norm.then(|| {
                bn.push(BatchNormState::new(hidden));
                (
                    params.add(format!("layer{t}.bn.gamma"), Tensor::filled(1, hidden, 1.0)),
                    params.add(format!("layer{t}.bn.beta"), Tensor::zeros(1, hidden)),
                )
            });
            layers.push(LayerIds {
                kind,
                edge_proj,
                bn: bn_ids,
            });
            in_dim = hidden;
        }
        let emb = hidden * graphs_per_example;
        let out = task.num_outputs();
        let head_w = params.add_uniform("head.weight", emb, out, emb, &mut rng);
        let head_b = params.add("head.bias", Tensor::zeros(1, out));
        Ok(Self {
            config,
            task,
            node_dim,
            edge_dim,
            graphs_per_example,
            params,
            layers,
            bn,
            head_w,
            head_b,
        })
    }

    pub fn for_dataset(config: GnnConfig, dataset: &Dataset, seed: u64) -> Result<Self> {
        Self::new(
            config,
            dataset.task(),
            dataset.node_dim(),
            dataset.edge_dim(),
            dataset.graphs_per_example(),
            seed,
        )
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> Option<usize> {
        self.edge_dim
    }

    pub fn graphs_per_example(&self) -> usize {
        self.graphs_per_example
    }

    /// Width of `h_X`.
    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim * self.graphs_per_example
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState] {
        &mut self.bn
    }

    pub fn head_weight(&self) -> &Tensor {
        self.params.get(self.head_w)
    }

    pub fn head_bias(&self) -> &Tensor {
        self.params.get(self.head_b)
    }

    pub fn apply_bn_stats(&mut self, stats: &[BatchStats]) {
        for (state, s) in self.bn.iter_mut().zip(stats) {
            state.update(s);
        }
    }

    /// Checksum of every parameter and batch-norm running statistic.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        h.u64(self.params.checksum());
        for s in &self.bn {
            for v in s.running_mean.iter().chain(&s.running_var) {
                h.u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Forward pass with parameters bound to `vars` (store order).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &GraphBatch,
        training: bool,
    ) -> Result<ForwardOut> {
        if vars.len() != self.params.len() {
            return Err(Error::shape(
                "gnn_forward",
                format!("{} vars for {} params", vars.len(), self.params.len()),
            ));
        }
        if batch.node_feat.cols() != self.node_dim {
            return Err(Error::shape(
                "gnn_forward",
                format!("node features {} vs model {}", batch.node_feat.cols(), self.node_dim),
            ));
        }
        let v = |id: ParamId| vars[id.index()];
        let mut h = tape.constant(batch.node_feat.clone());
        let mut bn_stats = Vec::new();
        let last = self.layers.len() - 1;
        for (t, layer) in self.layers.iter().enumerate() {
            let bn = layer.bn.map(|(g, b)| BnArgs {
                gamma: v(g),
                beta: v(b),
                state: &self.bn[t],
                training,
            });
            let edge_proj = layer.edge_proj.map(v);
            let (out, stats) = match &layer.kind {
                LayerKind::Gcn { weight } => gcn_layer(tape, h, batch, v(*weight), edge_proj, bn)?,
                LayerKind::Gin { w1, b1, w2, b2, eps } => {
                    let mlp = GinMlp {
                        w1: v(*w1),
                        b1: v(*b1),
                        w2: v(*w2),
                        b2: v(*b2),
                    };
                    let eps = match eps {
                        Some(e) => GinEps::Learned(v(*e)),
                        None => GinEps::Fixed(self.config.gin_eps),
                    };
                    let (o, s) = gin_layer(tape, h, batch, mlp, eps, edge_proj, bn)?;
                    (if t < last { tape.relu(o) } else { o }, s)
                }
            };
            bn_stats.extend(stats);
            h = out;
        }
        let graph_vecs = readout(tape, h, &batch.node_graph, batch.num_graphs, self.config.readout)?;
        let h_x = encode_input(tape, graph_vecs, batch.num_examples, batch.graphs_per_example)?;
        let out = tape.matmul(h_x, v(self.head_w))?;
        let output = tape.add_row(out, v(self.head_b))?;
        Ok(ForwardOut {
            h_x,
            output,
            bn_stats,
        })
    }

    /// Task head on a single embedding.
    pub fn head(&self, h_x: &[f64]) -> Result<Prediction> {
        task_head(h_x, self.head_weight(), self.head_bias(), self.task)
    }

    /// Eval-mode embeddings and predictions, in input order.
    pub fn infer(&self, examples: &[&Example], batch_size: usize) -> Result<Vec<Inference>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let batch = GraphBatch::new(chunk)?;
            let mut tape = Tape::new();
            let vars = self.params.bind_frozen(&mut tape);
            let fwd = self.forward(&mut tape, &vars, &batch, false)?;
            let (hx, o) = (tape.value(fwd.h_x), tape.value(fwd.output));
            for r in 0..chunk.len() {
                out.push(Inference {
                    embedding: hx.row_slice(r).to_vec(),
                    prediction: Prediction::from_output(o.row_slice(r), self.task),
                });
            }
        }
        Ok(out)
    }
}

/// `Φ(h_X)`: softmax over `h_X W + b` for classification, the raw value
/// for regression.
pub fn task_head(h_x: &[f64], weight: &Tensor, bias: &Tensor, task: Task) -> Result<Prediction> {
    if weight.rows() != h_x.len() || weight.cols() != bias.cols() || bias.rows() != 1 {
        return Err(Error::shape(
            "task_head",
            format!("h_X {} vs weight {:?}, bias {:?}", h_x.len(), weight.shape(), bias.shape()),
        ));
    }
    if weight.cols() != task.num_outputs() {
        return Err(Error::shape(
            "task_head",
            format!("{} outputs for task {task:?}", weight.cols()),
        ));
    }
    let out = Tensor::row(h_x).matmul(weight)?;
    let logits: Vec<f64> = out.data().iter().zip(bias.data()).map(|(a, b)| a + b).collect();
    Ok(Prediction::from_output(&logits, task))
}
