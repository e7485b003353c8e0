//! Graphs, labelled examples and datasets.
//!
//! Every constructor validates, so any [`Graph`] or [`Dataset`] handed out
//! by this module satisfies its invariants.

mod jsonl;
pub mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use jsonl::{
    load_jsonl, load_jsonl_with_meta, meta_path, parse_jsonl, read_meta, write_jsonl, write_meta,
    DatasetMeta,
};

/// Undirected graph with per-node and optional per-edge features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_feat: Tensor,
    edge_feat: Option<Tensor>,
}

impl Graph {
    /// Validates and builds a graph. Each undirected edge appears once and
    /// self-loops are rejected.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_feat: Tensor,
        edge_feat: Option<Tensor>,
    ) -> Result<Self> {
        if node_feat.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "node_feat has {} rows for {num_nodes} nodes",
                node_feat.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge endpoint out of range: [{u},{v}] with {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("duplicate edge [{u},{v}]")));
            }
        }
        if let Some(ef) = &edge_feat {
            if ef.rows() != edges.len() {
                return Err(Error::InvalidGraph(format!(
                    "edge_feat has {} rows for {} edges",
                    ef.rows(),
                    edges.len()
                )));
            }
        }
        Ok(Self {
            num_nodes,
            edges,
            node_feat,
            edge_feat,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_feat(&self) -> &Tensor {
        &self.node_feat
    }

    pub fn edge_feat(&self) -> Option<&Tensor> {
        self.edge_feat.as_ref()
    }

    pub fn node_dim(&self) -> usize {
        self.node_feat.cols()
    }

    pub fn edge_dim(&self) -> Option<usize> {
        self.edge_feat.as_ref().map(Tensor::cols)
    }

    /// Symmetric neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        if perm.len() != n || perm.iter().collect::<HashSet<_>>().len() != n || perm.iter().any(|&p| p >= n) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let mut feat = Tensor::zeros(n, self.node_dim());
        for (old, &new) in perm.iter().enumerate() {
            feat.row_slice_mut(new)
                .copy_from_slice(self.node_feat.row_slice(old));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::new(n, edges, feat, self.edge_feat.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(u32),
    Value(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c as usize),
            Label::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Label::Value(v) => Some(*v),
            Label::Class(_) => None,
        }
    }
}

/// Prediction task. Binary is a two-class softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum Task {
    Binary,
    Multiclass(usize),
    Regression,
}

impl Task {
    /// Width of the task head.
    pub fn num_outputs(&self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass(c) => *c,
            Task::Regression => 1,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Task::Regression => None,
            _ => Some(self.num_outputs()),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }

    pub fn check_label(&self, label: &Label) -> Result<()> {
        match (self, label) {
            (Task::Regression, Label::Value(v)) if v.is_finite() => Ok(()),
            (Task::Regression, _) => Err(Error::InvalidDataset(format!(
                "regression task needs a finite real label, got {label:?}"
            ))),
            (_, Label::Class(c)) if (*c as usize) < self.num_outputs() => Ok(()),
            _ => Err(Error::InvalidDataset(format!(
                "label {label:?} invalid for {} classes",
                self.num_outputs()
            ))),
        }
    }
}

/// An input `X` (one or more graphs) with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u64,
    pub graphs: Vec<Graph>,
    pub label: Label,
}

impl Example {
    pub fn new(id: u64, graphs: Vec<Graph>, label: Label) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::InvalidDataset(format!("example {id} has no graphs")));
        };
        let (dv, de) = (first.node_dim(), first.edge_dim());
        if graphs.iter().any(|g| g.node_dim() != dv || g.edge_dim() != de) {
            return Err(Error::InvalidDataset(format!(
                "example {id}: graphs disagree on feature dimensions"
            )));
        }
        Ok(Self { id, graphs, label })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split tag `{other}`"))),
        }
    }
}

/// Train/valid/test examples sharing one task and one feature layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    task: Task,
    node_dim: usize,
    edge_dim: Option<usize>,
    graphs_per_example: usize,
    train: Vec<Example>,
    valid: Vec<Example>,
    test: Vec<Example>,
}

impl Dataset {
    /// Validates the split contents against each other and the task.
    ///
    /// All examples must carry the same number of graphs so the
    /// concatenated input embedding has a fixed width.
    pub fn new(task: Task, train: Vec<Example>, valid: Vec<Example>, test: Vec<Example>) -> Result<Self> {
        let Some(first) = train.first() else {
            return Err(Error::InvalidDataset("empty train split".into()));
        };
        if let Task::Multiclass(c) = task {
            if c < 2 {
                return Err(Error::InvalidDataset(format!("multiclass task with {c} classes")));
            }
        }
        let g0 = &first.graphs[0];
        let (node_dim, edge_dim, gpe) = (g0.node_dim(), g0.edge_dim(), first.graphs.len());
        let mut ids = HashSet::new();
        for ex in train.iter().chain(&valid).chain(&test) {
            task.check_label(&ex.label)
                .map_err(|e| Error::InvalidDataset(format!("example {}: {e}", ex.id)))?;
            if ex.graphs.len() != gpe {
                return Err(Error::InvalidDataset(format!(
                    "example {} has {} graphs, expected {gpe}",
                    ex.id,
                    ex.graphs.len()
                )));
            }
            let g = &ex.graphs[0];
            if g.node_dim() != node_dim {
                return Err(Error::InvalidDataset(format!(
                    "example {}: node feature dim {} != {node_dim}",
                    ex.id,
                    g.node_dim()
                )));
            }
            if g.edge_dim() != edge_dim {
                return Err(Error::InvalidDataset(format!(
                    "example {}: edge feature dim {:?} != {edge_dim:?}",
                    ex.id,
                    g.edge_dim()
                )));
            }
            if !ids.insert(ex.id) {
                return Err(Error::InvalidDataset(format!("duplicate example id {}", ex.id)));
            }
        }
        Ok(Self {
            task,
            node_dim,
            edge_dim,
            graphs_per_example: gpe,
            train,
            valid,
            test,
        })
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

    pub fn train(&self) -> &[Example] {
        &self.train
    }

    pub fn valid(&self) -> &[Example] {
        &self.valid
    }

    pub fn test(&self) -> &[Example] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Training examples per class; empty for regression.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let Some(c) = self.task.num_classes() else {
            return Vec::new();
        };
        let mut counts = vec![0; c];
        for ex in &self.train {
            if let Some(k) = ex.label.class() {
                counts[k] += 1;
            }
        }
        counts
    }

    /// All examples tagged with their split, in id order.
    pub fn iter_by_id(&self) -> Vec<(Split, &Example)> {
        let mut all: Vec<(Split, &Example)> = self
            .train
            .iter()
            .map(|e| (Split::Train, e))
            .chain(self.valid.iter().map(|e| (Split::Valid, e)))
            .chain(self.test.iter().map(|e| (Split::Test, e)))
            .collect();
        all.sort_by_key(|(_, e)| e.id);
        all
    }
}
