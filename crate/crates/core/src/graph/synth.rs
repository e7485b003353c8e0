//! Deterministic synthetic datasets.
//!
//! Both generators are pure functions of their arguments: every random
//! draw comes from a ChaCha stream keyed by the seed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Example, Graph, Label, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Node types in the motif generator; node features are one-hot types.
pub const MOTIF_NODE_TYPES: usize = 4;

/// Parameters of the long-tailed motif classification generator.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifSpec {
    pub num_classes: usize,
    pub head_count: usize,
    pub tail_count: usize,
    pub tail_fraction: f64,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    /// Inclusive range of motif sizes.
    pub motif_nodes: (usize, usize),
    /// Inclusive range of noise nodes attached to each instance.
    pub noise_nodes: (usize, usize),
    pub seed: u64,
}

impl MotifSpec {
    pub fn new(
        num_classes: usize,
        head_count: usize,
        tail_count: usize,
        tail_fraction: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_classes,
            head_count,
            tail_count,
            tail_fraction,
            valid_per_class: 10,
            test_per_class: 30,
            motif_nodes: (5, 8),
            noise_nodes: (3, 8),
            seed,
        }
    }

    /// Number of tail classes; they are the highest class indices.
    pub fn num_tail_classes(&self) -> usize {
        ((self.tail_fraction * self.num_classes as f64).round() as usize).min(self.num_classes)
    }

    pub fn is_tail(&self, class: usize) -> bool {
        class >= self.num_classes - self.num_tail_classes()
    }

    pub fn train_count(&self, class: usize) -> usize {
        if self.is_tail(class) {
            self.tail_count
        } else {
            self.head_count
        }
    }
}

/// Multiclass dataset where class `c` is identified by a planted motif
/// surrounded by random noise nodes.
pub fn gen_longtail_motif(
    num_classes: usize,
    head_count: usize,
    tail_count: usize,
    tail_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_motif(&MotifSpec::new(num_classes, head_count, tail_count, tail_fraction, seed))
}

struct Motif {
    types: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

/// Refined colour multiset after three Weisfeiler-Lehman rounds; used to
/// keep the motif library free of 1-WL-equivalent pairs.
fn wl_signature(types: &[usize], edges: &[(usize, usize)]) -> Vec<u64> {
    let n = types.len();
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut colours: Vec<u64> = types.iter().map(|&t| t as u64).collect();
    for _ in 0..3 {
        colours = (0..n)
            .map(|v| {
                let mut ns: Vec<u64> = adj[v].iter().map(|&u| colours[u]).collect();
                ns.sort_unstable();
                // FNV-1a over (own colour, sorted neighbour colours)
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for c in std::iter::once(colours[v]).chain(ns) {
                    h ^= c;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
                h
            })
            .collect();
    }
    colours.sort_unstable();
    colours
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push((u, v));
        seen.insert((u, v));
    }
    let mut attempts = 0;
    while edges.len() < n - 1 + extra && attempts < 100 {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (u, v) = (a.min(b), a.max(b));
        if u != v && seen.insert((u, v)) {
            edges.push((u, v));
        }
    }
    edges
}

fn motif_library(spec: &MotifSpec) -> Vec<Motif> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d6f_7469_665f_6c69);
    let mut seen = HashSet::new();
    let mut motifs = Vec::with_capacity(spec.num_classes);
    while motifs.len() < spec.num_classes {
        let n = rng.gen_range(spec.motif_nodes.0..=spec.motif_nodes.1);
        let extra = rng.gen_range(1..=3);
        let edges = random_connected(&mut rng, n, extra);
        let types: Vec<usize> = (0..n).map(|_| rng.gen_range(0..MOTIF_NODE_TYPES)).collect();
        if seen.insert(wl_signature(&types, &edges)) {
            motifs.push(Motif { types, edges });
        }
    }
    motifs
}

fn one_hot_rows(types: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(types.len(), width);
    for (r, &ty) in types.iter().enumerate() {
        t.set(r, ty, 1.0);
    }
    t
}

fn motif_instance(motif: &Motif, spec: &MotifSpec, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut types = motif.types.clone();
    let mut edges = motif.edges.clone();
    let noise = rng.gen_range(spec.noise_nodes.0..=spec.noise_nodes.1);
    for _ in 0..noise {
        let v = types.len();
        let u = rng.gen_range(0..v);
        edges.push((u, v));
        types.push(rng.gen_range(0..MOTIF_NODE_TYPES));
    }
    let n = types.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let g = Graph::new(n, edges, one_hot_rows(&types, MOTIF_NODE_TYPES), None)?;
    g.permuted(&perm)
}

pub fn generate_motif(spec: &MotifSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
    }
    if spec.tail_count < 1 || spec.head_count <= spec.tail_count {
        return Err(Error::InvalidArgument(
            "need head_count > tail_count >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.tail_fraction) {
        return Err(Error::InvalidArgument("tail_fraction must lie in [0, 1]".into()));
    }
    if spec.valid_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::InvalidArgument("valid and test splits would be empty".into()));
    }
    if spec.motif_nodes.0 < 2 || spec.motif_nodes.0 > spec.motif_nodes.1 || spec.noise_nodes.0 > spec.noise_nodes.1 {
        return Err(Error::InvalidArgument("bad node-count ranges".into()));
    }
    let motifs = motif_library(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut next_id = 0u64;
    let mut make = |class: usize, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Example>> {
        (0..count)
            .map(|_| {
                let g = motif_instance(&motifs[class], spec, rng)?;
                let ex = Example::new(next_id, vec![g], Label::Class(class as u32))?;
                next_id += 1;
                Ok(ex)
            })
            .collect()
    };
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.num_classes {
        train.extend(make(c, spec.train_count(c), &mut rng)?);
    }
    for c in 0..spec.num_classes {
        valid.extend(make(c, spec.valid_per_class, &mut rng)?);
    }
    for c in 0..spec.num_classes {
        test.extend(make(c, spec.test_per_class, &mut rng)?);
    }
    Dataset::new(Task::Multiclass(spec.num_classes), train, valid, test)
}

/// Value ranges used to shape the regression target distribution.
pub const REGRESSION_BUCKET_EDGES: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

/// Target of the regression generator: `T²/2 + T + n/2` for `T` triangles
/// and `n` nodes. The square keeps high values out of reach of a linear
/// readout of local features.
pub fn regression_target(graph: &Graph) -> f64 {
    let adj = graph.adjacency();
    let mut triangles = 0usize;
    for &(u, v) in graph.edges() {
        for &w in &adj[u] {
            if w > u.max(v) && adj[v].contains(&w) {
                triangles += 1;
            }
        }
    }
    let t = triangles as f64;
    0.5 * t * t + t + 0.5 * graph.num_nodes() as f64
}

fn regression_graph(rng: &mut ChaCha8Rng) -> Result<Graph> {
    let base = rng.gen_range(6..=12);
    // Geometric number of pendant triangles.
    let mut triangles = 0;
    while triangles < 15 && rng.gen_bool(0.65) {
        triangles += 1;
    }
    let mut edges: Vec<(usize, usize)> = (1..base).map(|v| (rng.gen_range(0..v), v)).collect();
    let mut n = base;
    for _ in 0..triangles {
        let anchor = rng.gen_range(0..base);
        edges.extend([(anchor, n), (anchor, n + 1), (n, n + 1)]);
        n += 2;
    }
    let mut degree = vec![0usize; n];
    for &(u, v) in &edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut feat = Tensor::zeros(n, 2);
    for (v, d) in degree.iter().enumerate() {
        feat.set(v, 0, 1.0);
        feat.set(v, 1, *d as f64 / 4.0);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Graph::new(n, edges, feat, None)?.permuted(&perm)
}

/// Regression dataset with a rare high-value tail. Splits are 70/10/20 in
/// generation order.
pub fn gen_longtail_regression(seed: u64, size: usize) -> Result<Dataset> {
    if size < 100 {
        return Err(Error::InvalidArgument("size must be >= 100".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = size * 7 / 10;
    let n_valid = size / 10;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for id in 0..size {
        let g = regression_graph(&mut rng)?;
        let target = regression_target(&g);
        let ex = Example::new(id as u64, vec![g], Label::Value(target))?;
        if id < n_train {
            train.push(ex);
        } else if id < n_train + n_valid {
            valid.push(ex);
        } else {
            test.push(ex);
        }
    }
    Dataset::new(Task::Regression, train, valid, test)
}
