//! Finite-difference checks of every differentiable component on small
//! random instances: the GCN and GIN layers, readout with the task head and
//! phase-1 loss, and both adapter losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterBatch, Query, Retrieved};
use crate::autodiff::{grad_check, BatchNormState, GradCheckReport, Tape, Tensor, Var};
use crate::error::Result;
use crate::gnn::{
    batch_loss, encode_input, gcn_layer, gin_layer, readout, BnArgs, GinEps, GinMlp, GraphBatch, Prediction,
    Readout,
};
use crate::graph::{Example, Graph, Label, Task};

/// Maximum relative error accepted per instance.
pub const GRAD_TOL: f64 = 1e-5;

pub const COMPONENTS: [&str; 5] = ["gcn_layer", "gin_layer", "readout_head_loss", "cls_loss", "reg_loss"];

/// Outcome of one component over all its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentResult {
    pub name: &'static str,
    pub instances: usize,
    pub failed: usize,
    pub max_rel_err: f64,
}

/// Runs `instances` random checks of every component.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<ComponentResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    COMPONENTS
        .iter()
        .enumerate()
        .map(|(c, &name)| {
            let reports = (0..instances)
                .map(|i| match c {
                    0 => gcn_case(&mut rng),
                    1 => gin_case(&mut rng),
                    2 => head_case(&mut rng, i),
                    3 => adapter_case(&mut rng, Some(3)),
                    _ => adapter_case(&mut rng, None),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ComponentResult {
                name,
                instances,
                failed: reports.iter().filter(|r| !r.passed).count(),
                max_rel_err: reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max),
            })
        })
        .collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(rows, cols, data).expect("length matches shape")
}

/// Connected random graph: a random tree plus a few chords.
pub fn random_graph(rng: &mut ChaCha8Rng, node_dim: usize, edge_dim: Option<usize>) -> Result<Graph> {
    let n = rng.gen_range(3..=7);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for _ in 0..rng.gen_range(0..3) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.iter().any(|&e| e == (u, v) || e == (v, u)) {
            edges.push((u, v));
        }
    }
    let feat = rand_tensor(rng, n, node_dim, 1.0);
    let ef = edge_dim.map(|d| rand_tensor(rng, edges.len(), d, 1.0));
    Graph::new(n, edges, feat, ef)
}

pub fn random_examples(
    rng: &mut ChaCha8Rng,
    count: usize,
    graphs_per_example: usize,
    node_dim: usize,
    edge_dim: Option<usize>,
    task: Task,
) -> Result<Vec<Example>> {
    (0..count)
        .map(|id| {
            let graphs = (0..graphs_per_example)
                .map(|_| random_graph(rng, node_dim, edge_dim))
                .collect::<Result<Vec<_>>>()?;
            let label = match task.num_classes() {
                None => Label::Value(rng.gen_range(-2.0..2.0)),
                Some(c) => Label::Class(rng.gen_range(0..c) as u32),
            };
            Example::new(id as u64, graphs, label)
        })
        .collect()
}

fn random_batch(rng: &mut ChaCha8Rng, node_dim: usize, edge_dim: Option<usize>) -> Result<GraphBatch> {
    let ex = random_examples(rng, 3, 1, node_dim, edge_dim, Task::Regression)?;
    GraphBatch::new(&ex.iter().collect::<Vec<_>>())
}

/// Contracts `x` with fixed random weights so every output entry reaches
/// the scalar through a distinct coefficient.
fn contract(tape: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.elementwise_mul(x, w)?;
    Ok(tape.sum(p))
}

/// GCN layer with edge features and training-mode batch norm. Inputs:
/// node features, weight, edge projection, gamma, beta.
pub fn gcn_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (din, dout, de) = (3, 4, 2);
    let batch = random_batch(rng, din, Some(de))?;
    let n = batch.num_nodes();
    let points = vec![
        rand_tensor(rng, n, din, 1.0),
        rand_tensor(rng, din, dout, 1.0),
        rand_tensor(rng, de, din, 1.0),
        rand_tensor(rng, 1, dout, 1.0),
        rand_tensor(rng, 1, dout, 1.0),
    ];
    let weights = rand_tensor(rng, n, dout, 1.0);
    let state = BatchNormState::new(dout);
    grad_check(
        |tape, v| {
            let bn = BnArgs {
                gamma: v[3],
                beta: v[4],
                state: &state,
                training: true,
            };
            let (out, _) = gcn_layer(tape, v[0], &batch, v[1], Some(v[2]), Some(bn))?;
            contract(tape, out, &weights)
        },
        &points,
        GRAD_TOL,
    )
}

/// GIN layer with learned epsilon, edge features and batch norm.
pub fn gin_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (din, hid, dout, de) = (3, 5, 4, 2);
    let batch = random_batch(rng, din, Some(de))?;
    let n = batch.num_nodes();
    let points = vec![
        rand_tensor(rng, n, din, 1.0),
        rand_tensor(rng, din, hid, 1.0),
        rand_tensor(rng, 1, hid, 0.5),
        rand_tensor(rng, hid, dout, 1.0),
        rand_tensor(rng, 1, dout, 0.5),
        rand_tensor(rng, 1, 1, 0.3),
        rand_tensor(rng, de, din, 1.0),
        rand_tensor(rng, 1, dout, 1.0),
        rand_tensor(rng, 1, dout, 1.0),
    ];
    let weights = rand_tensor(rng, n, dout, 1.0);
    let state = BatchNormState::new(dout);
    grad_check(
        |tape, v| {
            let mlp = GinMlp {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            let bn = BnArgs {
                gamma: v[7],
                beta: v[8],
                state: &state,
                training: true,
            };
            let (out, _) = gin_layer(tape, v[0], &batch, mlp, GinEps::Learned(v[5]), Some(v[6]), Some(bn))?;
            contract(tape, out, &weights)
        },
        &points,
        GRAD_TOL,
    )
}

/// Readout, multi-graph concatenation, task head and the phase-1 loss.
/// `case` cycles through the three tasks and both readouts.
pub fn head_case(rng: &mut ChaCha8Rng, case: usize) -> Result<GradCheckReport> {
    let task = [Task::Multiclass(3), Task::Binary, Task::Regression][case % 3];
    let mode = if case.is_multiple_of(2) { Readout::Sum } else { Readout::Mean };
    let (d, gpe) = (3, 2);
    let examples = random_examples(rng, 3, gpe, 2, None, task)?;
    let batch = GraphBatch::new(&examples.iter().collect::<Vec<_>>())?;
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    let points = vec![
        rand_tensor(rng, batch.num_nodes(), d, 1.0),
        rand_tensor(rng, d * gpe, task.num_outputs(), 1.0),
        rand_tensor(rng, 1, task.num_outputs(), 1.0),
    ];
    grad_check(
        |tape, v| {
            let g = readout(tape, v[0], &batch.node_graph, batch.num_graphs, mode)?;
            let h_x = encode_input(tape, g, batch.num_examples, batch.graphs_per_example)?;
            let out = tape.matmul(h_x, v[1])?;
            let out = tape.add_row(out, v[2])?;
            batch_loss(tape, out, &labels, task)
        },
        &points,
        GRAD_TOL,
    )
}

/// Random queries with retrieval sets; `classes` picks classification
/// with that many classes, `None` regression.
pub fn adapter_inputs(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    k: usize,
    classes: Option<usize>,
) -> Vec<(Query, Vec<Retrieved>)> {
    let label = |rng: &mut ChaCha8Rng| match classes {
        Some(c) => Label::Class(rng.gen_range(0..c) as u32),
        None => Label::Value(rng.gen_range(-3.0..3.0)),
    };
    (0..n)
        .map(|i| {
            let embedding: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let prediction = match classes {
                Some(c) => {
                    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let total: f64 = raw.iter().sum();
                    Prediction::Probs(raw.iter().map(|x| x / total).collect())
                }
                None => Prediction::Value(rng.gen_range(-3.0..3.0)),
            };
            let own = label(rng);
            let set = (0..k)
                .map(|j| Retrieved {
                    example_id: (1000 + i * k + j) as u64,
                    key: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    label: label(rng),
                    distance: 0.0,
                })
                .collect();
            let query = Query {
                id: i as u64,
                embedding,
                prediction,
                label: own,
            };
            (query, set)
        })
        .collect()
}

/// Adapter loss with respect to `W1`, `W2` and `φ`.
pub fn adapter_case(rng: &mut ChaCha8Rng, classes: Option<usize>) -> Result<GradCheckReport> {
    let (d, dp, k) = (4, 3, 3);
    let inputs = adapter_inputs(rng, 4, d, k, classes);
    let items: Vec<(&Query, &[Retrieved])> = inputs.iter().map(|(q, s)| (q, s.as_slice())).collect();
    let batch = AdapterBatch::new(&items)?;
    let points = vec![
        rand_tensor(rng, dp, d, 1.0),
        rand_tensor(rng, dp, d, 1.0),
        rand_tensor(rng, 1, k + 1, 0.5),
    ];
    grad_check(|tape, v| batch.loss(tape, v[0], v[1], v[2]), &points, GRAD_TOL)
}
