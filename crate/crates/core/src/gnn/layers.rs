//! Message-passing layers and readout, written against the tape.

use serde::{Deserialize, Serialize};

use super::batch::GraphBatch;
use crate::autodiff::{batch_norm, BatchNormState, BatchStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Batch-norm inputs for one layer.
#[derive(Clone, Copy, Debug)]
pub struct BnArgs<'a> {
    pub gamma: Var,
    pub beta: Var,
    pub state: &'a BatchNormState,
    pub training: bool,
}

/// Weights of the two-layer GIN update MLP: `relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct GinMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug)]
pub enum GinEps {
    Fixed(f64),
    Learned(Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
}

fn maybe_bn(tape: &mut Tape, x: Var, bn: Option<BnArgs<'_>>) -> Result<(Var, Option<BatchStats>)> {
    match bn {
        Some(a) => batch_norm(tape, x, a.gamma, a.beta, a.state, a.training),
        None => Ok((x, None)),
    }
}

/// Messages along directed edges `src → dst`, with the projected edge
/// features added when present. `extra_rows` zero edge-feature rows are
/// appended for self-loops placed after the real edges.
fn edge_messages(
    tape: &mut Tape,
    h: Var,
    src: &[usize],
    batch: &GraphBatch,
    edge_proj: Option<Var>,
    extra_rows: usize,
) -> Result<Var> {
    let msgs = tape.gather_rows(h, src)?;
    let (Some(proj), Some(ef)) = (edge_proj, batch.edge_feat.as_ref()) else {
        return Ok(msgs);
    };
    let mut data = ef.data().to_vec();
    data.resize(data.len() + extra_rows * ef.cols(), 0.0);
    let ef = tape.constant(Tensor::new(ef.rows() + extra_rows, ef.cols(), data)?);
    let projected = tape.matmul(ef, proj)?;
    tape.add(msgs, projected)
}

/// `relu(BN(D̃^{-1/2} Ã D̃^{-1/2} h W))` with `Ã = A + I`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    batch: &GraphBatch,
    weight: Var,
    edge_proj: Option<Var>,
    bn: Option<BnArgs<'_>>,
) -> Result<(Var, Option<BatchStats>)> {
    let n = batch.num_nodes();
    check_rows(tape, h, n)?;
    let (src, dst, w) = batch.gcn_propagation();
    let msgs = edge_messages(tape, h, &src, batch, edge_proj, n)?;
    let msgs = tape.scale_rows(msgs, &w)?;
    let agg = tape.scatter_sum(msgs, &dst, n)?;
    let z = tape.matmul(agg, weight)?;
    let (z, stats) = maybe_bn(tape, z, bn)?;
    Ok((tape.relu(z), stats))
}

/// `BN(MLP((1 + ε) h_v + Σ_{u ∈ N(v)} h_u))`.
pub fn gin_layer(
    tape: &mut Tape,
    h: Var,
    batch: &GraphBatch,
    mlp: GinMlp,
    eps: GinEps,
    edge_proj: Option<Var>,
    bn: Option<BnArgs<'_>>,
) -> Result<(Var, Option<BatchStats>)> {
    let n = batch.num_nodes();
    check_rows(tape, h, n)?;
    let msgs = edge_messages(tape, h, &batch.src, batch, edge_proj, 0)?;
    let agg = tape.scatter_sum(msgs, &batch.dst, n)?;
    let own = match eps {
        GinEps::Fixed(e) => tape.scale(h, 1.0 + e),
        GinEps::Learned(e) => {
            let one = tape.constant(Tensor::scalar(1.0));
            let factor = tape.add(one, e)?;
            tape.mul_row(h, factor)?
        }
    };
    let combined = tape.add(own, agg)?;
    let hidden = tape.matmul(combined, mlp.w1)?;
    let hidden = tape.add_row(hidden, mlp.b1)?;
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, mlp.w2)?;
    let out = tape.add_row(out, mlp.b2)?;
    maybe_bn(tape, out, bn)
}

fn check_rows(tape: &Tape, h: Var, n: usize) -> Result<()> {
    if tape.value(h).rows() != n {
        return Err(Error::shape(
            "message_passing",
            format!("{} feature rows for {n} nodes", tape.value(h).rows()),
        ));
    }
    Ok(())
}

/// Pools node rows into one row per graph.
pub fn readout(
    tape: &mut Tape,
    h: Var,
    node_graph: &[usize],
    num_graphs: usize,
    mode: Readout,
) -> Result<Var> {
    if tape.value(h).rows() == 0 {
        return Err(Error::InvalidGraph("readout over an empty graph".into()));
    }
    match mode {
        Readout::Sum => tape.scatter_sum(h, node_graph, num_graphs),
        Readout::Mean => tape.segment_mean(h, node_graph, num_graphs),
    }
}

/// Concatenates per-graph vectors of each example in sequence order.
/// `graph_vecs` has one row per graph, ordered example-major.
pub fn encode_input(
    tape: &mut Tape,
    graph_vecs: Var,
    num_examples: usize,
    graphs_per_example: usize,
) -> Result<Var> {
    if graphs_per_example == 1 {
        return Ok(graph_vecs);
    }
    let slots = (0..graphs_per_example)
        .map(|j| {
            let idx: Vec<usize> = (0..num_examples).map(|b| b * graphs_per_example + j).collect();
            tape.gather_rows(graph_vecs, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&slots)
}
