use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Example;

/// Block-diagonal union of every graph in a list of examples.
///
/// Graph `j` of example `b` becomes graph `b * graphs_per_example + j`.
/// Edges are stored in both directions.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_feat: Tensor,
    /// Directed edge sources and targets (each undirected edge twice).
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// One row per directed edge, when the graphs carry edge features.
    pub edge_feat: Option<Tensor>,
    pub node_graph: Vec<usize>,
    pub num_graphs: usize,
    pub num_examples: usize,
    pub graphs_per_example: usize,
    degree: Vec<usize>,
}

impl GraphBatch {
    pub fn new(examples: &[&Example]) -> Result<Self> {
        let Some(first) = examples.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let gpe = first.graphs.len();
        let dv = first.graphs[0].node_dim();
        let de = first.graphs[0].edge_dim();
        let mut feat = Vec::new();
        let mut edge_rows: Vec<f64> = Vec::new();
        let (mut src, mut dst, mut node_graph) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for (b, ex) in examples.iter().enumerate() {
            if ex.graphs.len() != gpe {
                return Err(Error::InvalidArgument(format!(
                    "example {} has {} graphs, batch expects {gpe}",
                    ex.id,
                    ex.graphs.len()
                )));
            }
            for (j, g) in ex.graphs.iter().enumerate() {
                if g.num_nodes() == 0 {
                    return Err(Error::InvalidGraph(format!(
                        "example {} graph {j} is empty",
                        ex.id
                    )));
                }
                if g.node_dim() != dv || g.edge_dim() != de {
                    return Err(Error::InvalidArgument(format!(
                        "example {} has mismatched feature dimensions",
                        ex.id
                    )));
                }
                feat.extend_from_slice(g.node_feat().data());
                node_graph.extend(std::iter::repeat_n(b * gpe + j, g.num_nodes()));
                for (e, &(u, v)) in g.edges().iter().enumerate() {
                    src.extend([offset + u, offset + v]);
                    dst.extend([offset + v, offset + u]);
                    if let Some(ef) = g.edge_feat() {
                        edge_rows.extend_from_slice(ef.row_slice(e));
                        edge_rows.extend_from_slice(ef.row_slice(e));
                    }
                }
                offset += g.num_nodes();
            }
        }
        let mut degree = vec![0; offset];
        for &d in &dst {
            degree[d] += 1;
        }
        let edge_feat = match de {
            Some(d) => Some(Tensor::new(src.len(), d, edge_rows)?),
            None => None,
        };
        Ok(Self {
            node_feat: Tensor::new(offset, dv, feat)?,
            src,
            dst,
            edge_feat,
            node_graph,
            num_graphs: examples.len() * gpe,
            num_examples: examples.len(),
            graphs_per_example: gpe,
            degree,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_feat.rows()
    }

    /// Neighbour count of each node, without self-loops.
    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    /// Edge list with self-loops and symmetric normalisation weights
    /// `1 / sqrt(d̃_u d̃_v)`, where `d̃ = degree + 1`.
    pub fn gcn_propagation(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let n = self.num_nodes();
        let dt: Vec<f64> = self.degree.iter().map(|&d| d as f64 + 1.0).collect();
        let mut src = self.src.clone();
        let mut dst = self.dst.clone();
        src.extend(0..n);
        dst.extend(0..n);
        let w = src
            .iter()
            .zip(&dst)
            .map(|(&u, &v)| 1.0 / (dt[u] * dt[v]).sqrt())
            .collect();
        (src, dst, w)
    }
}
