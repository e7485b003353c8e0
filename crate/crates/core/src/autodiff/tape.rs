//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Values are pushed onto a [`Tape`] in execution order, so the tape is
//! topologically sorted by construction. [`Tape::backward`] walks it in
//! reverse and accumulates adjoints into every node that requires a
//! gradient. Nodes whose inputs are all constants are stored as constants
//! and never visited by the backward pass.

use std::fmt;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom`]: given the output adjoint, the
/// input values and the output value, return one adjoint per input.
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    ClampMin(Var, f64),
    SoftmaxRow(Var),
    LogSoftmaxRow(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    PickCols(Var, Vec<usize>),
    BatchNorm {
        gamma: Var,
        beta: Var,
        x: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Custom(Vec<Var>, CustomBackward),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::ClampMin(a, _)
            | Op::SoftmaxRow(a)
            | Op::LogSoftmaxRow(a)
            | Op::GatherRows(a, _)
            | Op::ScatterSum(a, _)
            | Op::SegmentMean(a, _, _)
            | Op::ScaleRows(a, _)
            | Op::RowSum(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::PickCols(a, _) => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) | Op::Custom(v, _) => v.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitive ops.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.nodes.len()).finish()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// `∂loss/∂var`; zeros when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let [r, c] = self.shapes.get(var.0).copied().unwrap_or([1, 1]);
                Tensor::zeros(r, c)
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} by transpose of {:?}", x.shape(), y.shape()),
            ));
        }
        let out = matmul_nt(x, y);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|g, ins, _| vec![matmul_raw(g, ins[1]), matmul_tn(g, ins[0])]),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("elementwise_mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x + b` with `b` a `1 × cols` row broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, v) in out.row_slice_mut(r).iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    /// `x ⊙ r` with `r` either a `1 × cols` row or a `1 × 1` scalar.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        let scalar = rv.shape() == [1, 1];
        if !scalar && (rv.rows() != 1 || rv.cols() != xv.cols()) {
            return Err(Error::shape(
                "mul_row",
                format!("{:?} * row {:?}", xv.shape(), rv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in 0..out.rows() {
            for (c, o) in out.row_slice_mut(row).iter_mut().enumerate() {
                *o *= if scalar { rv.data()[0] } else { rv.data()[c] };
            }
        }
        Ok(self.push(out, Op::MulRow(x, r)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push(out, Op::Log(x))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor));
        self.push(out, Op::ClampMin(x, floor))
    }

    pub fn softmax_row(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRow(x))
    }

    pub fn log_softmax_row(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x));
        self.push(out, Op::LogSoftmaxRow(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{} columns vs {cols}", v.cols()),
                ));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{} rows vs {rows}", v.rows()),
                ));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let v = self.value(*p);
                out.row_slice_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row_slice(r));
                offset += v.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(idx.len(), xv.cols());
        for (i, &src) in idx.iter().enumerate() {
            if src >= xv.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    detail: format!("row {src} of {}", xv.rows()),
                });
            }
            out.row_slice_mut(i).copy_from_slice(xv.row_slice(src));
        }
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// Sums message row `i` into output row `targets[i]`.
    pub fn scatter_sum(&mut self, messages: Var, targets: &[usize], num_rows: usize) -> Result<Var> {
        let mv = self.value(messages);
        if targets.len() != mv.rows() {
            return Err(Error::shape(
                "scatter_sum",
                format!("{} targets for {} messages", targets.len(), mv.rows()),
            ));
        }
        let mut out = Tensor::zeros(num_rows, mv.cols());
        for (i, &t) in targets.iter().enumerate() {
            if t >= num_rows {
                return Err(Error::IndexOutOfRange {
                    op: "scatter_sum",
                    detail: format!("target {t} >= {num_rows}"),
                });
            }
            for (o, v) in out.row_slice_mut(t).iter_mut().zip(mv.row_slice(i)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterSum(messages, targets.to_vec())))
    }

    /// Mean of the rows sharing a segment id. Every segment must be nonempty.
    pub fn segment_mean(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if segments.len() != xv.rows() {
            return Err(Error::shape(
                "segment_mean",
                format!("{} segment ids for {} rows", segments.len(), xv.rows()),
            ));
        }
        let mut counts = vec![0.0; num_segments];
        let mut out = Tensor::zeros(num_segments, xv.cols());
        for (i, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::IndexOutOfRange {
                    op: "segment_mean",
                    detail: format!("segment {s} >= {num_segments}"),
                });
            }
            counts[s] += 1.0;
            for (o, v) in out.row_slice_mut(s).iter_mut().zip(xv.row_slice(i)) {
                *o += v;
            }
        }
        for (s, &n) in counts.iter().enumerate() {
            if n == 0.0 {
                return Err(Error::shape("segment_mean", format!("segment {s} is empty")));
            }
            for o in out.row_slice_mut(s) {
                *o /= n;
            }
        }
        Ok(self.push(out, Op::SegmentMean(x, segments.to_vec(), counts)))
    }

    /// Multiplies row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if weights.len() != xv.rows() {
            return Err(Error::shape(
                "scale_rows",
                format!("{} weights for {} rows", weights.len(), xv.rows()),
            ));
        }
        let mut out = xv.clone();
        for (r, w) in weights.iter().enumerate() {
            for o in out.row_slice_mut(r) {
                *o *= w;
            }
        }
        Ok(self.push(out, Op::ScaleRows(x, weights.to_vec())))
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row_slice(r).iter().sum()).collect();
        let out = Tensor::new(xv.rows(), 1, data).expect("row count");
        self.push(out, Op::RowSum(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(out, Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = Tensor::new(rows, cols, self.value(x).data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} to {rows}x{cols}", self.value(x).shape())))?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `out[i] = x[i, cols[i]]` as an `n × 1` column.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if cols.len() != xv.rows() {
            return Err(Error::shape(
                "pick_cols",
                format!("{} picks for {} rows", cols.len(), xv.rows()),
            ));
        }
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= xv.cols() {
                return Err(Error::IndexOutOfRange {
                    op: "pick_cols",
                    detail: format!("column {c} >= {}", xv.cols()),
                });
            }
            data.push(xv.get(r, c));
        }
        let out = Tensor::new(cols.len(), 1, data)?;
        Ok(self.push(out, Op::PickCols(x, cols.to_vec())))
    }

    /// Batch-statistics normalisation followed by `γ ⊙ x̂ + β`.
    ///
    /// Returns the output and the per-column batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, m) = (xv.rows(), xv.cols());
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [1, m] || bv.shape() != [1, m] {
            return Err(Error::shape(
                "batch_norm",
                format!("features {m}, gamma {:?}, beta {:?}", gv.shape(), bv.shape()),
            ));
        }
        let mut mean = vec![0.0; m];
        for r in 0..n {
            for (mu, v) in mean.iter_mut().zip(xv.row_slice(r)) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= n as f64);
        let mut var = vec![0.0; m];
        for r in 0..n {
            for ((s, v), mu) in var.iter_mut().zip(xv.row_slice(r)).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for (c, v) in xhat.row_slice_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) * inv_std[c];
            }
        }
        let mut out = xhat.clone();
        for r in 0..n {
            for (c, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v = *v * gv.data()[c] + bv.data()[c];
            }
        }
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((node, mean, var))
    }

    /// Records an op with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), backward))
    }

    /// Reverse pass from a scalar `loss`. Clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let shapes: Vec<[usize; 2]> = nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else { continue };
            let val = |v: &Var| &nodes[v.0].value;
            let mut acc = |v: Var, t: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, matmul_nt(&g, val(b)));
                    acc(*b, matmul_tn(val(a), &g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    acc(*a, zip_map(&g, val(b), |p, q| p * q));
                    acc(*b, zip_map(&g, val(a), |p, q| p * q));
                }
                Op::AddRow(x, b) => {
                    acc(*b, col_sums(&g));
                    acc(*x, g);
                }
                Op::MulRow(x, r) => {
                    let (xv, rv) = (val(x), val(r));
                    let scalar = rv.shape() == [1, 1];
                    let gx_x = zip_map(&g, xv, |p, q| p * q);
                    let gr = if scalar {
                        Tensor::scalar(gx_x.sum())
                    } else {
                        col_sums(&gx_x)
                    };
                    let mut gx = g.clone();
                    for row in 0..gx.rows() {
                        for (c, o) in gx.row_slice_mut(row).iter_mut().enumerate() {
                            *o *= if scalar { rv.data()[0] } else { rv.data()[c] };
                        }
                    }
                    acc(*x, gx);
                    acc(*r, gr);
                }
                Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
                Op::Relu(x) => acc(*x, zip_map(&g, val(x), |p, q| if q > 0.0 { p } else { 0.0 })),
                Op::Sigmoid(x) => acc(*x, zip_map(&g, &node.value, |p, y| p * y * (1.0 - y))),
                Op::Log(x) => acc(*x, zip_map(&g, val(x), |p, q| p / q)),
                Op::ClampMin(x, floor) => {
                    acc(*x, zip_map(&g, val(x), |p, q| if q >= *floor { p } else { 0.0 }))
                }
                Op::SoftmaxRow(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, o) in gx.row_slice_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(*x, gx);
                }
                Op::LogSoftmaxRow(x) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let total: f64 = gr.iter().sum();
                        for (c, o) in gx.row_slice_mut(r).iter_mut().enumerate() {
                            *o = gr[c] - yr[c].exp() * total;
                        }
                    }
                    acc(*x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = val(p);
                        let n = pv.len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        acc(*p, Tensor::new(pv.rows(), pv.cols(), slice).expect("split"));
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = val(p);
                        let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            gp.row_slice_mut(r)
                                .copy_from_slice(&g.row_slice(r)[offset..offset + pv.cols()]);
                        }
                        acc(*p, gp);
                        offset += pv.cols();
                    }
                }
                Op::GatherRows(x, idx) => {
                    let xv = val(x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, &src) in idx.iter().enumerate() {
                        for (o, v) in gx.row_slice_mut(src).iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                    acc(*x, gx);
                }
                Op::ScatterSum(m, targets) => {
                    let mv = val(m);
                    let mut gm = Tensor::zeros(mv.rows(), mv.cols());
                    for (i, &t) in targets.iter().enumerate() {
                        gm.row_slice_mut(i).copy_from_slice(g.row_slice(t));
                    }
                    acc(*m, gm);
                }
                Op::SegmentMean(x, segments, counts) => {
                    let xv = val(x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, &s) in segments.iter().enumerate() {
                        for (o, v) in gx.row_slice_mut(i).iter_mut().zip(g.row_slice(s)) {
                            *o = v / counts[s];
                        }
                    }
                    acc(*x, gx);
                }
                Op::ScaleRows(x, w) => {
                    let mut gx = g.clone();
                    for (r, wr) in w.iter().enumerate() {
                        for o in gx.row_slice_mut(r) {
                            *o *= wr;
                        }
                    }
                    acc(*x, gx);
                }
                Op::RowSum(x) => {
                    let xv = val(x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.data()[r];
                        gx.row_slice_mut(r).iter_mut().for_each(|o| *o = gr);
                    }
                    acc(*x, gx);
                }
                Op::Sum(x) => {
                    let xv = val(x);
                    acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.data()[0]));
                }
                Op::Mean(x) => {
                    let xv = val(x);
                    let n = xv.len() as f64;
                    acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.data()[0] / n));
                }
                Op::Reshape(x) => {
                    let xv = val(x);
                    acc(*x, Tensor::new(xv.rows(), xv.cols(), g.data().to_vec()).expect("reshape"));
                }
                Op::PickCols(x, cols) => {
                    let xv = val(x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &c) in cols.iter().enumerate() {
                        gx.set(r, c, g.data()[r]);
                    }
                    acc(*x, gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(gamma);
                    let (n, m) = (xhat.rows(), xhat.cols());
                    let mut ggamma = Tensor::zeros(1, m);
                    let mut gbeta = Tensor::zeros(1, m);
                    let mut sum_gh = vec![0.0; m];
                    let mut sum_gh_xh = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            let gy = g.get(r, c);
                            let xh = xhat.get(r, c);
                            ggamma.data_mut()[c] += gy * xh;
                            gbeta.data_mut()[c] += gy;
                            let gh = gy * gv.data()[c];
                            sum_gh[c] += gh;
                            sum_gh_xh[c] += gh * xh;
                        }
                    }
                    let nf = n as f64;
                    let mut gx = Tensor::zeros(n, m);
                    for r in 0..n {
                        for c in 0..m {
                            let gh = g.get(r, c) * gv.data()[c];
                            let v = inv_std[c] / nf
                                * (nf * gh - sum_gh[c] - xhat.get(r, c) * sum_gh_xh[c]);
                            gx.set(r, c, v);
                        }
                    }
                    acc(*x, gx);
                    acc(*gamma, ggamma);
                    acc(*beta, gbeta);
                }
                Op::Custom(inputs, rule) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(val).collect();
                    let outs = rule(&g, &ins, &node.value);
                    for (v, t) in inputs.iter().zip(outs) {
                        acc(*v, t);
                    }
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

/// Plain (tape-free) row softmax.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    softmax_rows(&Tensor::row(x)).into_data()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.0, 0.0, 0.0]));
        let y = tape.softmax_row(x);
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scatter_sum_groups() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::from_rows(&[[1.0], [2.0], [3.0]]).unwrap());
        let s = tape.scatter_sum(m, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0, 3.0]);
        assert!(tape.scatter_sum(m, &[0, 2, 1], 2).is_err());
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let p = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn linear_map_gradient_is_broadcast_input() {
        // loss = sum(W x), W 2x3, x 3x1 => dW[i][j] = x[j]
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap());
        let x = tape.constant(Tensor::from_rows(&[[0.5], [-1.0], [2.0]]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn disconnected_parameter_has_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::row(&[1.0, 2.0]));
        let q = tape.param(Tensor::row(&[3.0]));
        let loss = tape.sum(q);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p), Tensor::zeros(1, 2));
        assert_eq!(g.get(q).data(), &[1.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constant_only_ops_are_not_differentiated() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(&[1.0]));
        let b = tape.relu(a);
        assert!(!tape.requires_grad(b));
    }
}
