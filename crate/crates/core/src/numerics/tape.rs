//! Reverse-mode differentiation over dense matrices.
//!
//! The tape records every primitive as it is evaluated. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward pass is a single reverse sweep.
//!
//! Values on the tape are held in f64. Parameters enter as f32 [`Tensor`]s and
//! their gradients leave as f32 tensors, so storage stays 32-bit while long
//! reductions (log-determinants, batch means) do not lose precision.
//!
//! ```
//! use sliceflow::numerics::{backprop, Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let theta = tape.param(&Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
//! let loss = tape.mul(theta, theta).unwrap();
//! let grads = backprop(&tape, loss).unwrap();
//! assert_eq!(grads.get(theta).unwrap().data(), &[6.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Square(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    SumCols(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Recording of one forward evaluation. Single writer: one training step owns
/// one tape.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Result<NodeId> {
        let (rows, cols) = matrix_dims(t)?;
        Ok(self.push(Op::Constant, rows, cols, t.to_f64()))
    }

    /// Leaf built directly from 64-bit values.
    pub fn constant_f64(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        if rows * cols != value.len() || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} constant with {} values",
                value.len()
            )));
        }
        Ok(self.push(Op::Constant, rows, cols, value))
    }

    /// Leaf flagged as a parameter; [`backprop`] reports its gradient.
    pub fn param(&mut self, t: &Tensor) -> Result<NodeId> {
        let (rows, cols) = matrix_dims(t)?;
        Ok(self.push(Op::Param, rows, cols, t.to_f64()))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        match self.shape(id) {
            (1, 1) => Ok(self.nodes[id.0].value[0]),
            s => Err(Error::Contract(format!("node {} is {s:?}, not scalar", id.0))),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        self.record(Op::MatMul(a, b), n, m)
    }

    /// Adds a 1×m row to every row of an n×m node.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::Dimension(format!(
                "row bias {:?} against {n}x{m}",
                self.shape(row)
            )));
        }
        self.record(Op::AddRow(a, row), n, m)
    }

    /// `x·w + b` with `b` a 1×m row.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "add")?;
        self.record(Op::Add(a, b), r, c)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        self.record(Op::Sub(a, b), r, c)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        self.record(Op::Mul(a, b), r, c)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Scale(a, k), r, c)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Offset(a, k), r, c)
    }

    /// Subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Relu(a), r, c)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Tanh(a), r, c)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Exp(a), r, c)
    }

    /// Subgradient at 0 is 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Abs(a), r, c)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        self.record(Op::Square(a), r, c)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(Error::Dimension(format!(
                "column slice {start}..{end} of width {c}"
            )));
        }
        self.record(Op::SliceCols(a, start, end), r, end - start)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::Dimension(format!("concat rows {ra} vs {rb}")));
        }
        self.record(Op::ConcatCols(a, b), ra, ca + cb)
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if indices.is_empty() {
            return Err(Error::Dimension("gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Dimension(format!("row {bad} out of {r}")));
        }
        let n = indices.len();
        self.record(Op::GatherRows(a, indices), n, c)
    }

    /// Row sums: n×m → n×1.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, _) = self.shape(a);
        self.record(Op::SumCols(a), r, 1)
    }

    /// Sum of all elements: → 1×1.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a), 1, 1)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Overwrites the value of a leaf (constant or parameter). Recorded
    /// downstream values are left as they were; use [`replay`](Self::replay)
    /// to recompute them.
    pub fn set_leaf(&mut self, id: NodeId, value: Vec<f64>) -> Result<()> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or_else(|| Error::Contract(format!("node {} is not on the tape", id.0)))?;
        if !matches!(node.op, Op::Constant | Op::Param) {
            return Err(Error::Contract(format!("node {} is not a leaf", id.0)));
        }
        if value.len() != node.value.len() {
            return Err(Error::Dimension(format!(
                "leaf {} holds {} values, got {}",
                id.0,
                node.value.len(),
                value.len()
            )));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every node from the recorded leaves and returns the values.
    /// Matches the recorded values bit for bit.
    pub fn replay(&self) -> Vec<Vec<f64>> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param => node.value.clone(),
                ref op => evaluate(op, &values, |id| self.shape(id)),
            };
            values.push(v);
        }
        values
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn record(&mut self, op: Op, rows: usize, cols: usize) -> Result<NodeId> {
        let value = evaluate_on(&op, &self.nodes);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite output from {}",
                op_name(&op)
            )));
        }
        debug_assert_eq!(value.len(), rows * cols);
        Ok(self.push(op, rows, cols, value))
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }
}

fn matrix_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.dims() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        d => Err(Error::Dimension(format!(
            "tape leaves must be rank 1 or 2, got {d:?}"
        ))),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param => "param",
        Op::MatMul(..) => "matmul",
        Op::AddRow(..) => "add_row",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Offset(..) => "offset",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Exp(..) => "exp",
        Op::Abs(..) => "abs",
        Op::Square(..) => "square",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::SumCols(..) => "sum_cols",
        Op::Sum(..) => "sum",
    }
}

fn evaluate_on(op: &Op, nodes: &[Node]) -> Vec<f64> {
    kernel(op, |id| (&nodes[id.0].value[..], nodes[id.0].rows, nodes[id.0].cols))
}

fn evaluate(
    op: &Op,
    values: &[Vec<f64>],
    shape: impl Fn(NodeId) -> (usize, usize),
) -> Vec<f64> {
    kernel(op, |id| {
        let (r, c) = shape(id);
        (&values[id.0][..], r, c)
    })
}

/// Forward kernel shared by recording and replay.
fn kernel<'a>(op: &Op, get: impl Fn(NodeId) -> (&'a [f64], usize, usize)) -> Vec<f64> {
    match *op {
        Op::Constant | Op::Param => unreachable!("leaves carry their own values"),
        Op::MatMul(a, b) => {
            let (x, n, k) = get(a);
            let (w, _, m) = get(b);
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for kk in 0..k {
                    let xv = x[i * k + kk];
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[kk * m..(kk + 1) * m];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
            out
        }
        Op::AddRow(a, row) => {
            let (x, _, m) = get(a);
            let (b, _, _) = get(row);
            x.iter()
                .enumerate()
                .map(|(i, &v)| v + b[i % m])
                .collect()
        }
        Op::Add(a, b) => zip_map(get(a).0, get(b).0, |x, y| x + y),
        Op::Sub(a, b) => zip_map(get(a).0, get(b).0, |x, y| x - y),
        Op::Mul(a, b) => zip_map(get(a).0, get(b).0, |x, y| x * y),
        Op::Scale(a, k) => get(a).0.iter().map(|&v| v * k).collect(),
        Op::Offset(a, k) => get(a).0.iter().map(|&v| v + k).collect(),
        Op::Relu(a) => get(a).0.iter().map(|&v| v.max(0.0)).collect(),
        Op::Tanh(a) => get(a).0.iter().map(|&v| v.tanh()).collect(),
        Op::Exp(a) => get(a).0.iter().map(|&v| v.exp()).collect(),
        Op::Abs(a) => get(a).0.iter().map(|&v| v.abs()).collect(),
        Op::Square(a) => get(a).0.iter().map(|&v| v * v).collect(),
        Op::SliceCols(a, start, end) => {
            let (x, r, c) = get(a);
            let mut out = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                out.extend_from_slice(&x[i * c + start..i * c + end]);
            }
            out
        }
        Op::ConcatCols(a, b) => {
            let (x, r, ca) = get(a);
            let (y, _, cb) = get(b);
            let mut out = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                out.extend_from_slice(&x[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&y[i * cb..(i + 1) * cb]);
            }
            out
        }
        Op::GatherRows(a, ref idx) => {
            let (x, _, c) = get(a);
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
            out
        }
        Op::SumCols(a) => {
            let (x, r, c) = get(a);
            (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect()
        }
        Op::Sum(a) => vec![get(a).0.iter().sum()],
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Gradients of a scalar loss with respect to every parameter node.
#[derive(Clone, Debug)]
pub struct Gradients {
    by_param: BTreeMap<NodeId, Tensor>,
    raw: BTreeMap<NodeId, Vec<f64>>,
}

impl Gradients {
    /// Gradient as an f32 tensor shaped like the parameter (rank 2).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Gradient in full f64 precision.
    pub fn get_f64(&self, id: NodeId) -> Option<&[f64]> {
        self.raw.get(&id).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.by_param.keys().copied()
    }
}

/// dLoss/dθ for every parameter on the tape. Parameters that do not influence
/// the loss get a zero gradient.
pub fn backprop(tape: &Tape, loss: NodeId) -> Result<Gradients> {
    let (r, c) = tape.shape(loss);
    if (r, c) != (1, 1) {
        return Err(Error::Contract(format!(
            "loss node {} is {r}x{c}, backprop needs a scalar",
            loss.0
        )));
    }
    let nodes = &tape.nodes;
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
    adj[loss.0] = Some(vec![1.0]);

    for idx in (0..=loss.0).rev() {
        let Some(g) = adj[idx].take() else { continue };
        let node = &nodes[idx];
        match node.op {
            Op::Constant => {}
            Op::Param => {
                adj[idx] = Some(g);
                continue;
            }
            Op::MatMul(a, b) => {
                let (x, n, k) = (&nodes[a.0].value, nodes[a.0].rows, nodes[a.0].cols);
                let (w, m) = (&nodes[b.0].value, nodes[b.0].cols);
                // dX = G·Wᵀ, dW = Xᵀ·G
                let mut dx = vec![0.0; n * k];
                let mut dw = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let wrow = &w[kk * m..(kk + 1) * m];
                        dx[i * k + kk] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        let xv = x[i * k + kk];
                        if xv != 0.0 {
                            for (d, &gv) in dw[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                accumulate(&mut adj, a, dx);
                accumulate(&mut adj, b, dw);
            }
            Op::AddRow(a, row) => {
                let m = node.cols;
                let mut db = vec![0.0; m];
                for (i, &v) in g.iter().enumerate() {
                    db[i % m] += v;
                }
                accumulate(&mut adj, row, db);
                accumulate(&mut adj, a, g);
            }
            Op::Add(a, b) => {
                accumulate(&mut adj, a, g.clone());
                accumulate(&mut adj, b, g);
            }
            Op::Sub(a, b) => {
                accumulate(&mut adj, b, g.iter().map(|v| -v).collect());
                accumulate(&mut adj, a, g);
            }
            Op::Mul(a, b) => {
                let va = &nodes[a.0].value;
                let vb = &nodes[b.0].value;
                accumulate(&mut adj, a, zip_map(&g, vb, |x, y| x * y));
                accumulate(&mut adj, b, zip_map(&g, va, |x, y| x * y));
            }
            Op::Scale(a, k) => accumulate(&mut adj, a, g.iter().map(|v| v * k).collect()),
            Op::Offset(a, _) => accumulate(&mut adj, a, g),
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                accumulate(
                    &mut adj,
                    a,
                    zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(&mut adj, a, zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Exp(a) => {
                let y = &node.value;
                accumulate(&mut adj, a, zip_map(&g, y, |gv, yv| gv * yv));
            }
            Op::Abs(a) => {
                let x = &nodes[a.0].value;
                accumulate(
                    &mut adj,
                    a,
                    zip_map(&g, x, |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Square(a) => {
                let x = &nodes[a.0].value;
                accumulate(&mut adj, a, zip_map(&g, x, |gv, xv| 2.0 * gv * xv));
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
                let w = end - start;
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(&mut adj, a, da);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca, cb) = (node.rows, nodes[a.0].cols, nodes[b.0].cols);
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for i in 0..r {
                    let row = &g[i * (ca + cb)..(i + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                accumulate(&mut adj, a, da);
                accumulate(&mut adj, b, db);
            }
            Op::GatherRows(a, ref idx) => {
                let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
                let mut da = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += g[k * c + j];
                    }
                }
                accumulate(&mut adj, a, da);
            }
            Op::SumCols(a) => {
                let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
                let mut da = Vec::with_capacity(r * c);
                for &gv in g.iter().take(r) {
                    da.extend(std::iter::repeat_n(gv, c));
                }
                accumulate(&mut adj, a, da);
            }
            Op::Sum(a) => {
                let len = nodes[a.0].value.len();
                accumulate(&mut adj, a, vec![g[0]; len]);
            }
        }
    }

    let mut by_param = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (idx, node) in nodes.iter().enumerate() {
        if !matches!(node.op, Op::Param) {
            continue;
        }
        let g = adj
            .get_mut(idx)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {bad} for parameter node {idx}"
            )));
        }
        let dims = vec![node.rows, node.cols];
        by_param.insert(NodeId(idx), Tensor::from_f64(dims, &g)?);
        raw.insert(NodeId(idx), g);
    }
    Ok(Gradients { by_param, raw })
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut adj[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
