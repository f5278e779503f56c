use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use thiserror::Error;

use super::{Grads, ParamStore, Tensor};

/// Probabilities fed to [`Op::Bce`] are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-12;

/// Variance floor used by [`Op::LayerNorm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub type NodeId = usize;

/// Placeholder values keyed by placeholder name.
pub type Bindings = BTreeMap<String, Tensor>;

/// Forward values of every node, indexed by [`NodeId`].
pub type Values = Vec<Tensor>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node}: placeholder `{name}` is unbound")]
    Unbound { node: NodeId, name: String },
    #[error("node {node}: shape mismatch in {op}: {detail}")]
    ShapeMismatch {
        node: NodeId,
        op: &'static str,
        detail: String,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("node {node} is not a scalar (shape {rows}x{cols})")]
    NonScalarLoss {
        node: NodeId,
        rows: usize,
        cols: usize,
    },
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
}

/// Operation recorded at a node. Operand fields are ids of earlier nodes.
#[derive(Debug, Clone)]
pub enum Op {
    Param(String),
    Input(String),
    Const(Tensor),
    /// `a · b`
    MatMul(NodeId, NodeId),
    /// `x · w + b` with `b` a single row broadcast over the rows of the product.
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    /// Adds a single row to every row of the first operand.
    AddRow(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Tanh-approximated GELU.
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Log(NodeId),
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Mean of rows `start..=end`, producing one row.
    MeanRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    Sum(NodeId),
    /// Summed binary cross-entropy of probabilities against fixed targets.
    Bce {
        probs: NodeId,
        target: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Gelu(_) => "gelu",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Log(_) => "log",
            Op::GatherRows { .. } => "gather_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::MeanRows { .. } => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Bce { .. } => "bce",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Input(_) | Op::Const(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::SoftmaxRows(a)
            | Op::Log(a)
            | Op::Sum(a) => vec![*a],
            Op::GatherRows { table, .. } => vec![*table],
            Op::SliceRows { x, .. } | Op::SliceCols { x, .. } | Op::MeanRows { x, .. } => vec![*x],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
            Op::Bce { probs, .. } => vec![*probs],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: (usize, usize),
}

/// An append-only expression graph over a borrowed parameter set.
///
/// Nodes may only reference earlier nodes, so the graph is acyclic by
/// construction and the node order is a valid evaluation order.
#[derive(Debug, Clone)]
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.nrows(), t.ncols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Summed binary cross-entropy with clamped probabilities.
pub(crate) fn bce_sum(probs: &Tensor, target: &Tensor) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(target.iter()) {
        let p = clamp_prob(p);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> Option<&Op> {
        self.nodes.get(id).map(|n| &n.op)
    }

    pub fn shape(&self, id: NodeId) -> Result<(usize, usize), GraphError> {
        self.nodes
            .get(id)
            .map(|n| n.shape)
            .ok_or(GraphError::NoSuchNode(id))
    }

    fn mismatch(&self, op: &'static str, detail: String) -> GraphError {
        GraphError::ShapeMismatch {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId, GraphError> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| GraphError::UnknownParam(name.to_string()))?;
        Ok(self.push(Op::Param(name.to_string()), dims(t)))
    }

    /// Declares a placeholder to be bound at evaluation time.
    pub fn input(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Input(name.to_string()), (rows, cols))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = dims(&value);
        self.push(Op::Const(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa.1 != sb.0 {
            return Err(self.mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        Ok(self.push(Op::MatMul(a, b), (sa.0, sb.1)))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sx, sw, sb) = (self.shape(x)?, self.shape(w)?, self.shape(b)?);
        if sx.1 != sw.0 || sb != (1, sw.1) {
            return Err(self.mismatch("affine", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        Ok(self.push(Op::Affine { x, w, b }, (sx.0, sw.1)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa != sb {
            return Err(self.mismatch("add", format!("{sa:?} + {sb:?}")));
        }
        Ok(self.push(Op::Add(a, b), sa))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sr) = (self.shape(a)?, self.shape(row)?);
        if sr != (1, sa.1) {
            return Err(self.mismatch("add_row", format!("{sa:?} + row {sr:?}")));
        }
        Ok(self.push(Op::AddRow(a, row), sa))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa != sb {
            return Err(self.mismatch("mul", format!("{sa:?} * {sb:?}")));
        }
        Ok(self.push(Op::Mul(a, b), sa))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Scale(a, factor), sa))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Transpose(a), (sa.1, sa.0)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Sigmoid(a), sa))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Tanh(a), sa))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Gelu(a), sa))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::SoftmaxRows(a), sa))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, GraphError> {
        let (sx, sg, sb) = (self.shape(x)?, self.shape(gain)?, self.shape(bias)?);
        if sg != (1, sx.1) || sb != (1, sx.1) {
            return Err(self.mismatch("layer_norm", format!("x {sx:?}, gain {sg:?}, bias {sb:?}")));
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias }, sx))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.shape(a)?;
        Ok(self.push(Op::Log(a), sa))
    }

    /// Selects rows of `table` in the given order (embedding lookup).
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, GraphError> {
        let st = self.shape(table)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= st.0) {
            return Err(self.mismatch("gather_rows", format!("row {bad} of a {st:?} table")));
        }
        Ok(self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            (ids.len(), st.1),
        ))
    }

    /// Rows `start..end` (half-open).
    pub fn slice_rows(
        &mut self,
        x: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, GraphError> {
        let sx = self.shape(x)?;
        if start > end || end > sx.0 {
            return Err(self.mismatch("slice_rows", format!("{start}..{end} of {sx:?}")));
        }
        Ok(self.push(Op::SliceRows { x, start, end }, (end - start, sx.1)))
    }

    /// Columns `start..end` (half-open).
    pub fn slice_cols(
        &mut self,
        x: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, GraphError> {
        let sx = self.shape(x)?;
        if start > end || end > sx.1 {
            return Err(self.mismatch("slice_cols", format!("{start}..{end} of {sx:?}")));
        }
        Ok(self.push(Op::SliceCols { x, start, end }, (sx.0, end - start)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        let shapes = parts
            .iter()
            .map(|&p| self.shape(p))
            .collect::<Result<Vec<_>, _>>()?;
        let Some(first) = shapes.first() else {
            return Err(self.mismatch("concat_rows", "no operands".into()));
        };
        if shapes.iter().any(|s| s.1 != first.1) {
            return Err(self.mismatch("concat_rows", format!("{shapes:?}")));
        }
        let rows = shapes.iter().map(|s| s.0).sum();
        Ok(self.push(Op::ConcatRows(parts.to_vec()), (rows, first.1)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        let shapes = parts
            .iter()
            .map(|&p| self.shape(p))
            .collect::<Result<Vec<_>, _>>()?;
        let Some(first) = shapes.first() else {
            return Err(self.mismatch("concat_cols", "no operands".into()));
        };
        if shapes.iter().any(|s| s.0 != first.0) {
            return Err(self.mismatch("concat_cols", format!("{shapes:?}")));
        }
        let cols = shapes.iter().map(|s| s.1).sum();
        Ok(self.push(Op::ConcatCols(parts.to_vec()), (first.0, cols)))
    }

    /// Mean of rows `start..=end` (inclusive, as token spans are).
    pub fn mean_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let sx = self.shape(x)?;
        if start > end || end >= sx.0 {
            return Err(self.mismatch("mean_rows", format!("{start}..={end} of {sx:?}")));
        }
        Ok(self.push(Op::MeanRows { x, start, end }, (1, sx.1)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.shape(a)?;
        Ok(self.push(Op::Sum(a), (1, 1)))
    }

    /// `-Σ [y ln p + (1-y) ln(1-p)]` over all entries, with `p` clamped.
    pub fn bce(&mut self, probs: NodeId, target: Tensor) -> Result<NodeId, GraphError> {
        let sp = self.shape(probs)?;
        if dims(&target) != sp {
            return Err(self.mismatch("bce", format!("probs {sp:?}, target {:?}", dims(&target))));
        }
        Ok(self.push(Op::Bce { probs, target }, (1, 1)))
    }

    /// Forward values of every node.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<Values, GraphError> {
        let mut values: Values = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let v = self.forward_node(id, node, &values, bindings)?;
            values.push(v);
        }
        Ok(values)
    }

    /// Forward value of a single node (all earlier nodes are evaluated too).
    pub fn evaluate_node(&self, bindings: &Bindings, node: NodeId) -> Result<Tensor, GraphError> {
        if node >= self.nodes.len() {
            return Err(GraphError::NoSuchNode(node));
        }
        let mut values = self.evaluate(bindings)?;
        Ok(values.swap_remove(node))
    }

    fn forward_node(
        &self,
        id: NodeId,
        node: &Node,
        v: &[Tensor],
        bindings: &Bindings,
    ) -> Result<Tensor, GraphError> {
        let out = match &node.op {
            Op::Param(name) => self
                .params
                .get(name)
                .ok_or_else(|| GraphError::UnknownParam(name.clone()))?
                .clone(),
            Op::Input(name) => {
                let t = bindings.get(name).ok_or_else(|| GraphError::Unbound {
                    node: id,
                    name: name.clone(),
                })?;
                if dims(t) != node.shape {
                    return Err(GraphError::ShapeMismatch {
                        node: id,
                        op: "input",
                        detail: format!("declared {:?}, bound {:?}", node.shape, dims(t)),
                    });
                }
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::MatMul(a, b) => v[*a].dot(&v[*b]),
            Op::Affine { x, w, b } => {
                let mut y = v[*x].dot(&v[*w]);
                y += &v[*b];
                y
            }
            Op::Add(a, b) => &v[*a] + &v[*b],
            Op::AddRow(a, r) => &v[*a] + &v[*r],
            Op::Mul(a, b) => &v[*a] * &v[*b],
            Op::Scale(a, c) => &v[*a] * *c,
            Op::Transpose(a) => v[*a].t().to_owned(),
            Op::Sigmoid(a) => v[*a].mapv(sigmoid),
            Op::Tanh(a) => v[*a].mapv(f64::tanh),
            Op::Gelu(a) => v[*a].mapv(gelu),
            Op::SoftmaxRows(a) => {
                let mut y = v[*a].clone();
                for mut row in y.rows_mut() {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|x| (x - max).exp());
                    let total: f64 = row.iter().sum();
                    row.mapv_inplace(|x| x / total);
                }
                y
            }
            Op::LayerNorm { x, gain, bias } => layer_norm_forward(&v[*x], &v[*gain], &v[*bias]).0,
            Op::Log(a) => v[*a].mapv(f64::ln),
            Op::GatherRows { table, ids } => v[*table].select(Axis(0), ids),
            Op::SliceRows { x, start, end } => v[*x].slice(s![*start..*end, ..]).to_owned(),
            Op::SliceCols { x, start, end } => v[*x].slice(s![.., *start..*end]).to_owned(),
            Op::ConcatRows(xs) => {
                let views: Vec<_> = xs.iter().map(|&i| v[i].view()).collect();
                ndarray::concatenate(Axis(0), &views).expect("shapes checked at build")
            }
            Op::ConcatCols(xs) => {
                let views: Vec<_> = xs.iter().map(|&i| v[i].view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("shapes checked at build")
            }
            Op::MeanRows { x, start, end } => {
                let rows = v[*x].slice(s![*start..=*end, ..]);
                let count = (end - start + 1) as f64;
                let mut acc = Array2::zeros((1, rows.ncols()));
                for row in rows.rows() {
                    let mut a = acc.row_mut(0);
                    a += &row;
                }
                acc.mapv_inplace(|s| s / count);
                acc
            }
            Op::Sum(a) => Array2::from_elem((1, 1), v[*a].iter().sum()),
            Op::Bce { probs, target } => Array2::from_elem((1, 1), bce_sum(&v[*probs], target)),
        };
        Ok(out)
    }

    /// Gradient of the scalar `loss` node with respect to every parameter in
    /// the store. Parameters the loss does not depend on get zero tensors.
    pub fn gradient(&self, bindings: &Bindings, loss: NodeId) -> Result<Grads, GraphError> {
        let values = self.evaluate(bindings)?;
        self.gradient_from_values(&values, loss)
    }

    /// Like [`Graph::gradient`], reusing already computed forward values.
    pub fn gradient_from_values(
        &self,
        values: &[Tensor],
        loss: NodeId,
    ) -> Result<Grads, GraphError> {
        let shape = self.shape(loss)?;
        if shape != (1, 1) {
            return Err(GraphError::NonScalarLoss {
                node: loss,
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads = self.params.zero_grads();
        let mut adj: Vec<Option<Tensor>> = vec![None; loss + 1];
        adj[loss] = Some(Array2::ones((1, 1)));

        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param(name) => {
                    if let Some(acc) = grads.get_mut(name) {
                        *acc += &g;
                    }
                }
                Op::Input(_) | Op::Const(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&values[*b].t());
                    let gb = values[*a].t().dot(&g);
                    add_adj(&mut adj, *a, ga);
                    add_adj(&mut adj, *b, gb);
                }
                Op::Affine { x, w, b } => {
                    let gx = g.dot(&values[*w].t());
                    let gw = values[*x].t().dot(&g);
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_adj(&mut adj, *x, gx);
                    add_adj(&mut adj, *w, gw);
                    add_adj(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    add_adj(&mut adj, *a, g.clone());
                    add_adj(&mut adj, *b, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_adj(&mut adj, *a, g);
                    add_adj(&mut adj, *r, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &values[*b];
                    let gb = &g * &values[*a];
                    add_adj(&mut adj, *a, ga);
                    add_adj(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => add_adj(&mut adj, *a, g * *c),
                Op::Transpose(a) => add_adj(&mut adj, *a, g.t().to_owned()),
                Op::Sigmoid(a) => {
                    let y = &values[id];
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|&g, &y| g * y * (1.0 - y));
                    add_adj(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &values[id];
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    add_adj(&mut adj, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = &values[*a];
                    let ga = ndarray::Zip::from(&g)
                        .and(x)
                        .map_collect(|&g, &x| g * gelu_grad(x));
                    add_adj(&mut adj, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &values[id];
                    let mut ga = Array2::zeros(y.raw_dim());
                    for ((mut out, gy), yy) in ga.rows_mut().into_iter().zip(g.rows()).zip(y.rows())
                    {
                        let dot: f64 = gy.iter().zip(yy.iter()).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gy.iter()).zip(yy.iter()) {
                            *o = yi * (gi - dot);
                        }
                    }
                    add_adj(&mut adj, *a, ga);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (gx, gg, gb) = layer_norm_backward(&values[*x], &values[*gain], &g);
                    add_adj(&mut adj, *x, gx);
                    add_adj(&mut adj, *gain, gg);
                    add_adj(&mut adj, *bias, gb);
                }
                Op::Log(a) => add_adj(&mut adj, *a, &g / &values[*a]),
                Op::GatherRows { table, ids } => {
                    let mut gt = Array2::zeros(self.nodes[*table].shape);
                    for (row, &i) in g.rows().into_iter().zip(ids) {
                        let mut dst = gt.row_mut(i);
                        dst += &row;
                    }
                    add_adj(&mut adj, *table, gt);
                }
                Op::SliceRows { x, start, end } => {
                    let mut gx = Array2::zeros(self.nodes[*x].shape);
                    gx.slice_mut(s![*start..*end, ..]).assign(&g);
                    add_adj(&mut adj, *x, gx);
                }
                Op::SliceCols { x, start, end } => {
                    let mut gx = Array2::zeros(self.nodes[*x].shape);
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    add_adj(&mut adj, *x, gx);
                }
                Op::ConcatRows(xs) => {
                    let mut offset = 0;
                    for &part in xs {
                        let rows = self.nodes[part].shape.0;
                        add_adj(
                            &mut adj,
                            part,
                            g.slice(s![offset..offset + rows, ..]).to_owned(),
                        );
                        offset += rows;
                    }
                }
                Op::ConcatCols(xs) => {
                    let mut offset = 0;
                    for &part in xs {
                        let cols = self.nodes[part].shape.1;
                        add_adj(
                            &mut adj,
                            part,
                            g.slice(s![.., offset..offset + cols]).to_owned(),
                        );
                        offset += cols;
                    }
                }
                Op::MeanRows { x, start, end } => {
                    let count = (end - start + 1) as f64;
                    let mut gx = Array2::zeros(self.nodes[*x].shape);
                    let share = g.row(0).mapv(|v| v / count);
                    for mut row in gx.slice_mut(s![*start..=*end, ..]).rows_mut() {
                        row.assign(&share);
                    }
                    add_adj(&mut adj, *x, gx);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    add_adj(&mut adj, *a, Array2::from_elem(self.nodes[*a].shape, s));
                }
                Op::Bce { probs, target } => {
                    let s = g[[0, 0]];
                    let gp =
                        ndarray::Zip::from(&values[*probs])
                            .and(target)
                            .map_collect(|&p, &y| {
                                let p = clamp_prob(p);
                                s * (-y / p + (1.0 - y) / (1.0 - p))
                            });
                    add_adj(&mut adj, *probs, gp);
                }
            }
        }
        Ok(grads)
    }

    /// Ids of the operands of `id`.
    pub fn operands(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        self.nodes
            .get(id)
            .map(|n| n.op.operands())
            .ok_or(GraphError::NoSuchNode(id))
    }

    pub fn op_name(&self, id: NodeId) -> Option<&'static str> {
        self.nodes.get(id).map(|n| n.op.name())
    }
}

fn add_adj(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Returns the normalized output and, per row, `(x_hat, inv_std)`.
fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut x_hat = x.clone();
    let mut inv_stds = Vec::with_capacity(x.nrows());
    for mut row in x_hat.rows_mut() {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv_std);
        inv_stds.push(inv_std);
    }
    let mut y = &x_hat * gain;
    y += bias;
    (y, x_hat, inv_stds)
}

fn layer_norm_backward(x: &Tensor, gain: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (_, x_hat, inv_stds) = layer_norm_forward(x, gain, &Array2::zeros(gain.raw_dim()));
    let n = x.ncols() as f64;
    let g_gain = (g * &x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let g_bias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    let g_hat = g * gain;
    let mut gx = Array2::zeros(x.raw_dim());
    for (r, inv_std) in inv_stds.iter().enumerate() {
        let gh = g_hat.row(r);
        let xh = x_hat.row(r);
        let sum_gh: f64 = gh.iter().sum();
        let sum_ghx: f64 = gh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
        for c in 0..x.ncols() {
            gx[[r, c]] = inv_std / n * (n * gh[c] - sum_gh - xh[c] * sum_ghx);
        }
    }
    (gx, g_gain, g_bias)
}
