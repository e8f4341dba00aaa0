//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends one
//! node holding its output value and the ids of its inputs, so node order is
//! a topological order. [`Graph::backward`] walks the nodes once, in reverse,
//! and returns a [`Gradients`] table; the graph itself is left untouched and
//! may be differentiated again or simply dropped.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::array::Array;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Storage precision of op outputs. `F32` rounds every forward value through
/// `f32`; gradients are still accumulated in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    Pick(usize, usize, usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Softmax(usize, usize),
    LogSoftmax(usize),
    LayerNorm(usize, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm(..) => "layer_norm",
        }
    }
}

struct Node {
    value: Rc<Array>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, usize>>,
    store_uid: Cell<Option<u64>>,
    grad_params: bool,
    precision: Precision,
    nonfinite: RefCell<Option<String>>,
    frozen: RefCell<HashSet<ParamId>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::build(true, Precision::F64)
    }

    /// A graph where parameters enter as constants; used for frozen models
    /// and evaluation.
    pub fn no_grad() -> Self {
        Self::build(false, Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self::build(true, precision)
    }

    fn build(grad_params: bool, precision: Precision) -> Self {
        Graph {
            nodes: RefCell::new(Vec::with_capacity(256)),
            bound: RefCell::new(HashMap::new()),
            store_uid: Cell::new(None),
            grad_params,
            precision,
            nonfinite: RefCell::new(None),
            frozen: RefCell::new(HashSet::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, mut value: Array, op: Op, needs_grad: bool) -> Var<'_> {
        if self.precision == Precision::F32 {
            value.round_f32();
        }
        if !value.all_finite() {
            let mut slot = self.nonfinite.borrow_mut();
            if slot.is_none() {
                *slot = Some(format!("non-finite output from {} (node {})", op.name(), self.len()));
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn value_of(&self, id: usize) -> Rc<Array> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Error if any op so far produced NaN or Inf.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite.borrow().as_ref() {
            Some(msg) => Err(Error::NonFinite(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Bind a stored parameter. Repeated binds of the same id share a node.
    /// On a no-grad graph, or for frozen ids, the node is a constant.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        match self.store_uid.get() {
            None => self.store_uid.set(Some(store.uid())),
            Some(uid) => assert_eq!(uid, store.uid(), "a graph may bind parameters from one store only"),
        }
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let value = store.get(id).clone();
        let v = if self.grad_params && !self.frozen.borrow().contains(&id) { self.leaf(value) } else { self.constant(value) };
        self.bound.borrow_mut().insert(id, v.id);
        v
    }

    /// Treat these parameters as constants on this graph. Must be called
    /// before they are first bound.
    pub fn freeze(&self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.borrow_mut().extend(ids);
    }

    /// Parameter value as a constant, regardless of the graph's mode.
    pub fn param_const(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.constant(store.get(id).clone())
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let Some(first) = parts.first() else {
            return Err(Error::dim("concat_cols of nothing"));
        };
        let rows = first.value().rows();
        let vals: Vec<Rc<Array>> = parts.iter().map(|p| p.value()).collect();
        if vals.iter().any(|v| v.rows() != rows) {
            return Err(Error::dim("concat_cols row counts differ"));
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Array::matrix(rows, cols, data)?, Op::ConcatCols(ids), needs))
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let Some(first) = parts.first() else {
            return Err(Error::dim("concat_rows of nothing"));
        };
        let cols = first.value().cols();
        let vals: Vec<Rc<Array>> = parts.iter().map(|p| p.value()).collect();
        if vals.iter().any(|v| v.cols() != cols) {
            return Err(Error::dim("concat_rows column counts differ"));
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &vals {
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Array::matrix(rows, cols, data)?, Op::ConcatRows(ids), needs))
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check_finite()?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; nodes.len()];
        let (r, c) = nodes[loss.id].value.dims2();
        grads[loss.id] = Some(Array::ones(r, c));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, local) in local_grads(&nodes, id, &g) {
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&local),
                    slot @ None => *slot = Some(local),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::NonFinite("non-finite gradient".into()));
            }
        }
        Ok(Gradients { grads, bound: self.bound.borrow().clone() })
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Array>>,
    bound: HashMap<ParamId, usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&Array> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array> {
        self.bound.get(&id).and_then(|&n| self.grads[n].as_ref())
    }

    /// `(param, grad)` pairs for every parameter bound on the graph, in id order.
    pub fn params(&self) -> Vec<(ParamId, &Array)> {
        let mut out: Vec<(ParamId, &Array)> =
            self.bound.iter().filter_map(|(&p, &n)| self.grads[n].as_ref().map(|g| (p, g))).collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

fn col_sums(g: &Array) -> Array {
    let (r, c) = g.dims2();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, x) in out.iter_mut().zip(g.row_slice(i)) {
            *o += x;
        }
    }
    let _ = r;
    Array::row(out)
}

fn local_grads(nodes: &[Node], id: usize, g: &Array) -> Vec<(usize, Array)> {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Array { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if nodes[*a].needs_grad {
                v.push((*a, g.matmul_t(val(*b))));
            }
            if nodes[*b].needs_grad {
                v.push((*b, val(*a).t_matmul(g)));
            }
            v
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => vec![(*a, g.zip_map(val(*b), |x, y| x * y)), (*b, g.zip_map(val(*a), |x, y| x * y))],
        Op::AddRow(a, r) => vec![(*a, g.clone()), (*r, col_sums(g))],
        Op::MulRow(a, r) => {
            let (rows, cols) = g.dims2();
            let rv = val(*r).data();
            let av = val(*a);
            let mut ga = vec![0.0; rows * cols];
            let mut gr = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    let gij = g.data()[i * cols + j];
                    ga[i * cols + j] = gij * rv[j];
                    gr[j] += gij * av.data()[i * cols + j];
                }
            }
            vec![(*a, Array::matrix(rows, cols, ga).unwrap()), (*r, Array::row(gr))]
        }
        Op::Scale(a, k) => vec![(*a, g.map(|x| x * k))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::ConcatCols(ids) => {
            let rows = g.rows();
            let mut offset = 0;
            let mut v = Vec::with_capacity(ids.len());
            for &i in ids {
                let w = val(i).cols();
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                }
                v.push((i, Array::matrix(rows, w, data).unwrap()));
                offset += w;
            }
            v
        }
        Op::ConcatRows(ids) => {
            let cols = g.cols();
            let mut offset = 0;
            let mut v = Vec::with_capacity(ids.len());
            for &i in ids {
                let h = val(i).rows();
                let data = g.data()[offset * cols..(offset + h) * cols].to_vec();
                v.push((i, Array::matrix(h, cols, data).unwrap()));
                offset += h;
            }
            v
        }
        Op::SliceRows(a, start) => {
            let (rows, cols) = val(*a).dims2();
            let mut ga = Array::zeros(rows, cols);
            let n = g.len();
            ga.data_mut()[start * cols..start * cols + n].copy_from_slice(g.data());
            vec![(*a, ga)]
        }
        Op::SliceCols(a, start) => {
            let (rows, cols) = val(*a).dims2();
            let w = g.cols();
            let mut ga = Array::zeros(rows, cols);
            for r in 0..rows {
                ga.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
            }
            vec![(*a, ga)]
        }
        Op::GatherRows(a, idx) => {
            let (rows, cols) = val(*a).dims2();
            let mut ga = Array::zeros(rows, cols);
            for (k, &src) in idx.iter().enumerate() {
                let gd = g.row_slice(k);
                for (o, x) in ga.data_mut()[src * cols..(src + 1) * cols].iter_mut().zip(gd) {
                    *o += x;
                }
            }
            vec![(*a, ga)]
        }
        Op::Pick(a, r, c) => {
            let (rows, cols) = val(*a).dims2();
            let mut ga = Array::zeros(rows, cols);
            ga.set(*r, *c, g.item());
            vec![(*a, ga)]
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).dims2();
            vec![(*a, Array::filled(r, c, g.item()))]
        }
        Op::Mean(a) => {
            let (r, c) = val(*a).dims2();
            vec![(*a, Array::filled(r, c, g.item() / (r * c) as f64))]
        }
        Op::MeanRows(a) => {
            let (r, c) = val(*a).dims2();
            let mut ga = Array::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    ga.set(i, j, g.data()[j] / r as f64);
                }
            }
            vec![(*a, ga)]
        }
        Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 }))],
        Op::Tanh(a) => vec![(*a, g.zip_map(out, |gx, y| gx * (1.0 - y * y)))],
        Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |gx, y| gx * y * (1.0 - y)))],
        Op::Log(a) => vec![(*a, g.zip_map(val(*a), |gx, x| gx / x))],
        Op::Exp(a) => vec![(*a, g.zip_map(out, |gx, y| gx * y))],
        Op::Softmax(a, axis) => {
            let (rows, cols) = out.dims2();
            let mut ga = Array::zeros(rows, cols);
            if *axis == 1 {
                for i in 0..rows {
                    let y = out.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        ga.set(i, j, y[j] * (gr[j] - dot));
                    }
                }
            } else {
                for j in 0..cols {
                    let dot: f64 = (0..rows).map(|i| out.get(i, j) * g.get(i, j)).sum();
                    for i in 0..rows {
                        ga.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                    }
                }
            }
            vec![(*a, ga)]
        }
        Op::LogSoftmax(a) => {
            let (rows, cols) = out.dims2();
            let mut ga = Array::zeros(rows, cols);
            for i in 0..rows {
                let gr = g.row_slice(i);
                let gsum: f64 = gr.iter().sum();
                for j in 0..cols {
                    ga.set(i, j, gr[j] - out.get(i, j).exp() * gsum);
                }
            }
            vec![(*a, ga)]
        }
        Op::LayerNorm(a, eps) => {
            let x = val(*a);
            let (rows, cols) = x.dims2();
            let n = cols as f64;
            let mut ga = Array::zeros(rows, cols);
            for i in 0..rows {
                let xr = x.row_slice(i);
                let mean = xr.iter().sum::<f64>() / n;
                let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                let y = out.row_slice(i);
                let gr = g.row_slice(i);
                let gmean = gr.iter().sum::<f64>() / n;
                let gy_mean = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                for j in 0..cols {
                    ga.set(i, j, inv * (gr[j] - gmean - y[j] * gy_mean));
                }
            }
            vec![(*a, ga)]
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array> {
        self.graph.value_of(self.id)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.value().dims2()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(&self, value: Array, op: Op) -> Var<'g> {
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, op, needs)
    }

    fn binary(&self, other: Var<'g>, value: Array, op: Op) -> Var<'g> {
        let needs = self.graph.needs(&[self.id, other.id]);
        self.graph.push(value, op, needs)
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    fn same_shape(&self, other: &Var<'g>, what: &str) -> Result<(Rc<Array>, Rc<Array>)> {
        let (a, b) = (self.value(), other.value());
        if a.dims2() != b.dims2() {
            return Err(Error::dim(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(&other, "add")?;
        Ok(self.binary(other, a.zip_map(&b, |x, y| x + y), Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(&other, "sub")?;
        Ok(self.binary(other, a.zip_map(&b, |x, y| x - y), Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(&other, "mul")?;
        Ok(self.binary(other, a.zip_map(&b, |x, y| x * y), Op::Mul(self.id, other.id)))
    }

    fn row_broadcast(&self, row: &Var<'g>, what: &str) -> Result<(Rc<Array>, Rc<Array>)> {
        let (a, r) = (self.value(), row.value());
        if r.dims2() != (1, a.cols()) {
            return Err(Error::dim(format!("{what}: row {:?} against {:?}", r.shape(), a.shape())));
        }
        Ok((a, r))
    }

    /// Add a `1×n` row to every row.
    pub fn add_row(&self, row: Var<'g>) -> Result<Var<'g>> {
        let (a, r) = self.row_broadcast(&row, "add_row")?;
        let cols = a.cols();
        let mut out = (*a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x += r.data()[k % cols];
        }
        Ok(self.binary(row, out, Op::AddRow(self.id, row.id)))
    }

    /// Multiply every row elementwise by a `1×n` row.
    pub fn mul_row(&self, row: Var<'g>) -> Result<Var<'g>> {
        let (a, r) = self.row_broadcast(&row, "mul_row")?;
        let cols = a.cols();
        let mut out = (*a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x *= r.data()[k % cols];
        }
        Ok(self.binary(row, out, Op::MulRow(self.id, row.id)))
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        self.unary(self.value().map(|x| x * k), Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        self.unary(self.value().map(|x| x + c), Op::AddScalar(self.id))
    }

    pub fn transpose(&self) -> Var<'g> {
        self.unary(self.value().transpose(), Op::Transpose(self.id))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        if start >= end || end > rows {
            return Err(Error::dim(format!("slice_rows {start}..{end} of {rows}")));
        }
        let v = Array::matrix(end - start, cols, a.data()[start * cols..end * cols].to_vec())?;
        Ok(self.unary(v, Op::SliceRows(self.id, start)))
    }

    pub fn row(&self, r: usize) -> Result<Var<'g>> {
        self.slice_rows(r, r + 1)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        if start >= end || end > cols {
            return Err(Error::dim(format!("slice_cols {start}..{end} of {cols}")));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&a.row_slice(r)[start..end]);
        }
        Ok(self.unary(Array::matrix(rows, end - start, data)?, Op::SliceCols(self.id, start)))
    }

    /// Rows `indices[k]` stacked in order (embedding lookup).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        if indices.is_empty() {
            return Err(Error::dim("gather_rows with no indices"));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::dim(format!("gather index {i} of {rows} rows")));
            }
            data.extend_from_slice(a.row_slice(i));
        }
        Ok(self.unary(Array::matrix(indices.len(), cols, data)?, Op::GatherRows(self.id, indices.to_vec())))
    }

    /// Single entry as a `1×1`.
    pub fn pick(&self, r: usize, c: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        if r >= rows || c >= cols {
            return Err(Error::dim(format!("pick ({r},{c}) of {rows}×{cols}")));
        }
        Ok(self.unary(Array::scalar(a.get(r, c)), Op::Pick(self.id, r, c)))
    }

    pub fn sum(&self) -> Var<'g> {
        self.unary(Array::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let a = self.value();
        self.unary(Array::scalar(a.sum() / a.len() as f64), Op::Mean(self.id))
    }

    /// Column means: `r×c → 1×c`.
    pub fn mean_rows(&self) -> Var<'g> {
        let a = self.value();
        let mut out = col_sums(&a);
        out.scale_in_place(1.0 / a.rows() as f64);
        self.unary(out, Op::MeanRows(self.id))
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(self.value().map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(self.value().map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn log(&self) -> Var<'g> {
        self.unary(self.value().map(f64::ln), Op::Log(self.id))
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn square(&self) -> Var<'g> {
        self.mul(*self).expect("same shape")
    }

    /// Softmax along `axis` (1: each row sums to one, 0: each column).
    pub fn softmax(&self, axis: usize) -> Result<Var<'g>> {
        if axis > 1 {
            return Err(Error::dim(format!("softmax axis {axis} on a matrix")));
        }
        let a = self.value();
        Ok(self.unary(softmax_array(&a, axis), Op::Softmax(self.id, axis)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Var<'g> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        let mut out = Array::zeros(rows, cols);
        for i in 0..rows {
            let r = a.row_slice(i);
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for j in 0..cols {
                out.set(i, j, r[j] - lse);
            }
        }
        self.unary(out, Op::LogSoftmax(self.id))
    }

    /// Row-wise normalisation to zero mean, unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Var<'g> {
        let a = self.value();
        let (rows, cols) = a.dims2();
        let n = cols as f64;
        let mut out = Array::zeros(rows, cols);
        for i in 0..rows {
            let r = a.row_slice(i);
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..cols {
                out.set(i, j, (r[j] - mean) * inv);
            }
        }
        self.unary(out, Op::LayerNorm(self.id, eps))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a plain array along `axis`.
pub fn softmax_array(a: &Array, axis: usize) -> Array {
    let (rows, cols) = a.dims2();
    let mut out = Array::zeros(rows, cols);
    if axis == 1 {
        for i in 0..rows {
            let r = a.row_slice(i);
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..cols {
                out.set(i, j, e[j] / s);
            }
        }
    } else {
        for j in 0..cols {
            let m = (0..rows).map(|i| a.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..rows).map(|i| (a.get(i, j) - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for i in 0..rows {
                out.set(i, j, e[i] / s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let x = g.leaf(Array::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let grads = g.backward(x.sum()).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &Array::ones(2, 3));
    }

    #[test]
    fn product_gradient_swaps_operands() {
        let g = Graph::new();
        let xa = Array::row(vec![1.0, 2.0, 3.0]);
        let ya = Array::row(vec![-4.0, 0.5, 2.0]);
        let x = g.leaf(xa.clone());
        let y = g.leaf(ya.clone());
        let grads = g.backward(x.mul(y).unwrap().sum()).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &ya);
        assert_eq!(grads.wrt(y).unwrap(), &xa);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Array::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_poisons_the_graph() {
        let g = Graph::new();
        let x = g.leaf(Array::row(vec![-1.0]));
        let y = x.log().sum();
        assert!(matches!(g.backward(y), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_basics() {
        let g = Graph::new();
        let s = g.constant(Array::row(vec![0.0, 0.0])).softmax(1).unwrap().value();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = g.constant(Array::row(vec![1000.0, 0.0])).softmax(1).unwrap().value();
        assert_eq!(s.get(0, 0), 1.0);
        assert!(s.get(0, 1) < 1e-300);
    }

    #[test]
    fn shared_param_binds_once() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::row(vec![2.0]));
        let g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        assert_eq!(a.id(), b.id());
        let grads = g.backward(a.mul(b).unwrap().sum()).unwrap();
        assert_eq!(grads.param(w).unwrap().item(), 4.0);
    }

    #[test]
    fn no_grad_graph_binds_constants() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::row(vec![2.0]));
        let g = Graph::no_grad();
        let a = g.param(&store, w);
        let grads = g.backward(a.sum()).unwrap();
        assert!(grads.param(w).is_none());
    }

    #[test]
    fn f32_precision_rounds_values() {
        let g = Graph::with_precision(Precision::F32);
        let x = g.constant(Array::row(vec![0.1]));
        assert_eq!(x.value().item(), 0.1f32 as f64);
    }
}
