//! Reverse-mode differentiation over a linear tape of primitive operations.
//!
//! Every primitive appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in exact reverse execution order, so gradient accumulation is
//! deterministic for a fixed sequence of calls.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive constant under the square root of [`Tape::pairwise_euclidean`].
pub const DISTANCE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used to name operations in reports and for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Detach,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    AddScalar,
    Relu,
    Square,
    Sum,
    Mean,
    FrobeniusSq,
    SoftmaxRows,
    LogSoftmaxRows,
    PairwiseEuclidean,
    SliceRows,
    ConcatRows,
    MeanRowGroups,
    Gather,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Leaf,
        OpKind::Detach,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Square,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::FrobeniusSq,
        OpKind::SoftmaxRows,
        OpKind::LogSoftmaxRows,
        OpKind::PairwiseEuclidean,
        OpKind::SliceRows,
        OpKind::ConcatRows,
        OpKind::MeanRowGroups,
        OpKind::Gather,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Detach => "detach",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::FrobeniusSq => "frobenius_sq",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
            OpKind::PairwiseEuclidean => "pairwise_euclidean",
            OpKind::SliceRows => "slice_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::MeanRowGroups => "mean_row_groups",
            OpKind::Gather => "gather",
            OpKind::Reshape => "reshape",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    FrobeniusSq(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PairwiseEuclidean(Var, Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    MeanRowGroups(Var, usize),
    Gather(Var, Vec<usize>),
    Reshape(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Detach => OpKind::Detach,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Relu(_) => OpKind::Relu,
            Op::Square(_) => OpKind::Square,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::FrobeniusSq(_) => OpKind::FrobeniusSq,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::PairwiseEuclidean(..) => OpKind::PairwiseEuclidean,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::MeanRowGroups(..) => OpKind::MeanRowGroups,
            Op::Gather(..) => OpKind::Gather,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Scales the gradient contributions of one primitive kind during backward.
/// Exists so the verification harness can prove it detects broken rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub op: OpKind,
    pub factor: f64,
}

/// An append-only record of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape {
            fault,
            ..Self::default()
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Kinds of the recorded operations in execution order.
    pub fn ops(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Gradient of the last backward pass, `None` if `v` was not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Same forward value, no gradient path back through `a`.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Detach, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let value = self.value(a).matmul_raw(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape("transpose", self.shape(a), &[]));
        }
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds the vector `b` (length = columns of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.shape(a).len() != 2 || self.value(b).len() != cols {
            return Err(Error::shape("add_row", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).data();
        for row in value.data_mut().chunks_mut(cols) {
            for (x, &y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::FrobeniusSq(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape("softmax_rows", self.shape(a), &[]));
        }
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape("log_softmax_rows", self.shape(a), &[]));
        }
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmaxRows(a), rg))
    }

    /// Matrix of Euclidean distances between the rows of `x` and the rows of
    /// `y`: `sqrt(max(|x_i|^2 + |y_j|^2 - 2 x_i.y_j, 0) + DISTANCE_EPS)`.
    pub fn pairwise_euclidean(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sx.len() != 2 || sy.len() != 2 || sx[1] != sy[1] {
            return Err(Error::shape("pairwise_euclidean", sx, sy));
        }
        let value = pairwise_distances(self.value(x), self.value(y));
        let rg = self.rg(&[x, y]);
        Ok(self.push(value, Op::PairwiseEuclidean(x, y), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || len == 0 || start + len > t.rows() {
            return Err(Error::invalid(format!(
                "slice_rows: rows {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(&[len, c], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows: no inputs"))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(&[rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Averages consecutive groups of `group` rows: `[G*group × D] -> [G × D]`.
    pub fn mean_row_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || group == 0 || !t.rows().is_multiple_of(group) {
            return Err(Error::invalid(format!(
                "mean_row_groups: {:?} not divisible into groups of {group}",
                t.shape()
            )));
        }
        let (c, g) = (t.cols(), t.rows() / group);
        let mut out = vec![0.0; g * c];
        for r in 0..t.rows() {
            let o = &mut out[(r / group) * c..(r / group + 1) * c];
            for (x, &y) in o.iter_mut().zip(t.row(r)) {
                *x += y;
            }
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let value = Tensor::new(&[g, c], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanRowGroups(a, group), rg))
    }

    /// Picks entries by flat row-major index into a vector.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if indices.is_empty() {
            return Err(Error::invalid("gather: no indices"));
        }
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            data.push(*t.data().get(i).ok_or_else(|| {
                Error::invalid(format!("gather: index {i} out of range for {:?}", t.shape()))
            })?);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(data), Op::Gather(a, indices.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Accumulates gradients of the scalar `loss` into every reachable node
    /// that requires them. Earlier gradients on this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.grads[i] = Some(g);
            let factor = match self.fault {
                Some(f) if f.op == self.nodes[i].op.kind() => Some(f.factor),
                _ => None,
            };
            for (v, mut c) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if let Some(f) = factor {
                    c.data_mut().iter_mut().for_each(|x| *x *= f);
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Detach => vec![],
            Op::MatMul(a, b) => {
                let mut out = vec![];
                if needs(*a) {
                    out.push((*a, g.matmul_raw(&val(*b).transpose())));
                }
                if needs(*b) {
                    out.push((*b, val(*a).transpose().matmul_raw(g)));
                }
                out
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip(val(*b), |x, y| x * y)),
                (*b, g.zip(val(*a), |x, y| x * y)),
            ],
            Op::AddRow(a, b) => {
                let bt = val(*b);
                let cols = bt.len();
                let mut db = vec![0.0; cols];
                for row in g.data().chunks(cols) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                vec![
                    (*a, g.clone()),
                    (*b, Tensor::new(bt.shape(), db).expect("bias shape")),
                ]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| c * x))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => vec![(*a, g.zip(val(*a), |x, y| if y > 0.0 { x } else { 0.0 }))],
            Op::Square(a) => vec![(*a, g.zip(val(*a), |x, y| 2.0 * x * y))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
            }
            Op::FrobeniusSq(a) => {
                let s = g.item();
                vec![(*a, val(*a).map(|x| 2.0 * s * x))]
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dx, &yy) in drow.iter_mut().zip(yrow) {
                        *dx = yy * (*dx - dot);
                    }
                }
                vec![(*a, d)]
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let total: f64 = drow.iter().sum();
                    for (dx, &ly) in drow.iter_mut().zip(yrow) {
                        *dx -= libm::exp(ly) * total;
                    }
                }
                vec![(*a, d)]
            }
            Op::PairwiseEuclidean(x, y) => pairwise_backward(val(*x), val(*y), &node.value, g)
                .into_iter()
                .zip([*x, *y])
                .map(|(t, v)| (v, t))
                .collect(),
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let c = src.cols();
                let mut d = Tensor::zeros(src.shape());
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                vec![(*a, d)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    let d = Tensor::new(val(p).shape(), g.data()[offset..offset + n].to_vec())
                        .expect("concat part shape");
                    offset += n;
                    out.push((p, d));
                }
                out
            }
            Op::MeanRowGroups(a, group) => {
                let src = val(*a);
                let c = src.cols();
                let inv = 1.0 / *group as f64;
                let mut d = Tensor::zeros(src.shape());
                for (r, row) in d.data_mut().chunks_mut(c).enumerate() {
                    for (x, &y) in row.iter_mut().zip(g.row(r / group)) {
                        *x = y * inv;
                    }
                }
                vec![(*a, d)]
            }
            Op::Gather(a, idx) => {
                let mut d = Tensor::zeros(val(*a).shape());
                for (&k, &x) in idx.iter().zip(g.data()) {
                    d.data_mut()[k] += x;
                }
                vec![(*a, d)]
            }
            Op::Reshape(a) => vec![(
                *a,
                g.clone().reshape(val(*a).shape()).expect("reshape grad"),
            )],
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn squared_norms(t: &Tensor) -> Vec<f64> {
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|v| v * v).sum())
        .collect()
}

/// Forward of the distance primitive on plain tensors.
pub fn pairwise_distances(x: &Tensor, y: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), y.rows());
    let (nx, ny) = (squared_norms(x), squared_norms(y));
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let dot: f64 = x.row(i).iter().zip(y.row(j)).map(|(a, b)| a * b).sum();
            let s = (nx[i] + ny[j] - 2.0 * dot).max(0.0);
            out.push(libm::sqrt(s + DISTANCE_EPS));
        }
    }
    Tensor::new(&[m, n], out).expect("distance shape")
}

fn pairwise_backward(x: &Tensor, y: &Tensor, dist: &Tensor, g: &Tensor) -> [Tensor; 2] {
    let (m, n, d) = (x.rows(), y.rows(), x.cols());
    let (nx, ny) = (squared_norms(x), squared_norms(y));
    let mut dx = Tensor::zeros(x.shape());
    let mut dy = Tensor::zeros(y.shape());
    for i in 0..m {
        for j in 0..n {
            let gij = g.at(i, j);
            if gij == 0.0 {
                continue;
            }
            let dot: f64 = x.row(i).iter().zip(y.row(j)).map(|(a, b)| a * b).sum();
            // Clamped region of max(s, 0) has zero slope.
            if nx[i] + ny[j] - 2.0 * dot <= 0.0 {
                continue;
            }
            let coef = gij / dist.at(i, j);
            for k in 0..d {
                let diff = x.at(i, k) - y.at(j, k);
                dx.data_mut()[i * d + k] += coef * diff;
                dy.data_mut()[j * d + k] -= coef * diff;
            }
        }
    }
    [dx, dy]
}
