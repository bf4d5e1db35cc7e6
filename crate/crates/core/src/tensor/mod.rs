//! Dense tensors on a reverse-mode computation tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Operations
//! append a node holding the output value and enough bookkeeping to push
//! gradients back to the inputs; [`Tape::backward`] walks the nodes in reverse.
//! Tensors are rank 0, 1 or 2 and stored row-major in `f64`.
//!
//! Trainable parameters live outside the tape in a [`ParamStore`] and enter a
//! forward pass through [`ParamStore::bind`].

mod gradcheck;
mod params;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_EPSILON, ERROR_FLOOR};
pub use params::{Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Binary(Elementwise, Var, Var),
    AddRow(Var, Var),
    ScaleBy(Var, Var),
    AddScalar(Var, Var),
    Scale(Var, f64),
    Unary(UnaryKind, Var),
    Softmax { input: Var, axis: usize },
    MaskedSoftmax { input: Var },
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { input: Var, start: usize },
    Transpose(Var),
    Gather { sources: Vec<Option<(Var, usize)>> },
    Embed { table: Var, ids: Vec<usize>, pad: usize },
    MulConst { input: Var, factor: Vec<f64> },
    Sum(Var),
    Nll { probs: Var, targets: Vec<Option<usize>> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Exp,
    Abs,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Binary(Elementwise::Add, ..) => "add",
            Op::Binary(Elementwise::Sub, ..) => "sub",
            Op::Binary(Elementwise::Mul, ..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::ScaleBy(..) => "scale_by",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Unary(UnaryKind::Sigmoid, _) => "sigmoid",
            Op::Unary(UnaryKind::Tanh, _) => "tanh",
            Op::Unary(UnaryKind::Exp, _) => "exp",
            Op::Unary(UnaryKind::Abs, _) => "abs",
            Op::Softmax { .. } => "softmax",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::Gather { .. } => "gather",
            Op::Embed { .. } => "embed",
            Op::MulConst { .. } => "mul_const",
            Op::Sum(_) => "sum",
            Op::Nll { .. } => "nll",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Leaf | Op::Param(_))
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Rows and columns of a rank 0-2 shape; vectors are single rows.
fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are at most rank 2"),
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Recorded computation. Nodes are appended in execution order, so every
/// node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(Vec::new());
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A tensor created directly from values.
    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if shape.len() > 2 {
            return Err(Error::shape("leaf", format!("rank {} unsupported", shape.len())));
        }
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64, requires_grad: bool) -> Var {
        self.push(Vec::new(), vec![value], Op::Leaf, requires_grad)
    }

    pub(crate) fn param_leaf(&mut self, id: ParamId, shape: &[usize], values: Vec<f64>) -> Var {
        self.push(shape.to_vec(), values, Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient accumulated in `v` by the last backward pass (zeros if none).
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            vec![0.0; self.node(v).value.len()]
        } else {
            g.clone()
        }
    }

    /// Row `r` of a rank-2 tensor (or the whole vector for rank 1).
    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let (_, c) = dims2(self.shape(v));
        &self.value(v)[r * c..(r + 1) * c]
    }

    /// Clears the gradients of leaf tensors.
    pub fn zero_grad(&mut self) {
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.op.is_leaf() {
                grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes
            .iter()
            .zip(self.grads.iter())
            .filter_map(|(n, g)| match n.op {
                Op::Param(id) if !g.is_empty() => Some((id, g.as_slice())),
                _ => None,
            })
    }

    /// Index, op name and shape of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Error> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            n.value.iter().any(|x| !x.is_finite()).then(|| Error::NonFinite {
                node: i,
                op: n.op.name(),
                shape: n.shape.clone(),
            })
        })
    }

    // ---------------------------------------------------------------------
    // Operations

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} × {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += aip * bb;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `a [m×k] · bᵀ` for `b [n×k]`; weight matrices are stored output-major.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_t", format!("{:?} × {:?}ᵀ", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = dot(arow, brow);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMulT(a, b), rg))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = match kind {
            Elementwise::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            Elementwise::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
            Elementwise::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    /// Adds a length-`n` vector to every row of `a [m×n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a));
        if numel(self.shape(bias)) != n || self.shape(bias).len() > 1 && self.shape(bias)[0] != 1 {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let (av, bv) = (self.value(a), self.value(bias));
        let mut out = av.to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(shape, out, Op::AddRow(a, bias), rg))
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let sv = self.item(s);
        let out = self.value(a).iter().map(|x| x * sv).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, s]);
        Ok(self.push(shape, out, Op::ScaleBy(a, s), rg))
    }

    /// Adds the single-element tensor `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("add_scalar", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let sv = self.item(s);
        let out = self.value(a).iter().map(|x| x + sv).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, s]);
        Ok(self.push(shape, out, Op::AddScalar(a, s), rg))
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, kind: UnaryKind) -> Var {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Exp => f64::exp,
            UnaryKind::Abs => f64::abs,
        };
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::Unary(kind, a), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Sigmoid => self.unary(a, UnaryKind::Sigmoid),
            Activation::Tanh => self.unary(a, UnaryKind::Tanh),
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Abs)
    }

    /// Softmax along `axis` with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rank = shape.len().max(1);
        if axis >= rank {
            return Err(Error::shape("softmax", format!("axis {} of {:?}", axis, shape)));
        }
        let (r, c) = dims2(&shape);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        // rank-2 axis 0 runs down columns; everything else along rows
        let (groups, len, stride, step) = if shape.len() == 2 && axis == 0 {
            (c, r, 1, c)
        } else {
            (r, c, c, 1)
        };
        for g in 0..groups {
            let idx = |t: usize| g * stride + t * step;
            let max = (0..len).map(|t| x[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for t in 0..len {
                let e = (x[idx(t)] - max).exp();
                out[idx(t)] = e;
                total += e;
            }
            for t in 0..len {
                out[idx(t)] /= total;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Softmax { input: a, axis }, rg))
    }

    /// Row softmax where entries with `allowed == false` are excluded
    /// (treated as scores of −∞). A row with nothing allowed is all zero.
    pub fn masked_softmax(&mut self, a: Var, allowed: Vec<bool>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if allowed.len() != numel(&shape) {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask of {} for {:?}", allowed.len(), shape),
            ));
        }
        let (r, c) = dims2(&shape);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for i in 0..r {
            let row = i * c..(i + 1) * c;
            let max = row
                .clone()
                .filter(|&k| allowed[k])
                .map(|k| x[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for k in row.clone() {
                if allowed[k] {
                    let e = (x[k] - max).exp();
                    out[k] = e;
                    total += e;
                }
            }
            for k in row {
                out[k] /= total;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::MaskedSoftmax { input: a }, rg))
    }

    /// Concatenation along `axis`. Rank-1 parts join end to end; rank-2 parts
    /// stack rows (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no parts"))?;
        let base = self.shape(*first).to_vec();
        let rank = base.len();
        if rank == 0 || axis >= rank {
            return Err(Error::shape("concat", format!("axis {} of {:?}", axis, base)));
        }
        for p in parts {
            let s = self.shape(*p);
            let consistent = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == base[d]);
            if !consistent {
                return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {}", base, s, axis)));
            }
        }
        let total: usize = parts.iter().map(|p| self.shape(*p)[axis]).sum();
        let (shape, out) = if rank == 1 || axis == 0 {
            let mut out = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
            for p in parts {
                out.extend_from_slice(self.value(*p));
            }
            let mut shape = base.clone();
            shape[axis] = total;
            (shape, out)
        } else {
            let rows = base[0];
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    out.extend_from_slice(self.row(*p, i));
                }
            }
            (vec![rows, total], out)
        };
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (r, c) = dims2(&shape);
        if start + width > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{}..{} of {:?}", start, start + width, shape),
            ));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + width]);
        }
        let out_shape = if shape.len() == 2 { vec![r, width] } else { vec![width] };
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, out, Op::SliceCols { input: a, start }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", shape)));
        }
        let (r, c) = (shape[0], shape[1]);
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![c, r], out, Op::Transpose(a), rg))
    }

    /// Builds a `[sources.len() × width]` matrix whose row `k` is row
    /// `sources[k].1` of tensor `sources[k].0`, or zeros for `None`.
    pub fn gather_rows(&mut self, sources: Vec<Option<(Var, usize)>>, width: usize) -> Result<Var> {
        let mut out = Vec::with_capacity(sources.len() * width);
        let mut inputs = Vec::new();
        for src in &sources {
            match *src {
                Some((v, r)) => {
                    let (rows, c) = dims2(self.shape(v));
                    if c != width || r >= rows {
                        return Err(Error::shape(
                            "gather_rows",
                            format!("row {} of {:?} into width {}", r, self.shape(v), width),
                        ));
                    }
                    out.extend_from_slice(self.row(v, r));
                    inputs.push(v);
                }
                None => out.extend(std::iter::repeat(0.0).take(width)),
            }
        }
        let rg = self.rg(&inputs);
        Ok(self.push(vec![sources.len(), width], out, Op::Gather { sources }, rg))
    }

    /// Row lookup into an embedding table `[vocab × dim]`. Gradients are
    /// scattered to the looked-up rows except `pad`, whose row never learns.
    pub fn embed(&mut self, table: Var, ids: &[usize], pad: usize) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape("embed", format!("table {:?}", shape)));
        }
        let (vocab, dim) = (shape[0], shape[1]);
        if let Some(bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {} out of range for vocabulary of {}",
                bad, vocab
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(self.row(table, id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), dim],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                pad,
            },
            rg,
        ))
    }

    /// Elementwise product with a constant buffer (masks, dropout).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(a).len() {
            return Err(Error::shape(
                "mul_const",
                format!("{} factors for {:?}", factor.len(), self.shape(a)),
            ));
        }
        let out = self.value(a).iter().zip(&factor).map(|(x, f)| x * f).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::MulConst { input: a, factor }, rg))
    }

    /// Inverted dropout: in training each entry is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1 − rate)`; otherwise identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {} not in [0, 1)", rate)));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let factor = (0..self.value(a).len())
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        self.mul_const(a, factor)
    }

    /// Sum of all entries (sequential, left to right) as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().fold(0.0, |acc, x| acc + x);
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![total], Op::Sum(a), rg)
    }

    /// Negative log-likelihood `−Σ_b ln probs[b, targets[b]]` over rows with
    /// a target; rows with `None` are skipped.
    pub fn nll(&mut self, probs: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (r, c) = dims2(self.shape(probs));
        if targets.len() != r {
            return Err(Error::shape(
                "nll",
                format!("{} targets for {:?}", targets.len(), self.shape(probs)),
            ));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!(
                "gold label {} out of range for {} classes",
                t, c
            )));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                total -= p[i * c + t].ln();
            }
        }
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Vec::new(),
            vec![total],
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    // ---------------------------------------------------------------------
    // Reverse pass

    /// Propagates `∂loss/∂x` to every tensor that requires a gradient.
    /// Intermediate gradients are recomputed each call; leaf gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !node.op.is_leaf() {
                grad.clear();
            }
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        ensure(&mut self.grads, &self.nodes, loss.0)[0] += 1.0;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if node.op.is_leaf() || !node.requires_grad || self.grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            backprop(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = g;
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn ensure<'g>(grads: &'g mut [Vec<f64>], nodes: &[Node], i: usize) -> &'g mut Vec<f64> {
    let g = &mut grads[i];
    if g.is_empty() {
        g.resize(nodes[i].value.len(), 0.0);
    }
    g
}

/// Accumulates the contribution of node `i` (with upstream gradient `g`)
/// into its inputs.
fn backprop(nodes: &[Node], grads: &mut [Vec<f64>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let wants = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        &Op::MatMul(a, b) => {
            let (m, k) = dims2(&nodes[a.0].shape);
            let n = nodes[b.0].shape[1];
            if wants(a) {
                let bv = &nodes[b.0].value;
                let da = ensure(grads, nodes, a.0);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        da[r * k + p] += dot(grow, &bv[p * n..(p + 1) * n]);
                    }
                }
            }
            if wants(b) {
                let av = &nodes[a.0].value;
                let db = ensure(grads, nodes, b.0);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let a_rp = av[r * k + p];
                        for (d, gg) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += a_rp * gg;
                        }
                    }
                }
            }
        }
        &Op::MatMulT(a, b) => {
            let (m, k) = dims2(&nodes[a.0].shape);
            let n = nodes[b.0].shape[0];
            if wants(a) {
                let bv = &nodes[b.0].value;
                let da = ensure(grads, nodes, a.0);
                for r in 0..m {
                    let drow = &mut da[r * k..(r + 1) * k];
                    for j in 0..n {
                        let grj = g[r * n + j];
                        for (d, bb) in drow.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                            *d += grj * bb;
                        }
                    }
                }
            }
            if wants(b) {
                let av = &nodes[a.0].value;
                let db = ensure(grads, nodes, b.0);
                for r in 0..m {
                    let arow = &av[r * k..(r + 1) * k];
                    for j in 0..n {
                        let grj = g[r * n + j];
                        for (d, aa) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                            *d += grj * aa;
                        }
                    }
                }
            }
        }
        &Op::Binary(kind, a, b) => {
            if wants(a) {
                let contrib: Vec<f64> = match kind {
                    Elementwise::Add | Elementwise::Sub => g.to_vec(),
                    Elementwise::Mul => g.iter().zip(&nodes[b.0].value).map(|(x, y)| x * y).collect(),
                };
                add_into(ensure(grads, nodes, a.0), &contrib);
            }
            if wants(b) {
                let contrib: Vec<f64> = match kind {
                    Elementwise::Add => g.to_vec(),
                    Elementwise::Sub => g.iter().map(|x| -x).collect(),
                    Elementwise::Mul => g.iter().zip(&nodes[a.0].value).map(|(x, y)| x * y).collect(),
                };
                add_into(ensure(grads, nodes, b.0), &contrib);
            }
        }
        &Op::AddRow(a, bias) => {
            if wants(a) {
                add_into(ensure(grads, nodes, a.0), g);
            }
            if wants(bias) {
                let (m, n) = dims2(&nodes[a.0].shape);
                let db = ensure(grads, nodes, bias.0);
                for r in 0..m {
                    add_into(db, &g[r * n..(r + 1) * n]);
                }
            }
        }
        &Op::ScaleBy(a, s) => {
            let sv = nodes[s.0].value[0];
            if wants(a) {
                let da = ensure(grads, nodes, a.0);
                for (d, gg) in da.iter_mut().zip(g) {
                    *d += gg * sv;
                }
            }
            if wants(s) {
                let total = dot(g, &nodes[a.0].value);
                ensure(grads, nodes, s.0)[0] += total;
            }
        }
        &Op::AddScalar(a, s) => {
            if wants(a) {
                add_into(ensure(grads, nodes, a.0), g);
            }
            if wants(s) {
                let total = g.iter().fold(0.0, |acc, x| acc + x);
                ensure(grads, nodes, s.0)[0] += total;
            }
        }
        &Op::Scale(a, c) => {
            let da = ensure(grads, nodes, a.0);
            for (d, gg) in da.iter_mut().zip(g) {
                *d += gg * c;
            }
        }
        &Op::Unary(kind, a) => {
            let y = &node.value;
            let x = &nodes[a.0].value;
            let da = ensure(grads, nodes, a.0);
            for k in 0..g.len() {
                let local = match kind {
                    UnaryKind::Sigmoid => y[k] * (1.0 - y[k]),
                    UnaryKind::Tanh => 1.0 - y[k] * y[k],
                    UnaryKind::Exp => y[k],
                    UnaryKind::Abs => {
                        if x[k] > 0.0 {
                            1.0
                        } else if x[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                };
                da[k] += g[k] * local;
            }
        }
        &Op::Softmax { input, axis } => {
            let shape = &node.shape;
            let (r, c) = dims2(shape);
            let (groups, len, stride, step) = if shape.len() == 2 && axis == 0 {
                (c, r, 1, c)
            } else {
                (r, c, c, 1)
            };
            let y = &node.value;
            let da = ensure(grads, nodes, input.0);
            for grp in 0..groups {
                let idx = |t: usize| grp * stride + t * step;
                let inner = (0..len).fold(0.0, |acc, t| acc + g[idx(t)] * y[idx(t)]);
                for t in 0..len {
                    da[idx(t)] += y[idx(t)] * (g[idx(t)] - inner);
                }
            }
        }
        Op::MaskedSoftmax { input, .. } => {
            let (r, c) = dims2(&node.shape);
            let y = &node.value;
            let da = ensure(grads, nodes, input.0);
            for row in 0..r {
                let span = row * c..(row + 1) * c;
                let inner = span.clone().fold(0.0, |acc, k| acc + g[k] * y[k]);
                for k in span {
                    da[k] += y[k] * (g[k] - inner);
                }
            }
        }
        Op::Concat { parts, axis } => {
            let rank = node.shape.len();
            if rank == 1 || *axis == 0 {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(p) {
                        add_into(ensure(grads, nodes, p.0), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            } else {
                let (rows, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].shape[1];
                    if wants(p) {
                        let dp = ensure(grads, nodes, p.0);
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
        }
        &Op::SliceCols { input, start } => {
            let (r, c) = dims2(&nodes[input.0].shape);
            let w = dims2(&node.shape).1;
            let da = ensure(grads, nodes, input.0);
            for row in 0..r {
                add_into(
                    &mut da[row * c + start..row * c + start + w],
                    &g[row * w..(row + 1) * w],
                );
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let da = ensure(grads, nodes, a.0);
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] += g[j * r + i];
                }
            }
        }
        Op::Gather { sources } => {
            let w = node.shape[1];
            for (k, src) in sources.iter().enumerate() {
                if let Some((v, row)) = *src {
                    if wants(v) {
                        let dv = ensure(grads, nodes, v.0);
                        add_into(&mut dv[row * w..(row + 1) * w], &g[k * w..(k + 1) * w]);
                    }
                }
            }
        }
        Op::Embed { table, ids, pad } => {
            let dim = node.shape[1];
            let dt = ensure(grads, nodes, table.0);
            for (k, &id) in ids.iter().enumerate() {
                if id != *pad {
                    add_into(&mut dt[id * dim..(id + 1) * dim], &g[k * dim..(k + 1) * dim]);
                }
            }
        }
        Op::MulConst { input, factor } => {
            let da = ensure(grads, nodes, input.0);
            for k in 0..g.len() {
                da[k] += g[k] * factor[k];
            }
        }
        &Op::Sum(a) => {
            let g0 = g[0];
            ensure(grads, nodes, a.0).iter_mut().for_each(|d| *d += g0);
        }
        Op::Nll { probs, targets } => {
            let c = dims2(&nodes[probs.0].shape).1;
            let p = &nodes[probs.0].value;
            let dp = ensure(grads, nodes, probs.0);
            for (r, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    dp[r * c + t] -= g[0] / p[r * c + t];
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests;
