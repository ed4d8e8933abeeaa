//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node holding its result and the operands it was
//! computed from. Nodes are only ever appended, so the tape is already in
//! topological order and [`Tape::backward`] is a single reverse sweep that
//! visits each node once. Gradients from fan-out are summed.
//!
//! ```
//! use ctcattn::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used to name a node's gradient rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulBT,
    MatVec,
    VecMat,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sum,
    SumRows,
    Softmax,
    SoftmaxCols,
    LogSoftmax,
    LogAddExp,
    Concat,
    Slice,
    Take,
    Stack,
    Gather,
    Shift,
    Conv1dSame,
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    SumRows(Var),
    Softmax(Var),
    SoftmaxCols(Var),
    LogSoftmax(Var),
    LogAddExp(Var, Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Take { src: Var, index: usize },
    Stack(Vec<Var>),
    Gather { src: Var, indices: Vec<usize> },
    Shift { src: Var, offset: isize },
    Conv1dSame { x: Var, filters: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulBT(..) => OpKind::MatMulBT,
            Op::MatVec(..) => OpKind::MatVec,
            Op::VecMat(..) => OpKind::VecMat,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Sum(_) => OpKind::Sum,
            Op::SumRows(_) => OpKind::SumRows,
            Op::Softmax(_) => OpKind::Softmax,
            Op::SoftmaxCols(_) => OpKind::SoftmaxCols,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::LogAddExp(..) => OpKind::LogAddExp,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Take { .. } => OpKind::Take,
            Op::Stack(_) => OpKind::Stack,
            Op::Gather { .. } => OpKind::Gather,
            Op::Shift { .. } => OpKind::Shift,
            Op::Conv1dSame { .. } => OpKind::Conv1dSame,
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Which elementwise function to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Operation recorder. Confined to one thread for the duration of a
/// forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<(OpKind, f64)>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_axis(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
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

    /// Scales the gradient flowing through every node of `kind` by `factor`.
    /// Only meant for negative-control tests of gradient checking.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A tracked leaf: receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, false)
    }

    pub fn zeros(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// Binds a parameter as a tracked leaf. Its gradient is reported by
    /// [`Tape::param_grads`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf {
                param: Some(id.index()),
            },
            true,
        )
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Gradient of the last [`Tape::backward`] loss w.r.t. `v`, if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- linear algebra ----

    /// `[m × k] · [k × p] → [m × p]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * p];
        kernels::matmul_acc(self.value(a), self.value(b), m, k, p, &mut out);
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, p], out, Op::MatMul(a, b), ng))
    }

    /// `[m × k] · [p × k]ᵀ → [m × p]`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_bt", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * p];
        kernels::matmul_bt_acc(self.value(a), self.value(b), m, k, p, &mut out);
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, p], out, Op::MatMulBT(a, b), ng))
    }

    /// `[m × k] · [k] → [m]`
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::shape("matvec", sw, sx));
        }
        let (m, k) = (sw[0], sw[1]);
        let mut out = vec![0.0; m];
        kernels::matvec(self.value(w), self.value(x), m, k, &mut out);
        let ng = self.ng(&[w, x]);
        Ok(self.push(vec![m], out, Op::MatVec(w, x), ng))
    }

    /// `[k] · [k × p] → [p]`, i.e. the `x`-weighted sum of the rows of `m`.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x), self.shape(m));
        if sx.len() != 1 || sm.len() != 2 || sx[0] != sm[0] {
            return Err(Error::shape("vecmat", sx, sm));
        }
        let (k, p) = (sm[0], sm[1]);
        let mut out = vec![0.0; p];
        let (xv, mv) = (self.value(x), self.value(m));
        for i in 0..k {
            kernels::axpy(xv[i], &mv[i * p..(i + 1) * p], &mut out);
        }
        let ng = self.ng(&[x, m]);
        Ok(self.push(vec![p], out, Op::VecMat(x, m), ng))
    }

    // ---- elementwise ----

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        if sa != sb {
            return Err(Error::shape(name, sa, sb));
        }
        let shape = sa.to_vec();
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = match op {
            Binary::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            Binary::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
            Binary::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
        };
        let node_op = match op {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, out, node_op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let xv = self.value(x);
        let out: Vec<f64> = match op {
            Unary::Tanh => xv.iter().map(|v| v.tanh()).collect(),
            Unary::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Exp => xv.iter().map(|v| v.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = xv.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                xv.iter().map(|v| v.ln()).collect()
            }
        };
        let node_op = match op {
            Unary::Tanh => Op::Tanh(x),
            Unary::Sigmoid => Op::Sigmoid(x),
            Unary::Exp => Op::Exp(x),
            Unary::Log => Op::Log(x),
        };
        let ng = self.ng(&[x]);
        Ok(self.push(shape, out, node_op, ng))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    /// Adds the vector `b` to every row of the matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape("add_row", sx, sb));
        }
        let (shape, p) = (sx.to_vec(), sx[1]);
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(p) {
            for (o, bi) in row.iter_mut().zip(bv) {
                *o += bi;
            }
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(shape, out, Op::AddRow(x, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.ng(&[x]);
        self.push(shape, out, Op::Scale(x, c), ng)
    }

    /// Elementwise `log(exp(a) + exp(b))`; `-inf` entries are treated as zero
    /// probability.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("log_add_exp", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| kernels::log_add_exp(x, y))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, out, Op::LogAddExp(a, b), ng))
    }

    // ---- reductions and normalizers ----

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(&[x]);
        self.push(Vec::new(), vec![s], Op::Sum(x), ng)
    }

    /// Sums a matrix over its rows: `[m × p] → [p]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(Error::shape("sum_rows", sx, &[0, 0]));
        }
        let p = sx[1];
        let mut out = vec![0.0; p];
        for row in self.value(x).chunks_exact(p) {
            kernels::axpy(1.0, row, &mut out);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![p], out, Op::SumRows(x), ng))
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let l = last_axis(&shape);
        let mut out = self.value(x).to_vec();
        for grp in out.chunks_exact_mut(l) {
            kernels::softmax_in_place(grp);
        }
        let ng = self.ng(&[x]);
        self.push(shape, out, Op::Softmax(x), ng)
    }

    /// Softmax over the rows of each column of a matrix.
    pub fn softmax_cols(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(Error::shape("softmax_cols", sx, &[0, 0]));
        }
        let (shape, r, c) = (sx.to_vec(), sx[0], sx[1]);
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        let mut col = vec![0.0; r];
        for j in 0..c {
            for i in 0..r {
                col[i] = xv[i * c + j];
            }
            kernels::softmax_in_place(&mut col);
            for i in 0..r {
                out[i * c + j] = col[i];
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(shape, out, Op::SoftmaxCols(x), ng))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let l = last_axis(&shape);
        let mut out = self.value(x).to_vec();
        for grp in out.chunks_exact_mut(l) {
            kernels::log_softmax_in_place(grp);
        }
        let ng = self.ng(&[x]);
        self.push(shape, out, Op::LogSoftmax(x), ng)
    }

    // ---- structural ----

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(Error::shape("concat", s, &[0]));
            }
            out.extend_from_slice(self.value(p));
        }
        let ng = self.ng(parts);
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), ng))
    }

    /// Elements `[start, start + len)` of a 1-D tensor.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 1 || start + len > s[0] {
            return Err(Error::shape("slice", s, &[start, len]));
        }
        let out = self.value(src)[start..start + len].to_vec();
        let ng = self.ng(&[src]);
        Ok(self.push(vec![len], out, Op::Slice { src, start }, ng))
    }

    /// Sub-tensor `index` along the leading axis (a row of a matrix, a slab of
    /// a rank-3 tensor).
    pub fn take(&mut self, src: Var, index: usize) -> Result<Var> {
        let s = self.shape(src);
        if s.is_empty() || index >= s[0] {
            return Err(Error::shape("take", s, &[index]));
        }
        let shape = s[1..].to_vec();
        let blk: usize = shape.iter().product();
        let out = self.value(src)[index * blk..(index + 1) * blk].to_vec();
        let ng = self.ng(&[src]);
        Ok(self.push(shape, out, Op::Take { src, index }, ng))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", &[0], &[1]))?;
        let inner = self.shape(*first).to_vec();
        let mut out = Vec::with_capacity(parts.len() * inner.iter().product::<usize>());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(Error::shape("stack", &inner, self.shape(p)));
            }
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let ng = self.ng(parts);
        Ok(self.push(shape, out, Op::Stack(parts.to_vec()), ng))
    }

    /// `out[i] = src[indices[i]]` for a 1-D source.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 1 {
            return Err(Error::shape("gather", s, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::shape("gather", s, &[bad]));
        }
        let sv = self.value(src);
        let out = indices.iter().map(|&i| sv[i]).collect();
        let ng = self.ng(&[src]);
        Ok(self.push(
            vec![indices.len()],
            out,
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// `out[i] = src[i + offset]` when in range, else `fill`.
    pub fn shift(&mut self, src: Var, offset: isize, fill: f64) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 1 {
            return Err(Error::shape("shift", s, &[0]));
        }
        let n = s[0] as isize;
        let sv = self.value(src);
        let out = (0..n)
            .map(|i| {
                let j = i + offset;
                if (0..n).contains(&j) {
                    sv[j as usize]
                } else {
                    fill
                }
            })
            .collect();
        let ng = self.ng(&[src]);
        Ok(self.push(vec![n as usize], out, Op::Shift { src, offset }, ng))
    }

    /// Zero-padded "same" 1-D correlation of `x: [C]` with each row of
    /// `filters: [n_f × w]`, giving `[C × n_f]`. The kernel tap `k` reads
    /// `x[s + k - (w - 1) / 2]`.
    pub fn conv1d_same(&mut self, x: Var, filters: Var) -> Result<Var> {
        let (sx, sf) = (self.shape(x), self.shape(filters));
        if sx.len() != 1 || sf.len() != 2 || sf[1] > sx[0] || sf[1] == 0 {
            return Err(Error::shape("conv1d_same", sx, sf));
        }
        let (c, nf, w) = (sx[0], sf[0], sf[1]);
        let pad = (w - 1) / 2;
        let (xv, fv) = (self.value(x), self.value(filters));
        let mut out = vec![0.0; c * nf];
        for s in 0..c {
            for f in 0..nf {
                let mut acc = 0.0;
                for k in 0..w {
                    let pos = s as isize + k as isize - pad as isize;
                    if (0..c as isize).contains(&pos) {
                        acc += fv[f * w + k] * xv[pos as usize];
                    }
                }
                out[s * nf + f] = acc;
            }
        }
        let ng = self.ng(&[x, filters]);
        Ok(self.push(vec![c, nf], out, Op::Conv1dSame { x, filters }, ng))
    }

    // ---- differentiation ----

    /// Replays the tape backwards from a scalar `loss`, leaving
    /// `d loss / d node` available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.node(loss);
        if n.value.len() != 1 {
            return Err(Error::NonScalarLoss(n.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if let Some((kind, factor)) = self.fault {
                if node.op.kind() == kind {
                    g.iter_mut().for_each(|x| *x *= factor);
                }
            }
            propagate(&self.nodes, &mut grads, node, &g);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradients of bound parameters, one buffer per parameter of `params`
    /// (zeros for parameters that were not bound or not reached).
    pub fn param_grads(&self, params: &ParamSet) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = self.grads.get(i).and_then(|g| g.as_ref()) {
                    kernels::axpy(1.0, g, &mut out[p]);
                }
            }
        }
        out
    }
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| -> &[f64] { &nodes[v.0].value };
    let shp = |v: Var| -> &[usize] { &nodes[v.0].shape };
    let y = &node.value;
    match &node.op {
        Op::Leaf { .. } => {}
        &Op::MatMul(a, b) => {
            let (m, k, p) = (shp(a)[0], shp(a)[1], shp(b)[1]);
            if let Some(ga) = acc(nodes, grads, a) {
                kernels::matmul_bt_acc(g, val(b), m, p, k, ga);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                kernels::matmul_at_acc(val(a), g, m, k, p, gb);
            }
        }
        &Op::MatMulBT(a, b) => {
            let (m, k, p) = (shp(a)[0], shp(a)[1], shp(b)[0]);
            if let Some(ga) = acc(nodes, grads, a) {
                kernels::matmul_acc(g, val(b), m, p, k, ga);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                kernels::matmul_at_acc(g, val(a), m, p, k, gb);
            }
        }
        &Op::MatVec(w, x) => {
            let (m, k) = (shp(w)[0], shp(w)[1]);
            if let Some(gw) = acc(nodes, grads, w) {
                kernels::outer_acc(g, val(x), k, gw);
            }
            if let Some(gx) = acc(nodes, grads, x) {
                kernels::matvec_t_acc(val(w), g, m, k, gx);
            }
        }
        &Op::VecMat(x, m) => {
            let (k, p) = (shp(m)[0], shp(m)[1]);
            if let Some(gx) = acc(nodes, grads, x) {
                let mv = val(m);
                for (i, gi) in gx.iter_mut().enumerate().take(k) {
                    *gi += kernels::dot(&mv[i * p..(i + 1) * p], g);
                }
            }
            if let Some(gm) = acc(nodes, grads, m) {
                kernels::outer_acc(val(x), g, p, gm);
            }
        }
        &Op::Add(a, b) => {
            if let Some(ga) = acc(nodes, grads, a) {
                kernels::axpy(1.0, g, ga);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                kernels::axpy(1.0, g, gb);
            }
        }
        &Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, grads, a) {
                kernels::axpy(1.0, g, ga);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                kernels::axpy(-1.0, g, gb);
            }
        }
        &Op::Mul(a, b) => {
            if let Some(ga) = acc(nodes, grads, a) {
                for ((o, gi), bi) in ga.iter_mut().zip(g).zip(val(b)) {
                    *o += gi * bi;
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                for ((o, gi), ai) in gb.iter_mut().zip(g).zip(val(a)) {
                    *o += gi * ai;
                }
            }
        }
        &Op::AddRow(x, b) => {
            let p = shp(b)[0];
            if let Some(gx) = acc(nodes, grads, x) {
                kernels::axpy(1.0, g, gx);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                for row in g.chunks_exact(p) {
                    kernels::axpy(1.0, row, gb);
                }
            }
        }
        &Op::Scale(x, c) => {
            if let Some(gx) = acc(nodes, grads, x) {
                kernels::axpy(c, g, gx);
            }
        }
        &Op::Tanh(x) => {
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
        }
        &Op::Sigmoid(x) => {
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
        }
        &Op::Exp(x) => {
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                    *o += gi * yi;
                }
            }
        }
        &Op::Log(x) => {
            let xv = val(x);
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi / xi;
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(gx) = acc(nodes, grads, x) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        &Op::SumRows(x) => {
            let p = shp(x)[1];
            if let Some(gx) = acc(nodes, grads, x) {
                for row in gx.chunks_exact_mut(p) {
                    kernels::axpy(1.0, g, row);
                }
            }
        }
        &Op::Softmax(x) => {
            let l = last_axis(&node.shape);
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gg), yy) in gx
                    .chunks_exact_mut(l)
                    .zip(g.chunks_exact(l))
                    .zip(y.chunks_exact(l))
                {
                    let s = kernels::dot(gg, yy);
                    for ((oi, gi), yi) in o.iter_mut().zip(gg).zip(yy) {
                        *oi += yi * (gi - s);
                    }
                }
            }
        }
        &Op::SoftmaxCols(x) => {
            let (r, c) = (node.shape[0], node.shape[1]);
            if let Some(gx) = acc(nodes, grads, x) {
                for j in 0..c {
                    let s: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                    for i in 0..r {
                        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - s);
                    }
                }
            }
        }
        &Op::LogSoftmax(x) => {
            let l = last_axis(&node.shape);
            if let Some(gx) = acc(nodes, grads, x) {
                for ((o, gg), yy) in gx
                    .chunks_exact_mut(l)
                    .zip(g.chunks_exact(l))
                    .zip(y.chunks_exact(l))
                {
                    let s: f64 = gg.iter().sum();
                    for ((oi, gi), yi) in o.iter_mut().zip(gg).zip(yy) {
                        *oi += gi - yi.exp() * s;
                    }
                }
            }
        }
        &Op::LogAddExp(a, b) => {
            let weight = |inp: f64, out: f64| {
                if out == f64::NEG_INFINITY {
                    0.0
                } else {
                    (inp - out).exp()
                }
            };
            if let Some(ga) = acc(nodes, grads, a) {
                for (((o, gi), ai), yi) in ga.iter_mut().zip(g).zip(val(a)).zip(y) {
                    *o += gi * weight(*ai, *yi);
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                for (((o, gi), bi), yi) in gb.iter_mut().zip(g).zip(val(b)).zip(y) {
                    *o += gi * weight(*bi, *yi);
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                if let Some(gp) = acc(nodes, grads, p) {
                    kernels::axpy(1.0, &g[off..off + len], gp);
                }
                off += len;
            }
        }
        &Op::Slice { src, start } => {
            if let Some(gs) = acc(nodes, grads, src) {
                kernels::axpy(1.0, g, &mut gs[start..start + g.len()]);
            }
        }
        &Op::Take { src, index } => {
            let blk = g.len();
            if let Some(gs) = acc(nodes, grads, src) {
                kernels::axpy(1.0, g, &mut gs[index * blk..(index + 1) * blk]);
            }
        }
        Op::Stack(parts) => {
            let blk = g.len() / parts.len();
            for (i, &p) in parts.iter().enumerate() {
                if let Some(gp) = acc(nodes, grads, p) {
                    kernels::axpy(1.0, &g[i * blk..(i + 1) * blk], gp);
                }
            }
        }
        Op::Gather { src, indices } => {
            if let Some(gs) = acc(nodes, grads, *src) {
                for (gi, &ix) in g.iter().zip(indices) {
                    gs[ix] += gi;
                }
            }
        }
        &Op::Shift { src, offset } => {
            let n = g.len() as isize;
            if let Some(gs) = acc(nodes, grads, src) {
                for (i, gi) in g.iter().enumerate() {
                    let j = i as isize + offset;
                    if (0..n).contains(&j) {
                        gs[j as usize] += gi;
                    }
                }
            }
        }
        &Op::Conv1dSame { x, filters } => {
            let (c, nf, w) = (shp(x)[0], shp(filters)[0], shp(filters)[1]);
            let pad = (w - 1) / 2;
            let (xv, fv) = (val(x), val(filters));
            let taps = |s: usize, k: usize| {
                let pos = s as isize + k as isize - pad as isize;
                (0..c as isize).contains(&pos).then_some(pos as usize)
            };
            if let Some(gx) = acc(nodes, grads, x) {
                for s in 0..c {
                    for f in 0..nf {
                        for k in 0..w {
                            if let Some(pos) = taps(s, k) {
                                gx[pos] += g[s * nf + f] * fv[f * w + k];
                            }
                        }
                    }
                }
            }
            if let Some(gf) = acc(nodes, grads, filters) {
                for s in 0..c {
                    for f in 0..nf {
                        for k in 0..w {
                            if let Some(pos) = taps(s, k) {
                                gf[f * w + k] += g[s * nf + f] * xv[pos];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn square_has_gradient_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.scalar(y), 9.0);
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.25));
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let v = vec_leaf(&mut tape, &[1.0, 2.0]);
        let w = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        assert!(tape.add(v, w).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let v = vec_leaf(&mut tape, &[1.0, 0.0]);
        assert!(matches!(tape.log(v), Err(Error::Domain { .. })));
        let v = vec_leaf(&mut tape, &[1.0, -2.0]);
        assert!(tape.log(v).is_err());
    }

    #[test]
    fn tanh_zero_and_add() {
        let mut tape = Tape::new();
        let z = vec_leaf(&mut tape, &[0.0]);
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(t), &[0.0]);
        let a = vec_leaf(&mut tape, &[1.0, 2.0]);
        let b = vec_leaf(&mut tape, &[3.0, 4.0]);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s), &[4.0, 6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = vec_leaf(&mut tape, &[3.0, 4.0]);
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn log_add_exp_gradient_is_zero_for_impossible_entries() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[f64::NEG_INFINITY, 0.0]);
        let b = vec_leaf(&mut tape, &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        let c = tape.log_add_exp(a, b).unwrap();
        let d = tape.slice(c, 1, 1).unwrap();
        let s = tape.sum(d);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shift_and_gather() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let r = tape.shift(x, -1, -9.0).unwrap();
        assert_eq!(tape.value(r), &[-9.0, 1.0, 2.0]);
        let l = tape.shift(x, 1, 0.0).unwrap();
        assert_eq!(tape.value(l), &[2.0, 3.0, 0.0]);
        let g = tape.gather(x, &[2, 2, 0]).unwrap();
        assert_eq!(tape.value(g), &[3.0, 3.0, 1.0]);
        assert!(tape.gather(x, &[3]).is_err());
    }

    #[test]
    fn conv_delta_kernel_copies_input() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0, 1.0, 0.0, 0.0]);
        let f = tape.leaf(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let y = tape.conv1d_same(x, f).unwrap();
        assert_eq!(tape.shape(y), &[4, 1]);
        assert_eq!(tape.value(y), &[0.0, 1.0, 0.0, 0.0]);
        let wide = tape.leaf(Tensor::zeros(vec![2, 5]));
        assert!(tape.conv1d_same(x, wide).is_err());
    }

    #[test]
    fn injected_fault_scales_gradient() {
        let mut tape = Tape::new();
        tape.inject_fault(OpKind::Tanh, 2.0);
        let x = tape.leaf(Tensor::scalar(0.0));
        let t = tape.tanh(x).unwrap();
        tape.backward(t).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }
}
