//! Reverse-mode tape over dense tensors.
//!
//! Every primitive appends one node holding its forward value and whatever
//! it needs for the adjoint. [`Tape::backward`] walks the nodes in exact
//! reverse creation order, so parents always precede children and replay
//! is deterministic.

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{csum, Scalar};
use std::fmt;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Cos,
    Sin,
    Square,
    Exp,
    Sigmoid,
    LayerNorm,
    Sum,
    Mean,
    SumRows,
    AddRowBroadcast,
    ConcatCols,
    SliceCols,
    PairwiseSqDist,
    TrigSums,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Cos => "cos",
            OpKind::Sin => "sin",
            OpKind::Square => "square",
            OpKind::Exp => "exp",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumRows => "sum_rows",
            OpKind::AddRowBroadcast => "add_row_broadcast",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::PairwiseSqDist => "pairwise_sq_dist",
            OpKind::TrigSums => "trig_sums",
        };
        f.write_str(name)
    }
}

enum Op<T> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Cos(Var),
    Sin(Var),
    Square(Var),
    Exp(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    AddRowBroadcast(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    PairwiseSqDist(Var, Var),
    TrigSums(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Cos(..) => OpKind::Cos,
            Op::Sin(..) => OpKind::Sin,
            Op::Square(..) => OpKind::Square,
            Op::Exp(..) => OpKind::Exp,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::SumRows(..) => OpKind::SumRows,
            Op::AddRowBroadcast(..) => OpKind::AddRowBroadcast,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::PairwiseSqDist(..) => OpKind::PairwiseSqDist,
            Op::TrigSums(..) => OpKind::TrigSums,
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// LayerNorm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// An input treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(Op::Constant, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest |pre-activation| over every relu on the tape, or `None` when
    /// the tape has no relu nodes. Finite-difference checks use it to confirm
    /// a point sits away from kinks.
    pub fn min_relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => self.nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .map(|v| v.abs())
                    .reduce(T::min),
                _ => None,
            })
            .reduce(T::min)
    }

    fn push_unchecked(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(
                op.kind().to_string(),
                "non-finite forward value",
            ));
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::PairwiseSqDist(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Cos(a)
            | Op::Sin(a)
            | Op::Square(a)
            | Op::Exp(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::SliceCols(a, _)
            | Op::TrigSums(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }

    fn same_shape(&self, kind: OpKind, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::config(format!("{kind}: shape mismatch {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn rank2(&self, kind: OpKind, a: Var) -> Result<(usize, usize)> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::config(format!(
                "{kind}: expected a matrix, got shape {:?}",
                t.shape()
            )));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2(OpKind::MatMul, a)?;
        let (k2, n) = self.rank2(OpKind::MatMul, b)?;
        if k != k2 {
            return Err(Error::config(format!(
                "matmul: inner dimensions differ ({m}x{k} · {k2}x{n})"
            )));
        }
        let data = matmul_into(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, data)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(OpKind::Add, a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(OpKind::Sub, a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(OpKind::Mul, a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(Op::Relu(a), v)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::cos);
        self.push(Op::Cos(a), v)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::sin);
        self.push(Op::Sin(a), v)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    /// Row-wise normalization followed by the affine map `γ ⊙ x̂ + β`.
    /// `gamma` and `beta` hold one entry per column.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.rank2(OpKind::LayerNorm, x)?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::config(format!(
                "layer_norm: affine parameters must have {c} entries"
            )));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let n = T::from_count(c);
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut normalized = vec![T::zero(); r * c];
        let mut out = vec![T::zero(); r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = csum(row) / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                normalized[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let normalized = Tensor::matrix(r, c, normalized)?;
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            Tensor::matrix(r, c, out)?,
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = csum(self.value(a).data());
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::config("mean of an empty tensor"));
        }
        let s = csum(t.data()) / T::from_count(t.len());
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Column sums of a matrix, as a `1×cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.rank2(OpKind::SumRows, a)?;
        let t = self.value(a);
        let mut acc = vec![crate::scalar::CompensatedSum::new(); c];
        for row in t.data().chunks_exact(c.max(1)) {
            for (s, &v) in acc.iter_mut().zip(row) {
                s.add(v);
            }
        }
        self.push(Op::SumRows(a), Tensor::row(acc.iter().map(|s| s.value()).collect()))
    }

    /// Column sums of `cos(a)` followed by those of `sin(a)`, as one `1×2c` row.
    pub fn trig_sums(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.rank2(OpKind::TrigSums, a)?;
        let t = self.value(a);
        let mut cs = vec![crate::scalar::CompensatedSum::new(); c];
        let mut ss = vec![crate::scalar::CompensatedSum::new(); c];
        let (mut sn, mut co) = (vec![T::zero(); c], vec![T::zero(); c]);
        for row in t.data().chunks_exact(c.max(1)) {
            T::sin_cos_slice(row, &mut sn, &mut co);
            for j in 0..c {
                cs[j].add(co[j]);
                ss[j].add(sn[j]);
            }
        }
        let out = cs.iter().chain(&ss).map(|s| s.value()).collect();
        self.push(Op::TrigSums(a), Tensor::row(out))
    }

    /// Adds the `1×cols` row `b` to each row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.rank2(OpKind::AddRowBroadcast, a)?;
        if self.value(b).len() != c {
            return Err(Error::config(format!(
                "add_row_broadcast: row has {} entries, matrix has {c} columns",
                self.value(b).len()
            )));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(av[i * c..(i + 1) * c].iter().zip(bv).map(|(&x, &y)| x + y));
        }
        self.push(Op::AddRowBroadcast(a, b), Tensor::matrix(r, c, out)?)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::config("concat_cols: no inputs"));
        }
        let r = self.rank2(OpKind::ConcatCols, parts[0])?.0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.rank2(OpKind::ConcatCols, p)?;
            if pr != r {
                return Err(Error::config("concat_cols: row counts differ"));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(r, total, out)?)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rank2(OpKind::SliceCols, a)?;
        if start >= end || end > c {
            return Err(Error::config(format!(
                "slice_cols: range {start}..{end} invalid for {c} columns"
            )));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        self.push(
            Op::SliceCols(a, start),
            Tensor::matrix(r, end - start, out)?,
        )
    }

    /// `D[i][j] = |a_i − b_j|²` for row sets `a: n×d`, `b: m×d`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.rank2(OpKind::PairwiseSqDist, a)?;
        let (m, d2) = self.rank2(OpKind::PairwiseSqDist, b)?;
        if d != d2 {
            return Err(Error::config("pairwise_sq_dist: dimension mismatch"));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ai = av.row_slice(i);
            for j in 0..m {
                let bj = bv.row_slice(j);
                let mut acc = T::zero();
                for (&x, &y) in ai.iter().zip(bj) {
                    let diff = x - y;
                    acc += diff * diff;
                }
                out.push(acc);
            }
        }
        self.push(Op::PairwiseSqDist(a, b), Tensor::matrix(n, m, out)?)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients<T>> {
        let seed_value = self.value(seed);
        if !seed_value.is_scalar() {
            return Err(Error::usage(format!(
                "backward seed must be scalar, got shape {:?}",
                seed_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(Tensor::filled(seed_value.shape(), T::one()));

        for idx in (0..=seed.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut send = |v: Var, contribution: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let ga = matmul_a_bt(gd, bv.data(), m, n, k);
                    send(*a, Tensor::matrix(m, k, ga).expect("shape"));
                }
                if self.requires_grad(*b) {
                    let gb = matmul_at_b(av.data(), gd, m, k, n);
                    send(*b, Tensor::matrix(k, n, gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.zip_map(bv, |x, y| x * y));
                send(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * *c)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
            ),
            Op::Cos(a) => send(*a, g.zip_map(self.value(*a), |x, y| -x * y.sin())),
            Op::Sin(a) => send(*a, g.zip_map(self.value(*a), |x, y| x * y.cos())),
            Op::Square(a) => send(
                *a,
                g.zip_map(self.value(*a), |x, y| x * (y + y)),
            ),
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Sigmoid(a) => send(
                *a,
                g.zip_map(&node.value, |x, s| x * s * (T::one() - s)),
            ),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (r, c) = (normalized.rows(), normalized.cols());
                let gam = self.value(*gamma).data();
                let n = T::from_count(c);
                let mut gx = vec![T::zero(); r * c];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for i in 0..r {
                    let grow = &gd[i * c..(i + 1) * c];
                    let hrow = normalized.row_slice(i);
                    let mut sum_gh = T::zero();
                    let mut sum_ghh = T::zero();
                    for j in 0..c {
                        let gh = grow[j] * gam[j];
                        sum_gh += gh;
                        sum_ghh += gh * hrow[j];
                        ggamma[j] += grow[j] * hrow[j];
                        gbeta[j] += grow[j];
                    }
                    let scale = inv_std[i] / n;
                    for j in 0..c {
                        let gh = grow[j] * gam[j];
                        gx[i * c + j] = scale * (n * gh - sum_gh - hrow[j] * sum_ghh);
                    }
                }
                send(*x, Tensor::matrix(r, c, gx).expect("shape"));
                let gshape = self.value(*gamma).shape().to_vec();
                send(*gamma, Tensor::new(gshape, ggamma).expect("shape"));
                let bshape = self.value(*beta).shape().to_vec();
                send(*beta, Tensor::new(bshape, gbeta).expect("shape"));
            }
            Op::Sum(a) => send(*a, Tensor::filled(self.value(*a).shape(), g.item())),
            Op::Mean(a) => {
                let t = self.value(*a);
                send(
                    *a,
                    Tensor::filled(t.shape(), g.item() / T::from_count(t.len())),
                )
            }
            Op::TrigSums(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let (gc, gs) = gd.split_at(c);
                let mut out = Vec::with_capacity(t.len());
                let (mut sn, mut co) = (vec![T::zero(); c], vec![T::zero(); c]);
                for row in t.data().chunks_exact(c.max(1)) {
                    T::sin_cos_slice(row, &mut sn, &mut co);
                    for j in 0..c {
                        out.push(gs[j] * co[j] - gc[j] * sn[j]);
                    }
                }
                send(*a, Tensor::matrix(t.rows(), c, out).expect("shape"));
            }
            Op::SumRows(a) => {
                let t = self.value(*a);
                let (r, c) = (t.rows(), t.cols());
                let mut out = Vec::with_capacity(r * c);
                for _ in 0..r {
                    out.extend_from_slice(gd);
                }
                send(*a, Tensor::matrix(r, c, out).expect("shape"));
            }
            Op::AddRowBroadcast(a, b) => {
                send(*a, g.clone());
                if self.requires_grad(*b) {
                    let (r, c) = (g.rows(), g.cols());
                    let col: Vec<T> = (0..c)
                        .map(|j| crate::scalar::csum_iter((0..r).map(|i| g.at(i, j))))
                        .collect();
                    let shape = self.value(*b).shape().to_vec();
                    send(*b, Tensor::new(shape, col).expect("shape"));
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (g.rows(), g.cols());
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut out = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            out.extend_from_slice(&gd[i * total + offset..i * total + offset + pc]);
                        }
                        send(p, Tensor::matrix(r, pc, out).expect("shape"));
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let (r, c) = (t.rows(), t.cols());
                let w = g.cols();
                let mut out = vec![T::zero(); r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                send(*a, Tensor::matrix(r, c, out).expect("shape"));
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d, m) = (av.rows(), av.cols(), bv.rows());
                let need_a = self.requires_grad(*a);
                let need_b = self.requires_grad(*b);
                let mut ga = vec![T::zero(); n * d];
                let mut gb = vec![T::zero(); m * d];
                for i in 0..n {
                    let ai = av.row_slice(i);
                    for j in 0..m {
                        let w = gd[i * m + j];
                        if w == T::zero() {
                            continue;
                        }
                        let w2 = w + w;
                        let bj = bv.row_slice(j);
                        for k in 0..d {
                            let diff = w2 * (ai[k] - bj[k]);
                            if need_a {
                                ga[i * d + k] += diff;
                            }
                            if need_b {
                                gb[j * d + k] -= diff;
                            }
                        }
                    }
                }
                if need_a {
                    send(*a, Tensor::matrix(n, d, ga).expect("shape"));
                }
                if need_b {
                    send(*b, Tensor::matrix(m, d, gb).expect("shape"));
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the seed.
    pub fn get(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }

    pub fn take(&mut self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}
