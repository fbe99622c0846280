//! Operation tape and reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward sweep is a single reverse pass.

use crate::kernels::{self, AttentionDims, LayerNormCache};
use crate::{Real, Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddConst(Var),
    Square(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        cache: LayerNormCache<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    CosineRows {
        a: Var,
        b: Var,
        norms: Vec<(F, F)>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A tape of tensor operations.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Whether `rhs` can be broadcast against `lhs` (equal, row, column or scalar).
fn broadcastable(lhs: [usize; 2], rhs: [usize; 2]) -> bool {
    (rhs[0] == lhs[0] || rhs[0] == 1) && (rhs[1] == lhs[1] || rhs[1] == 1)
}

#[inline]
fn bidx(r: usize, c: usize, rhs: [usize; 2]) -> usize {
    let rr = if rhs[0] == 1 { 0 } else { r };
    let cc = if rhs[1] == 1 { 0 } else { c };
    rr * rhs[1] + cc
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        let mut value = value;
        value.requires_grad = requires_grad;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds a leaf, tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Adds a gradient-tracked leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Adds an untracked leaf.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a + b` with `b` broadcast over rows and/or columns.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_op(a, b, "add", |x, y| x + y)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a ⊙ b` with `b` broadcast over rows and/or columns.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_op(a, b, "mul", |x, y| x * y)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    fn broadcast_op(
        &self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(shape_err(op, sa, sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(av.len());
        for r in 0..sa[0] {
            for c in 0..sa[1] {
                data.push(f(av[r * sa[1] + c], bv[bidx(r, c, sb)]));
            }
        }
        Tensor::new(sa[0], sa[1], data)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.tracked(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_const(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.tracked(&[a]);
        self.push(out, Op::AddConst(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.tracked(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::gelu);
        let rg = self.tracked(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with optional affine `gain`/`bias` rows.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        eps: F,
    ) -> Result<Var> {
        if eps <= F::zero() {
            return Err(TensorError::Config("layer_norm eps must be positive".into()));
        }
        let [rows, cols] = self.shape(x);
        for p in [gain, bias].into_iter().flatten() {
            if self.shape(p) != [1, cols] {
                return Err(shape_err("layer_norm", [rows, cols], self.shape(p)));
            }
        }
        let (out, cache) = kernels::layer_norm_forward(
            self.value(x).data(),
            rows,
            cols,
            gain.map(|g| self.value(g).data()),
            bias.map(|b| self.value(b).data()),
            eps,
        );
        let mut deps = vec![x];
        deps.extend(gain);
        deps.extend(bias);
        let rg = self.tracked(&deps);
        let value = Tensor::new(rows, cols, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q: [tq, d]`, `k: [tk, d]`, `v: [tk, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if heads == 0 || sq[1] % heads != 0 {
            return Err(TensorError::Config(format!(
                "width {} is not divisible into {heads} heads",
                sq[1]
            )));
        }
        if sk[1] != sq[1] {
            return Err(shape_err("attention", sq, sk));
        }
        if sv != sk {
            return Err(shape_err("attention", sk, sv));
        }
        let dims = AttentionDims {
            tq: sq[0],
            tk: sk[0],
            dim: sq[1],
            heads,
        };
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            &dims,
        );
        let rg = self.tracked(&[q, k, v]);
        let value = Tensor::new(sq[0], sq[1], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&tensors)?;
        let rg = self.tracked(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[1] {
            return Err(TensorError::Contract(format!(
                "column range {start}..{end} outside width {}",
                s[1]
            )));
        }
        let out = self.value(a).slice_cols(start, end);
        let rg = self.tracked(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Row lookup: output row `i` is row `indices[i]` of `table`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Contract(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(src.row_slice(i));
        }
        let out = Tensor::new(indices.len(), cols, data)?;
        let rg = self.tracked(&[table]);
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.tracked(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / F::of(t.len() as f64));
        let rg = self.tracked(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Per-row cosine similarity, `[rows, 1]`. A row with zero norm on either
    /// side has similarity 0 and passes no gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("cosine_rows", sa, sb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(sa[0]);
        let mut norms = Vec::with_capacity(sa[0]);
        for r in 0..sa[0] {
            let (x, y) = (av.row_slice(r), bv.row_slice(r));
            let na = x.iter().map(|&v| v * v).sum::<F>().sqrt();
            let nb = y.iter().map(|&v| v * v).sum::<F>().sqrt();
            norms.push((na, nb));
            if na > F::zero() && nb > F::zero() {
                let dot: F = x.iter().zip(y).map(|(&p, &q)| p * q).sum();
                out.push(dot / (na * nb));
            } else {
                out.push(F::zero());
            }
        }
        let value = Tensor::new(sa[0], 1, out)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::CosineRows { a, b, norms }, rg))
    }

    /// `x·w + b` for `x: [t, in]`, `w: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if self.shape(loss) != [1, 1] {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, delta: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Sums `g` down to the shape of a broadcast operand.
    fn reduce_to(g: &Tensor<F>, target: [usize; 2]) -> Tensor<F> {
        let s = g.shape();
        if s == target {
            return g.clone();
        }
        let mut out = Tensor::zeros(target[0], target[1]);
        let data = g.data();
        let o = out.data_mut();
        for r in 0..s[0] {
            for c in 0..s[1] {
                let i = bidx(r, c, target);
                o[i] = o[i] + data[r * s[1] + c];
            }
        }
        out
    }

    fn propagate(
        &self,
        node: &Node<F>,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(bv)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, av.matmul_tn(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, Self::reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-F::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let [rows, cols] = av.shape();
                let sb = bv.shape();
                if self.requires_grad(*a) {
                    let da = Tensor::from_fn(rows, cols, |r, c| {
                        g.at(r, c) * bv.data()[bidx(r, c, sb)]
                    });
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let full = Tensor::from_fn(rows, cols, |r, c| g.at(r, c) * av.at(r, c));
                    self.accumulate(grads, *b, Self::reduce_to(&full, sb));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Square(a) => {
                let av = self.value(*a);
                let d = Tensor::new(
                    av.rows(),
                    av.cols(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gi, &x)| F::of(2.0) * x * gi)
                        .collect(),
                )?;
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let d = Tensor::new(
                    av.rows(),
                    av.cols(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gi, &x)| gi * kernels::gelu_grad(x))
                        .collect(),
                )?;
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let [rows, cols] = self.shape(*x);
                let (dx, dg, db) = kernels::layer_norm_backward(
                    g.data(),
                    cache,
                    rows,
                    cols,
                    gain.map(|v| self.value(v).data()),
                );
                self.accumulate(grads, *x, Tensor::new(rows, cols, dx)?);
                if let Some(v) = gain {
                    self.accumulate(grads, *v, Tensor::row(dg));
                }
                if let Some(v) = bias {
                    self.accumulate(grads, *v, Tensor::row(db));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (sq, sk) = (self.shape(*q), self.shape(*k));
                let dims = AttentionDims {
                    tq: sq[0],
                    tk: sk[0],
                    dim: sq[1],
                    heads: *heads,
                };
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g.data(),
                    &dims,
                );
                self.accumulate(grads, *q, Tensor::new(sq[0], sq[1], dq)?);
                self.accumulate(grads, *k, Tensor::new(sk[0], sk[1], dk)?);
                self.accumulate(grads, *v, Tensor::new(sk[0], sk[1], dv)?);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.slice_cols(start, start + w));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let [rows, cols] = self.shape(*a);
                let w = g.cols();
                let d = Tensor::from_fn(rows, cols, |r, c| {
                    if c >= *start && c < start + w {
                        g.at(r, c - start)
                    } else {
                        F::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Gather(table, indices) => {
                let [rows, cols] = self.shape(*table);
                let mut d = Tensor::zeros(rows, cols);
                let dd = d.data_mut();
                for (i, &src) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dd[src * cols + c] = dd[src * cols + c] + g.at(i, c);
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                let n = F::of((r * c) as f64);
                self.accumulate(grads, *a, Tensor::full(r, c, g.item() / n));
            }
            Op::CosineRows { a, b, norms } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let [rows, cols] = av.shape();
                let mut da = Tensor::zeros(rows, cols);
                let mut db = Tensor::zeros(rows, cols);
                for (r, &(na, nb)) in norms.iter().enumerate() {
                    if na <= F::zero() || nb <= F::zero() {
                        continue;
                    }
                    let cos = node.value.at(r, 0);
                    let gr = g.at(r, 0);
                    let (x, y) = (av.row_slice(r), bv.row_slice(r));
                    for c in 0..cols {
                        da.data_mut()[r * cols + c] =
                            gr * (y[c] / (na * nb) - cos * x[c] / (na * na));
                        db.data_mut()[r * cols + c] =
                            gr * (x[c] / (na * nb) - cos * y[c] / (nb * nb));
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
        Ok(())
    }
}
