//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and reverse insertion order is a valid reverse topological
//! order for [`Tape::backward`].
//!
//! Besides the usual elementwise and contraction ops, the tape carries a
//! straight-through node ([`Tape::straight_through`]) whose forward value is
//! an arbitrary constant while its gradient is routed unchanged to another
//! node. The antenna selection head uses it to forward the hard M-hot mask
//! while training through the scaled softmax.

use super::tensor::{gemm, Tensor};
use crate::error::{shape, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Softmax(Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy(Var, Var),
    Sum(Var),
    Square(Var),
    Cube(Var),
    Mse(Var, Var),
    CrossEntropy(Var, Vec<usize>),
    StraightThrough(Var),
    Tile(Var, usize),
    Outer(Var, Var),
    Reshape(Var),
    Hermitian(Var, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros of the right shape for
    /// disconnected nodes.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Debug, Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "forward value of {:?} is not finite",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` for matrices `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return shape(format!("matmul: {m}x{k} times {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "add")?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "sub")?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), out, ng)
    }

    /// Adds the vector `row` to every row of matrix `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        if self.value(row).shape() != [c] {
            return shape(format!(
                "add_row: matrix {r}x{c} with row {:?}",
                self.value(row).shape()
            ));
        }
        let rv = self.value(row).data().to_vec();
        let mut out = self.value(m).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(&rv) {
                *x += b;
            }
        }
        let ng = self.ng(m) || self.ng(row);
        self.push(Op::AddRow(m, row), out, ng)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "hadamard")?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Hadamard(a, b), out, ng)
    }

    /// Multiplies every row of matrix `m` elementwise by the vector `row`.
    pub fn mul_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        if self.value(row).shape() != [c] {
            return shape(format!(
                "mul_row: matrix {r}x{c} with row {:?}",
                self.value(row).shape()
            ));
        }
        let rv = self.value(row).data().to_vec();
        let mut out = self.value(m).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, s) in chunk.iter_mut().zip(&rv) {
                *x *= s;
            }
        }
        let ng = self.ng(m) || self.ng(row);
        self.push(Op::MulRow(m, row), out, ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(Op::Relu(a), out, ng)
    }

    /// Softmax of a vector, or of every row of a matrix. Uses max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = match t.shape() {
            [n] => *n,
            [_, c] => *c,
            s => return shape(format!("softmax on shape {s:?}")),
        };
        if width == 0 {
            return shape("softmax over an empty axis");
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(width) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(Op::Softmax(a), out, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        let ng = self.ng(a);
        self.push(Op::Scale(a, c), out, ng)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(Op::AddConst(a), out, ng)
    }

    /// `s · x` where `s` is a one-element node (for example a trainable
    /// combination coefficient).
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let c = self.value(s).item()?;
        let out = self.value(x).map(|v| c * v);
        let ng = self.ng(s) || self.ng(x);
        self.push(Op::ScaleBy(s, x), out, ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(Op::Square(a), out, ng)
    }

    pub fn cube(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x * x);
        let ng = self.ng(a);
        self.push(Op::Cube(a), out, ng)
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).expect_same_shape(self.value(b), "mse")?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mse(a, b), Tensor::scalar(s / n), ng)
    }

    /// Mean softmax cross-entropy of the rows of `logits` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.value(logits).dims2()?;
        if labels.len() != r {
            return shape(format!("cross_entropy: {r} rows, {} labels", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return shape(format!("cross_entropy: label {bad} out of {c} classes"));
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        for (row, &y) in data.chunks(c).zip(labels) {
            total += log_sum_exp(row) - row[y];
        }
        let ng = self.ng(logits);
        self.push(
            Op::CrossEntropy(logits, labels.to_vec()),
            Tensor::scalar(total / r.max(1) as f64),
            ng,
        )
    }

    /// Emits `forward` as the node value while passing the incoming gradient
    /// to `surrogate` unchanged.
    pub fn straight_through(&mut self, forward: Tensor, surrogate: Var) -> Result<Var> {
        forward.expect_same_shape(self.value(surrogate), "straight_through")?;
        let ng = self.ng(surrogate);
        self.push(Op::StraightThrough(surrogate), forward, ng)
    }

    /// Concatenates `times` copies of a vector.
    pub fn tile(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return shape(format!("tile expects a vector, got {:?}", t.shape()));
        }
        let mut out = Vec::with_capacity(t.len() * times);
        for _ in 0..times {
            out.extend_from_slice(t.data());
        }
        let ng = self.ng(a);
        self.push(Op::Tile(a, times), Tensor::vector(out), ng)
    }

    /// Outer product `u vᵀ` of two vectors.
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.rank() != 1 || tv.rank() != 1 {
            return shape("outer expects two vectors");
        }
        let mut out = Vec::with_capacity(tu.len() * tv.len());
        for &a in tu.data() {
            out.extend(tv.data().iter().map(|&b| a * b));
        }
        let value = Tensor::matrix(tu.len(), tv.len(), out)?;
        let ng = self.ng(u) || self.ng(v);
        self.push(Op::Outer(u, v), value, ng)
    }

    pub fn reshape(&mut self, a: Var, new_shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(new_shape)?;
        let ng = self.ng(a);
        self.push(Op::Reshape(a), out, ng)
    }

    /// Hermitian completion `R + Rᴴ` applied per row of packed matrices.
    ///
    /// Each row (or the single vector) holds an `n×n` complex matrix as
    /// `[re (row-major), im (row-major)]`. The output keeps that layout with
    /// real part `re + reᵀ` and imaginary part `im − imᵀ`.
    pub fn hermitian(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        let width = match t.shape() {
            [w] => *w,
            [_, w] => *w,
            s => return shape(format!("hermitian on shape {s:?}")),
        };
        if width != 2 * n * n {
            return shape(format!("hermitian: row width {width} is not 2·{n}²"));
        }
        let mut out = t.clone();
        for (src, dst) in t.data().chunks(width).zip(out.data_mut().chunks_mut(width)) {
            hermitian_apply(src, dst, n);
        }
        let ng = self.ng(a);
        self.push(Op::Hermitian(a, n), out, ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if self.ng(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, false);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, ga)?);
                }
                if self.ng(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, false);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                if self.ng(*row) {
                    let c = self.value(*row).len();
                    let mut gr = vec![0.0; c];
                    for chunk in g.data().chunks(c) {
                        for (acc, x) in gr.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::vector(gr));
                }
            }
            Op::Hadamard(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::MulRow(m, row) => {
                let c = self.value(*row).len();
                if self.ng(*m) {
                    let rv = self.value(*row).data();
                    let mut gm = g.clone();
                    for chunk in gm.data_mut().chunks_mut(c) {
                        for (x, s) in chunk.iter_mut().zip(rv) {
                            *x *= s;
                        }
                    }
                    self.accumulate(grads, *m, gm);
                }
                if self.ng(*row) {
                    let mut gr = vec![0.0; c];
                    for (gc, mc) in g.data().chunks(c).zip(self.value(*m).data().chunks(c)) {
                        for ((acc, x), y) in gr.iter_mut().zip(gc).zip(mc) {
                            *acc += x * y;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::vector(gr));
                }
            }
            Op::Relu(a) => {
                let ga = g.zip(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let width = *y.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; y.len()];
                for ((gy, yy), out) in g
                    .data()
                    .chunks(width)
                    .zip(y.data().chunks(width))
                    .zip(ga.chunks_mut(width))
                {
                    let dot: f64 = gy.iter().zip(yy).map(|(a, b)| a * b).sum();
                    for ((o, gi), yi) in out.iter_mut().zip(gy).zip(yy) {
                        *o = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), ga)?);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| c * x));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::ScaleBy(s, x) => {
                if self.ng(*s) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    let sh = self.value(*s).shape().to_vec();
                    self.accumulate(grads, *s, Tensor::new(sh, vec![d])?);
                }
                if self.ng(*x) {
                    let c = self.value(*s).item()?;
                    self.accumulate(grads, *x, g.map(|v| c * v));
                }
            }
            Op::Sum(a) => {
                let g0 = g.item()?;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g0));
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, g.zip(self.value(*a), |x, v| 2.0 * v * x));
            }
            Op::Cube(a) => {
                self.accumulate(grads, *a, g.zip(self.value(*a), |x, v| 3.0 * v * v * x));
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len().max(1) as f64;
                let g0 = g.item()?;
                let diff = self.value(*a).zip(self.value(*b), |x, y| 2.0 * g0 * (x - y) / n);
                if self.ng(*b) {
                    self.accumulate(grads, *b, diff.map(|x| -x));
                }
                self.accumulate(grads, *a, diff);
            }
            Op::CrossEntropy(logits, labels) => {
                let (r, c) = self.value(*logits).dims2()?;
                let g0 = g.item()? / r.max(1) as f64;
                let mut gl = self.value(*logits).clone();
                for (row, &y) in gl.data_mut().chunks_mut(c).zip(labels) {
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= g0);
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::StraightThrough(surrogate) => self.accumulate(grads, *surrogate, g.clone()),
            Op::Tile(a, times) => {
                let n = self.value(*a).len();
                let mut ga = vec![0.0; n];
                for chunk in g.data().chunks(n).take(*times) {
                    for (acc, x) in ga.iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                self.accumulate(grads, *a, Tensor::vector(ga));
            }
            Op::Outer(u, v) => {
                let (m, n) = g.dims2()?;
                if self.ng(*u) {
                    let vv = self.value(*v).data();
                    let gu = g
                        .data()
                        .chunks(n)
                        .map(|row| row.iter().zip(vv).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *u, Tensor::vector(gu));
                }
                if self.ng(*v) {
                    let uu = self.value(*u).data();
                    let mut gv = vec![0.0; n];
                    for (i, row) in g.data().chunks(n).enumerate().take(m) {
                        for (acc, x) in gv.iter_mut().zip(row) {
                            *acc += uu[i] * x;
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(gv));
                }
            }
            Op::Reshape(a) => {
                let sh = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.reshaped(&sh)?);
            }
            Op::Hermitian(a, n) => {
                let width = 2 * n * n;
                let mut ga = g.clone();
                for (src, dst) in g.data().chunks(width).zip(ga.data_mut().chunks_mut(width)) {
                    hermitian_apply(src, dst, *n);
                }
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Hadamard(..) => "hadamard",
        Op::MulRow(..) => "mul_row",
        Op::Relu(..) => "relu",
        Op::Softmax(..) => "softmax",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::ScaleBy(..) => "scale_by",
        Op::Sum(..) => "sum",
        Op::Square(..) => "square",
        Op::Cube(..) => "cube",
        Op::Mse(..) => "mse",
        Op::CrossEntropy(..) => "cross_entropy",
        Op::StraightThrough(..) => "straight_through",
        Op::Tile(..) => "tile",
        Op::Outer(..) => "outer",
        Op::Reshape(..) => "reshape",
        Op::Hermitian(..) => "hermitian",
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `re + reᵀ`, `im − imᵀ`. The map is self-adjoint, so the backward rule is
/// the same expression applied to the output gradient.
fn hermitian_apply(src: &[f64], dst: &mut [f64], n: usize) {
    let nn = n * n;
    for i in 0..n {
        for j in 0..n {
            dst[i * n + j] = src[i * n + j] + src[j * n + i];
            dst[nn + i * n + j] = src[nn + i * n + j] - src[nn + j * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0; 4]));
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.25; 4]);

        let x = t.constant(Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        let y = t.softmax(x).unwrap();
        let d = t.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let logits = vec![0.3, -1.2, 4.0, 2.2, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.0).collect();
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(logits));
        let b = t.constant(Tensor::vector(shifted));
        let ya = t.softmax(a).unwrap();
        let yb = t.softmax(b).unwrap();
        let s: f64 = t.value(ya).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(t.value(ya).data().iter().all(|&p| p > 0.0));
        for (p, q) in t.value(ya).data().iter().zip(t.value(yb).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_example() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(s).unwrap().data(), &[1.0]);
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.square(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 2.0]));
        let b = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        let m = t.param(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let n = t.param(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(t.matmul(m, n), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = t.param(Tensor::vector(vec![3.0, 4.0]));
        let h = t.hadamard(c, p).unwrap();
        let s = t.sum(h).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn straight_through_forwards_constant_and_routes_gradient() {
        let mut t = Tape::new();
        let soft = t.param(Tensor::vector(vec![0.2, 0.8]));
        let st = t
            .straight_through(Tensor::vector(vec![0.0, 1.0]), soft)
            .unwrap();
        assert_eq!(t.value(st).data(), &[0.0, 1.0]);
        let x = t.constant(Tensor::vector(vec![5.0, -7.0]));
        let h = t.hadamard(st, x).unwrap();
        let s = t.sum(h).unwrap();
        assert_eq!(t.value(s).item().unwrap(), -7.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(soft).unwrap().data(), &[5.0, -7.0]);
    }

    #[test]
    fn hermitian_examples() {
        let mut t = Tape::new();
        // 1x1: R0 = 1 + j -> 2 + 0j
        let x = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = t.hermitian(x, 1).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 0.0]);
        // [[0, 1+j],[0, 0]] -> [[0, 1+j],[1-j, 0]]
        let x = t.constant(Tensor::vector(vec![0., 1., 0., 0., 0., 1., 0., 0.]));
        let y = t.hermitian(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[0., 1., 1., 0., 0., 1., -1., 0.]);
        let bad = t.constant(Tensor::vector(vec![0.0; 6]));
        assert!(t.hermitian(bad, 2).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1e200]));
        assert!(matches!(t.cube(x), Err(Error::NonFinite(_))));
    }
}
