//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! Nodes are appended in evaluation order, so the tape is a topological
//! order of the (acyclic) graph and backward is a single reverse sweep.
//! Gradient slots are allocated lazily; nodes that no parameter depends on
//! never get one.

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormForward, BinaryOp, ReduceOp, UnaryOp};
use crate::tensor::{Real, Tensor};
use crate::training::triplet;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp<T>, Var),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    },
    Mean(Var, usize),
    Max(Var, Vec<usize>),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat(Vec<Var>, usize),
    Repeat(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MaxPool(Var, Vec<usize>),
    MatMul(Var, Var),
    StripMatMul(Var, Var),
    Gem {
        input: Var,
        p: Var,
        eps: T,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormForward<T>,
        training: bool,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Triplet {
        embeddings: Var,
        labels: Vec<usize>,
        margin: T,
    },
    SumAll(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::StripMatMul(a, b) => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Mean(a, _)
            | Op::Max(a, _)
            | Op::Repeat(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::MaxPool(a, _)
            | Op::SumAll(a) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Conv3d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Concat(parts, _) => parts.clone(),
            Op::Gem { input, p, .. } => vec![*input, *p],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Triplet { embeddings, .. } => vec![*embeddings],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A differentiation tape. One graph per forward pass; parameters enter as
/// leaves via [`Graph::parameter`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient (data, labels, fixed tensors).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable leaf.
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`; zeros if nothing has flowed into it yet.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // -- elementwise -------------------------------------------------------

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let value = ops::binary(op, self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp<T>, a: Var) -> Var {
        let value = ops::unary(op, self.value(a));
        self.push(value, Op::Unary(op, a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(UnaryOp::AddScalar(c), a)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(UnaryOp::MulScalar(c), a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    // -- convolution / pooling ---------------------------------------------

    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let value = ops::conv3d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn max_pool_hw(&mut self, input: Var, k: usize) -> Result<Var> {
        let (value, arg) = ops::max_pool_hw(self.value(input), k)?;
        Ok(self.push(value, Op::MaxPool(input, arg)))
    }

    pub fn gem_pool(&mut self, input: Var, p: Var, eps: T) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(Error::dim("gem_pool", "p", "exponent must be a scalar"));
        }
        let value = ops::gem_pool(self.value(input), self.value(p).item(), eps)?;
        Ok(self.push(value, Op::Gem { input, p, eps }))
    }

    // -- reductions ----------------------------------------------------------

    pub fn reduce(&mut self, op: ReduceOp, input: Var, axis: usize) -> Result<Var> {
        let (value, arg) = ops::reduce(op, self.value(input), axis)?;
        let op = match op {
            ReduceOp::Mean => Op::Mean(input, axis),
            ReduceOp::Max => Op::Max(input, arg.expect("argmax")),
        };
        Ok(self.push(value, op))
    }

    pub fn mean(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Mean, input, axis)
    }

    pub fn max(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Max, input, axis)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::SumAll(input))
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&mut self, input: Var) -> Var {
        let n = T::from_f64(self.value(input).len() as f64);
        let s = self.sum(input);
        self.mul_scalar(s, T::one() / n)
    }

    // -- shape ---------------------------------------------------------------

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_axis(self.value(input), axis, start, len)?;
        Ok(self.push(value, Op::Slice { input, axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat(&values, axis)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Splits the height axis (second to last) into `n` equal strips.
    pub fn split_h(&mut self, input: Var, n: usize) -> Result<Vec<Var>> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 4 {
            return Err(Error::dim("split_h", "rank", format!("expected (c,s,h,w), got {shape:?}")));
        }
        let axis = shape.len() - 2;
        let h = shape[axis];
        if n == 0 || h % n != 0 {
            return Err(Error::Config(format!("{n} parts do not divide height {h}")));
        }
        let rows = h / n;
        (0..n).map(|k| self.slice(input, axis, k * rows, rows)).collect()
    }

    pub fn concat_h(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_h of zero tensors".into()))?;
        let rank = self.shape(first).len();
        if rank < 4 {
            return Err(Error::dim("concat_h", "rank", format!("expected (c,s,h,w), got rank {rank}")));
        }
        self.concat(parts, rank - 2)
    }

    pub fn repeat(&mut self, input: Var, axis: usize, count: usize) -> Result<Var> {
        let value = ops::repeat_axis(self.value(input), axis, count)?;
        Ok(self.push(value, Op::Repeat(input, axis)))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let value = ops::permute(self.value(input), perm)?;
        Ok(self.push(value, Op::Permute(input, perm.to_vec())))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut shape = vec![1];
            shape.extend_from_slice(self.shape(p));
            lifted.push(self.reshape(p, &shape)?);
        }
        self.concat(&lifted, 0)
    }

    // -- dense -----------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn strip_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = ops::strip_matmul(self.value(x), self.value(w))?;
        Ok(self.push(value, Op::StripMatMul(x, w)))
    }

    /// Batch norm over `(batch, d)`. Returns the output node and, in
    /// training mode, the batch mean and biased variance so the caller can
    /// update its running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
        training: bool,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let cache = ops::batchnorm(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
            training,
        )?;
        let stats = cache.batch_mean.clone().zip(cache.batch_var.clone());
        let value = cache.output.clone();
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
                training,
            },
        );
        Ok((v, stats))
    }

    // -- losses ----------------------------------------------------------------

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Batch-all triplet loss over `(n, d)` or `(strips, n, d)` embeddings,
    /// averaged over strips.
    pub fn batch_all_triplet(&mut self, embeddings: Var, labels: &[usize], margin: T) -> Result<Var> {
        let loss = triplet::forward(self.value(embeddings), labels, margin)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Triplet {
                embeddings,
                labels: labels.to_vec(),
                margin,
            },
        ))
    }

    // -- backward --------------------------------------------------------------

    /// Accumulates d(loss)/d(node) into every node that depends on a
    /// parameter. Repeated calls without [`Graph::zero_grad`] add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        // Seed into a scratch tape so repeated calls accumulate.
        let mut scratch: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        scratch[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = scratch[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut scratch)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], scratch: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gt = || Tensor::new(node.value.shape(), g.to_vec()).expect("grad shape");
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, d: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut scratch[v.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                match op {
                    BinaryOp::Add => {
                        send(*a, g.to_vec());
                        send(*b, g.to_vec());
                    }
                    BinaryOp::Sub => {
                        send(*a, g.to_vec());
                        send(*b, g.iter().map(|&x| -x).collect());
                    }
                    BinaryOp::Mul => {
                        if wants(*a) {
                            send(*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                        }
                        if wants(*b) {
                            send(*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
                        }
                    }
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let d = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| gi * ops::unary_derivative(*op, xi, yi))
                    .collect();
                send(*a, d);
            }
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (gx, gk, gb) = ops::conv3d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    &gt(),
                    *stride,
                    *padding,
                    wants(*input),
                )?;
                if let Some(gx) = gx {
                    send(*input, gx.into_data());
                }
                send(*kernel, gk.into_data());
                if let Some(b) = bias {
                    send(*b, gb.into_data());
                }
            }
            Op::Mean(a, axis) => {
                let shape = self.shape(*a);
                let extent = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let scale = T::one() / T::from_f64(extent as f64);
                let mut d = vec![T::zero(); self.value(*a).len()];
                for o in 0..outer {
                    for e in 0..extent {
                        for k in 0..inner {
                            d[(o * extent + e) * inner + k] = g[o * inner + k] * scale;
                        }
                    }
                }
                send(*a, d);
            }
            Op::Max(a, arg) | Op::MaxPool(a, arg) => {
                let mut d = vec![T::zero(); self.value(*a).len()];
                for (&j, &gi) in arg.iter().zip(g) {
                    d[j] += gi;
                }
                send(*a, d);
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input);
                let extent = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let len = node.value.shape()[*axis];
                let mut d = vec![T::zero(); self.value(*input).len()];
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let dst = (o * extent + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(src);
                }
                send(*input, d);
            }
            Op::Concat(parts, axis) => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let inner: usize = node.value.shape()[axis + 1..].iter().product();
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if wants(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        send(p, d);
                    }
                    offset += len;
                }
            }
            Op::Repeat(a, axis) => {
                let count = node.value.shape()[*axis];
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let inner = self.value(*a).len() / outer;
                let mut d = vec![T::zero(); self.value(*a).len()];
                for o in 0..outer {
                    for c in 0..count {
                        let src = (o * count + c) * inner;
                        for k in 0..inner {
                            d[o * inner + k] += g[src + k];
                        }
                    }
                }
                send(*a, d);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Permute(a, perm) => {
                let back = ops::permute(&gt(), &ops::inverse_permutation(perm))?;
                send(*a, back.into_data());
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let gy = gt();
                if wants(*a) {
                    let bt = ops::permute(vb, &[1, 0])?;
                    send(*a, ops::matmul(&gy, &bt)?.into_data());
                }
                if wants(*b) {
                    let at = ops::permute(va, &[1, 0])?;
                    send(*b, ops::matmul(&at, &gy)?.into_data());
                }
            }
            Op::StripMatMul(x, w) => {
                let (gx, gw) = ops::strip_matmul_backward(self.value(*x), self.value(*w), &gt());
                send(*x, gx.into_data());
                send(*w, gw.into_data());
            }
            Op::Gem { input, p, eps } => {
                let pv = self.value(*p).item();
                let (gx, gp) = ops::gem_pool_backward(self.value(*input), pv, *eps, &gt());
                send(*input, gx.into_data());
                send(*p, vec![gp]);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
                training,
            } => {
                let (gx, gg, gb) = ops::batchnorm_backward(cache, self.value(*gamma), &gt(), *training);
                send(*input, gx.into_data());
                send(*gamma, gg.into_data());
                send(*beta, gb.into_data());
            }
            Op::CrossEntropy { labels, probs, logits } => {
                let k = probs.shape()[1];
                let scale = g[0] / T::from_f64(labels.len() as f64);
                let mut d: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
                for (b, &l) in labels.iter().enumerate() {
                    d[b * k + l] -= scale;
                }
                send(*logits, d);
            }
            Op::Triplet {
                embeddings,
                labels,
                margin,
            } => {
                let d = triplet::backward(self.value(*embeddings), labels, *margin, g[0])?;
                send(*embeddings, d.into_data());
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0]; n]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn sigmoid_grad_at_zero_is_quarter() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(Tensor::zeros(&[4]));
        let y = g.sigmoid(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(Tensor::from_fn(&[3], |i| i as f64));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 4.0, 8.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.parameter(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient_slot() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::ones(&[2]));
        let p = g.parameter(Tensor::ones(&[2]));
        let y = g.mul(c, p).unwrap();
        let s = g.sum(y);
        assert!(!g.requires_grad(c));
        g.backward(s).unwrap();
        assert_eq!(g.grad(c), Tensor::zeros(&[2]));
        assert_eq!(g.grad(p), Tensor::ones(&[2]));
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // f = sum(x * x + x) -> df/dx = 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.parameter(Tensor::new(&[2], vec![1.0, -3.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[3.0, -5.0]);
    }
}
