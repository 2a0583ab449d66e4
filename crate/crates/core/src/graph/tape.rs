// Reverse-mode tape.
//
// Every primitive appends a node holding its output value and whatever it
// needs for its backward rule. `backward` walks the nodes in reverse order,
// accumulating adjoints. A tape lives for one forward/backward pass and is
// never shared between threads.

use std::sync::Arc;

use super::{debug_check_finite, BnMode, Graph};
use crate::element::{c, Element};
use crate::error::{dim_err, Result};
use crate::ops::{self, conv, elementwise, linalg, loss, norm, reduce, BatchStats, NORM_EPS};
use crate::tensor::{numel, Gather, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    Silu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: norm::NormCache<T> },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, cache: norm::NormCache<T> },
    BatchNormInfer { x: Var, gamma: Var, beta: Var, cache: norm::NormCache<T> },
    Conv2d(Var, Var, usize),
    Depthwise(Var, Var, usize),
    AvgPool(Var, usize),
    Mean(Var, Vec<usize>),
    Gather(Var, Arc<Gather>),
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    Emd { p: Var, q: Var, r: f64 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Grads<T> {
    /// Gradient of the differentiated output with respect to `v`. Values that
    /// did not influence the output get an exact zero tensor.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn checked(&mut self, name: &str, inputs: &[Var], value: Tensor<T>, op: Op<T>) -> Var {
        if cfg!(debug_assertions) {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.val(v)).collect();
            debug_check_finite(name, &ins, &value);
        }
        self.push(value, op)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Grads<T>> {
        let out = self.val(output);
        if out.len() != 1 {
            return dim_err(format!("backward needs a scalar output, got shape {:?}", out.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out.shape(), T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, t: Tensor<T>| {
                debug_assert_eq!(t.shape(), self.val(v).shape());
                grads[v.0] = Some(match grads[v.0].take() {
                    None => t,
                    Some(prev) => prev.zip_map(&t, |a, b| a + b).expect("same shape"),
                });
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (da, db) = linalg::matmul_backward(self.val(*a), self.val(*b), &g);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Linear(x, w, b) => {
                    let (dx, dw, db) = linalg::linear_backward(self.val(*x), self.val(*w), &g);
                    acc(*x, dx);
                    acc(*w, dw);
                    if let Some(b) = b {
                        acc(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, elementwise::reduce_to(&g, self.val(*a).shape()));
                    acc(*b, elementwise::reduce_to(&g, self.val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let (da, db) = elementwise::mul_backward(self.val(*a), self.val(*b), &g);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Scale(a, s) => acc(*a, ops::scale(&g, *s)),
                Op::Gelu(x) => {
                    let d = g.zip_map(self.val(*x), |gv, xv| gv * elementwise::gelu_grad_scalar(xv))?;
                    acc(*x, d);
                }
                Op::Sigmoid(x) => {
                    let d = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?;
                    acc(*x, d);
                }
                Op::Silu(x) => {
                    let d = g.zip_map(self.val(*x), |gv, xv| gv * elementwise::silu_grad_scalar(xv))?;
                    acc(*x, d);
                }
                Op::Softmax(x) => acc(*x, reduce::softmax_backward(&node.value, &g)),
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = norm::layer_norm_backward(cache, self.val(*gamma), &g);
                    acc(*x, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                Op::BatchNormTrain { x, gamma, beta, cache } => {
                    let (dx, dg, db) = norm::batch_norm_train_backward(cache, self.val(*gamma), &g);
                    acc(*x, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                Op::BatchNormInfer { x, gamma, beta, cache } => {
                    let (dx, dg, db) = norm::batch_norm_infer_backward(cache, self.val(*gamma), &g);
                    acc(*x, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                Op::Conv2d(x, k, s) => {
                    let (dx, dk) = conv::conv2d_backward(self.val(*x), self.val(*k), *s, &g);
                    acc(*x, dx);
                    acc(*k, dk);
                }
                Op::Depthwise(x, k, s) => {
                    let (dx, dk) = conv::depthwise_conv2d_backward(self.val(*x), self.val(*k), *s, &g);
                    acc(*x, dx);
                    acc(*k, dk);
                }
                Op::AvgPool(x, k) => acc(*x, conv::avg_pool2d_backward(self.val(*x).shape(), *k, &g)),
                Op::Mean(x, axes) => acc(*x, reduce::mean_axes_backward(self.val(*x).shape(), axes, &g)),
                Op::Gather(x, gather) => {
                    let d = Tensor::from_parts(gather.src_shape.clone(), gather.scatter_add(g.data()));
                    acc(*x, d);
                }
                Op::Reshape(x) => acc(*x, g.reshape(self.val(*x).shape())?),
                Op::Sum(x) => acc(*x, Tensor::full(self.val(*x).shape(), g.item())),
                Op::CrossEntropy { logits, labels, probs } => {
                    acc(*logits, loss::cross_entropy_backward(probs, labels, g.item()));
                }
                Op::Emd { p, q, r } => {
                    let (dp, dq) = loss::emd_backward(self.val(*p), self.val(*q), *r, g.item());
                    acc(*p, dp);
                    acc(*q, dq);
                }
            }
        }
        Ok(Grads { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }
}

impl<T: Element> Graph<T> for Tape<T> {
    type Var = Var;

    fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::matmul(self.val(*a), self.val(*b))?;
        Ok(self.checked("matmul", &[*a, *b], y, Op::MatMul(*a, *b)))
    }

    fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = ops::linear(self.val(*x), self.val(*w), b.map(|b| self.val(*b)))?;
        Ok(self.checked("linear", &[*x, *w], y, Op::Linear(*x, *w, b.copied())))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.checked("add", &[*a, *b], y, Op::Add(*a, *b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::mul(self.val(*a), self.val(*b))?;
        Ok(self.checked("mul", &[*a, *b], y, Op::Mul(*a, *b)))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Result<Var> {
        let s: T = c(s);
        let y = ops::scale(self.val(*a), s);
        Ok(self.push(y, Op::Scale(*a, s)))
    }

    fn gelu(&mut self, x: &Var) -> Result<Var> {
        let y = ops::gelu(self.val(*x));
        Ok(self.push(y, Op::Gelu(*x)))
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        let y = ops::sigmoid(self.val(*x));
        Ok(self.push(y, Op::Sigmoid(*x)))
    }

    fn silu(&mut self, x: &Var) -> Result<Var> {
        let y = ops::silu(self.val(*x));
        Ok(self.push(y, Op::Silu(*x)))
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        let y = ops::softmax_lastdim(self.val(*x))?;
        Ok(self.checked("softmax", &[*x], y, Op::Softmax(*x)))
    }

    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
        let (y, cache) = ops::layer_norm(self.val(*x), self.val(*gamma), self.val(*beta), c(NORM_EPS))?;
        let op = Op::LayerNorm { x: *x, gamma: *gamma, beta: *beta, cache };
        Ok(self.checked("layer_norm", &[*x, *gamma, *beta], y, op))
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (xv, gv, bv) = (self.val(*x), self.val(*gamma), self.val(*beta));
        match mode {
            BnMode::Train => {
                let (y, cache, stats) = ops::batch_norm_train(xv, gv, bv, c(NORM_EPS))?;
                let op = Op::BatchNormTrain { x: *x, gamma: *gamma, beta: *beta, cache };
                Ok((self.checked("batch_norm", &[*x, *gamma, *beta], y, op), Some(stats)))
            }
            BnMode::Infer { mean, var } => {
                let (y, cache) = ops::batch_norm_infer(xv, gv, bv, mean, var, c(NORM_EPS))?;
                let op = Op::BatchNormInfer { x: *x, gamma: *gamma, beta: *beta, cache };
                Ok((self.checked("batch_norm", &[*x, *gamma, *beta], y, op), None))
            }
        }
    }

    fn conv2d(&mut self, x: &Var, kernel: &Var, stride: usize) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*kernel), stride)?;
        Ok(self.checked("conv2d", &[*x, *kernel], y, Op::Conv2d(*x, *kernel, stride)))
    }

    fn depthwise_conv2d(&mut self, x: &Var, kernel: &Var, stride: usize) -> Result<Var> {
        let y = ops::depthwise_conv2d(self.val(*x), self.val(*kernel), stride)?;
        Ok(self.checked("depthwise_conv2d", &[*x, *kernel], y, Op::Depthwise(*x, *kernel, stride)))
    }

    fn avg_pool2d(&mut self, x: &Var, k: usize) -> Result<Var> {
        let y = ops::avg_pool2d(self.val(*x), k)?;
        Ok(self.push(y, Op::AvgPool(*x, k)))
    }

    fn mean_axes(&mut self, x: &Var, axes: &[usize]) -> Result<Var> {
        let y = ops::mean_axes(self.val(*x), axes)?;
        Ok(self.push(y, Op::Mean(*x, axes.to_vec())))
    }

    fn gather(&mut self, x: &Var, g: Arc<Gather>) -> Result<Var> {
        if self.val(*x).shape() != g.src_shape.as_slice() {
            return dim_err(format!("gather expects {:?}, got {:?}", g.src_shape, self.val(*x).shape()));
        }
        debug_assert_eq!(numel(&g.out_shape), g.index.len() * g.inner);
        let y = g.apply(self.val(*x));
        Ok(self.push(y, Op::Gather(*x, g)))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(*x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(*x)))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let y = Tensor::scalar(self.val(*x).sum());
        Ok(self.push(y, Op::Sum(*x)))
    }

    fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let (l, probs) = ops::cross_entropy(self.val(*logits), labels)?;
        let op = Op::CrossEntropy { logits: *logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(l), op))
    }

    fn emd(&mut self, p: &Var, q: &Var, r: f64) -> Result<Var> {
        let l = ops::emd(self.val(*p), self.val(*q), r)?;
        Ok(self.push(Tensor::scalar(l), Op::Emd { p: *p, q: *q, r }))
    }
}
