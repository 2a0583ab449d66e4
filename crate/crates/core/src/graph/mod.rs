//! Execution backends for model code.
//!
//! Layers are written once against [`Graph`]. [`Eager`] evaluates directly on
//! tensors; [`Tape`] additionally records every primitive so a scalar output
//! can be differentiated in reverse mode.

mod eager;
mod gradcheck;
mod tape;

use std::sync::Arc;

pub use eager::Eager;
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use tape::{Grads, Tape, Var};

use crate::element::Element;
use crate::error::Result;
use crate::ops::BatchStats;
use crate::tensor::{Gather, Tensor};

/// Batch-norm behaviour for one call.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with batch statistics and report them.
    Train,
    /// Normalize with the given running statistics.
    Infer { mean: &'a Tensor<T>, var: &'a Tensor<T> },
}

/// The closed set of differentiable primitives.
pub trait Graph<T: Element> {
    type Var: Clone;

    /// Registers a tensor as a graph input (leaf).
    fn leaf(&mut self, t: Tensor<T>) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn linear(&mut self, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, s: f64) -> Result<Self::Var>;
    fn gelu(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn sigmoid(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn silu(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn softmax(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn layer_norm(&mut self, x: &Self::Var, gamma: &Self::Var, beta: &Self::Var) -> Result<Self::Var>;
    fn batch_norm(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Self::Var, Option<BatchStats<T>>)>;
    fn conv2d(&mut self, x: &Self::Var, kernel: &Self::Var, stride: usize) -> Result<Self::Var>;
    fn depthwise_conv2d(&mut self, x: &Self::Var, kernel: &Self::Var, stride: usize) -> Result<Self::Var>;
    fn avg_pool2d(&mut self, x: &Self::Var, k: usize) -> Result<Self::Var>;
    fn mean_axes(&mut self, x: &Self::Var, axes: &[usize]) -> Result<Self::Var>;
    fn gather(&mut self, x: &Self::Var, g: Arc<Gather>) -> Result<Self::Var>;
    fn reshape(&mut self, x: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    fn sum(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn cross_entropy(&mut self, logits: &Self::Var, labels: &[usize]) -> Result<Self::Var>;
    fn emd(&mut self, p: &Self::Var, q: &Self::Var, r: f64) -> Result<Self::Var>;

    fn shape<'a>(&'a self, v: &'a Self::Var) -> &'a [usize] {
        self.value(v).shape()
    }

    fn swapaxes(&mut self, x: &Self::Var, i: usize, j: usize) -> Result<Self::Var> {
        let g = crate::tensor::swapaxes_gather(self.shape(x), i, j)?;
        self.gather(x, Arc::new(g))
    }

    fn mean(&mut self, x: &Self::Var) -> Result<Self::Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(&s, 1.0 / n as f64)
    }
}

/// Debug-build guard: finite inputs must give finite outputs.
#[inline]
pub(crate) fn debug_check_finite<T: Element>(op: &str, inputs: &[&Tensor<T>], out: &Tensor<T>) {
    if cfg!(debug_assertions) && inputs.iter().all(|t| t.all_finite()) {
        debug_assert!(out.all_finite(), "{op} produced non-finite output from finite inputs");
    }
}
