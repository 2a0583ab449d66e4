use std::sync::Arc;

use super::{debug_check_finite, BnMode, Graph};
use crate::element::{c, Element};
use crate::error::Result;
use crate::ops::{self, BatchStats, NORM_EPS};
use crate::tensor::{Gather, Tensor};

/// Direct evaluation; nothing is recorded.
#[derive(Default, Debug, Clone, Copy)]
pub struct Eager;

fn chk<T: Element>(op: &str, inputs: &[&Tensor<T>], out: Tensor<T>) -> Result<Tensor<T>> {
    debug_check_finite(op, inputs, &out);
    Ok(out)
}

impl<T: Element> Graph<T> for Eager {
    type Var = Tensor<T>;

    fn leaf(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        chk("matmul", &[a, b], ops::matmul(a, b)?)
    }

    fn linear(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        chk("linear", &[x, w], ops::linear(x, w, b)?)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        chk("add", &[a, b], ops::add(a, b)?)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        chk("mul", &[a, b], ops::mul(a, b)?)
    }

    fn scale(&mut self, a: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
        Ok(ops::scale(a, c(s)))
    }

    fn gelu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::gelu(x))
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::sigmoid(x))
    }

    fn silu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::silu(x))
    }

    fn softmax(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        chk("softmax", &[x], ops::softmax_lastdim(x)?)
    }

    fn layer_norm(&mut self, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, _) = ops::layer_norm(x, gamma, beta, c(NORM_EPS))?;
        chk("layer_norm", &[x, gamma, beta], y)
    }

    fn batch_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mode: BnMode<'_, T>,
    ) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
        match mode {
            BnMode::Train => {
                let (y, _, stats) = ops::batch_norm_train(x, gamma, beta, c(NORM_EPS))?;
                Ok((chk("batch_norm", &[x, gamma, beta], y)?, Some(stats)))
            }
            BnMode::Infer { mean, var } => {
                let (y, _) = ops::batch_norm_infer(x, gamma, beta, mean, var, c(NORM_EPS))?;
                Ok((chk("batch_norm", &[x, gamma, beta], y)?, None))
            }
        }
    }

    fn conv2d(&mut self, x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        chk("conv2d", &[x, kernel], ops::conv2d(x, kernel, stride)?)
    }

    fn depthwise_conv2d(&mut self, x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        chk("depthwise_conv2d", &[x, kernel], ops::depthwise_conv2d(x, kernel, stride)?)
    }

    fn avg_pool2d(&mut self, x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
        ops::avg_pool2d(x, k)
    }

    fn mean_axes(&mut self, x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
        ops::mean_axes(x, axes)
    }

    fn gather(&mut self, x: &Tensor<T>, g: Arc<Gather>) -> Result<Tensor<T>> {
        if x.shape() != g.src_shape.as_slice() {
            return crate::error::dim_err(format!("gather expects {:?}, got {:?}", g.src_shape, x.shape()));
        }
        Ok(g.apply(x))
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.reshape(shape)
    }

    fn sum(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(x.sum()))
    }

    fn cross_entropy(&mut self, logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(ops::cross_entropy(logits, labels)?.0))
    }

    fn emd(&mut self, p: &Tensor<T>, q: &Tensor<T>, r: f64) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(ops::emd(p, q, r)?))
    }
}
