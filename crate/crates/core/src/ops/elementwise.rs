use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::element::{c, Element};
use crate::error::{dim_err, Result};
use crate::tensor::{numel, strides, Tensor};

/// Right-aligned broadcast of two shapes; extents must match or be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return dim_err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out`, with 0 on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len()).map(|k| if k < off || shape[k - off] == 1 { 0 } else { s[k - off] }).collect()
}

/// Source offsets of `shape` for every element of `out` (row-major).
fn source_offsets(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel(out);
    if shape == out {
        return (0..n).collect();
    }
    let inner = numel(shape);
    // bias-style operand: a trailing suffix of the output shape
    if shape.len() <= out.len() && out[out.len() - shape.len()..] == *shape {
        return (0..n).map(|i| i % inner).collect();
    }
    let st = aligned_strides(shape, out);
    let mut pos = vec![0usize; out.len()];
    let mut offs = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        offs.push(cur);
        for k in (0..out.len()).rev() {
            pos[k] += 1;
            cur += st[k];
            if pos[k] < out[k] {
                break;
            }
            cur -= st[k] * pos[k];
            pos[k] = 0;
        }
    }
    offs
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let oa = source_offsets(a.shape(), &out);
    let ob = source_offsets(b.shape(), &out);
    let (ad, bd) = (a.data(), b.data());
    let data = oa.iter().zip(&ob).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    Ok(Tensor::from_parts(out, data))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, |x, y| x * y)
}

pub fn scale<T: Element>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|v| v * s)
}

/// Sums a broadcast gradient back down to `shape`.
pub fn reduce_to<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let offs = source_offsets(shape, grad.shape());
    let mut out = vec![T::zero(); numel(shape)];
    for (&o, &g) in offs.iter().zip(grad.data()) {
        out[o] = out[o] + g;
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// Broadcast-aware gradients of `a ⊙ b`.
pub fn mul_backward<T: Element>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let out = grad.shape();
    let oa = source_offsets(a.shape(), out);
    let ob = source_offsets(b.shape(), out);
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    for ((&i, &j), &g) in oa.iter().zip(&ob).zip(grad.data()) {
        da[i] = da[i] + g * b.data()[j];
        db[j] = db[j] + g * a.data()[i];
    }
    (Tensor::from_parts(a.shape().to_vec(), da), Tensor::from_parts(b.shape().to_vec(), db))
}

/// Exact GELU: `x·Φ(x)` with the erf-based normal CDF.
pub fn gelu_scalar<T: Element>(x: T) -> T {
    c::<T>(0.5) * x * (T::one() + (x * c(FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let cdf = c::<T>(0.5) * (T::one() + (x * c(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * c(0.5)).exp() * c(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn silu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn silu_grad_scalar<T: Element>(x: T) -> T {
    let s = sigmoid_scalar(x);
    s * (T::one() + x * (T::one() - s))
}
