use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Saved state for normalization backward passes.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    /// Per token (layer norm) or per channel (batch norm).
    pub inv_std: Vec<T>,
}

fn check_affine<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = *x.shape().last().unwrap_or(&0);
    if x.rank() == 0 || gamma.shape() != [c] || beta.shape() != [c] {
        return dim_err(format!("norm: input {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()));
    }
    Ok(c)
}

/// Layer norm over the channel (last) axis of each token.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = check_affine(x, gamma, beta)?;
    let cn = T::from_usize(c).unwrap();
    let mut xhat = x.to_vec();
    let mut inv_std = Vec::with_capacity(x.len() / c);
    for row in xhat.chunks_mut(c) {
        let mean = row.iter().copied().sum::<T>() / cn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
        let inv = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    let y = xhat.iter().enumerate().map(|(i, &h)| h * gamma.data()[i % c] + beta.data()[i % c]).collect();
    let xhat = Tensor::from_parts(x.shape().to_vec(), xhat);
    Ok((Tensor::from_parts(x.shape().to_vec(), y), NormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Element>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let cn = T::from_usize(c).unwrap();
    let mut dx = vec![T::zero(); grad.len()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for (r, ((dxr, gr), hr)) in dx.chunks_mut(c).zip(grad.data().chunks(c)).zip(cache.xhat.data().chunks(c)).enumerate()
    {
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for k in 0..c {
            let dh = gr[k] * gamma.data()[k];
            m1 = m1 + dh;
            m2 = m2 + dh * hr[k];
            dg[k] = dg[k] + gr[k] * hr[k];
            db[k] = db[k] + gr[k];
        }
        m1 = m1 / cn;
        m2 = m2 / cn;
        let inv = cache.inv_std[r];
        for k in 0..c {
            let dh = gr[k] * gamma.data()[k];
            dxr[k] = inv * (dh - m1 - hr[k] * m2);
        }
    }
    (Tensor::from_parts(grad.shape().to_vec(), dx), Tensor::from_parts(vec![c], dg), Tensor::from_parts(vec![c], db))
}

/// Per-channel batch statistics observed in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into running statistics.
    pub var: Vec<T>,
}

/// Batch norm in training mode: statistics over every axis but the last.
pub fn batch_norm_train<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>, BatchStats<T>)> {
    let c = check_affine(x, gamma, beta)?;
    let rows = x.len() / c;
    let rn = T::from_usize(rows).unwrap();
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / rn);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for k in 0..c {
            let d = row[k] - mean[k];
            var[k] = var[k] + d * d;
        }
    }
    let biased: Vec<T> = var.iter().map(|&v| v / rn).collect();
    let unbiased: Vec<T> =
        if rows > 1 { var.iter().map(|&v| v / T::from_usize(rows - 1).unwrap()).collect() } else { biased.clone() };
    let inv_std: Vec<T> = biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xhat: Vec<T> = x.data().iter().enumerate().map(|(i, &v)| (v - mean[i % c]) * inv_std[i % c]).collect();
    let y = xhat.iter().enumerate().map(|(i, &h)| h * gamma.data()[i % c] + beta.data()[i % c]).collect();
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        NormCache { xhat: Tensor::from_parts(x.shape().to_vec(), xhat), inv_std },
        BatchStats { mean, var: unbiased },
    ))
}

pub fn batch_norm_train_backward<T: Element>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let rows = grad.len() / c;
    let rn = T::from_usize(rows).unwrap();
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for (gr, hr) in grad.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
        for k in 0..c {
            dg[k] = dg[k] + gr[k] * hr[k];
            db[k] = db[k] + gr[k];
        }
    }
    // dxhat = g·γ; dx = inv·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
    let dx = grad
        .data()
        .iter()
        .zip(cache.xhat.data())
        .enumerate()
        .map(|(i, (&g, &h))| {
            let k = i % c;
            let gam = gamma.data()[k];
            cache.inv_std[k] * (g * gam - db[k] * gam / rn - h * dg[k] * gam / rn)
        })
        .collect();
    (Tensor::from_parts(grad.shape().to_vec(), dx), Tensor::from_parts(vec![c], dg), Tensor::from_parts(vec![c], db))
}

/// Batch norm in inference mode: a fixed per-channel affine map.
pub fn batch_norm_infer<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = check_affine(x, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return dim_err("batch norm running statistics width mismatch");
    }
    let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let rm = running_mean.data();
    let xhat: Vec<T> = x.data().iter().enumerate().map(|(i, &v)| (v - rm[i % c]) * inv_std[i % c]).collect();
    let y = xhat.iter().enumerate().map(|(i, &h)| h * gamma.data()[i % c] + beta.data()[i % c]).collect();
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        NormCache { xhat: Tensor::from_parts(x.shape().to_vec(), xhat), inv_std },
    ))
}

pub fn batch_norm_infer_backward<T: Element>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for (gr, hr) in grad.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
        for k in 0..c {
            dg[k] = dg[k] + gr[k] * hr[k];
            db[k] = db[k] + gr[k];
        }
    }
    let dx = grad.data().iter().enumerate().map(|(i, &g)| g * gamma.data()[i % c] * cache.inv_std[i % c]).collect();
    (Tensor::from_parts(grad.shape().to_vec(), dx), Tensor::from_parts(vec![c], dg), Tensor::from_parts(vec![c], db))
}
