use crate::element::Element;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy of `logits[B, K]` against class indices.
///
/// Returns the loss and the softmax probabilities (saved for backward).
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return dim_err(format!("cross_entropy: logits {:?} with {} labels", logits.shape(), labels.len()));
    }
    let k = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total = total + (lse - row[label]);
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    let b = T::from_usize(labels.len()).unwrap();
    Ok((total / b, Tensor::from_parts(logits.shape().to_vec(), probs)))
}

pub fn cross_entropy_backward<T: Element>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Tensor<T> {
    let k = probs.shape()[1];
    let scale = upstream / T::from_usize(labels.len()).unwrap();
    let mut g: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] = g[i * k + l] - scale;
    }
    Tensor::from_parts(probs.shape().to_vec(), g)
}

/// Per-row CDF differences `D_k = Σ_{i≤k} (p_i − q_i)`.
fn cdf_diffs<T: Element>(p: &[T], q: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            acc = acc + (a - b);
            acc
        })
        .collect()
}

fn check_pair<T: Element>(p: &Tensor<T>, q: &Tensor<T>, r: f64) -> Result<usize> {
    if p.shape() != q.shape() || p.rank() == 0 || p.rank() > 2 {
        return dim_err(format!("emd: histograms {:?} vs {:?}", p.shape(), q.shape()));
    }
    if !(r >= 1.0) {
        return Err(Error::Data(format!("emd exponent r={r} must be >= 1")));
    }
    Ok(*p.shape().last().unwrap())
}

/// Normalized earth mover's distance between histograms, averaged over rows:
/// `((1/N) Σ_k |CDF_p(k) − CDF_q(k)|^r)^(1/r)`.
pub fn emd<T: Element>(p: &Tensor<T>, q: &Tensor<T>, r: f64) -> Result<T> {
    let n = check_pair(p, q, r)?;
    let rt = T::from_f64_lossy(r);
    let nn = T::from_usize(n).unwrap();
    let rows = p.len() / n;
    let mut total = T::zero();
    for (pr, qr) in p.data().chunks(n).zip(q.data().chunks(n)) {
        let s: T = cdf_diffs(pr, qr).iter().map(|d| d.abs().powf(rt)).sum::<T>() / nn;
        total = total + s.powf(T::one() / rt);
    }
    Ok(total / T::from_usize(rows).unwrap())
}

/// Gradients `(dp, dq)` of [`emd`]; zero where the distance itself is zero.
pub fn emd_backward<T: Element>(p: &Tensor<T>, q: &Tensor<T>, r: f64, upstream: T) -> (Tensor<T>, Tensor<T>) {
    let n = *p.shape().last().unwrap();
    let rt = T::from_f64_lossy(r);
    let nn = T::from_usize(n).unwrap();
    let rows = p.len() / n;
    let scale = upstream / T::from_usize(rows).unwrap();
    let mut dp = Vec::with_capacity(p.len());
    for (pr, qr) in p.data().chunks(n).zip(q.data().chunks(n)) {
        let d = cdf_diffs(pr, qr);
        let s: T = d.iter().map(|v| v.abs().powf(rt)).sum::<T>() / nn;
        if s <= T::zero() {
            dp.extend(std::iter::repeat_n(T::zero(), n));
            continue;
        }
        // dE/dD_k = S^(1/r − 1)/N · |D_k|^(r−1)·sign(D_k); dD_k/dp_i = [i ≤ k]
        let outer = s.powf(T::one() / rt - T::one()) / nn;
        let per_k: Vec<T> = d
            .iter()
            .map(|&v| if v == T::zero() { T::zero() } else { v.abs().powf(rt - T::one()) * v.signum() })
            .collect();
        let mut tail = T::zero();
        let mut row = vec![T::zero(); n];
        for i in (0..n).rev() {
            tail = tail + per_k[i];
            row[i] = outer * tail * scale;
        }
        dp.extend(row);
    }
    let dq = dp.iter().map(|&v| -v).collect();
    (Tensor::from_parts(p.shape().to_vec(), dp), Tensor::from_parts(q.shape().to_vec(), dq))
}
