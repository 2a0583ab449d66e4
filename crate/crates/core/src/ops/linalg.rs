use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::par;
use crate::tensor::{numel, Tensor};

/// `c[m,n] = a[m,k] · b[k,n]` on row-major slices.
pub fn gemm<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm_into(a, b, &mut c, m, k, n);
    c
}

fn gemm_into<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    par::for_each_chunk(c, n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    });
}

pub fn transpose2<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Splits `[.., M, K]` into (batch, M, K).
fn split_mat(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    let r = shape.len();
    Some((numel(&shape[..r - 2]), shape[r - 2], shape[r - 1]))
}

/// Batched matrix product `[.., M, K] × [.., K, N] → [.., M, N]`.
///
/// Leading (batch) extents must be equal; no implicit broadcasting.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mismatch = || dim_err(format!("matmul shape mismatch: {:?} × {:?}", a.shape(), b.shape()));
    let (Some((ba, m, k)), Some((bb, k2, n))) = (split_mat(a.shape()), split_mat(b.shape())) else {
        return mismatch();
    };
    if k != k2 || a.rank() != b.rank() || a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
        return mismatch();
    }
    debug_assert_eq!(ba, bb);
    let mut out = vec![T::zero(); ba * m * n];
    let (ad, bd) = (a.data(), b.data());
    if ba == 1 {
        gemm_into(ad, bd, &mut out, m, k, n);
    } else {
        par::for_each_chunk(&mut out, m * n, |bi, c| {
            let aslice = &ad[bi * m * k..(bi + 1) * m * k];
            let bslice = &bd[bi * k * n..(bi + 1) * k * n];
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = aslice[i * k + p];
                    for (cv, &bv) in row.iter_mut().zip(&bslice[p * n..(p + 1) * n]) {
                        *cv = *cv + av * bv;
                    }
                }
            }
        });
    }
    let mut shape = a.shape().to_vec();
    let r = shape.len();
    shape[r - 1] = n;
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of [`matmul`]: `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)` per batch.
pub fn matmul_backward<T: Element>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (batch, m, k) = split_mat(a.shape()).unwrap();
    let n = b.shape()[b.rank() - 1];
    let mut da = Vec::with_capacity(a.len());
    let mut db = Vec::with_capacity(b.len());
    for bi in 0..batch {
        let aslice = &a.data()[bi * m * k..(bi + 1) * m * k];
        let bslice = &b.data()[bi * k * n..(bi + 1) * k * n];
        let gslice = &grad.data()[bi * m * n..(bi + 1) * m * n];
        da.extend(gemm(gslice, &transpose2(bslice, k, n), m, n, k));
        db.extend(gemm(&transpose2(aslice, m, k), gslice, k, m, n));
    }
    (Tensor::from_parts(a.shape().to_vec(), da), Tensor::from_parts(b.shape().to_vec(), db))
}

/// Dense layer over the last axis: `x[.., K] · w[K, N] (+ b[N])`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if w.rank() != 2 || x.rank() == 0 || x.shape()[x.rank() - 1] != w.shape()[0] {
        return dim_err(format!("linear: input {:?} vs weight {:?}", x.shape(), w.shape()));
    }
    let (k, n) = (w.shape()[0], w.shape()[1]);
    if let Some(b) = b {
        if b.shape() != [n] {
            return dim_err(format!("linear: bias {:?} vs width {n}", b.shape()));
        }
    }
    let m = x.len() / k;
    let mut out = vec![T::zero(); m * n];
    if let Some(b) = b {
        for row in out.chunks_mut(n) {
            row.copy_from_slice(b.data());
        }
    }
    gemm_into(x.data(), w.data(), &mut out, m, k, n);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}

/// Returns `(dx, dw, db)` for [`linear`].
pub fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let m = x.len() / k;
    let dx = gemm(grad.data(), &transpose2(w.data(), k, n), m, n, k);
    let dw = gemm(&transpose2(x.data(), m, k), grad.data(), k, m, n);
    let mut db = vec![T::zero(); n];
    for row in grad.data().chunks(n) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![n], db),
    )
}
