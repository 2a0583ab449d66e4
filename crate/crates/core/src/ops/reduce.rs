use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::par;
use crate::tensor::{numel, strides, Tensor};

/// Softmax over the last axis with max subtraction.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() == 0 || x.is_empty() {
        return dim_err(format!("softmax over empty tensor {:?}", x.shape()));
    }
    let n = x.shape()[x.rank() - 1];
    let mut out = x.to_vec();
    par::for_each_chunk(&mut out, n, |_, row| {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `dx = y ⊙ (dy − Σ dy·y)` row-wise.
pub fn softmax_backward<T: Element>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let n = y.shape()[y.rank() - 1];
    let mut out = vec![T::zero(); y.len()];
    for ((o, yr), gr) in out.chunks_mut(n).zip(y.data().chunks(n)).zip(grad.data().chunks(n)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    if let Some(&a) = axes.iter().find(|&&a| a >= shape.len()) {
        return dim_err(format!("mean axis {a} out of range for {shape:?}"));
    }
    Ok(shape.iter().enumerate().filter(|(k, _)| !axes.contains(k)).map(|(_, &d)| d).collect())
}

/// For every source element, its flat index in the reduced output.
fn reduce_targets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = (0..shape.len()).filter(|k| !axes.contains(k)).collect();
    let kept_shape: Vec<usize> = kept.iter().map(|&k| shape[k]).collect();
    let ks = strides(&kept_shape);
    let mut st = vec![0usize; shape.len()];
    for (j, &k) in kept.iter().enumerate() {
        st[k] = ks[j];
    }
    let mut pos = vec![0usize; shape.len()];
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(cur);
        for k in (0..shape.len()).rev() {
            pos[k] += 1;
            cur += st[k];
            if pos[k] < shape[k] {
                break;
            }
            cur -= st[k] * pos[k];
            pos[k] = 0;
        }
    }
    out
}

/// Mean over the given axes; reduced axes are removed from the shape.
pub fn mean_axes<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let out_shape = reduced_shape(x.shape(), axes)?;
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut out = vec![T::zero(); numel(&out_shape)];
    for (&t, &v) in reduce_targets(x.shape(), axes).iter().zip(x.data()) {
        out[t] = out[t] + v;
    }
    for v in &mut out {
        *v = *v * inv;
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn mean_axes_backward<T: Element>(in_shape: &[usize], axes: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let count: usize = axes.iter().map(|&a| in_shape[a]).product();
    let inv = T::one() / T::from_usize(count).unwrap();
    let g = grad.data();
    let data = reduce_targets(in_shape, axes).iter().map(|&t| g[t] * inv).collect();
    Tensor::from_parts(in_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let y = softmax_lastdim(&Tensor::<f64>::zeros(&[3])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax_lastdim(&Tensor::<f32>::new(vec![2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1].abs() < 1e-6);
        let y = softmax_lastdim(&Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let (e1, e2) = (1f64.exp(), 2f64.exp());
        assert!((y.data()[0] - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((y.data()[0] - 0.26894).abs() < 1e-5);
        assert!((y.data()[1] - 0.73106).abs() < 1e-5);
        assert!(softmax_lastdim(&Tensor::<f64>::scalar(1.0)).is_err());
    }

    #[test]
    fn mean_over_spatial_axes() {
        let x = Tensor::<f64>::arange(&[2, 2, 2, 3]);
        let m = mean_axes(&x, &[1, 2]).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        // scalar oracle
        for b in 0..2 {
            for ch in 0..3 {
                let mut s = 0.0;
                for h in 0..2 {
                    for w in 0..2 {
                        s += x.get(&[b, h, w, ch]);
                    }
                }
                assert_eq!(m.get(&[b, ch]), s / 4.0);
            }
        }
        assert!(mean_axes(&x, &[4]).is_err());
        let g = mean_axes_backward(x.shape(), &[1, 2], &Tensor::<f64>::ones(&[2, 3]));
        assert_eq!(g.data(), &[0.25; 24]);
    }
}
