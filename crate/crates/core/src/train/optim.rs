use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
///
/// Decay applies only to parameters flagged for it (not norms, biases or
/// relative-bias tables).
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![T::zero(); e.tensor.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    /// Moment accumulators for one parameter.
    pub fn moments(&self, id: ParamId) -> (&[T], &[T]) {
        (&self.m[id.0], &self.v[id.0])
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != store.len() {
            return dim_err(format!("{} gradients for {} parameters", grads.len(), store.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != store.get(ParamId(i)).shape() {
                return dim_err(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.entry(ParamId(i)).name,
                    store.get(ParamId(i)).shape()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let f = |v: f64| T::from_f64_lossy(v);
        let (b1, b2, eps) = (f(self.beta1), f(self.beta2), f(self.eps));
        let (one_b1, one_b2) = (f(1.0 - self.beta1), f(1.0 - self.beta2));
        let (lr_c, bc2_sqrt) = (f(self.lr / bc1), f(bc2.sqrt()));
        for (i, g) in grads.iter().enumerate() {
            let entry = store.entry(ParamId(i));
            let shrink = if entry.decay { f(1.0 - self.lr * self.weight_decay) } else { T::one() };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let next: Vec<T> = entry
                .tensor
                .data()
                .iter()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&p, &gi), (mi, vi))| {
                    *mi = b1 * *mi + one_b1 * gi;
                    *vi = b2 * *vi + one_b2 * gi * gi;
                    p * shrink - lr_c * *mi / (vi.sqrt() / bc2_sqrt + eps)
                })
                .collect();
            let shape = entry.tensor.shape().to_vec();
            store.set(ParamId(i), Tensor::new(shape, next)?)?;
        }
        Ok(())
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Element>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("w", Tensor::new(vec![1], vec![v]).unwrap(), decay);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = single(0.5, true);
        let mut opt = AdamW::new(&s, 0.1, 0.0);
        opt.step(&mut s, &[Tensor::new(vec![1], vec![1.0]).unwrap()]).unwrap();
        // bias-corrected m̂ = v̂ = 1 ⇒ Δ = lr / (1 + ε)
        let expect = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((s.get(ParamId(0)).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_cases() {
        let mut s = single(0.5, true);
        let mut opt = AdamW::new(&s, 0.1, 0.0);
        opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
        assert_eq!(s.get(ParamId(0)).data()[0], 0.5);

        let mut opt = AdamW::new(&s, 0.1, 0.5);
        opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
        opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
        assert!((s.get(ParamId(0)).data()[0] - 0.5 * 0.95 * 0.95).abs() < 1e-15);

        let mut s = single(0.5, false);
        let mut opt = AdamW::new(&s, 0.1, 0.5);
        opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
        assert_eq!(s.get(ParamId(0)).data()[0], 0.5);
        assert!(opt.step(&mut s, &[Tensor::zeros(&[2])]).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::<f64>::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut g = vec![Tensor::<f64>::new(vec![1], vec![0.5]).unwrap()];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g[0].data()[0], 0.5);
    }
}
