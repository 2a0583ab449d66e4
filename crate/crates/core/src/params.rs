//! Parameter storage and deterministic initialization.
//!
//! Every learnable tensor lives in a [`ParamStore`] in registration order;
//! layers refer to them by [`ParamId`]. The order is stable across runs, which
//! is what checkpoints, optimizers and parameter counting rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Graph;
use crate::ops::BatchStats;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Non-learnable state (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether decoupled weight decay applies (off for norms, biases, bias tables).
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<ParamEntry<T>>,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), buffers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> ParamId {
        self.params.push(ParamEntry { name: name.into(), tensor, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn push_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> BufferId {
        self.buffers.push((name.into(), tensor));
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of learnable scalars.
    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.params[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.params
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<T>) -> Result<()> {
        let entry = &mut self.params[id.0];
        if entry.tensor.shape() != t.shape() {
            return dim_err(format!(
                "parameter {} has shape {:?}, got {:?}",
                entry.name,
                entry.tensor.shape(),
                t.shape()
            ));
        }
        entry.tensor = t;
        Ok(())
    }

    /// Replaces a tensor, allowing a shape change (bias-table resampling).
    pub(crate) fn replace(&mut self, id: ParamId, t: Tensor<T>) {
        self.params[id.0].tensor = t;
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    /// Copy of this store with every parameter replaced, in order.
    pub fn with_tensors(&self, tensors: &[Tensor<T>]) -> Result<Self> {
        if tensors.len() != self.params.len() {
            return dim_err(format!("expected {} tensors, got {}", self.params.len(), tensors.len()));
        }
        let mut out = self.clone();
        for (i, t) in tensors.iter().enumerate() {
            out.set(ParamId(i), t.clone())?;
        }
        Ok(out)
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn set_buffer(&mut self, id: BufferId, t: Tensor<T>) -> Result<()> {
        if self.buffers[id.0].1.shape() != t.shape() {
            return dim_err(format!("buffer {} shape mismatch", self.buffers[id.0].0));
        }
        self.buffers[id.0].1 = t;
        Ok(())
    }

    /// Registers every parameter on `g`, in store order.
    pub fn bind<G: Graph<T>>(&self, g: &mut G) -> Vec<G::Var> {
        self.params.iter().map(|p| g.leaf(p.tensor.clone())).collect()
    }

    /// Folds observed batch statistics into running statistics:
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let one_m = T::one() - m;
        for u in updates {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                let cur = self.buffer(id);
                let next = cur.data().iter().zip(batch).map(|(&r, &b)| m * r + one_m * b).collect();
                self.buffers[id.0].1 = Tensor::from_parts(cur.shape().to_vec(), next);
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), tensor: p.tensor.cast(), decay: p.decay })
                .collect(),
            buffers: self.buffers.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal truncated at two standard deviations.
    TruncNormal {
        std: f64,
    },
    /// Normal with std `sqrt(2 / fan_out)`.
    FanOut {
        fan_out: usize,
    },
}

/// Sink for parameter declarations made while a model is constructed.
///
/// [`ParamBuilder`] allocates and initializes tensors; [`ShapeRecorder`]
/// only records names and shapes, which is all that counting needs.
pub trait Registry {
    fn push_scope(&mut self, name: &str);
    fn pop_scope(&mut self);
    fn param(&mut self, name: &str, shape: &[usize], init: Init, decay: bool) -> ParamId;
    /// Non-learnable state filled with `fill`.
    fn buffer(&mut self, name: &str, shape: &[usize], fill: f64) -> BufferId;
}

#[derive(Clone, Debug, Default)]
struct Scope(Vec<String>);

impl Scope {
    fn name(&self, leaf: &str) -> String {
        let mut s = self.0.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }
}

/// Registers freshly initialized parameters under a name prefix.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    scope: Scope,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), scope: Scope::default() }
    }

    fn sample(&mut self, n: usize, init: Init) -> Vec<T> {
        match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::TruncNormal { std } => (0..n)
                .map(|_| loop {
                    let z: f64 = self.rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::from_f64_lossy(z * std);
                    }
                })
                .collect(),
            Init::FanOut { fan_out } => {
                let std = (2.0 / fan_out.max(1) as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(self.rng.sample::<f64, _>(StandardNormal) * std)).collect()
            }
        }
    }
}

impl<T: Element> Registry for ParamBuilder<'_, T> {
    fn push_scope(&mut self, name: &str) {
        self.scope.0.push(name.to_string());
    }

    fn pop_scope(&mut self) {
        self.scope.0.pop();
    }

    fn param(&mut self, name: &str, shape: &[usize], init: Init, decay: bool) -> ParamId {
        let data = self.sample(numel(shape), init);
        let full = self.scope.name(name);
        self.store.push(full, Tensor::from_parts(shape.to_vec(), data), decay)
    }

    fn buffer(&mut self, name: &str, shape: &[usize], fill: f64) -> BufferId {
        let full = self.scope.name(name);
        self.store.push_buffer(full, Tensor::full(shape, T::from_f64_lossy(fill)))
    }
}

/// Name and shape of one declared parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Records parameter shapes without allocating them.
#[derive(Clone, Debug, Default)]
pub struct ShapeRecorder {
    pub params: Vec<ParamShape>,
    pub buffers: Vec<ParamShape>,
    scope: Scope,
}

impl ShapeRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| numel(&p.shape)).sum()
    }
}

impl Registry for ShapeRecorder {
    fn push_scope(&mut self, name: &str) {
        self.scope.0.push(name.to_string());
    }

    fn pop_scope(&mut self) {
        self.scope.0.pop();
    }

    fn param(&mut self, name: &str, shape: &[usize], _init: Init, _decay: bool) -> ParamId {
        self.params.push(ParamShape { name: self.scope.name(name), shape: shape.to_vec() });
        ParamId(self.params.len() - 1)
    }

    fn buffer(&mut self, name: &str, shape: &[usize], _fill: f64) -> BufferId {
        self.buffers.push(ParamShape { name: self.scope.name(name), shape: shape.to_vec() });
        BufferId(self.buffers.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::new();
            let mut b = ParamBuilder::new(&mut s, seed);
            b.push_scope("layer");
            b.param("w", &[4, 8], Init::TruncNormal { std: 0.02 }, true);
            b.param("k", &[3, 3, 2, 2], Init::FanOut { fan_out: 18 }, true);
            b.pop_scope();
            s
        };
        let mut rec = ShapeRecorder::new();
        rec.push_scope("layer");
        rec.param("w", &[4, 8], Init::Zeros, true);
        assert_eq!(rec.params[0].name, "layer.w");
        let (a, b, c) = (build(7), build(7), build(8));
        for i in 0..2 {
            assert!(a.get(ParamId(i)).bitwise_eq(b.get(ParamId(i))));
        }
        assert!(!a.get(ParamId(0)).bitwise_eq(c.get(ParamId(0))));
        assert_eq!(a.entry(ParamId(0)).name, "layer.w");
        assert_eq!(a.count_scalars(), 32 + 36);
    }

    #[test]
    fn truncated_normal_is_bounded() {
        let mut s = ParamStore::<f64>::new();
        let id = ParamBuilder::new(&mut s, 1).param("w", &[4096], Init::TruncNormal { std: 0.02 }, true);
        let t = s.get(id);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let mean = t.sum() / 4096.0;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4096.0;
        // truncation at 2σ shrinks the std to ≈ 0.88σ
        assert!((var.sqrt() / 0.02 - 0.88).abs() < 0.05, "{}", var.sqrt());
    }
}
