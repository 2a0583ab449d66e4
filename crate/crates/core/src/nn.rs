//! Layers built from graph primitives.
//!
//! A layer holds only [`ParamId`]s; values come from the bound variables in a
//! [`Ctx`], so the same layer runs eagerly or on a tape.

use crate::element::Element;
use crate::error::Result;
use crate::graph::{BnMode, Graph};
use crate::params::{BnUpdate, BufferId, Init, ParamId, ParamStore, Registry};

/// Standard deviation for dense-layer and bias-table initialization.
pub const DENSE_INIT_STD: f64 = 0.02;

/// Everything a forward pass needs besides the input.
pub struct Ctx<'a, T: Element, G: Graph<T>> {
    pub g: &'a mut G,
    params: &'a [G::Var],
    store: &'a ParamStore<T>,
    train: bool,
    /// Batch statistics observed in training mode, in layer order.
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Element, G: Graph<T>> Ctx<'a, T, G> {
    pub fn new(g: &'a mut G, params: &'a [G::Var], store: &'a ParamStore<T>, train: bool) -> Self {
        Self { g, params, store, train, bn_updates: Vec::new() }
    }

    pub fn p(&self, id: ParamId) -> G::Var {
        self.params[id.0].clone()
    }

    pub fn train(&self) -> bool {
        self.train
    }
}

/// Dense layer over the last axis: `y = x·W + b`, `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(pb: &mut impl Registry, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        pb.push_scope(name);
        let w = pb.param("weight", &[d_in, d_out], Init::TruncNormal { std: DENSE_INIT_STD }, true);
        let b = bias.then(|| pb.param("bias", &[d_out], Init::Zeros, false));
        pb.pop_scope();
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let w = cx.p(self.w);
        let b = self.b.map(|b| cx.p(b));
        cx.g.linear(x, &w, b.as_ref())
    }

    pub fn num_params(&self) -> usize {
        self.d_in * self.d_out + if self.b.is_some() { self.d_out } else { 0 }
    }

    /// MACs for `tokens` input rows.
    pub fn macs(&self, tokens: usize) -> u64 {
        (tokens * self.d_in * self.d_out) as u64
    }
}

/// Square convolution with "same" padding, kernel `[k, k, Cin, Cout]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &mut impl Registry,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        pb.push_scope(name);
        let kernel = pb.param("kernel", &[k, k, cin, cout], Init::FanOut { fan_out: k * k * cout }, true);
        let bias = bias.then(|| pb.param("bias", &[cout], Init::Zeros, false));
        pb.pop_scope();
        Self { kernel, bias, k, cin, cout, stride }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let k = cx.p(self.kernel);
        let y = cx.g.conv2d(x, &k, self.stride)?;
        match self.bias {
            Some(b) => {
                let b = cx.p(b);
                cx.g.add(&y, &b)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.k * self.k * self.cin * self.cout + if self.bias.is_some() { self.cout } else { 0 }
    }

    pub fn out_extent(&self, input: usize) -> usize {
        input.div_ceil(self.stride)
    }

    pub fn macs(&self, h_in: usize, w_in: usize) -> u64 {
        (self.k * self.k * self.cin * self.cout * self.out_extent(h_in) * self.out_extent(w_in)) as u64
    }
}

/// Depthwise convolution, kernel `[k, k, C]`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    pub kernel: ParamId,
    pub k: usize,
    pub c: usize,
    pub stride: usize,
}

impl DepthwiseConv2d {
    pub fn new(pb: &mut impl Registry, name: &str, k: usize, c: usize, stride: usize) -> Self {
        pb.push_scope(name);
        let kernel = pb.param("kernel", &[k, k, c], Init::FanOut { fan_out: k * k }, true);
        pb.pop_scope();
        Self { kernel, k, c, stride }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let k = cx.p(self.kernel);
        cx.g.depthwise_conv2d(x, &k, self.stride)
    }

    pub fn num_params(&self) -> usize {
        self.k * self.k * self.c
    }

    pub fn macs(&self, h_in: usize, w_in: usize) -> u64 {
        (self.k * self.k * self.c * h_in.div_ceil(self.stride) * w_in.div_ceil(self.stride)) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
}

/// Batch norm (per channel over batch and space) or layer norm (per token
/// over channels), both with affine `γ, β`.
#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Running mean and variance, batch norm only.
    pub running: Option<(BufferId, BufferId)>,
    pub c: usize,
}

impl Norm {
    pub fn new(pb: &mut impl Registry, name: &str, kind: NormKind, c: usize) -> Self {
        pb.push_scope(name);
        let gamma = pb.param("gamma", &[c], Init::Ones, false);
        let beta = pb.param("beta", &[c], Init::Zeros, false);
        let running = (kind == NormKind::Batch)
            .then(|| (pb.buffer("running_mean", &[c], 0.0), pb.buffer("running_var", &[c], 1.0)));
        pb.pop_scope();
        Self { kind, gamma, beta, running, c }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let (gamma, beta) = (cx.p(self.gamma), cx.p(self.beta));
        let Some((mean_id, var_id)) = self.running else {
            return cx.g.layer_norm(x, &gamma, &beta);
        };
        if cx.train {
            let (y, stats) = cx.g.batch_norm(x, &gamma, &beta, BnMode::Train)?;
            if let Some(stats) = stats {
                cx.bn_updates.push(BnUpdate { mean: mean_id, var: var_id, stats });
            }
            Ok(y)
        } else {
            let store = cx.store;
            let mode = BnMode::Infer { mean: store.buffer(mean_id), var: store.buffer(var_id) };
            Ok(cx.g.batch_norm(x, &gamma, &beta, mode)?.0)
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.c
    }
}

/// Bottleneck width for a squeeze-excitation with shrink ratio `ratio`.
pub fn se_width(channels: usize, ratio: f64) -> usize {
    ((channels as f64 * ratio).round() as usize).max(1)
}

/// Squeeze-excitation: `x ⊙ σ(expand(SiLU(reduce(mean_HW(x)))))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SqueezeExcite {
    pub fn new(pb: &mut impl Registry, name: &str, c: usize, bottleneck: usize) -> Self {
        pb.push_scope(name);
        let reduce = Linear::new(pb, "reduce", c, bottleneck, true);
        let expand = Linear::new(pb, "expand", bottleneck, c, true);
        pb.pop_scope();
        Self { reduce, expand }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let shape = cx.g.shape(x).to_vec();
        let pooled = cx.g.mean_axes(x, &[1, 2])?;
        let h = self.reduce.forward(cx, &pooled)?;
        let h = cx.g.silu(&h)?;
        let h = self.expand.forward(cx, &h)?;
        let gate = cx.g.sigmoid(&h)?;
        let gate = cx.g.reshape(&gate, &[shape[0], 1, 1, shape[3]])?;
        cx.g.mul(x, &gate)
    }

    pub fn num_params(&self) -> usize {
        self.reduce.num_params() + self.expand.num_params()
    }

    /// MACs per image (the pooled vector passes through both layers once).
    pub fn macs(&self) -> u64 {
        self.reduce.macs(1) + self.expand.macs(1)
    }
}

/// Position-wise feed-forward `W₂·GELU(W₁·x)` with hidden width 4C.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub const MLP_RATIO: usize = 4;

impl Mlp {
    pub fn new(pb: &mut impl Registry, name: &str, c: usize) -> Self {
        pb.push_scope(name);
        let fc1 = Linear::new(pb, "fc1", c, MLP_RATIO * c, true);
        let fc2 = Linear::new(pb, "fc2", MLP_RATIO * c, c, true);
        pb.pop_scope();
        Self { fc1, fc2 }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = cx.g.gelu(&h)?;
        self.fc2.forward(cx, &h)
    }

    pub fn num_params(&self) -> usize {
        self.fc1.num_params() + self.fc2.num_params()
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        self.fc1.macs(tokens) + self.fc2.macs(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Eager;
    use crate::ops::{gelu_scalar, sigmoid_scalar};
    use crate::params::ParamBuilder;
    use crate::tensor::Tensor;

    fn run<L>(store: &ParamStore<f64>, x: Tensor<f64>, f: L) -> Tensor<f64>
    where
        L: Fn(&mut Ctx<'_, f64, Eager>, &Tensor<f64>) -> Result<Tensor<f64>>,
    {
        let mut g = Eager;
        let vars = store.bind(&mut g);
        let mut cx = Ctx::new(&mut g, &vars, store, false);
        f(&mut cx, &x).unwrap()
    }

    fn set(store: &mut ParamStore<f64>, id: ParamId, vals: &[f64]) {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::new(shape, vals.to_vec()).unwrap()).unwrap();
    }

    #[test]
    fn se_with_zero_expand_halves_input() {
        let mut store = ParamStore::new();
        let se = SqueezeExcite::new(&mut ParamBuilder::new(&mut store, 0), "se", 4, se_width(4, 0.25));
        assert_eq!(se.reduce.d_out, 1);
        set(&mut store, se.expand.w, &[0.0; 4]);
        let x = Tensor::from_fn(&[2, 3, 3, 4], |i| (i as f64).sin());
        let y = run(&store, x.clone(), |cx, x| se.forward(cx, x));
        assert!(y.max_abs_diff(&x.map(|v| v / 2.0)) < 1e-15);
    }

    #[test]
    fn se_matches_scalar_pipeline() {
        let mut store = ParamStore::new();
        let se = SqueezeExcite::new(&mut ParamBuilder::new(&mut store, 0), "se", 2, 1);
        set(&mut store, se.reduce.w, &[0.5, -1.0]);
        set(&mut store, se.reduce.b.unwrap(), &[0.1]);
        set(&mut store, se.expand.w, &[2.0, -3.0]);
        set(&mut store, se.expand.b.unwrap(), &[0.0, 0.5]);
        // one image, 1×2 pixels, 2 channels
        let xs = [1.0, 2.0, 3.0, -4.0];
        let x = Tensor::new(vec![1, 1, 2, 2], xs.to_vec()).unwrap();
        let y = run(&store, x, |cx, x| se.forward(cx, x));

        let m = [(xs[0] + xs[2]) / 2.0, (xs[1] + xs[3]) / 2.0];
        let r = 0.5 * m[0] - 1.0 * m[1] + 0.1;
        let s = r * sigmoid_scalar(r);
        let gate = [sigmoid_scalar(2.0 * s), sigmoid_scalar(-3.0 * s + 0.5)];
        for (i, (&got, &xv)) in y.data().iter().zip(&xs).enumerate() {
            assert!((got - xv * gate[i % 2]).abs() < 1e-14);
        }
    }

    #[test]
    fn mlp_cases() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut ParamBuilder::new(&mut store, 3), "mlp", 2);
        assert_eq!(mlp.fc1.d_out, 8);
        let x = Tensor::from_fn(&[2, 5, 2], |i| i as f64 * 0.1 - 0.4);
        let y = run(&store, x.clone(), |cx, x| mlp.forward(cx, x));
        assert_eq!(y.shape(), &[2, 5, 2]);

        // scalar oracle on one token
        let (w1, b1) = (store.get(mlp.fc1.w).clone(), store.get(mlp.fc1.b.unwrap()).clone());
        let (w2, b2) = (store.get(mlp.fc2.w).clone(), store.get(mlp.fc2.b.unwrap()).clone());
        let tok = [x.get(&[1, 3, 0]), x.get(&[1, 3, 1])];
        for o in 0..2 {
            let mut acc = b2.data()[o];
            for h in 0..8 {
                let pre = tok[0] * w1.get(&[0, h]) + tok[1] * w1.get(&[1, h]) + b1.data()[h];
                acc += gelu_scalar(pre) * w2.get(&[h, o]);
            }
            assert!((y.get(&[1, 3, o]) - acc).abs() < 1e-14);
        }

        set(&mut store, mlp.fc2.w, &[0.0; 16]);
        let y = run(&store, x, |cx, x| mlp.forward(cx, x));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_inference_is_affine_and_batch_independent() {
        let mut store = ParamStore::new();
        let bn = Norm::new(&mut ParamBuilder::new(&mut store, 0), "bn", NormKind::Batch, 2);
        let (m, v) = bn.running.unwrap();
        store.set_buffer(m, Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        store.set_buffer(v, Tensor::new(vec![2], vec![4.0, 0.25]).unwrap()).unwrap();
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| i as f64 - 7.0);
        let y = run(&store, x.clone(), |cx, x| bn.forward(cx, x));
        let one = run(&store, Tensor::new(vec![1, 1, 1, 2], vec![x.data()[0], x.data()[1]]).unwrap(), |cx, x| {
            bn.forward(cx, x)
        });
        assert_eq!(one.data(), &y.data()[..2]);
        let eps = crate::ops::NORM_EPS;
        assert!((y.data()[0] - (x.data()[0] - 1.0) / (4.0 + eps).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_training_records_stats() {
        let mut store = ParamStore::new();
        let bn = Norm::new(&mut ParamBuilder::new(&mut store, 0), "bn", NormKind::Batch, 1);
        let mut g = Eager;
        let vars = store.bind(&mut g);
        let mut cx = Ctx::new(&mut g, &vars, &store, true);
        let x = Tensor::new(vec![4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&mut cx, &x).unwrap();
        let ups = std::mem::take(&mut cx.bn_updates);
        assert_eq!(ups.len(), 1);
        store.apply_bn_updates(&ups, 0.99);
        let (m, v) = bn.running.unwrap();
        assert!((store.buffer(m).data()[0] - 0.01 * 2.5f64).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((store.buffer(v).data()[0] - (0.99 + 0.01 * 5.0f64 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn counts_and_macs() {
        let mut store = ParamStore::<f32>::new();
        let mut pb = ParamBuilder::new(&mut store, 0);
        let conv = Conv2d::new(&mut pb, "c", 3, 3, 64, 2, false);
        let dw = DepthwiseConv2d::new(&mut pb, "d", 3, 8, 2);
        assert_eq!(conv.num_params(), 3 * 3 * 3 * 64);
        assert_eq!(conv.macs(224, 224), (27 * 64 * 112 * 112) as u64);
        assert_eq!(dw.macs(9, 9), (9 * 8 * 5 * 5) as u64);
        assert_eq!(store.count_scalars(), conv.num_params() + dw.num_params());
    }
}
