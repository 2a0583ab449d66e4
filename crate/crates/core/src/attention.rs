//! Relative multi-head self-attention and the block/grid attention layers.
//!
//! Both layers share one implementation; they differ only in how pixels are
//! grouped into length-`S²` sequences before attention ([`crate::axes`]).
//! A learned table of `(2S−1)²` biases per head is indexed by the 2-D
//! displacement between tokens in the `S×S` group, so block and grid
//! attention with `S = P = G` have identical parameters and cost.

use std::sync::Arc;

use crate::axes::{self, PartitionKind};
use crate::element::Element;
use crate::error::{dim_err, Error, Result};
use crate::graph::Graph;
use crate::nn::{Ctx, Linear, Mlp, Norm, NormKind, DENSE_INIT_STD};
use crate::params::{Init, ParamId, Registry};
use crate::tensor::{Gather, Tensor};

pub const DEFAULT_HEAD_DIM: usize = 32;

/// Flat `(2S−1)²` table index for every token pair `(i, j)` of an `S×S`
/// window in row-major order.
pub fn build_bias_index(s: usize) -> Vec<usize> {
    let l = s * s;
    let span = 2 * s - 1;
    let mut idx = Vec::with_capacity(l * l);
    for i in 0..l {
        let (ri, ci) = (i / s, i % s);
        for j in 0..l {
            let (rj, cj) = (j / s, j % s);
            let dr = ri + s - 1 - rj;
            let dc = ci + s - 1 - cj;
            idx.push(dr * span + dc);
        }
    }
    idx
}

/// Gather expanding a `[heads, (2S−1)²]` table into `[heads, S², S²]`.
pub fn bias_gather(heads: usize, s: usize) -> Gather {
    let span = (2 * s - 1) * (2 * s - 1);
    let l = s * s;
    let base = build_bias_index(s);
    let index = (0..heads).flat_map(|h| base.iter().map(move |&k| h * span + k)).collect();
    Gather { src_shape: vec![heads, span], out_shape: vec![heads, l, l], inner: 1, index }
}

/// Resamples a `[heads, (2S−1)²]` bias table to window size `s_new` by
/// bilinear interpolation with aligned corners.
pub fn interpolate_bias<T: Element>(table: &Tensor<T>, s: usize, s_new: usize) -> Result<Tensor<T>> {
    let (n, m) = (2 * s - 1, 2 * s_new - 1);
    if s == 0 || s_new == 0 || table.rank() != 2 || table.shape()[1] != n * n {
        return dim_err(format!("bias table {:?} does not match window {s}", table.shape()));
    }
    if s == s_new {
        return Ok(table.clone());
    }
    let heads = table.shape()[0];
    // source coordinate and blend weight per output coordinate
    let axis: Vec<(usize, usize, f64)> = (0..m)
        .map(|i| {
            let pos = if m == 1 { 0.0 } else { i as f64 * (n - 1) as f64 / (m - 1) as f64 };
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();
    let src = table.data();
    let mut out = Vec::with_capacity(heads * m * m);
    for h in 0..heads {
        let t = &src[h * n * n..(h + 1) * n * n];
        for &(y0, y1, fy) in &axis {
            for &(x0, x1, fx) in &axis {
                let at = |y: usize, x: usize| t[y * n + x].to_f64().unwrap();
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(T::from_f64_lossy(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::new(vec![heads, m * m], out)
}

/// `softmax(Q·Kᵀ/√d + bias)·V` over `[.., L, d]` operands; `bias` broadcasts
/// against the `[.., L, L]` logits.
pub fn rel_attention<T: Element, G: Graph<T>>(
    g: &mut G,
    q: &G::Var,
    k: &G::Var,
    v: &G::Var,
    bias: Option<&G::Var>,
) -> Result<G::Var> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() < 2 || qs != ks || qs != vs {
        return dim_err(format!("attention operands disagree: q {qs:?}, k {ks:?}, v {vs:?}"));
    }
    let r = qs.len();
    let d = qs[r - 1];
    let kt = g.swapaxes(k, r - 2, r - 1)?;
    let logits = g.matmul(q, &kt)?;
    let mut logits = g.scale(&logits, 1.0 / (d as f64).sqrt())?;
    if let Some(b) = bias {
        logits = g.add(&logits, b)?;
    }
    let attn = g.softmax(&logits)?;
    g.matmul(&attn, v)
}

/// Multi-head relative self-attention over `[B, N, L, C]` token groups.
#[derive(Clone, Debug)]
pub struct RelativeAttention {
    pub c: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Side of the square token group (`P` or `G`).
    pub size: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub table: ParamId,
    bias_gather: Arc<Gather>,
}

impl RelativeAttention {
    pub fn new(pb: &mut impl Registry, name: &str, c: usize, head_dim: usize, size: usize) -> Result<Self> {
        if head_dim == 0 || c % head_dim != 0 {
            return Err(Error::Config(format!("width {c} is not a multiple of head size {head_dim}")));
        }
        if size == 0 {
            return Err(Error::Config("attention window size must be positive".into()));
        }
        let heads = c / head_dim;
        pb.push_scope(name);
        let q = Linear::new(pb, "q", c, c, false);
        let k = Linear::new(pb, "k", c, c, false);
        let v = Linear::new(pb, "v", c, c, false);
        let out = Linear::new(pb, "out", c, c, true);
        let span = (2 * size - 1) * (2 * size - 1);
        let table = pb.param("rel_bias", &[heads, span], Init::TruncNormal { std: DENSE_INIT_STD }, false);
        pb.pop_scope();
        Ok(Self { c, heads, head_dim, size, q, k, v, out, table, bias_gather: Arc::new(bias_gather(heads, size)) })
    }

    /// Rebuilds the table lookup after the window size changed.
    pub(crate) fn set_size(&mut self, size: usize) {
        self.size = size;
        self.bias_gather = Arc::new(bias_gather(self.heads, size));
    }

    /// `(B, N, L, C) → (B, N, heads, L, d)`
    fn split_heads<T: Element, G: Graph<T>>(&self, g: &mut G, x: &G::Var) -> Result<G::Var> {
        let s = g.shape(x).to_vec();
        let x = g.reshape(x, &[s[0], s[1], s[2], self.heads, self.head_dim])?;
        g.swapaxes(&x, 2, 3)
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let s = cx.g.shape(x).to_vec();
        let l = self.size * self.size;
        if s.len() != 4 || s[2] != l || s[3] != self.c {
            return dim_err(format!("attention expects (B, N, {l}, {}), got {s:?}", self.c));
        }
        let q = self.q.forward(cx, x)?;
        let k = self.k.forward(cx, x)?;
        let v = self.v.forward(cx, x)?;
        let (q, k, v) = (self.split_heads(cx.g, &q)?, self.split_heads(cx.g, &k)?, self.split_heads(cx.g, &v)?);
        let table = cx.p(self.table);
        let bias = cx.g.gather(&table, self.bias_gather.clone())?;
        let y = rel_attention(cx.g, &q, &k, &v, Some(&bias))?;
        let y = cx.g.swapaxes(&y, 2, 3)?;
        let y = cx.g.reshape(&y, &s)?;
        self.out.forward(cx, &y)
    }

    pub fn num_params(&self) -> usize {
        self.q.num_params()
            + self.k.num_params()
            + self.v.num_params()
            + self.out.num_params()
            + self.heads * (2 * self.size - 1) * (2 * self.size - 1)
    }

    /// Projections plus `2·L·L·d` per group per head, for `tokens` pixels.
    pub fn macs(&self, tokens: usize) -> u64 {
        let l = self.size * self.size;
        let groups = tokens / l;
        let proj = self.q.macs(tokens) + self.k.macs(tokens) + self.v.macs(tokens) + self.out.macs(tokens);
        proj + (groups * self.heads * 2 * l * l * self.head_dim) as u64
    }
}

/// One multi-axis sub-layer: pre-norm attention over blocks or grid groups,
/// then a pre-norm MLP, each with a residual connection.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub kind: PartitionKind,
    pub norm1: Norm,
    pub attn: RelativeAttention,
    pub norm2: Norm,
    pub mlp: Mlp,
}

impl AttentionLayer {
    pub fn new(
        pb: &mut impl Registry,
        name: &str,
        kind: PartitionKind,
        c: usize,
        head_dim: usize,
        size: usize,
    ) -> Result<Self> {
        pb.push_scope(name);
        let norm1 = Norm::new(pb, "norm1", NormKind::Layer, c);
        let attn = RelativeAttention::new(pb, "attn", c, head_dim, size)?;
        let norm2 = Norm::new(pb, "norm2", NormKind::Layer, c);
        let mlp = Mlp::new(pb, "mlp", c);
        pb.pop_scope();
        Ok(Self { kind, norm1, attn, norm2, mlp })
    }

    pub fn size(&self) -> usize {
        self.attn.size
    }

    fn partition(&self, shape: &[usize]) -> Result<Gather> {
        match self.kind {
            PartitionKind::Block => axes::block_gather(shape, self.size()),
            PartitionKind::Grid => axes::grid_gather(shape, self.size()),
        }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let part = self.partition(cx.g.shape(x))?;
        let unpart = Arc::new(part.inverse());
        let h = self.norm1.forward(cx, x)?;
        let h = cx.g.gather(&h, Arc::new(part))?;
        let h = self.attn.forward(cx, &h)?;
        let h = cx.g.gather(&h, unpart)?;
        let x = cx.g.add(x, &h)?;
        let h = self.norm2.forward(cx, &x)?;
        let h = self.mlp.forward(cx, &h)?;
        cx.g.add(&x, &h)
    }

    pub fn num_params(&self) -> usize {
        self.norm1.num_params() + self.attn.num_params() + self.norm2.num_params() + self.mlp.num_params()
    }

    /// MACs of the attention half and the MLP half at an `h×w` input.
    pub fn macs(&self, h: usize, w: usize) -> (u64, u64) {
        (self.attn.macs(h * w), self.mlp.macs(h * w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Eager;
    use crate::params::ParamBuilder;

    #[test]
    fn bias_index_examples() {
        assert_eq!(build_bias_index(1), vec![0]);
        let idx = build_bias_index(7);
        assert_eq!(idx.len(), 49 * 49);
        assert_eq!(*idx.iter().max().unwrap(), 168);
        assert_eq!(*idx.iter().min().unwrap(), 0);
        // brute-force oracle over coordinate pairs for S=2
        let mut oracle = vec![];
        for (ri, ci) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
            for (rj, cj) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
                oracle.push(((ri - rj + 1) * 3 + (ci - cj + 1)) as usize);
            }
        }
        assert_eq!(build_bias_index(2), oracle);
        // negated displacement mirrors around the centre entry
        let idx = build_bias_index(3);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(idx[i * 9 + j] + idx[j * 9 + i], 2 * 12);
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let t = Tensor::<f64>::from_fn(&[2, 9], |i| i as f64 * 0.37);
        assert!(interpolate_bias(&t, 2, 2).unwrap().bitwise_eq(&t));
        let c = Tensor::<f64>::full(&[1, 9], 1.25);
        let up = interpolate_bias(&c, 2, 3).unwrap();
        assert!(up.data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        let t = Tensor::<f64>::arange(&[1, 9]);
        let up = interpolate_bias(&t, 2, 3).unwrap();
        assert_eq!(up.shape(), &[1, 25]);
        let d = up.data();
        assert_eq!([d[0], d[4], d[20], d[24]], [0.0, 2.0, 6.0, 8.0]);
        // midpoints of an affine ramp
        assert_eq!(d[1], 0.5);
        assert_eq!(d[12], 4.0);
        assert!(interpolate_bias(&t, 3, 2).is_err());
    }

    #[test]
    fn two_token_attention() {
        let mut g = Eager;
        let eye = Tensor::<f64>::eye(2).reshape(&[1, 2, 2]).unwrap();
        let y = rel_attention(&mut g, &eye, &eye, &eye, None).unwrap();
        let a = (0.5f64.sqrt()).exp();
        let p0 = a / (a + 1.0);
        assert!((y.get(&[0, 0, 0]) - p0).abs() < 1e-12);
        assert!((y.get(&[0, 0, 0]) - 0.6698).abs() < 1e-4);
        assert!((y.get(&[0, 0, 1]) - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn singleton_and_masked_attention() {
        let mut g = Eager;
        let q = Tensor::<f64>::from_fn(&[3, 1, 4], |i| i as f64);
        let v = Tensor::<f64>::from_fn(&[3, 1, 4], |i| (i as f64).cos());
        let b = Tensor::<f64>::full(&[1, 1], 123.0);
        assert!(rel_attention(&mut g, &q, &q, &v, Some(&b)).unwrap().bitwise_eq(&v));

        let q = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64 * 0.3).sin());
        let v = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let mask = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 0.0 } else { -1e9 });
        let y = rel_attention(&mut g, &q, &q, &v, Some(&mask)).unwrap();
        assert!(y.max_abs_diff(&v) < 1e-9);
        assert!(rel_attention(&mut g, &q, &v.reshape(&[2, 4, 3]).unwrap(), &v, None).is_err());
    }

    #[test]
    fn zero_projections_give_identity_residual() {
        let mut store = crate::params::ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 5);
        let layer = AttentionLayer::new(&mut pb, "ga", PartitionKind::Grid, 64, 32, 7).unwrap();
        for id in [layer.attn.out.w, layer.mlp.fc2.w] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let x = Tensor::<f64>::from_fn(&[1, 14, 14, 64], |i| (i as f64 * 0.01).sin());
        let mut g = Eager;
        let vars = store.bind(&mut g);
        let mut cx = Ctx::new(&mut g, &vars, &store, false);
        let y = layer.forward(&mut cx, &x).unwrap();
        assert!(y.bitwise_eq(&x));
        assert_eq!(layer.attn.heads, 2);
    }

    #[test]
    fn rejects_bad_width() {
        let mut store = crate::params::ParamStore::<f32>::new();
        let mut pb = ParamBuilder::new(&mut store, 0);
        assert!(matches!(RelativeAttention::new(&mut pb, "a", 48, 32, 7), Err(Error::Config(_))));
    }
}
