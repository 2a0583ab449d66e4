//! Loop-level reference implementations used by the property suites.

use crate::attention::AttentionLayer;
use crate::ops::NORM_EPS;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Direct 6-loop "same"-padded cross-correlation, kernel `[k,k,Cin,Cout]`.
pub fn conv2d_loops(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let (b, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let pad_t = ((oh - 1) * stride + ks).saturating_sub(h) / 2;
    let pad_l = ((ow - 1) * stride + ks).saturating_sub(w) / 2;
    Tensor::from_fn(&[b, oh, ow, cout], |i| {
        let (co, ox, oy, bi) = (i % cout, (i / cout) % ow, (i / cout / ow) % oh, i / cout / ow / oh);
        let mut acc = 0.0;
        for ky in 0..ks {
            for kx in 0..ks {
                let iy = (oy * stride + ky) as isize - pad_t as isize;
                let ix = (ox * stride + kx) as isize - pad_l as isize;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += x.get(&[bi, iy as usize, ix as usize, ci]) * k.get(&[ky, kx, ci, co]);
                }
            }
        }
        acc
    })
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

/// `x·W (+ b)` for one row, `W: [d_in, d_out]`.
fn dense(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let d_out = w.shape()[1];
    (0..d_out)
        .map(|j| {
            let s: f64 = x.iter().enumerate().map(|(i, v)| v * w.get(&[i, j])).sum();
            s + b.map_or(0.0, |b| b.data()[j])
        })
        .collect()
}

/// Full (unpartitioned) relative self-attention layer over all `H·W`
/// tokens of each image, with the bias indexed by 2-D pixel displacement.
/// Equals block attention when the image is a single `P×P` window.
pub fn dense_attention_layer(layer: &AttentionLayer, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert_eq!(h, w, "dense oracle expects square images");
    let a = &layer.attn;
    let (heads, dh, s) = (a.heads, a.head_dim, a.size);
    let n = h * w;
    let p = |id| store.get(id);
    let opt = |id: Option<crate::params::ParamId>| id.map(|i| store.get(i));
    let table = p(a.table);
    let span = 2 * s - 1;
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..b {
        let tok: Vec<&[f64]> = (0..n).map(|t| &x.data()[(bi * n + t) * c..][..c]).collect();
        let ln: Vec<Vec<f64>> =
            tok.iter().map(|t| layer_norm_row(t, p(layer.norm1.gamma).data(), p(layer.norm1.beta).data())).collect();
        let q: Vec<Vec<f64>> = ln.iter().map(|t| dense(t, p(a.q.w), None)).collect();
        let k: Vec<Vec<f64>> = ln.iter().map(|t| dense(t, p(a.k.w), None)).collect();
        let v: Vec<Vec<f64>> = ln.iter().map(|t| dense(t, p(a.v.w), None)).collect();
        let mut att = vec![vec![0.0; c]; n];
        for hd in 0..heads {
            for i in 0..n {
                let (ri, ci) = ((i / w) as isize, (i % w) as isize);
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        let (rj, cj) = ((j / w) as isize, (j % w) as isize);
                        let dot: f64 = (0..dh).map(|d| q[i][hd * dh + d] * k[j][hd * dh + d]).sum();
                        let dr = (ri - rj + s as isize - 1) as usize;
                        let dc = (ci - cj + s as isize - 1) as usize;
                        dot / (dh as f64).sqrt() + table.get(&[hd, dr * span + dc])
                    })
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for d in 0..dh {
                    att[i][hd * dh + d] = (0..n).map(|j| e[j] / z * v[j][hd * dh + d]).sum();
                }
            }
        }
        for i in 0..n {
            let proj = dense(&att[i], p(a.out.w), opt(a.out.b));
            let x1: Vec<f64> = tok[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
            let l2 = layer_norm_row(&x1, p(layer.norm2.gamma).data(), p(layer.norm2.beta).data());
            let hdn: Vec<f64> = dense(&l2, p(layer.mlp.fc1.w), opt(layer.mlp.fc1.b)).into_iter().map(gelu).collect();
            let m = dense(&hdn, p(layer.mlp.fc2.w), opt(layer.mlp.fc2.b));
            out.extend(x1.iter().zip(&m).map(|(a, b)| a + b));
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}
