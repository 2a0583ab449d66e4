//! Reference implementations written with plain loops over flat buffers.

use maxvit::attention::AttentionLayer;
use maxvit::ops::NORM_EPS;
use maxvit::params::ParamStore;
use maxvit::Tensor;

/// "Same"-padded cross-correlation, kernel `[k,k,Cin,Cout]`.
pub fn conv2d_loops(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [b, h, w, cin] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let pt = (((oh - 1) * stride + ks).saturating_sub(h) / 2) as isize;
    let pl = (((ow - 1) * stride + ks).saturating_sub(w) / 2) as isize;
    let mut out = vec![0.0; b * oh * ow * cout];
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as isize - pt;
                            let ix = (ox * stride + kx) as isize - pl;
                            if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                                for ci in 0..cin {
                                    acc += x.get(&[n, iy as usize, ix as usize, ci]) * k.get(&[ky, kx, ci, co]);
                                }
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, oh, ow, cout], out).unwrap()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(x: &[f64], g: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (0..x.len()).map(|i| (x[i] - mean) / (var + NORM_EPS).sqrt() * g.data()[i] + b.data()[i]).collect()
}

fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut y: Vec<f64> = b.map_or(vec![0.0; dout], |b| b.to_vec());
    for i in 0..din {
        for j in 0..dout {
            y[j] += x[i] * w.data()[i * dout + j];
        }
    }
    y
}

/// Full self-attention layer over every pixel of each (square) image, with
/// the relative bias looked up by 2-D pixel displacement.
pub fn dense_attention_layer(layer: &AttentionLayer, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let [b, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let a = &layer.attn;
    let (heads, d, s) = (a.heads, a.head_dim, a.size);
    let n = h * w;
    let p = |id| store.get(id);
    let table = p(a.table);
    let span = 2 * s - 1;
    let mut out = vec![];
    for img in 0..b {
        let tokens: Vec<&[f64]> = x.data()[img * n * c..(img + 1) * n * c].chunks(c).collect();
        let normed: Vec<Vec<f64>> =
            tokens.iter().map(|t| layer_norm(t, p(layer.norm1.gamma), p(layer.norm1.beta))).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|t| affine(t, p(a.q.w), None)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|t| affine(t, p(a.k.w), None)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|t| affine(t, p(a.v.w), None)).collect();
        let mut mixed = vec![vec![0.0; c]; n];
        for hd in 0..heads {
            for i in 0..n {
                let mut logits = vec![0.0; n];
                for j in 0..n {
                    let dot: f64 = (hd * d..(hd + 1) * d).map(|e| q[i][e] * k[j][e]).sum();
                    let dy = i / w + s - 1 - j / w;
                    let dx = i % w + s - 1 - j % w;
                    logits[j] = dot / (d as f64).sqrt() + table.get(&[hd, dy * span + dx]);
                }
                let top = logits.iter().cloned().fold(f64::MIN, f64::max);
                let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = weights.iter().sum();
                for e in hd * d..(hd + 1) * d {
                    mixed[i][e] = (0..n).map(|j| weights[j] * v[j][e]).sum::<f64>() / z;
                }
            }
        }
        for i in 0..n {
            let proj = affine(&mixed[i], p(a.out.w), a.out.b.map(p));
            let x1: Vec<f64> = (0..c).map(|e| tokens[i][e] + proj[e]).collect();
            let l2 = layer_norm(&x1, p(layer.norm2.gamma), p(layer.norm2.beta));
            let hidden: Vec<f64> =
                affine(&l2, p(layer.mlp.fc1.w), layer.mlp.fc1.b.map(p)).into_iter().map(gelu).collect();
            let m = affine(&hidden, p(layer.mlp.fc2.w), layer.mlp.fc2.b.map(p));
            out.extend((0..c).map(|e| x1[e] + m[e]));
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}
