//! Channels-last convolutions and pooling.
//!
//! Padding is "same": output extent is `ceil(in / stride)` and any odd
//! leftover padding goes on the bottom/right edge.

use crate::element::Element;
use crate::error::{dim_err, Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Output extent and leading pad for one spatial axis.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

struct Geom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
    k: usize,
    s: usize,
}

fn geom(x: &[usize], k: usize, s: usize) -> Result<Geom> {
    if x.len() != 4 {
        return dim_err(format!("expected (B,H,W,C) input, got {x:?}"));
    }
    if s == 0 {
        return dim_err("stride must be positive");
    }
    let (oh, pt) = same_padding(x[1], k, s);
    let (ow, pl) = same_padding(x[2], k, s);
    Ok(Geom { b: x[0], h: x[1], w: x[2], cin: x[3], oh, ow, pt, pl, k, s })
}

impl Geom {
    /// Input coordinate for output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.s + t).checked_sub(pad)?;
        (p < extent).then_some(p)
    }
}

/// Cross-correlation with kernel `[kh, kw, Cin, Cout]`.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    if kernel.rank() != 4 || kernel.shape()[0] != kernel.shape()[1] {
        return dim_err(format!("conv2d kernel must be square [k,k,Cin,Cout], got {:?}", kernel.shape()));
    }
    let g = geom(x.shape(), kernel.shape()[0], stride)?;
    let (cin, cout) = (kernel.shape()[2], kernel.shape()[3]);
    if g.cin != cin {
        return dim_err(format!("conv2d channel mismatch: input {:?}, kernel {:?}", x.shape(), kernel.shape()));
    }
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * cout];
    par::for_each_chunk(&mut out, g.ow * cout, |row, o| {
        let (b, oy) = (row / g.oh, row % g.oh);
        for ky in 0..g.k {
            let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
            for ox in 0..g.ow {
                let acc = &mut o[ox * cout..(ox + 1) * cout];
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                    let px = &xd[((b * g.h + iy) * g.w + ix) * cin..][..cin];
                    let kk = &kd[(ky * g.k + kx) * cin * cout..][..cin * cout];
                    for (ci, &xv) in px.iter().enumerate() {
                        for (a, &kv) in acc.iter_mut().zip(&kk[ci * cout..(ci + 1) * cout]) {
                            *a = *a + xv * kv;
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.b, g.oh, g.ow, cout], out))
}

/// Returns `(dx, dkernel)`.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let g = geom(x.shape(), kernel.shape()[0], stride).expect("validated in forward");
    let (cin, cout) = (kernel.shape()[2], kernel.shape()[3]);
    let (xd, kd, gd) = (x.data(), kernel.data(), grad.data());

    let mut dx = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut dx, g.h * g.w * cin, |b, dxb| {
        for oy in 0..g.oh {
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                for ox in 0..g.ow {
                    let go = &gd[((b * g.oh + oy) * g.ow + ox) * cout..][..cout];
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let dpx = &mut dxb[(iy * g.w + ix) * cin..][..cin];
                        let kk = &kd[(ky * g.k + kx) * cin * cout..][..cin * cout];
                        for (ci, d) in dpx.iter_mut().enumerate() {
                            let s: T = kk[ci * cout..(ci + 1) * cout].iter().zip(go).map(|(&kv, &gv)| kv * gv).sum();
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    });

    let mut dk = vec![T::zero(); kernel.len()];
    par::for_each_chunk(&mut dk, cin * cout, |tap, dkt| {
        let (ky, kx) = (tap / g.k, tap % g.k);
        for b in 0..g.b {
            for oy in 0..g.oh {
                let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                for ox in 0..g.ow {
                    let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                    let px = &xd[((b * g.h + iy) * g.w + ix) * cin..][..cin];
                    let go = &gd[((b * g.oh + oy) * g.ow + ox) * cout..][..cout];
                    for (ci, &xv) in px.iter().enumerate() {
                        for (d, &gv) in dkt[ci * cout..(ci + 1) * cout].iter_mut().zip(go) {
                            *d = *d + xv * gv;
                        }
                    }
                }
            }
        }
    });
    (Tensor::from_parts(x.shape().to_vec(), dx), Tensor::from_parts(kernel.shape().to_vec(), dk))
}

/// Depthwise convolution with kernel `[k, k, C]`.
pub fn depthwise_conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    if kernel.rank() != 3 || kernel.shape()[0] != kernel.shape()[1] {
        return dim_err(format!("depthwise kernel must be [k,k,C], got {:?}", kernel.shape()));
    }
    let g = geom(x.shape(), kernel.shape()[0], stride)?;
    let c = g.cin;
    if kernel.shape()[2] != c {
        return dim_err(format!("depthwise channel mismatch: input {:?}, kernel {:?}", x.shape(), kernel.shape()));
    }
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * c];
    par::for_each_chunk(&mut out, g.ow * c, |row, o| {
        let (b, oy) = (row / g.oh, row % g.oh);
        for ky in 0..g.k {
            let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
            for ox in 0..g.ow {
                let acc = &mut o[ox * c..(ox + 1) * c];
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                    let px = &xd[((b * g.h + iy) * g.w + ix) * c..][..c];
                    let kk = &kd[(ky * g.k + kx) * c..][..c];
                    for ((a, &xv), &kv) in acc.iter_mut().zip(px).zip(kk) {
                        *a = *a + xv * kv;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.b, g.oh, g.ow, c], out))
}

pub fn depthwise_conv2d_backward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let g = geom(x.shape(), kernel.shape()[0], stride).expect("validated in forward");
    let c = g.cin;
    let (xd, kd, gd) = (x.data(), kernel.data(), grad.data());
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                for ox in 0..g.ow {
                    let go = &gd[((b * g.oh + oy) * g.ow + ox) * c..][..c];
                    for kx in 0..g.k {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let base = ((b * g.h + iy) * g.w + ix) * c;
                        let kb = (ky * g.k + kx) * c;
                        for ch in 0..c {
                            dx[base + ch] = dx[base + ch] + go[ch] * kd[kb + ch];
                            dk[kb + ch] = dk[kb + ch] + go[ch] * xd[base + ch];
                        }
                    }
                }
            }
        }
    }
    (Tensor::from_parts(x.shape().to_vec(), dx), Tensor::from_parts(kernel.shape().to_vec(), dk))
}

/// Non-overlapping `k×k` average pool with stride `k`.
pub fn avg_pool2d<T: Element>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return dim_err(format!("expected (B,H,W,C) input, got {:?}", x.shape()));
    }
    let [b, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Partition { h, w, size: k });
    }
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let xd = x.data();
    let mut out = vec![T::zero(); b * oh * ow * c];
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let src = &xd[((bi * h + y) * w + xx) * c..][..c];
                let dst = &mut out[((bi * oh + y / k) * ow + xx / k) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s * inv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, oh, ow, c], out))
}

pub fn avg_pool2d_backward<T: Element>(in_shape: &[usize], k: usize, grad: &Tensor<T>) -> Tensor<T> {
    let [b, h, w, c] = [in_shape[0], in_shape[1], in_shape[2], in_shape[3]];
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let gd = grad.data();
    let mut dx = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let src = &gd[((bi * oh + y / k) * ow + xx / k) * c..][..c];
                dx.extend(src.iter().map(|&g| g * inv));
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}
