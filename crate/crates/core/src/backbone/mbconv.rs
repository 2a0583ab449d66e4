use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{se_width, Conv2d, Ctx, DepthwiseConv2d, Norm, NormKind, SqueezeExcite};
use crate::params::Registry;

/// Inverted-bottleneck convolution block with squeeze-excitation:
///
/// `shortcut(x) + Proj(SE(DWConv(Conv(Norm(x)))))`, where `Conv` expands to
/// `E·C_out` channels and both it and the depthwise conv are followed by
/// batch norm and GELU. With downsampling the depthwise conv has stride 2
/// and the shortcut is a 2×2 average pool followed by a 1×1 projection.
#[derive(Clone, Debug)]
pub struct MbConv {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pre_norm: Norm,
    pub expand: Conv2d,
    pub norm1: Norm,
    pub dw: DepthwiseConv2d,
    pub norm2: Norm,
    pub se: SqueezeExcite,
    pub proj: Conv2d,
    pub shortcut: Option<Conv2d>,
}

impl MbConv {
    pub fn new(
        pb: &mut impl Registry,
        name: &str,
        cin: usize,
        cout: usize,
        downsample: bool,
        expansion: usize,
        se_ratio: f64,
    ) -> Self {
        let stride = if downsample { 2 } else { 1 };
        let mid = expansion * cout;
        pb.push_scope(name);
        let pre_norm = Norm::new(pb, "pre_norm", NormKind::Batch, cin);
        let expand = Conv2d::new(pb, "expand", 1, cin, mid, 1, false);
        let norm1 = Norm::new(pb, "norm1", NormKind::Batch, mid);
        let dw = DepthwiseConv2d::new(pb, "dw", 3, mid, stride);
        let norm2 = Norm::new(pb, "norm2", NormKind::Batch, mid);
        let se = SqueezeExcite::new(pb, "se", mid, se_width(cout, se_ratio));
        let proj = Conv2d::new(pb, "proj", 1, mid, cout, 1, true);
        let shortcut = (downsample || cin != cout).then(|| Conv2d::new(pb, "shortcut", 1, cin, cout, 1, true));
        pb.pop_scope();
        Self { cin, cout, stride, pre_norm, expand, norm1, dw, norm2, se, proj, shortcut }
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let s = cx.g.shape(x).to_vec();
        if self.stride == 2 && (s[1] % 2 != 0 || s[2] % 2 != 0) {
            return Err(Error::Partition { h: s[1], w: s[2], size: 2 });
        }
        let h = self.pre_norm.forward(cx, x)?;
        let h = self.expand.forward(cx, &h)?;
        let h = self.norm1.forward(cx, &h)?;
        let h = cx.g.gelu(&h)?;
        let h = self.dw.forward(cx, &h)?;
        let h = self.norm2.forward(cx, &h)?;
        let h = cx.g.gelu(&h)?;
        let h = self.se.forward(cx, &h)?;
        let h = self.proj.forward(cx, &h)?;

        let mut sc = x.clone();
        if self.stride == 2 {
            sc = cx.g.avg_pool2d(&sc, 2)?;
        }
        if let Some(conv) = &self.shortcut {
            sc = conv.forward(cx, &sc)?;
        }
        cx.g.add(&sc, &h)
    }

    pub fn num_params(&self) -> usize {
        self.pre_norm.num_params()
            + self.expand.num_params()
            + self.norm1.num_params()
            + self.dw.num_params()
            + self.norm2.num_params()
            + self.se.num_params()
            + self.proj.num_params()
            + self.shortcut.as_ref().map_or(0, Conv2d::num_params)
    }

    /// `(component, MACs)` at an `h×w` input.
    pub fn macs(&self, h: usize, w: usize) -> Vec<(&'static str, u64)> {
        let (ho, wo) = (h.div_ceil(self.stride), w.div_ceil(self.stride));
        let mut v = vec![
            ("expand", self.expand.macs(h, w)),
            ("dw", self.dw.macs(h, w)),
            ("se", self.se.macs()),
            ("proj", self.proj.macs(ho, wo)),
        ];
        if let Some(sc) = &self.shortcut {
            v.push(("shortcut", sc.macs(ho, wo)));
        }
        v
    }
}
