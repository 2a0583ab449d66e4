use crate::attention::{interpolate_bias, AttentionLayer};
use crate::axes::{PartitionKind, PartitionSpec};
use crate::element::Element;
use crate::error::{dim_err, Error, Result};
use crate::graph::{Eager, Graph};
use crate::nn::{Conv2d, Ctx, Linear, Norm, NormKind};
use crate::params::{ParamBuilder, ParamStore, Registry, ShapeRecorder};
use crate::tensor::Tensor;

use super::flops::FlopReport;
use super::mbconv::MbConv;
use super::variant::{LayerKind, VariantSpec};

#[derive(Clone, Debug)]
pub enum SubLayer {
    MbConv(MbConv),
    Attention(AttentionLayer),
}

/// One MaxViT block: MBConv, block attention and grid attention in the
/// configured order.
#[derive(Clone, Debug)]
pub struct MaxVitBlock {
    pub layers: Vec<(LayerKind, SubLayer)>,
}

impl MaxVitBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        pb: &mut impl Registry,
        name: &str,
        spec: &VariantSpec,
        cin: usize,
        cout: usize,
        downsample: bool,
    ) -> Result<Self> {
        pb.push_scope(name);
        let mut layers = Vec::with_capacity(3);
        // sub-layers before the MBConv see its input width
        let mut c = cin;
        for kind in spec.order.0 {
            let layer = match kind {
                LayerKind::MbConv => {
                    c = cout;
                    SubLayer::MbConv(MbConv::new(pb, "mbconv", cin, cout, downsample, spec.expansion, spec.se_ratio))
                }
                LayerKind::BlockAttn => SubLayer::Attention(AttentionLayer::new(
                    pb,
                    "block_attn",
                    PartitionKind::Block,
                    c,
                    spec.head_dim,
                    spec.partition.window_size,
                )?),
                LayerKind::GridAttn => SubLayer::Attention(AttentionLayer::new(
                    pb,
                    "grid_attn",
                    PartitionKind::Grid,
                    c,
                    spec.head_dim,
                    spec.partition.grid_size,
                )?),
            };
            layers.push((kind, layer));
        }
        pb.pop_scope();
        Ok(Self { layers })
    }

    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = match layer {
                SubLayer::MbConv(m) => m.forward(cx, &h)?,
                SubLayer::Attention(a) => a.forward(cx, &h)?,
            };
        }
        Ok(h)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|(_, l)| match l {
                SubLayer::MbConv(m) => m.num_params(),
                SubLayer::Attention(a) => a.num_params(),
            })
            .sum()
    }

    /// Checks partition divisibility for an `h×w` input and returns the
    /// output extent.
    fn check(&self, mut h: usize, mut w: usize) -> Result<(usize, usize)> {
        for (_, layer) in &self.layers {
            match layer {
                SubLayer::MbConv(m) => {
                    if m.stride == 2 && (h % 2 != 0 || w % 2 != 0) {
                        return Err(Error::Partition { h, w, size: 2 });
                    }
                    h /= m.stride;
                    w /= m.stride;
                }
                SubLayer::Attention(a) => crate::axes::check_divisible(h, w, a.size())?,
            }
        }
        Ok((h, w))
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<MaxVitBlock>,
}

/// Stem, stages of MaxViT blocks, global average pooling and a linear head.
///
/// Holds the layer structure only; parameter values live in a
/// [`ParamStore`] built alongside (see [`MaxVit::build`]).
#[derive(Clone, Debug)]
pub struct MaxVit {
    pub spec: VariantSpec,
    pub num_classes: usize,
    pub stem_conv1: Conv2d,
    pub stem_norm: Norm,
    pub stem_conv2: Conv2d,
    pub stages: Vec<Stage>,
    pub head: Linear,
}

impl MaxVit {
    /// Declares every parameter on `pb` in a fixed order.
    pub fn declare(spec: &VariantSpec, num_classes: usize, pb: &mut impl Registry) -> Result<Self> {
        spec.validate()?;
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let c0 = spec.stem_channels;
        pb.push_scope("stem");
        let stem_conv1 = Conv2d::new(pb, "conv1", 3, 3, c0, 2, false);
        let stem_norm = Norm::new(pb, "norm", NormKind::Batch, c0);
        let stem_conv2 = Conv2d::new(pb, "conv2", 3, c0, c0, 1, true);
        pb.pop_scope();

        let mut stages = Vec::with_capacity(spec.stages.len());
        let mut cin = c0;
        for (si, st) in spec.stages.iter().enumerate() {
            pb.push_scope(&format!("s{}", si + 1));
            let mut blocks = Vec::with_capacity(st.blocks);
            for bi in 0..st.blocks {
                let down = bi == 0 && st.downsample;
                blocks.push(MaxVitBlock::new(pb, &format!("b{bi}"), spec, cin, st.channels, down)?);
                cin = st.channels;
            }
            pb.pop_scope();
            stages.push(Stage { blocks });
        }
        let head = Linear::new(pb, "head", cin, num_classes, true);
        Ok(Self { spec: spec.clone(), num_classes, stem_conv1, stem_norm, stem_conv2, stages, head })
    }

    /// Structure plus freshly initialized parameters.
    pub fn build<T: Element>(spec: &VariantSpec, num_classes: usize, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::declare(spec, num_classes, &mut ParamBuilder::new(&mut store, seed))?;
        Ok((model, store))
    }

    /// Structure only, with parameter names and shapes; allocates no weights.
    pub fn layout(spec: &VariantSpec, num_classes: usize) -> Result<(Self, ShapeRecorder)> {
        let mut rec = ShapeRecorder::new();
        let model = Self::declare(spec, num_classes, &mut rec)?;
        Ok((model, rec))
    }

    pub fn num_params(&self) -> usize {
        self.stem_conv1.num_params()
            + self.stem_norm.num_params()
            + self.stem_conv2.num_params()
            + self.stages.iter().flat_map(|s| &s.blocks).map(MaxVitBlock::num_params).sum::<usize>()
            + self.head.num_params()
    }

    /// Verifies that an `h×w` input partitions cleanly at every attention layer.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let (mut h, mut w) = (h.div_ceil(2), w.div_ceil(2));
        for block in self.stages.iter().flat_map(|s| &s.blocks) {
            (h, w) = block.check(h, w)?;
        }
        Ok(())
    }

    /// Logits `[B, num_classes]` for images `[B, H, W, 3]`.
    pub fn forward<T: Element, G: Graph<T>>(&self, cx: &mut Ctx<'_, T, G>, images: &G::Var) -> Result<G::Var> {
        let s = cx.g.shape(images).to_vec();
        if s.len() != 4 || s[3] != 3 {
            return dim_err(format!("expected images (B,H,W,3), got {s:?}"));
        }
        self.check_input(s[1], s[2])?;
        let h = self.stem_conv1.forward(cx, images)?;
        let h = self.stem_norm.forward(cx, &h)?;
        let h = cx.g.gelu(&h)?;
        let mut h = self.stem_conv2.forward(cx, &h)?;
        for block in self.stages.iter().flat_map(|s| &s.blocks) {
            h = block.forward(cx, &h)?;
        }
        let pooled = cx.g.mean_axes(&h, &[1, 2])?;
        self.head.forward(cx, &pooled)
    }

    /// Inference-mode logits.
    pub fn infer<T: Element>(&self, store: &ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eager;
        let vars = store.bind(&mut g);
        let mut cx = Ctx::new(&mut g, &vars, store, false);
        self.forward(&mut cx, images)
    }

    pub fn attention_layers(&self) -> impl Iterator<Item = &AttentionLayer> {
        self.stages.iter().flat_map(|s| &s.blocks).flat_map(|b| &b.layers).filter_map(|(_, l)| match l {
            SubLayer::Attention(a) => Some(a),
            SubLayer::MbConv(_) => None,
        })
    }

    /// Switches to a new partition, resampling every relative-bias table
    /// bilinearly to the new window size.
    pub fn set_partition<T: Element>(&mut self, store: &mut ParamStore<T>, partition: PartitionSpec) -> Result<()> {
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                for (_, layer) in &mut block.layers {
                    let SubLayer::Attention(a) = layer else { continue };
                    let new = match a.kind {
                        PartitionKind::Block => partition.window_size,
                        PartitionKind::Grid => partition.grid_size,
                    };
                    let table = interpolate_bias(store.get(a.attn.table), a.attn.size, new)?;
                    store.replace(a.attn.table, table);
                    a.attn.set_size(new);
                }
            }
        }
        self.spec.partition = partition;
        Ok(())
    }

    /// Switches partition without parameter values (for cost accounting).
    pub fn set_partition_layout(&mut self, partition: PartitionSpec) {
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                for (_, layer) in &mut block.layers {
                    if let SubLayer::Attention(a) = layer {
                        a.attn.set_size(match a.kind {
                            PartitionKind::Block => partition.window_size,
                            PartitionKind::Grid => partition.grid_size,
                        });
                    }
                }
            }
        }
        self.spec.partition = partition;
    }

    /// Per-layer MACs for one `res×res` image.
    pub fn flops(&self, res: usize) -> Result<FlopReport> {
        self.check_input(res, res)?;
        let p = self.spec.partition;
        let mut rep = FlopReport::new(res, p.window_size, p.grid_size);
        let mut r = res;
        rep.push("stem.conv1".into(), "stem", "conv", self.stem_conv1.macs(r, r));
        r = self.stem_conv1.out_extent(r);
        rep.push("stem.conv2".into(), "stem", "conv", self.stem_conv2.macs(r, r));
        for (si, stage) in self.stages.iter().enumerate() {
            let sname = format!("s{}", si + 1);
            for (bi, block) in stage.blocks.iter().enumerate() {
                for (kind, layer) in &block.layers {
                    let id = format!("{sname}.b{bi}.{}", kind.tag());
                    match layer {
                        SubLayer::MbConv(m) => {
                            for (part, macs) in m.macs(r, r) {
                                let k = match part {
                                    "dw" => "dwconv",
                                    "se" => "se",
                                    _ => "conv",
                                };
                                rep.push(format!("{id}.{part}"), &sname, k, macs);
                            }
                            r = r.div_ceil(m.stride);
                        }
                        SubLayer::Attention(a) => {
                            let (attn, mlp) = a.macs(r, r);
                            rep.push(format!("{id}.attn"), &sname, "attention", attn);
                            rep.push(format!("{id}.mlp"), &sname, "mlp", mlp);
                        }
                    }
                }
            }
        }
        rep.push("head".into(), "head", "dense", self.head.macs(1));
        Ok(rep)
    }
}
