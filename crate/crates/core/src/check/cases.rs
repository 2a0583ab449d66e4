//! Gradient-check cases: every graph primitive, the composite layers, and a
//! one-block end-to-end model.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{rel_attention, AttentionLayer};
use crate::axes::{self, PartitionKind};
use crate::backbone::{MaxVit, MbConv, VariantSpec};
use crate::error::Result;
use crate::graph::{grad_check_sampled, BnMode, GradCheckReport, Graph, Tape, Var};
use crate::nn::{Ctx, SqueezeExcite};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

type GradFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

pub struct GradCase {
    pub name: &'static str,
    pub params: Vec<Tensor<f64>>,
    /// Entries probed per parameter (`usize::MAX` for all).
    pub per_param: usize,
    pub f: GradFn,
}

impl GradCase {
    pub fn run(&self) -> Result<GradCheckReport> {
        grad_check_sampled(&self.params, GRAD_EPS, self.per_param, &self.f)
    }
}

pub fn randn(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// Reduces `y` to a scalar through a fixed random projection, so no output
/// direction has a structurally zero gradient.
fn project(t: &mut Tape<f64>, y: &Var, seed: u64) -> Result<Var> {
    let r = t.leaf(randn(t.shape(y), seed ^ 0x5eed, 1.0));
    let m = t.mul(y, &r)?;
    t.sum(&m)
}

fn case(
    name: &'static str,
    params: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
) -> GradCase {
    GradCase { name, params, per_param: usize::MAX, f: Box::new(f) }
}

/// A case whose function is a layer forward pass: `v[0]` is the input and
/// `v[1..]` the layer's parameters in store order.
fn layer_case<L>(
    name: &'static str,
    x: Tensor<f64>,
    store: ParamStore<f64>,
    per_param: usize,
    train: bool,
    fwd: L,
) -> GradCase
where
    L: Fn(&mut Ctx<'_, f64, Tape<f64>>, &Var) -> Result<Var> + Send + Sync + 'static,
{
    let mut params = vec![x];
    params.extend(store.tensors());
    GradCase {
        name,
        params,
        per_param,
        f: Box::new(move |t, v| {
            let y = {
                let mut cx = Ctx::new(t, &v[1..], &store, train);
                fwd(&mut cx, &v[0])?
            };
            project(t, &y, 11)
        }),
    }
}

/// Multiplies every dense weight and bias table by `k` so activations and
/// gradients are far from the finite-difference noise floor.
fn amplify(store: &mut ParamStore<f64>, k: f64) {
    for i in 0..store.len() {
        let e = store.entry(ParamId(i));
        if e.name.ends_with("weight") || e.name.ends_with("rel_bias") {
            let t = e.tensor.map(|v| v * k);
            store.set(ParamId(i), t).unwrap();
        }
    }
}

pub fn primitive_cases() -> Vec<GradCase> {
    let spread = |shape: &[usize], seed| randn(shape, seed, 1.0);
    vec![
        case("matmul", vec![spread(&[2, 3, 4], 1), spread(&[2, 4, 5], 2)], |t, v| {
            let y = t.matmul(&v[0], &v[1])?;
            project(t, &y, 1)
        }),
        case("linear", vec![spread(&[3, 4], 3), spread(&[4, 5], 4), spread(&[5], 5)], |t, v| {
            let y = t.linear(&v[0], &v[1], Some(&v[2]))?;
            project(t, &y, 2)
        }),
        case("add_broadcast", vec![spread(&[2, 3, 4], 6), spread(&[2, 1, 4], 7)], |t, v| {
            let y = t.add(&v[0], &v[1])?;
            project(t, &y, 3)
        }),
        case("mul_broadcast", vec![spread(&[2, 3, 3, 4], 8), spread(&[2, 1, 1, 4], 9)], |t, v| {
            let y = t.mul(&v[0], &v[1])?;
            project(t, &y, 4)
        }),
        case("scale", vec![spread(&[5], 10)], |t, v| {
            let y = t.scale(&v[0], -1.7)?;
            project(t, &y, 5)
        }),
        case("gelu", vec![randn(&[16], 11, 1.5)], |t, v| {
            let y = t.gelu(&v[0])?;
            project(t, &y, 6)
        }),
        case("sigmoid", vec![randn(&[16], 12, 2.0)], |t, v| {
            let y = t.sigmoid(&v[0])?;
            project(t, &y, 7)
        }),
        case("silu", vec![randn(&[16], 13, 2.0)], |t, v| {
            let y = t.silu(&v[0])?;
            project(t, &y, 8)
        }),
        case("softmax", vec![spread(&[3, 5], 14)], |t, v| {
            let y = t.softmax(&v[0])?;
            project(t, &y, 9)
        }),
        case("layer_norm", vec![spread(&[2, 3, 6], 15), spread(&[6], 16), spread(&[6], 17)], |t, v| {
            let y = t.layer_norm(&v[0], &v[1], &v[2])?;
            project(t, &y, 10)
        }),
        case("batch_norm_train", vec![spread(&[4, 2, 2, 3], 18), spread(&[3], 19), spread(&[3], 20)], |t, v| {
            let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], BnMode::Train)?;
            project(t, &y, 11)
        }),
        case("batch_norm_infer", vec![spread(&[2, 2, 2, 3], 21), spread(&[3], 22), spread(&[3], 23)], |t, v| {
            let mean = Tensor::new(vec![3], vec![0.3, -0.2, 1.0]).unwrap();
            let var = Tensor::new(vec![3], vec![0.5, 2.0, 1.3]).unwrap();
            let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], BnMode::Infer { mean: &mean, var: &var })?;
            project(t, &y, 12)
        }),
        case("conv2d_s1", vec![spread(&[2, 5, 5, 2], 24), spread(&[3, 3, 2, 3], 25)], |t, v| {
            let y = t.conv2d(&v[0], &v[1], 1)?;
            project(t, &y, 13)
        }),
        case("conv2d_s2", vec![spread(&[1, 5, 5, 2], 26), spread(&[3, 3, 2, 2], 27)], |t, v| {
            let y = t.conv2d(&v[0], &v[1], 2)?;
            project(t, &y, 14)
        }),
        case("depthwise_conv2d_s1", vec![spread(&[2, 5, 5, 3], 28), spread(&[3, 3, 3], 29)], |t, v| {
            let y = t.depthwise_conv2d(&v[0], &v[1], 1)?;
            project(t, &y, 15)
        }),
        case("depthwise_conv2d_s2", vec![spread(&[1, 6, 6, 3], 30), spread(&[3, 3, 3], 31)], |t, v| {
            let y = t.depthwise_conv2d(&v[0], &v[1], 2)?;
            project(t, &y, 16)
        }),
        case("avg_pool2d", vec![spread(&[1, 4, 6, 2], 32)], |t, v| {
            let y = t.avg_pool2d(&v[0], 2)?;
            project(t, &y, 17)
        }),
        case("mean_axes", vec![spread(&[2, 3, 3, 4], 33)], |t, v| {
            let y = t.mean_axes(&v[0], &[1, 2])?;
            project(t, &y, 18)
        }),
        case("gather_block", vec![spread(&[1, 4, 4, 2], 34)], |t, v| {
            let g = axes::block_gather(&[1, 4, 4, 2], 2)?;
            let y = t.gather(&v[0], Arc::new(g))?;
            project(t, &y, 19)
        }),
        case("gather_grid", vec![spread(&[1, 4, 4, 2], 35)], |t, v| {
            let g = axes::grid_gather(&[1, 4, 4, 2], 2)?;
            let y = t.gather(&v[0], Arc::new(g))?;
            project(t, &y, 20)
        }),
        case("gather_bias_table", vec![spread(&[2, 9], 36)], |t, v| {
            let y = t.gather(&v[0], Arc::new(crate::attention::bias_gather(2, 2)))?;
            project(t, &y, 21)
        }),
        case("reshape", vec![spread(&[2, 6], 37)], |t, v| {
            let y = t.reshape(&v[0], &[3, 4])?;
            project(t, &y, 22)
        }),
        case("swapaxes", vec![spread(&[2, 3, 4], 38)], |t, v| {
            let y = t.swapaxes(&v[0], 1, 2)?;
            project(t, &y, 23)
        }),
        case("sum", vec![spread(&[7], 39)], |t, v| {
            let sq = t.mul(&v[0], &v[0])?;
            t.sum(&sq)
        }),
        case("cross_entropy", vec![spread(&[3, 4], 40)], |t, v| t.cross_entropy(&v[0], &[0, 3, 1])),
        case("emd", vec![randn(&[2, 5], 41, 0.3), randn(&[2, 5], 42, 0.3)], |t, v| t.emd(&v[0], &v[1], 2.0)),
        case(
            "rel_attention",
            vec![spread(&[2, 4, 3], 43), spread(&[2, 4, 3], 44), spread(&[2, 4, 3], 45), spread(&[4, 4], 46)],
            |t, v| {
                let y = rel_attention(t, &v[0], &v[1], &v[2], Some(&v[3]))?;
                project(t, &y, 24)
            },
        ),
    ]
}

pub fn layer_cases() -> Vec<GradCase> {
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let se = SqueezeExcite::new(&mut ParamBuilder::new(&mut store, 50), "se", 4, 2);
    amplify(&mut store, 20.0);
    out.push(layer_case("squeeze_excite", randn(&[2, 3, 3, 4], 51, 1.0), store, usize::MAX, false, move |cx, x| {
        se.forward(cx, x)
    }));

    let mut store = ParamStore::new();
    let mlp = crate::nn::Mlp::new(&mut ParamBuilder::new(&mut store, 52), "mlp", 4);
    amplify(&mut store, 20.0);
    out.push(layer_case("mlp", randn(&[2, 3, 4], 53, 1.0), store, usize::MAX, false, move |cx, x| mlp.forward(cx, x)));

    for (name, kind, seed) in
        [("block_attention", PartitionKind::Block, 54), ("grid_attention", PartitionKind::Grid, 55)]
    {
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut ParamBuilder::new(&mut store, seed), name, kind, 8, 4, 2).unwrap();
        amplify(&mut store, 20.0);
        out.push(layer_case(name, randn(&[1, 4, 4, 8], seed + 100, 1.0), store, usize::MAX, false, move |cx, x| {
            layer.forward(cx, x)
        }));
    }

    let mut store = ParamStore::new();
    let mb = MbConv::new(&mut ParamBuilder::new(&mut store, 56), "mbconv", 4, 4, true, 4, 0.25);
    amplify(&mut store, 20.0);
    out.push(layer_case("mbconv_downsample", randn(&[2, 4, 4, 4], 57, 1.0), store, 6, false, move |cx, x| {
        mb.forward(cx, x)
    }));
    out
}

/// The single-block miniature used for the end-to-end check: 56×56 input,
/// stem to 28×28, one MaxViT block down to 14×14 with 7×7 partitions,
/// two classes.
pub fn miniature_spec() -> VariantSpec {
    VariantSpec::miniature(&[(1, 16)])
}

pub fn end_to_end_case() -> GradCase {
    let (model, mut store) = MaxVit::build::<f64>(&miniature_spec(), 2, 60).expect("valid miniature");
    amplify(&mut store, 10.0);
    let labels = [0usize, 1];
    layer_case("end_to_end_miniature", randn(&[2, 56, 56, 3], 61, 1.0), store, 2, false, move |cx, x| {
        let logits = model.forward(cx, x)?;
        cx.g.cross_entropy(&logits, &labels)
    })
}

/// Names of every primitive on [`Graph`]; each must appear in some case.
pub const GRAPH_PRIMITIVES: &[&str] = &[
    "matmul",
    "linear",
    "add",
    "mul",
    "scale",
    "gelu",
    "sigmoid",
    "silu",
    "softmax",
    "layer_norm",
    "batch_norm",
    "conv2d",
    "depthwise_conv2d",
    "avg_pool2d",
    "mean_axes",
    "gather",
    "reshape",
    "swapaxes",
    "sum",
    "cross_entropy",
    "emd",
];
