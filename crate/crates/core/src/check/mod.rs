//! Runtime property suites behind `maxvit check`.
//!
//! Each property is evaluated against an independent reference (nested-loop
//! enumerations, dense attention, finite differences, published figures)
//! and reported by name so a failure points at exactly one claim.

pub mod cases;
pub mod oracle;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::AttentionLayer;
use crate::axes::{self, PartitionKind, PartitionSpec};
use crate::backbone::{golden, MaxVit, SubLayer, VariantName, VariantSpec};
use crate::error::Result;
use crate::graph::Eager;
use crate::nn::Ctx;
use crate::ops;
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::{numel, Gather, Tensor};
use crate::train::{emd_loss, train_toy, ScoreHistogram, ToyConfig, DEFAULT_BINS};

use cases::{randn, GRAD_TOL};

pub const SUITES: &[&str] = &["partition", "nn", "attention", "accounting", "gradcheck", "emd", "train"];

/// Deliberate defects for exercising the checker itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Shift every source row of the grid gather by one.
    pub grid_off_by_one: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Property {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub millis: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub passed: bool,
    pub total: usize,
    pub failed: usize,
    pub properties: Vec<Property>,
}

impl CheckSummary {
    pub fn failures(&self) -> impl Iterator<Item = &Property> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

type Outcome = std::result::Result<String, String>;

struct Recorder<'a> {
    suite: &'static str,
    filter: Option<&'a str>,
    out: Vec<Property>,
}

impl Recorder<'_> {
    fn selected(&self, name: &str) -> bool {
        match self.filter {
            None => true,
            Some(f) => self.suite.contains(f) || name.contains(f),
        }
    }

    fn prop(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        if !self.selected(name) {
            return;
        }
        let t = Instant::now();
        let r = f();
        let millis = t.elapsed().as_millis() as u64;
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.out.push(Property { suite: self.suite.to_string(), name: name.to_string(), passed, detail, millis });
    }
}

fn ensure(cond: bool, fail: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(fail())
    }
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Runs every property whose suite or name contains `filter`.
pub fn run(filter: Option<&str>, faults: Faults) -> CheckSummary {
    let mut all = Vec::new();
    type Suite = fn(&mut Recorder<'_>, Faults);
    let suites: [(&'static str, Suite); 7] = [
        ("partition", partition_suite),
        ("nn", nn_suite),
        ("attention", attention_suite),
        ("accounting", accounting_suite),
        ("gradcheck", gradcheck_suite),
        ("emd", emd_suite),
        ("train", train_suite),
    ];
    for (suite, f) in suites {
        let mut rec = Recorder { suite, filter, out: Vec::new() };
        f(&mut rec, faults);
        all.extend(rec.out);
    }
    let failed = all.iter().filter(|p| !p.passed).count();
    CheckSummary { passed: failed == 0, total: all.len(), failed, properties: all }
}

fn grid_under_test(shape: &[usize], g: usize, faults: Faults) -> Result<Gather> {
    let mut gather = axes::grid_gather(shape, g)?;
    if faults.grid_off_by_one {
        let rows = numel(&gather.src_shape) / gather.inner;
        for r in &mut gather.index {
            *r = (*r + 1) % rows;
        }
    }
    Ok(gather)
}

/// Random `(B, H, W, C)` with `size | H, W`.
fn random_partition_case(rng: &mut ChaCha8Rng) -> (Tensor<f64>, usize) {
    let size = rng.gen_range(1..=4);
    let shape = [rng.gen_range(1..=2), size * rng.gen_range(1..=4), size * rng.gen_range(1..=4), rng.gen_range(1..=3)];
    let seed = rng.gen();
    (randn(&shape, seed, 1.0), size)
}

pub const PARTITION_CASES: usize = 1000;

fn partition_suite(r: &mut Recorder<'_>, faults: Faults) {
    r.prop("block_roundtrip_bitwise", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..PARTITION_CASES {
            let (x, p) = random_partition_case(&mut rng);
            let [_, h, w, _] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
            let back = lib(axes::unblock(&lib(axes::block(&x, p))?, h, w, p))?;
            ensure(back.bitwise_eq(&x), || format!("case {i}: shape {:?}, P={p}", x.shape()))?;
        }
        Ok(format!("{PARTITION_CASES} random cases"))
    });
    r.prop("grid_roundtrip_bitwise", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..PARTITION_CASES {
            let (x, g) = random_partition_case(&mut rng);
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let gridded = lib(grid_under_test(x.shape(), g, faults))?.apply(&x);
            let back = lib(axes::ungrid(&gridded, h, w, g))?;
            ensure(back.bitwise_eq(&x), || format!("case {i}: shape {:?}, G={g}", x.shape()))?;
        }
        Ok(format!("{PARTITION_CASES} random cases"))
    });
    r.prop("grid_equals_swapaxes_of_block", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..PARTITION_CASES {
            let (x, g) = random_partition_case(&mut rng);
            let (h, w) = (x.shape()[1], x.shape()[2]);
            if h / g != w / g {
                continue;
            }
            let viaswap = lib(lib(axes::block(&x, h / g))?.swapaxes(1, 2))?;
            let grid = lib(grid_under_test(x.shape(), g, faults))?.apply(&x);
            ensure(grid.bitwise_eq(&viaswap), || format!("case {i}: shape {:?}, G={g}", x.shape()))?;
        }
        Ok("square-lattice cases".into())
    });
    r.prop("partitions_are_permutations", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..200 {
            let (x, s) = random_partition_case(&mut rng);
            let mut want = x.to_vec();
            want.sort_by(f64::total_cmp);
            for t in [lib(axes::block(&x, s))?, lib(grid_under_test(x.shape(), s, faults))?.apply(&x)] {
                let mut got = t.to_vec();
                got.sort_by(f64::total_cmp);
                ensure(got == want, || format!("case {i}: multiset changed"))?;
            }
        }
        Ok("200 random cases".into())
    });
    r.prop("golden_4x4_tables", || {
        // nested-loop enumeration: window (wy,wx), position (py,px)
        let mut block = vec![];
        for wy in 0..2 {
            for wx in 0..2 {
                block.push((0..4).map(|k| (wy * 2 + k / 2) * 4 + wx * 2 + k % 2).collect::<Vec<usize>>());
            }
        }
        // grid = transpose of the window/position table of block(P = H/G)
        let grid: Vec<Vec<usize>> = (0..4).map(|pos| (0..4).map(|win| block[win][pos]).collect()).collect();
        let got_b = lib(axes::partition_indices(PartitionKind::Block, 4, 4, 2))?;
        let got_g = lib(axes::partition_indices(PartitionKind::Grid, 4, 4, 2))?;
        ensure(got_b == block, || format!("block {got_b:?}"))?;
        ensure(got_g == grid, || format!("grid {got_g:?}"))?;
        Ok(format!("block {block:?}, grid {grid:?}"))
    });
}

fn nn_suite(r: &mut Recorder<'_>, _: Faults) {
    r.prop("conv2d_matches_loop_oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut worst = 0.0f64;
        for _ in 0..60 {
            let shape = [rng.gen_range(1..=2), rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=4)];
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            let stride = rng.gen_range(1..=2);
            let cout = rng.gen_range(1..=4);
            let x = randn(&shape, rng.gen(), 1.0);
            let kern = randn(&[k, k, shape[3], cout], rng.gen(), 1.0);
            let got = lib(ops::conv2d(&x, &kern, stride))?;
            worst = worst.max(got.max_abs_diff(&oracle::conv2d_loops(&x, &kern, stride)));
        }
        ensure(worst < 1e-5, || format!("max |diff| {worst:e}"))?;
        Ok(format!("max |diff| {worst:e}"))
    });
    r.prop("layer_norm_token_moments", || {
        let x = randn(&[3, 5, 16], 11, 3.0).map(|v| v + 2.0);
        let y = lib(ops::layer_norm(&x, &Tensor::ones(&[16]), &Tensor::zeros(&[16]), ops::NORM_EPS))?.0;
        for row in y.data().chunks(16) {
            let m = row.iter().sum::<f64>() / 16.0;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
            ensure(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4, || format!("mean {m}, var {v}"))?;
        }
        Ok("mean 0, variance 1 per token".into())
    });
    r.prop("batch_norm_inference_is_batch_independent", || {
        let x = randn(&[4, 2, 2, 3], 12, 1.0);
        let (g, b) = (randn(&[3], 13, 1.0), randn(&[3], 14, 1.0));
        let (m, v) = (randn(&[3], 15, 1.0), randn(&[3], 16, 1.0).map(|a| a.abs() + 0.1));
        let full = lib(ops::batch_norm_infer(&x, &g, &b, &m, &v, ops::NORM_EPS))?.0;
        let first = lib(x.reshape(&[16, 3]))?;
        let one = Tensor::new(vec![1, 1, 1, 3], first.data()[..3].to_vec()).unwrap();
        let single = lib(ops::batch_norm_infer(&one, &g, &b, &m, &v, ops::NORM_EPS))?.0;
        ensure(single.data() == &full.data()[..3], || "first sample differs".into())?;
        Ok("affine per channel".into())
    });
}

fn attention_layer(kind: PartitionKind, c: usize, size: usize, seed: u64) -> (AttentionLayer, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut ParamBuilder::new(&mut store, seed), "attn", kind, c, 32, size).unwrap();
    // larger-than-init weights so attention is far from uniform
    for i in 0..store.len() {
        let id = crate::params::ParamId(i);
        let t = store.get(id).map(|v| v * 15.0);
        store.set(id, t).unwrap();
    }
    (layer, store)
}

fn eval_layer(layer: &AttentionLayer, store: &ParamStore<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut g = Eager;
    let vars = store.bind(&mut g);
    let mut cx = Ctx::new(&mut g, &vars, store, false);
    layer.forward(&mut cx, x)
}

fn attention_suite(r: &mut Recorder<'_>, _: Faults) {
    r.prop("single_window_equals_dense_attention", || {
        let mut worst = 0.0f64;
        for (seed, b) in [(20u64, 1usize), (21, 2)] {
            let (layer, store) = attention_layer(PartitionKind::Block, 64, 7, seed);
            let x = randn(&[b, 7, 7, 64], seed + 1, 1.0);
            let got = lib(eval_layer(&layer, &store, &x))?;
            worst = worst.max(got.max_abs_diff(&oracle::dense_attention_layer(&layer, &store, &x)));
        }
        ensure(worst < 1e-5, || format!("max |diff| {worst:e}"))?;
        Ok(format!("max |diff| {worst:e}"))
    });
    r.prop("grid_equals_block_on_single_window", || {
        let (mut layer, store) = attention_layer(PartitionKind::Block, 64, 7, 22);
        let x = randn(&[1, 7, 7, 64], 23, 1.0);
        let a = lib(eval_layer(&layer, &store, &x))?;
        layer.kind = PartitionKind::Grid;
        let b = lib(eval_layer(&layer, &store, &x))?;
        ensure(a.bitwise_eq(&b), || format!("max |diff| {:e}", a.max_abs_diff(&b)))?;
        Ok("bitwise".into())
    });
    r.prop("softmax_rows_sum_to_one", || {
        let x = randn(&[6, 49], 24, 30.0);
        let y = lib(ops::softmax_lastdim(&x))?;
        let worst = y.data().chunks(49).map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        ensure(worst < 1e-6, || format!("worst row error {worst:e}"))?;
        Ok(format!("worst row error {worst:e}"))
    });
    r.prop("block_attention_shift_equivariance", || {
        let (layer, store) = attention_layer(PartitionKind::Block, 32, 7, 25);
        let (h, w, c) = (14, 21, 32);
        let x = randn(&[1, h, w, c], 26, 1.0);
        let shift = |t: &Tensor<f64>| {
            Tensor::from_fn(t.shape(), |i| {
                let (ch, px) = (i % c, i / c);
                let (y, xx) = (px / w, px % w);
                t.data()[(((y + h - 7) % h) * w + (xx + w - 7) % w) * c + ch]
            })
        };
        let a = shift(&lib(eval_layer(&layer, &store, &x))?);
        let b = lib(eval_layer(&layer, &store, &shift(&x)))?;
        let d = a.max_abs_diff(&b);
        ensure(d <= 1e-6, || format!("max |diff| {d:e}"))?;
        Ok(format!("max |diff| {d:e}"))
    });
}

fn layout(v: VariantName, res: usize) -> std::result::Result<MaxVit, String> {
    let spec = VariantSpec::named(v);
    let (mut m, _) = lib(MaxVit::layout(&spec, 1000))?;
    m.set_partition_layout(lib(spec.partition_for(res))?);
    Ok(m)
}

fn accounting_suite(r: &mut Recorder<'_>, _: Faults) {
    r.prop("params_match_published", || {
        let mut lines = vec![];
        for v in VariantName::ALL {
            let ours = lib(MaxVit::layout(&VariantSpec::named(v), 1000))?.0.num_params() as f64 / 1e6;
            let want = golden::params_m(v);
            let d = golden::rel_delta(ours, want);
            ensure(d.abs() <= golden::PARAM_TOLERANCE, || format!("{v}: {ours:.2}M vs {want}M ({:+.2}%)", d * 100.0))?;
            lines.push(format!("{v} {ours:.2}M ({:+.2}%)", d * 100.0));
        }
        Ok(lines.join(", "))
    });
    r.prop("flops_match_published", || {
        let mut lines = vec![];
        for (v, res) in [
            (VariantName::T, 224),
            (VariantName::T, 384),
            (VariantName::B, 224),
            (VariantName::B, 384),
            (VariantName::L, 224),
        ] {
            let ours = lib(layout(v, res)?.flops(res))?.gflops();
            let want = golden::lookup(v, res).unwrap().flops_g;
            let d = golden::rel_delta(ours, want);
            ensure(d.abs() <= golden::FLOP_TOLERANCE, || format!("{v}@{res}: {ours:.2}G vs {want}G"))?;
            lines.push(format!("{v}@{res} {ours:.2}G ({:+.2}%)", d * 100.0));
        }
        Ok(lines.join(", "))
    });
    r.prop("block_grid_parity", || {
        for (c, hw) in [(64, 56), (128, 28), (256, 14), (512, 7)] {
            let mut rec = crate::params::ShapeRecorder::new();
            let ba = lib(AttentionLayer::new(&mut rec, "ba", PartitionKind::Block, c, 32, 7))?;
            let ga = lib(AttentionLayer::new(&mut rec, "ga", PartitionKind::Grid, c, 32, 7))?;
            ensure(ba.num_params() == ga.num_params(), || format!("C={c}: params differ"))?;
            ensure(ba.macs(hw, hw) == ga.macs(hw, hw), || format!("C={c}: MACs differ"))?;
        }
        Ok("equal params and MACs at every T stage".into())
    });
    r.prop("attention_macs_linear_in_tokens", || {
        let a = lib(layout(VariantName::T, 224)?.flops(224))?;
        let b = lib(layout(VariantName::T, 448)?.flops(448))?;
        let mut n = 0;
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            if la.kind == "attention" || la.kind == "mlp" {
                ensure(lb.macs == 4 * la.macs, || format!("{}: {} vs 4×{}", la.id, lb.macs, la.macs))?;
                n += 1;
            }
        }
        Ok(format!("{n} attention/MLP layers scale ×4 exactly"))
    });
    r.prop("grid_ablation_keeps_costs", || {
        let m = layout(VariantName::T, 224)?;
        let mut ablated = m.clone();
        for block in ablated.stages.iter_mut().flat_map(|s| &mut s.blocks) {
            for (_, l) in &mut block.layers {
                if let SubLayer::Attention(a) = l {
                    a.kind = PartitionKind::Block;
                }
            }
        }
        ensure(m.num_params() == ablated.num_params(), || "params changed".into())?;
        ensure(lib(m.flops(224))?.total == lib(ablated.flops(224))?.total, || "MACs changed".into())?;
        Ok("unchanged".into())
    });
    r.prop("params_resolution_independent", || {
        let spec = VariantSpec::named(VariantName::T);
        let (mut m, _) = lib(MaxVit::layout(&spec, 1000))?;
        let base = m.num_params();
        m.set_partition_layout(PartitionSpec::default());
        ensure(base == m.num_params(), || "count changed".into())?;
        Ok(format!("{base} at any resolution with 7×7 partitions"))
    });
}

fn gradcheck_suite(r: &mut Recorder<'_>, _: Faults) {
    let mut all = cases::primitive_cases();
    all.extend(cases::layer_cases());
    for c in all {
        r.prop(&format!("gradcheck_{}", c.name), || {
            let rep = lib(c.run())?;
            ensure(rep.max_rel_error < GRAD_TOL, || {
                format!("max rel error {:e} at {:?}", rep.max_rel_error, rep.worst)
            })?;
            Ok(format!("max rel error {:e} over {} entries", rep.max_rel_error, rep.entries))
        });
    }
    r.prop("gradcheck_end_to_end_miniature", || {
        let rep = lib(cases::end_to_end_case().run())?;
        ensure(rep.max_rel_error < GRAD_TOL, || format!("max rel error {:e} at {:?}", rep.max_rel_error, rep.worst))?;
        Ok(format!("max rel error {:e} over {} entries", rep.max_rel_error, rep.entries))
    });
}

fn random_hist(rng: &mut ChaCha8Rng) -> ScoreHistogram {
    let w: Vec<f64> = (0..DEFAULT_BINS).map(|_| rng.gen::<f64>() + 1e-3).collect();
    ScoreHistogram::from_weights(&w).unwrap()
}

pub const EMD_TRIPLES: usize = 1000;

fn emd_suite(r: &mut Recorder<'_>, _: Faults) {
    r.prop("emd_hand_case", || {
        let p = lib(ScoreHistogram::new(vec![1.0, 0.0]))?;
        let q = lib(ScoreHistogram::new(vec![0.0, 1.0]))?;
        let d = lib(emd_loss(&p, &q, 2.0))?;
        ensure((d - 0.5f64.sqrt()).abs() < 1e-9, || format!("got {d}"))?;
        Ok(format!("{d}"))
    });
    r.prop("emd_metric_axioms", || {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for i in 0..EMD_TRIPLES {
            let (p, q, s) = (random_hist(&mut rng), random_hist(&mut rng), random_hist(&mut rng));
            let d = |a: &ScoreHistogram, b: &ScoreHistogram| emd_loss(a, b, 2.0).unwrap();
            ensure(d(&p, &p) == 0.0, || format!("triple {i}: d(p,p) != 0"))?;
            ensure(d(&p, &q) > 0.0, || format!("triple {i}: d(p,q) = 0 for p != q"))?;
            ensure((d(&p, &q) - d(&q, &p)).abs() < 1e-12, || format!("triple {i}: asymmetric"))?;
            ensure(d(&p, &s) <= d(&p, &q) + d(&q, &s) + 1e-12, || format!("triple {i}: triangle violated"))?;
        }
        Ok(format!("{EMD_TRIPLES} random triples"))
    });
}

fn train_suite(r: &mut Recorder<'_>, _: Faults) {
    r.prop("train_toy_deterministic", || {
        let cfg = ToyConfig { steps: 3, ..ToyConfig::default() };
        let a = lib(train_toy::<f32>(&cfg))?.losses;
        let b = lib(train_toy::<f32>(&cfg))?.losses;
        ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()) && a.len() == 3, || {
            format!("{a:?} vs {b:?}")
        })?;
        ensure(a.iter().all(|l| l.is_finite()), || "non-finite loss".into())?;
        Ok(format!("{a:?}"))
    });
    r.prop("train_toy_zero_steps", || {
        let cfg = ToyConfig { steps: 0, ..ToyConfig::default() };
        let n = lib(train_toy::<f32>(&cfg))?.losses.len();
        ensure(n == 0, || format!("{n} losses"))?;
        Ok("empty trace".into())
    });
}
