mod common;

use common::oracle::gelu;
use common::{assert_close, eval, fill, randn, randomize};
use maxvit::axes::PartitionSpec;
use maxvit::backbone::{checkpoint, BlockOrder, MaxVit, MbConv, VariantName, VariantSpec};
use maxvit::ops::NORM_EPS;
use maxvit::params::{ParamBuilder, ParamId, ParamStore};
use maxvit::{Graph, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mini() -> VariantSpec {
    VariantSpec::miniature(&[(1, 16)])
}

#[test]
fn mbconv_zero_projection_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let m = MbConv::new(&mut ParamBuilder::new(&mut store, 1), "m", 16, 16, false, 4, 0.25);
    assert!(m.shortcut.is_none());
    fill(&mut store, "proj.", 0.0);
    let x = randn(&[2, 6, 6, 16], 2, 1.0);
    assert!(eval(&store, |cx| m.forward(cx, &x)).bitwise_eq(&x));
}

#[test]
fn mbconv_downsample_shape() {
    let mut store = ParamStore::<f64>::new();
    let m = MbConv::new(&mut ParamBuilder::new(&mut store, 3), "m", 32, 48, true, 4, 0.25);
    let x = randn(&[1, 8, 8, 32], 4, 1.0);
    assert_eq!(eval(&store, |cx| m.forward(cx, &x)).shape(), &[1, 4, 4, 48]);
}

/// Scalar MBConv pipeline: BN → 1×1 → BN → GELU → DW3×3 → BN → GELU → SE → 1×1 → +x.
#[test]
fn mbconv_two_channel_hand_case() {
    let mut store = ParamStore::<f64>::new();
    let m = MbConv::new(&mut ParamBuilder::new(&mut store, 5), "m", 2, 2, false, 4, 0.25);
    randomize(&mut store, 50, 0.7);
    for (i, n) in [&m.pre_norm, &m.norm1, &m.norm2].into_iter().enumerate() {
        let (mean, var) = n.running.unwrap();
        store.set_buffer(mean, randn(&[n.c], 60 + i as u64, 0.3)).unwrap();
        store.set_buffer(var, randn(&[n.c], 70 + i as u64, 0.5).map(|v| v.abs() + 0.5)).unwrap();
    }
    let (hw, c, mid) = (3usize, 2usize, 8usize);
    assert_eq!(m.se.reduce.d_out, 1);
    let x = randn(&[1, hw, hw, c], 6, 1.0);

    let p = |id: ParamId| store.get(id).to_vec();
    let bn = |n: &maxvit::nn::Norm, v: f64, ch: usize| {
        let (mean, var) = n.running.unwrap();
        let (mu, s2) = (store.buffer(mean).data()[ch], store.buffer(var).data()[ch]);
        (v - mu) / (s2 + NORM_EPS).sqrt() * p(n.gamma)[ch] + p(n.beta)[ch]
    };
    let px = |y: usize, xx: usize, ch: usize| x.data()[(y * hw + xx) * c + ch];

    let (we, wd, wp, bp) = (p(m.expand.kernel), p(m.dw.kernel), p(m.proj.kernel), p(m.proj.bias.unwrap()));
    let mut e = vec![0.0; hw * hw * mid];
    for pix in 0..hw * hw {
        for o in 0..mid {
            let s: f64 = (0..c).map(|i| bn(&m.pre_norm, px(pix / hw, pix % hw, i), i) * we[i * mid + o]).sum();
            e[pix * mid + o] = gelu(bn(&m.norm1, s, o));
        }
    }
    let mut d = vec![0.0; hw * hw * mid];
    for y in 0..hw as isize {
        for xx in 0..hw as isize {
            for ch in 0..mid {
                let mut s = 0.0;
                for ky in -1..=1isize {
                    for kx in -1..=1isize {
                        let (iy, ix) = (y + ky, xx + kx);
                        if (0..hw as isize).contains(&iy) && (0..hw as isize).contains(&ix) {
                            s += e[(iy as usize * hw + ix as usize) * mid + ch]
                                * wd[((ky + 1) as usize * 3 + (kx + 1) as usize) * mid + ch];
                        }
                    }
                }
                d[(y as usize * hw + xx as usize) * mid + ch] = gelu(bn(&m.norm2, s, ch));
            }
        }
    }
    let (wr, br, wx, bx) = (p(m.se.reduce.w), p(m.se.reduce.b.unwrap()), p(m.se.expand.w), p(m.se.expand.b.unwrap()));
    let pooled: Vec<f64> =
        (0..mid).map(|ch| (0..hw * hw).map(|q| d[q * mid + ch]).sum::<f64>() / (hw * hw) as f64).collect();
    let r = (0..mid).map(|ch| pooled[ch] * wr[ch]).sum::<f64>() + br[0];
    let r = r * sigmoid(r);
    let gate: Vec<f64> = (0..mid).map(|ch| sigmoid(r * wx[ch] + bx[ch])).collect();
    let mut want = vec![];
    for pix in 0..hw * hw {
        for o in 0..c {
            let s: f64 = (0..mid).map(|ch| d[pix * mid + ch] * gate[ch] * wp[ch * c + o]).sum();
            want.push(px(pix / hw, pix % hw, o) + s + bp[o]);
        }
    }
    assert_close(eval(&store, |cx| m.forward(cx, &x)).data(), &want, 1e-10);
}

fn block_output(order: BlockOrder, seed: u64) -> Tensor<f64> {
    let (model, mut store) = MaxVit::build::<f64>(&mini().with_order(order), 3, seed).unwrap();
    randomize(&mut store, 100, 0.2);
    let x = randn(&[1, 28, 28, 16], 7, 1.0);
    eval(&store, |cx| model.stages[0].blocks[0].forward(cx, &x))
}

#[test]
fn block_orders_are_not_equivalent() {
    let a = block_output(BlockOrder::default(), 8);
    let b = block_output("GA-BA-C".parse().unwrap(), 8);
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn zero_branches_leave_the_shortcut_for_every_order() {
    let x = randn(&[1, 28, 28, 16], 9, 1.0);
    for order in BlockOrder::all() {
        let (model, mut store) = MaxVit::build::<f64>(&mini().with_order(order), 3, 10).unwrap();
        for pat in ["mbconv.proj.", "attn.out.", "mlp.fc2."] {
            fill(&mut store, pat, 0.0);
        }
        let block = &model.stages[0].blocks[0];
        let y = eval(&store, |cx| block.forward(cx, &x));
        // 2×2 mean then the 1×1 shortcut projection
        let (k, b) = (common::param(&store, "shortcut.kernel"), common::param(&store, "shortcut.bias"));
        let mut want = vec![];
        for oy in 0..14 {
            for ox in 0..14 {
                for co in 0..16 {
                    let mut s = b.data()[co];
                    for ci in 0..16 {
                        let avg = (0..4).map(|q| x.get(&[0, 2 * oy + q / 2, 2 * ox + q % 2, ci])).sum::<f64>() / 4.0;
                        s += avg * k.get(&[0, 0, ci, co]);
                    }
                    want.push(s);
                }
            }
        }
        assert_close(y.data(), &want, 1e-12);
    }
}

#[test]
fn variant_layouts() {
    let t = VariantSpec::named(VariantName::T);
    let widths: Vec<usize> = std::iter::once(t.stem_channels).chain(t.stages.iter().map(|s| s.channels)).collect();
    assert_eq!(widths, [64, 64, 128, 256, 512]);
    let l = VariantSpec::named(VariantName::L);
    // the stem is two convolutions
    let blocks: Vec<usize> = std::iter::once(2).chain(l.stages.iter().map(|s| s.blocks)).collect();
    assert_eq!(blocks, [2, 2, 6, 14, 2]);
    assert_eq!(l.stages[2].channels, 512);
    assert_eq!(t.stage_resolutions(224), [112, 56, 28, 14, 7]);
    assert!("Q".parse::<VariantName>().unwrap_err().to_string().contains("T, S, B, L, XL"));
}

#[test]
fn same_seed_gives_identical_parameters() {
    let spec = VariantSpec::named(VariantName::T);
    let (_, a) = MaxVit::build::<f32>(&spec, 1000, 42).unwrap();
    let (_, b) = MaxVit::build::<f32>(&spec, 1000, 42).unwrap();
    let (_, c) = MaxVit::build::<f32>(&spec, 1000, 43).unwrap();
    assert!(a.tensors().iter().zip(&b.tensors()).all(|(x, y)| x.bitwise_eq(y)));
    assert!(!a.tensors().iter().zip(&c.tensors()).all(|(x, y)| x.bitwise_eq(y)));
}

#[test]
fn tiny_variant_forward_shape() {
    let spec = VariantSpec::named(VariantName::T);
    let (model, store) = MaxVit::build::<f32>(&spec, 1000, 0).unwrap();
    let x = randn(&[2, 224, 224, 3], 11, 1.0).cast::<f32>();
    let logits = model.infer(&store, &x).unwrap();
    assert_eq!(logits.shape(), &[2, 1000]);
    assert!(logits.all_finite());
}

#[test]
fn zero_input_and_zero_head_give_equal_logits() {
    let (model, mut store) = MaxVit::build::<f64>(&mini(), 5, 12).unwrap();
    fill(&mut store, "head.", 0.0);
    let logits = model.infer(&store, &Tensor::zeros(&[2, 56, 56, 3])).unwrap();
    assert!(logits.data().iter().all(|&v| v == logits.data()[0]));
}

#[test]
fn head_arithmetic() {
    let spec = VariantSpec::named(VariantName::T);
    let a = MaxVit::layout(&spec, 1000).unwrap().0.num_params();
    let b = MaxVit::layout(&spec, 2000).unwrap().0.num_params();
    assert_eq!(b - a, 512 * 1000 + 1000);
}

#[test]
fn indivisible_input_is_an_error() {
    let (model, store) = MaxVit::build::<f32>(&mini(), 2, 0).unwrap();
    assert!(model.infer(&store, &Tensor::zeros(&[1, 60, 60, 3])).is_err());
    assert!(VariantSpec::named(VariantName::T).partition_for(100).is_err());
}

#[test]
fn partition_switch_resizes_bias_tables() {
    let spec = VariantSpec::named(VariantName::T);
    let (mut m, _) = MaxVit::layout(&spec, 1000).unwrap();
    let base = m.num_params();
    let heads: usize = m.attention_layers().map(|a| a.attn.heads).sum();
    m.set_partition_layout(PartitionSpec::uniform(12));
    assert_eq!(m.num_params() - base, heads * (23 * 23 - 13 * 13));
    assert_eq!(spec.partition_for(384).unwrap(), PartitionSpec::uniform(12));
}

#[test]
fn interpolated_tables_keep_the_forward_valid() {
    let spec = VariantSpec::miniature(&[(1, 16), (1, 32)]);
    let (mut model, mut store) = MaxVit::build::<f64>(&spec, 2, 13).unwrap();
    let before = store.count_scalars();
    model.set_partition(&mut store, PartitionSpec::uniform(7)).unwrap();
    assert_eq!(store.count_scalars(), before);
    let logits = model.infer(&store, &randn(&[1, 56, 56, 3], 14, 1.0)).unwrap();
    assert!(logits.all_finite());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = std::env::temp_dir().join(format!("maxvit-ckpt-{}", std::process::id()));
    let (model, store) = MaxVit::build::<f32>(&mini(), 4, 15).unwrap();
    checkpoint::save(&dir, &model, &store, 15).unwrap();
    let (loaded, store2, manifest) = checkpoint::load::<f32>(&dir).unwrap();
    assert_eq!(manifest.seed, 15);
    assert_eq!(loaded.num_params(), model.num_params());
    let x = randn(&[1, 56, 56, 3], 16, 1.0).cast::<f32>();
    assert!(model.infer(&store, &x).unwrap().bitwise_eq(&loaded.infer(&store2, &x).unwrap()));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn training_mode_forward_reports_bn_statistics() {
    let (model, store) = MaxVit::build::<f64>(&mini(), 2, 17).unwrap();
    let mut tape = maxvit::Tape::new();
    let vars = store.bind(&mut tape);
    let mut cx = maxvit::nn::Ctx::new(&mut tape, &vars, &store, true);
    let x = cx.g.leaf(randn(&[2, 56, 56, 3], 18, 1.0));
    model.forward(&mut cx, &x).unwrap();
    // stem norm plus three per MBConv
    assert_eq!(cx.bn_updates.len(), 4);
}
