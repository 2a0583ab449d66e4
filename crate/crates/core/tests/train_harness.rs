mod common;

use common::{randn, t};
use maxvit::ops::cross_entropy;
use maxvit::params::{ParamId, ParamStore};
use maxvit::train::{
    blob_dataset, clip_grad_norm, emd_loss, train_toy, write_trace_csv, AdamW, ScoreHistogram, ToyConfig, DEFAULT_BINS,
};
use maxvit::Tensor;

fn hist(p: &[f64]) -> ScoreHistogram {
    ScoreHistogram::new(p.to_vec()).unwrap()
}

#[test]
fn cross_entropy_examples() {
    let (loss, _) = cross_entropy(&Tensor::<f64>::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);

    let (loss, _) = cross_entropy(&t(&[1, 3], &[60.0, 0.0, -5.0]), &[0]).unwrap();
    assert!(loss < 1e-25);

    let logits = [0.5, -1.2, 2.0];
    let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
    let (loss, probs) = cross_entropy(&t(&[1, 3], &logits), &[1]).unwrap();
    assert!((loss - (lse + 1.2)).abs() < 1e-12);
    assert!((probs.data()[2] - (2.0 - lse).exp()).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    assert!(cross_entropy(&Tensor::<f64>::zeros(&[2, 3]), &[0, 3]).is_err());
    assert!(cross_entropy(&Tensor::<f64>::zeros(&[2, 3]), &[0]).is_err());
}

#[test]
fn emd_examples() {
    let p = hist(&[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(emd_loss(&p, &p, 2.0).unwrap(), 0.0);

    // CDFs (1, 1) and (0, 1): sqrt((1² + 0²) / 2)
    let d = emd_loss(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0]), 2.0).unwrap();
    assert!((d - 0.5f64.sqrt()).abs() < 1e-9);
    assert!((d - 0.70711).abs() < 1e-5);

    assert_eq!(DEFAULT_BINS, 10);
    assert!(emd_loss(&p, &hist(&[0.5, 0.5]), 2.0).is_err());
    assert!(ScoreHistogram::new(vec![0.5, 0.6]).is_err());
}

#[test]
fn emd_r1_is_mean_cdf_gap() {
    let (p, q) = (hist(&[0.5, 0.25, 0.25]), hist(&[0.0, 0.5, 0.5]));
    // CDF gaps 0.5, 0.25, 0
    assert!((emd_loss(&p, &q, 1.0).unwrap() - 0.25).abs() < 1e-12);
}

fn scalar_store(v: f64, decay: bool) -> (ParamStore<f64>, ParamId) {
    let mut s = ParamStore::new();
    let id = s.push("w", t(&[1], &[v]), decay);
    (s, id)
}

#[test]
fn adamw_zero_gradient_no_decay_is_a_fixed_point() {
    let (mut s, id) = scalar_store(0.7, true);
    let mut opt = AdamW::new(&s, 0.1, 0.0);
    for _ in 0..3 {
        opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
    }
    assert_eq!(s.get(id).data(), &[0.7]);
}

#[test]
fn adamw_first_step_moves_by_lr() {
    let (mut s, id) = scalar_store(1.0, true);
    let mut opt = AdamW::new(&s, 0.1, 0.0);
    opt.step(&mut s, &[t(&[1], &[1.0])]).unwrap();
    // m̂ = g, v̂ = g²: update lr·g/(|g| + ε)
    let want = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((s.get(id).data()[0] - want).abs() < 1e-12);
}

#[test]
fn adamw_decay_only_shrinks_multiplicatively() {
    let (mut s, id) = scalar_store(2.0, true);
    let mut opt = AdamW::new(&s, 0.1, 0.5);
    opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
    let after = s.get(id).data()[0];
    assert!((after - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);

    let (mut s, id) = scalar_store(2.0, false);
    let mut opt = AdamW::new(&s, 0.1, 0.5);
    opt.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
    assert_eq!(s.get(id).data(), &[2.0]);
}

#[test]
fn clipping_scales_to_the_global_norm() {
    let mut g = vec![t(&[2], &[3.0, 0.0]), t(&[1], &[4.0])];
    let norm = clip_grad_norm(&mut g, 1.0);
    assert!((norm - 5.0).abs() < 1e-12);
    let after: f64 = g.iter().flat_map(|x| x.to_vec()).map(|v| v * v).sum::<f64>().sqrt();
    assert!((after - 1.0).abs() < 1e-12);

    let mut small = vec![randn(&[3], 1, 0.01)];
    let before = small[0].clone();
    clip_grad_norm(&mut small, 1.0);
    assert!(small[0].bitwise_eq(&before));
}

#[test]
fn blob_dataset_is_balanced_and_seeded() {
    let a = blob_dataset::<f32>(32, 2, 56, 3).unwrap();
    let b = blob_dataset::<f32>(32, 2, 56, 3).unwrap();
    assert_eq!(a.images.shape(), &[32, 56, 56, 3]);
    assert!(a.images.bitwise_eq(&b.images));
    assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 16);
    assert!(blob_dataset::<f32>(4, 1, 8, 0).is_err());
}

#[test]
fn zero_steps_give_an_empty_trace() {
    let run = train_toy::<f32>(&ToyConfig { steps: 0, ..ToyConfig::default() }).unwrap();
    assert!(run.losses.is_empty());
}

#[test]
fn same_seed_same_trace() {
    let cfg = ToyConfig { steps: 4, seed: 9, ..ToyConfig::default() };
    let a = train_toy::<f32>(&cfg).unwrap();
    let b = train_toy::<f32>(&cfg).unwrap();
    assert_eq!(a.losses.len(), 4);
    assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.store.tensors().iter().zip(&b.store.tensors()).all(|(x, y)| x.bitwise_eq(y)));
}

#[test]
fn trace_csv_has_header_and_rows() {
    let mut out = Vec::new();
    write_trace_csv(&mut out, &[0.5, 0.25]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "step,loss\n0,0.5\n1,0.25\n");
}
