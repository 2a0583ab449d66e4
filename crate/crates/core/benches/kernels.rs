//! Hot kernels on the shared rayon pool versus a one-thread pool.
//!
//! `cargo bench -p maxvit` compares the two schedules in one run; building
//! with `--no-default-features` swaps in the sequential loops, for which both
//! rows should match.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use maxvit::attention::AttentionLayer;
use maxvit::axes::PartitionKind;
use maxvit::check::cases::randn;
use maxvit::graph::Eager;
use maxvit::nn::Ctx;
use maxvit::ops::{conv2d, depthwise_conv2d, matmul};
use maxvit::params::{ParamBuilder, ParamStore};
use maxvit::Tensor;

fn pools() -> Vec<(&'static str, Option<ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("pool", None), ("1-thread", Some(one))]
}

fn on<R>(pool: &Option<ThreadPool>, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn rand32(shape: &[usize], seed: u64) -> Tensor<f32> {
    randn(shape, seed, 1.0).cast()
}

fn kernels(c: &mut Criterion) {
    let a = rand32(&[3136, 64], 1);
    let b = rand32(&[64, 256], 2);
    let x = rand32(&[1, 56, 56, 64], 3);
    let k = rand32(&[3, 3, 64, 64], 4);
    let dk = rand32(&[3, 3, 256], 5);
    let xd = rand32(&[1, 56, 56, 256], 6);

    let mut g = c.benchmark_group("kernels");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("matmul_3136x64x256", name), &pool, |bch, p| {
            bch.iter(|| on(p, || matmul(black_box(&a), &b).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("conv3x3_56x56x64", name), &pool, |bch, p| {
            bch.iter(|| on(p, || conv2d(black_box(&x), &k, 1).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("dwconv3x3_56x56x256", name), &pool, |bch, p| {
            bch.iter(|| on(p, || depthwise_conv2d(black_box(&xd), &dk, 1).unwrap()))
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut store = ParamStore::<f64>::new();
    let mut g = c.benchmark_group("attention_forward");
    g.sample_size(10);
    for kind in [PartitionKind::Block, PartitionKind::Grid] {
        let layer = AttentionLayer::new(&mut ParamBuilder::new(&mut store, 7), "a", kind, 64, 32, 7).unwrap();
        let store = store.cast::<f32>();
        let x = rand32(&[1, 56, 56, 64], 8);
        for (name, pool) in pools() {
            let id = BenchmarkId::new(format!("{kind:?}_56x56x64"), name);
            g.bench_with_input(id, &pool, |bch, p| {
                bch.iter(|| {
                    on(p, || {
                        let mut eg = Eager;
                        let vars = store.bind(&mut eg);
                        let mut cx = Ctx::new(&mut eg, &vars, &store, false);
                        layer.forward(&mut cx, black_box(&x)).unwrap()
                    })
                })
            });
        }
    }
    g.finish();
}

criterion_group!(benches, kernels, attention);
criterion_main!(benches);
