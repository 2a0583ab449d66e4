#![allow(dead_code)]

use maxvit::graph::Eager;
use maxvit::nn::Ctx;
use maxvit::params::{ParamId, ParamStore};
use maxvit::{Result, Tensor};

pub use maxvit::check::cases::randn;

pub mod oracle;

/// Runs `f` on an eager graph in inference mode.
pub fn eval<F>(store: &ParamStore<f64>, f: F) -> Tensor<f64>
where
    F: FnOnce(&mut Ctx<'_, f64, Eager>) -> Result<Tensor<f64>>,
{
    let mut g = Eager;
    let vars = store.bind(&mut g);
    let mut cx = Ctx::new(&mut g, &vars, store, false);
    f(&mut cx).unwrap()
}

/// Overwrites every parameter whose name contains `pattern`.
pub fn fill(store: &mut ParamStore<f64>, pattern: &str, v: f64) {
    for i in 0..store.len() {
        if store.entry(ParamId(i)).name.contains(pattern) {
            let t = Tensor::full(store.get(ParamId(i)).shape(), v);
            store.set(ParamId(i), t).unwrap();
        }
    }
}

/// Replaces every parameter with seeded N(0, scale²) values.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    for i in 0..store.len() {
        let t = randn(store.get(ParamId(i)).shape(), seed + i as u64, scale);
        store.set(ParamId(i), t).unwrap();
    }
}

pub fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a Tensor<f64> {
    let i = (0..store.len())
        .find(|&i| store.entry(ParamId(i)).name.ends_with(name))
        .unwrap_or_else(|| panic!("no parameter {name}"));
    store.get(ParamId(i))
}

pub fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}
