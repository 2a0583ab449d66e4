use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backbone::{MaxVit, VariantSpec};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Tape};
use crate::nn::Ctx;
use crate::params::ParamStore;

use super::data::blob_dataset;
use super::optim::{clip_grad_norm, AdamW};

pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub steps: usize,
    pub samples: usize,
    pub classes: usize,
    pub resolution: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// `(blocks, channels)` per stage of the miniature model.
    pub stages: Vec<(usize, usize)>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 300,
            samples: 32,
            classes: 2,
            resolution: 56,
            lr: 2e-4,
            weight_decay: 0.05,
            clip_norm: 1.0,
            stages: vec![(1, 16), (1, 32)],
        }
    }
}

impl ToyConfig {
    pub fn spec(&self) -> VariantSpec {
        VariantSpec::miniature(&self.stages)
    }
}

#[derive(Clone, Debug)]
pub struct ToyRun<T> {
    /// Training loss before each optimizer step.
    pub losses: Vec<f64>,
    pub model: MaxVit,
    pub store: ParamStore<T>,
}

/// Full-batch training of a miniature model on the blob dataset, with a
/// constant learning rate and global-norm gradient clipping.
pub fn train_toy<T: Element>(cfg: &ToyConfig) -> Result<ToyRun<T>> {
    let (model, mut store) = MaxVit::build::<T>(&cfg.spec(), cfg.classes, cfg.seed)?;
    model.check_input(cfg.resolution, cfg.resolution)?;
    let data = blob_dataset::<T>(cfg.samples, cfg.classes, cfg.resolution, cfg.seed.wrapping_add(1))?;
    let mut opt = AdamW::new(&store, cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let (loss, updates) = {
            let mut cx = Ctx::new(&mut tape, &vars, &store, true);
            let x = cx.g.leaf(data.images.clone());
            let logits = model.forward(&mut cx, &x)?;
            let loss = cx.g.cross_entropy(&logits, &data.labels)?;
            (loss, std::mem::take(&mut cx.bn_updates))
        };
        let value = tape.value(&loss).item().to_f64().unwrap();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss became {value} at step {step}")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let mut g: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();
        clip_grad_norm(&mut g, cfg.clip_norm);
        opt.step(&mut store, &g)?;
        store.apply_bn_updates(&updates, BN_MOMENTUM);
    }
    Ok(ToyRun { losses, model, store })
}

/// Writes `step,loss` rows with a header.
pub fn write_trace_csv(mut w: impl Write, losses: &[f64]) -> Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}
