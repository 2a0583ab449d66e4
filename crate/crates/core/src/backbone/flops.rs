use serde::{Deserialize, Serialize};

/// Multiply-accumulate count of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMacs {
    pub id: String,
    pub stage: String,
    pub kind: String,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMacs {
    pub stage: String,
    pub macs: u64,
}

/// Analytic cost of one forward pass for a single image.
///
/// One MAC counts as one FLOP. Convolutions, dense layers and the two
/// attention matrix products are counted; normalization, activations,
/// softmax, pooling and residual additions are not.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub convention: String,
    pub resolution: usize,
    pub window_size: usize,
    pub grid_size: usize,
    pub layers: Vec<LayerMacs>,
    pub stages: Vec<StageMacs>,
    pub total: u64,
}

impl FlopReport {
    pub(crate) fn new(resolution: usize, window_size: usize, grid_size: usize) -> Self {
        Self {
            convention: "1 FLOP = 1 multiply-accumulate; norms, activations, softmax and pooling excluded".into(),
            resolution,
            window_size,
            grid_size,
            layers: Vec::new(),
            stages: Vec::new(),
            total: 0,
        }
    }

    pub(crate) fn push(&mut self, id: String, stage: &str, kind: &str, macs: u64) {
        self.total += macs;
        match self.stages.last_mut() {
            Some(s) if s.stage == stage => s.macs += macs,
            _ => self.stages.push(StageMacs { stage: stage.to_string(), macs }),
        }
        self.layers.push(LayerMacs { id, stage: stage.to_string(), kind: kind.to_string(), macs });
    }

    /// Total over layers whose kind is one of `kinds`.
    pub fn total_of(&self, kinds: &[&str]) -> u64 {
        self.layers.iter().filter(|l| kinds.contains(&l.kind.as_str())).map(|l| l.macs).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }
}
