use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Number of score bins in the aesthetic-rating setting.
pub const DEFAULT_BINS: usize = 10;

/// A probability histogram: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHistogram {
    p: Vec<f64>,
}

impl ScoreHistogram {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Data("empty histogram".into()));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!("histogram entry {v} is not a non-negative number")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("histogram sums to {s}, expected 1")));
        }
        Ok(Self { p })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Data("histogram weights must have a positive sum".into()));
        }
        Self::new(w.iter().map(|v| v / s).collect())
    }

    pub fn bins(&self) -> usize {
        self.p.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.p.len()], self.p.clone()).expect("non-empty")
    }
}

/// Normalized earth mover's distance between two histograms.
pub fn emd_loss(p: &ScoreHistogram, q: &ScoreHistogram, r: f64) -> Result<f64> {
    if p.bins() != q.bins() {
        return Err(Error::Data(format!("histograms have {} and {} bins", p.bins(), q.bins())));
    }
    ops::emd(&p.to_tensor(), &q.to_tensor(), r)
}
