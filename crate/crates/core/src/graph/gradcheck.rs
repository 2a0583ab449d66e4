use super::{Graph, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over entries of |analytic − fd| / max(|analytic|, |fd|, 1e-8)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter, flat index) of the worst entry.
    pub worst: (usize, usize),
    pub entries: usize,
    pub analytic: Vec<Tensor<f64>>,
}

/// Compares tape gradients of a scalar function with central differences.
///
/// `f` receives a fresh tape and one leaf per parameter, and returns the
/// scalar output. Runs in 64-bit; `eps` must lie in `[1e-6, 1e-4]`.
pub fn grad_check<F>(params: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_sampled(params, eps, usize::MAX, f)
}

/// Like [`grad_check`], but probes at most `per_param` evenly spaced
/// entries of each parameter (always including the first and last).
pub fn grad_check_sampled<F>(params: &[Tensor<f64>], eps: f64, per_param: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Numeric(format!("grad_check step {eps} outside [1e-6, 1e-4]")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(&out).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(&out).item().is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: (0, 0), entries: 0, analytic };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for idx in probe_indices(p.len(), per_param) {
            let mut bumped = p.to_vec();
            let orig = bumped[idx];
            bumped[idx] = orig + eps;
            work[pi] = Tensor::new(p.shape().to_vec(), bumped.clone())?;
            let up = eval(&work)?;
            bumped[idx] = orig - eps;
            work[pi] = Tensor::new(p.shape().to_vec(), bumped)?;
            let down = eval(&work)?;
            let fd = (up - down) / (2.0 * eps);
            let an = report.analytic[pi].data()[idx];
            let abs = (an - fd).abs();
            let rel = abs / an.abs().max(fd.abs()).max(1e-8);
            report.entries += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, idx);
            }
        }
        work[pi] = p.clone();
    }
    Ok(report)
}

fn probe_indices(len: usize, per_param: usize) -> Vec<usize> {
    if per_param >= len {
        return (0..len).collect();
    }
    if per_param <= 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..per_param).map(|k| k * (len - 1) / (per_param - 1)).collect();
    v.dedup();
    v
}
