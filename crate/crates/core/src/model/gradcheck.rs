use rand::seq::index::sample;

use super::ModelGraph;
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub checked: usize,
}

fn sample_size(n: usize) -> usize {
    n.div_ceil(100).max(n.min(24))
}

/// Compares an analytic gradient against central differences on a random
/// subsample (1%, at least 24 entries) of the parameters. Relative error
/// uses the denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check_params(
    params: &[f64],
    loss: impl Fn(&[f64]) -> Result<f64>,
    gradient: impl Fn(&[f64]) -> Result<Vec<f64>>,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    let analytic = gradient(params)?;
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let finite = |v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss during gradient check".into()))
        }
    };
    finite(loss(params)?)?;
    let mut rng = rng_for(seed, &[0x6C]);
    let mut indices = sample(&mut rng, params.len(), sample_size(params.len())).into_vec();
    indices.sort_unstable();
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    for i in indices {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = finite(loss(&probe)?)?;
        probe[i] = orig - eps;
        let down = finite(loss(&probe)?)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Gradient check of a scalar loss over every parameter of `m`.
/// `loss_fn` returns the loss and its gradient in parameter-store layout.
pub fn grad_check(
    loss_fn: impl Fn(&ModelGraph<f64>) -> Result<(f64, Vec<f64>)>,
    m: &ModelGraph<f64>,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let with = |p: &[f64]| {
        let mut probe = m.clone();
        probe.params_mut().data_mut().copy_from_slice(p);
        loss_fn(&probe)
    };
    grad_check_params(m.params().data(), |p| Ok(with(p)?.0), |p| Ok(with(p)?.1), eps, seed)
}
