//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::Result;
use crate::nn::loss::cross_entropy;
use crate::nn::model::{Model, ParameterSet, Target};
use crate::nn::Tensor;
use crate::rng::StreamRng;

/// Denominator floor for the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Which parameters are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    /// Classifier rows only; the encoder is treated as frozen.
    ClassifierOnly,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub eps: f64,
    pub scope: Scope,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 200,
            eps: 1e-4,
            scope: Scope::All,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose ±eps perturbation flipped a ReLU or max-pool
    /// decision; the loss is not differentiable across such a switch so
    /// they are replaced by other samples.
    pub skipped_at_kinks: usize,
}

/// Compares backprop against central differences of the mean cross-entropy
/// on a random subset of parameters, in evaluation mode.
pub fn grad_check(
    model: &Model,
    params: &ParameterSet,
    batch: &Tensor,
    labels: &[usize],
    options: &GradCheckOptions,
    rng: &mut StreamRng,
) -> Result<GradCheckReport> {
    let pass = model.forward(params, batch, false, None)?;
    let reference_pattern = pass.switch_pattern();
    let grads = model.backward(params, &pass, Target::Labels(labels))?;

    let start = match options.scope {
        Scope::All => 0,
        Scope::ClassifierOnly => params.theta_phi.len(),
    };
    let mut candidates: Vec<usize> = (start..params.len()).collect();
    candidates.shuffle(rng);

    let loss_at = |p: &ParameterSet| -> Result<(f64, u64)> {
        let pass = model.forward(p, batch, false, None)?;
        Ok((cross_entropy(pass.probabilities(), labels)?, pass.switch_pattern()))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kinks: 0,
    };
    let mut probe = params.clone();
    for idx in candidates {
        if report.checked >= options.samples {
            break;
        }
        let orig = params.get(idx);
        probe.set(idx, orig + options.eps);
        let (plus, pat_plus) = loss_at(&probe)?;
        probe.set(idx, orig - options.eps);
        let (minus, pat_minus) = loss_at(&probe)?;
        probe.set(idx, orig);
        if pat_plus != reference_pattern || pat_minus != reference_pattern {
            report.skipped_at_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * options.eps);
        let err = relative_error(grads.get(idx), numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Max relative error between `grad` and central differences of `f` at
/// `point`, over the given coordinates.
pub fn check_function<F>(point: &[f64], grad: &[f64], coords: &[usize], eps: f64, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        worst = worst.max(relative_error(grad[i], (plus - minus) / (2.0 * eps)));
    }
    worst
}
