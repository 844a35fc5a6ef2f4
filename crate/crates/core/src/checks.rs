//! Property suites behind the `oracle` and `gradcheck` commands. Each check
//! reports a measured value against a fixed threshold.

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::combiner::oracle::{grid_search, random_subset_consistent_task, exact_client_predictions, GRID_RESOLUTION};
use crate::combiner::{
    combine_fixed_x, missing_label_gradient, pairwise_variant_loss_and_gradient, tuning_loss_gradient,
    ClientPrediction, SolverOptions, TuningLoss,
};
use crate::data::LabelSet;
use crate::error::Result;
use crate::nn::gradcheck::{check_function, grad_check, GradCheckOptions, Scope};
use crate::nn::{random_batch, Classifier, EncoderSpec, Model, Tensor};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub cases: usize,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: &str, value: f64, threshold: f64, cases: usize) -> Self {
        CheckResult { name: name.to_string(), value, threshold, cases, passed: value < threshold }
    }

    fn at_most(name: &str, value: f64, threshold: f64, cases: usize) -> Self {
        CheckResult { name: name.to_string(), value, threshold, cases, passed: value <= threshold }
    }
}

/// Random point on the simplex with strictly positive entries.
fn random_simplex(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_subset(n: usize, size: usize, rng: &mut StreamRng) -> Vec<usize> {
    index::sample(rng, n, size).into_vec()
}

/// Softmax over a subset of classifier rows against the full softmax
/// renormalized onto that subset, over random models, inputs and subsets
/// (in random order). Returns the largest elementwise difference.
pub fn restriction_identity(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream(seed, &[0xE2]);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let input_dim = rng.random_range(2..8);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..12)).collect();
        let num_labels = rng.random_range(2..=10);
        let model = Model::new(EncoderSpec::Mlp { input_dim, hidden })?;
        let mut params = model.init_params(num_labels, &mut rng);
        for b in params.theta_psi.bias_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
        let batch = random_batch(&mut rng, 5, input_dim);
        let size = rng.random_range(1..=num_labels);
        let subset = random_subset(num_labels, size, &mut rng);
        let full = model.predict(&params, &batch)?;
        let restricted = model.predict(&params.restrict(&subset), &batch)?;
        for i in 0..batch.rows() {
            let f = full.row(i);
            let mass: f64 = subset.iter().map(|&y| f[y]).sum();
            for (j, &y) in subset.iter().enumerate() {
                worst = worst.max((restricted.row(i)[j] - f[y] / mass).abs());
            }
        }
    }
    Ok(CheckResult::below("restriction identity (max abs diff)", worst, 1e-9, cases))
}

/// The three-label, two-client construction with global conditional
/// `[0.2, 0.3, 0.5]` and label sets `{0,1}`, `{1,2}`.
pub fn combination_example() -> Result<CheckResult> {
    let p = [0.2, 0.3, 0.5];
    let a = ClientPrediction::single(0, LabelSet::new(vec![0, 1])?, vec![0.2 / 0.5, 0.3 / 0.5])?;
    let b = ClientPrediction::single(1, LabelSet::new(vec![1, 2])?, vec![0.3 / 0.8, 0.5 / 0.8])?;
    let c = combine_fixed_x(&[a, b], &[0.5, 0.5], 3, &SolverOptions::default())?;
    let dev = c.probs.iter().zip(p).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(CheckResult::below("fixed-input combination, 3 labels / 2 clients (linf)", dev, 1e-3, 1))
}

/// Random subset-consistent tasks with up to four labels: the solver must
/// land within two grid steps of the exhaustive grid minimizer. Returns the
/// largest sup-norm gap.
pub fn grid_agreement(tasks: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream(seed, &[0x6D]);
    let mut worst = 0.0f64;
    for _ in 0..tasks {
        let num_labels = rng.random_range(2..=4);
        let clients = rng.random_range(1..=4);
        let task = random_subset_consistent_task(num_labels, clients, 3, &mut rng)?;
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let preds = exact_client_predictions(&task, &x)?;
        let weights = random_simplex(clients, &mut rng);
        let solved = combine_fixed_x(&preds, &weights, num_labels, &SolverOptions::default())?;
        let grid = grid_search(&preds, &weights, num_labels)?;
        for (a, b) in solved.probs.iter().zip(&grid.probs) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult::at_most(
        "solver vs grid search (linf)",
        worst,
        2.0 * GRID_RESOLUTION,
        tasks,
    ))
}

/// Labels absent from every client under the central-set pairwise variant:
/// counts instances whose analytic gradient is negative or disagrees in sign
/// with a central difference.
pub fn missing_label_sign(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream(seed, &[0xAB]);
    let mut violations = 0usize;
    let eps = 1e-6;
    for _ in 0..instances {
        let num_labels = rng.random_range(3..=10);
        let missing = rng.random_range(0..num_labels);
        let others: Vec<usize> = (0..num_labels).filter(|&y| y != missing).collect();
        let clients = rng.random_range(1..=4);
        let preds: Vec<ClientPrediction> = (0..clients)
            .map(|k| {
                let size = rng.random_range(1..=others.len());
                let labels: Vec<usize> = random_subset(others.len(), size, &mut rng).into_iter().map(|i| others[i]).collect();
                let probs = random_simplex(size, &mut rng);
                ClientPrediction::single(k, LabelSet::new(labels)?, probs)
            })
            .collect::<Result<_>>()?;
        let weights = random_simplex(clients, &mut rng);
        let central = random_simplex(num_labels, &mut rng);
        let analytic = missing_label_gradient(&central, &preds, &weights, missing)?;
        let loss_at = |v: f64| -> Result<f64> {
            let mut p = central.clone();
            p[missing] = v;
            let t = Tensor::new(vec![1, num_labels], p)?;
            Ok(pairwise_variant_loss_and_gradient(&t, &preds, &weights)?.0)
        };
        let numeric = (loss_at(central[missing] + eps)? - loss_at(central[missing] - eps)?) / (2.0 * eps);
        if analytic < 0.0 || (analytic > 0.0) != (numeric > 0.0) {
            violations += 1;
        }
    }
    Ok(CheckResult::at_most("missing-label gradient sign violations", violations as f64, 0.0, instances))
}

pub fn gradcheck_mlp(seed: u64) -> Result<CheckResult> {
    let model = Model::new(EncoderSpec::Mlp { input_dim: 10, hidden: vec![16, 12] })?;
    let mut rng = stream(seed, &[0x01]);
    let params = model.init_params(5, &mut rng);
    let batch = random_batch(&mut rng, 8, 10);
    let labels: Vec<usize> = (0..8).map(|i| i % 5).collect();
    let r = grad_check(&model, &params, &batch, &labels, &GradCheckOptions::default(), &mut rng)?;
    Ok(CheckResult::below("gradient check, MLP encoder", r.max_relative_error, 1e-4, r.checked))
}

pub fn gradcheck_cnn(seed: u64) -> Result<CheckResult> {
    let model = Model::new(EncoderSpec::paper_cnn(1, 28, 28))?;
    let mut rng = stream(seed, &[0x02]);
    let params = model.init_params(10, &mut rng);
    let mut batch = random_batch(&mut rng, 4, 28 * 28);
    batch.data_mut().iter_mut().for_each(|v| *v = 0.5 * (*v + 1.0));
    let r = grad_check(&model, &params, &batch, &[0, 3, 7, 9], &GradCheckOptions::default(), &mut rng)?;
    Ok(CheckResult::below("gradient check, CNN encoder", r.max_relative_error, 1e-4, r.checked))
}

pub fn gradcheck_classifier(seed: u64) -> Result<CheckResult> {
    let model = Model::new(EncoderSpec::Mlp { input_dim: 24, hidden: vec![] })?;
    let mut rng = stream(seed, &[0x03]);
    let params = model.init_params(10, &mut rng);
    let batch = random_batch(&mut rng, 8, 24);
    let labels: Vec<usize> = (0..8).collect();
    let opts = GradCheckOptions { scope: Scope::ClassifierOnly, ..GradCheckOptions::default() };
    let r = grad_check(&model, &params, &batch, &labels, &opts, &mut rng)?;
    Ok(CheckResult::below("gradient check, linear-softmax classifier", r.max_relative_error, 1e-6, r.checked))
}

/// Tuning loss differentiated with respect to every classifier parameter.
pub fn gradcheck_tuning(kind: TuningLoss, seed: u64) -> Result<CheckResult> {
    let (labels, dim, batch) = (10, 20, 6);
    let mut rng = stream(seed, &[0x04]);
    let weights: Vec<f64> = (0..labels * dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let bias: Vec<f64> = (0..labels).map(|_| rng.random_range(-0.5..0.5)).collect();
    let classifier = Classifier::from_parts(labels, dim, weights, bias)?;
    let reps = random_batch(&mut rng, batch, dim);
    let sets = [vec![0, 1, 2, 3], vec![3, 4, 5, 6, 7], vec![7, 8, 9, 0]];
    let preds: Vec<ClientPrediction> = sets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rows: Vec<Vec<f64>> = (0..batch).map(|_| random_simplex(s.len(), &mut rng)).collect();
            ClientPrediction::new(k, LabelSet::new(s.clone())?, Tensor::from_rows(&rows)?)
        })
        .collect::<Result<_>>()?;
    let w = [0.5, 0.3, 0.2];
    let (_, grad) = tuning_loss_gradient(&classifier, &reps, &preds, &w, kind)?;
    let point: Vec<f64> = classifier.weights().iter().chain(classifier.bias()).copied().collect();
    let analytic: Vec<f64> = grad.weights().iter().chain(grad.bias()).copied().collect();
    let coords: Vec<usize> = (0..point.len()).collect();
    let f = |x: &[f64]| {
        let c = Classifier::from_parts(labels, dim, x[..labels * dim].to_vec(), x[labels * dim..].to_vec())
            .expect("consistent shape");
        tuning_loss_gradient(&c, &reps, &preds, &w, kind).map(|r| r.0).unwrap_or(f64::NAN)
    };
    let err = check_function(&point, &analytic, &coords, 1e-4, f);
    let name = match kind {
        TuningLoss::Pairwise => "gradient check, pairwise tuning loss",
        TuningLoss::Mse => "gradient check, MSE tuning loss",
    };
    Ok(CheckResult::below(name, err, 1e-4, coords.len()))
}

/// Restriction identity, fixed-input combination, grid agreement and the
/// missing-label gradient sign.
pub fn oracle_suite(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        restriction_identity(100, seed)?,
        combination_example()?,
        grid_agreement(20, seed)?,
        missing_label_sign(1000, seed)?,
    ])
}

pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        gradcheck_mlp(seed)?,
        gradcheck_cnn(seed)?,
        gradcheck_classifier(seed)?,
        gradcheck_tuning(TuningLoss::Pairwise, seed)?,
        gradcheck_tuning(TuningLoss::Mse, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for r in oracle_suite(1).unwrap().into_iter().chain(gradcheck_suite(1).unwrap()) {
            assert!(r.passed, "{r:?}");
        }
    }
}
