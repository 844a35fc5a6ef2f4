//! Evaluation, best-snapshot selection and bootstrap confidence intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, Model, ParameterSet};
use crate::rng::StreamRng;

const EVAL_CHUNK: usize = 512;

/// Metrics of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Pool loss after central tuning, when tuning ran.
    pub tuning_loss: Option<f64>,
    /// Pool loss before tuning followed by the loss after each epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tuning_trace: Vec<f64>,
    pub wall_time_s: f64,
}

/// History of one run and its best snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: serde_json::Value,
    pub seed: u64,
    pub history: Vec<RoundRecord>,
    pub best_round: usize,
    pub best_test_accuracy: f64,
}

impl RunResult {
    pub fn new(config: serde_json::Value, seed: u64, history: Vec<RoundRecord>) -> Result<Self> {
        let (best_round, best_test_accuracy) = select_best_snapshot(&history)?;
        Ok(RunResult {
            config,
            seed,
            history,
            best_round,
            best_test_accuracy,
        })
    }
}

/// Top-1 accuracy of the model's full-label prediction against global labels.
pub fn accuracy(model: &Model, params: &ParameterSet, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("accuracy of an empty dataset"));
    }
    if params.num_labels() != data.num_classes {
        return Err(Error::usage(format!(
            "model predicts {} labels, dataset has {}",
            params.num_labels(),
            data.num_classes
        )));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.images.select_rows(chunk);
        let probs = model.predict(params, &batch)?;
        correct += chunk
            .iter()
            .enumerate()
            .filter(|&(r, &i)| argmax(probs.row(r)) == data.labels[i])
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Round with the highest validation accuracy (earliest on ties) and the
/// test accuracy recorded in that round.
pub fn select_best_snapshot(history: &[RoundRecord]) -> Result<(usize, f64)> {
    let first = history
        .first()
        .ok_or_else(|| Error::usage("best snapshot of an empty history"))?;
    let best = history.iter().fold(first, |best, r| {
        if r.val_accuracy > best.val_accuracy {
            r
        } else {
            best
        }
    });
    Ok((best.round, best.test_accuracy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    pub mean: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, rng: &mut StreamRng) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::usage("bootstrap of an empty sample"));
    }
    if !(0.0..1.0).contains(&level) || resamples == 0 {
        return Err(Error::usage("bootstrap needs a level in [0, 1) and at least one resample"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        low: quantile(&means, tail),
        high: quantile(&means, 1.0 - tail),
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::nn::{Classifier, EncoderSpec, Tensor};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(round: usize, val: f64, test: f64) -> RoundRecord {
        RoundRecord {
            round,
            train_loss: 0.0,
            val_accuracy: val,
            test_accuracy: test,
            tuning_loss: None,
            tuning_trace: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    fn history(vals: &[f64], tests: &[f64]) -> Vec<RoundRecord> {
        vals.iter()
            .zip(tests)
            .enumerate()
            .map(|(i, (&v, &t))| record(i, v, t))
            .collect()
    }

    /// Identity encoder on 2-d inputs; the classifier scores class `c` by
    /// the bias only, so the model always predicts `c`.
    fn constant_model(c: usize, classes: usize) -> (Model, ParameterSet) {
        let model = Model::new(EncoderSpec::Mlp {
            input_dim: 2,
            hidden: vec![],
        })
        .unwrap();
        let mut bias = vec![0.0; classes];
        bias[c] = 1.0;
        let params = ParameterSet {
            theta_phi: vec![],
            theta_psi: Classifier::from_parts(classes, 2, vec![0.0; classes * 2], bias).unwrap(),
        };
        (model, params)
    }

    #[test]
    fn constant_prediction_accuracy_is_class_frequency() {
        let labels: Vec<usize> = (0..10).map(|i| if i < 3 { 2 } else { i % 2 }).collect();
        let ds = Dataset::new(Tensor::zeros(vec![10, 2]), labels, 3, Provenance::Synthetic).unwrap();
        let (model, params) = constant_model(2, 3);
        assert!((accuracy(&model, &params, &ds).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn perfect_model_scores_one() {
        // Input i is the one-hot of its label, classifier is the identity.
        let labels = vec![0, 1, 1, 0, 1];
        let data: Vec<f64> = labels
            .iter()
            .flat_map(|&y| if y == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let ds = Dataset::new(Tensor::new(vec![5, 2], data).unwrap(), labels, 2, Provenance::Synthetic).unwrap();
        let model = Model::new(EncoderSpec::Mlp {
            input_dim: 2,
            hidden: vec![],
        })
        .unwrap();
        let params = ParameterSet {
            theta_phi: vec![],
            theta_psi: Classifier::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]).unwrap(),
        };
        assert_eq!(accuracy(&model, &params, &ds).unwrap(), 1.0);
    }

    #[test]
    fn random_model_on_balanced_data_is_near_chance() {
        let n = 10_000;
        let mut rng = stream(21, &[]);
        let model = Model::new(EncoderSpec::Mlp {
            input_dim: 5,
            hidden: vec![],
        })
        .unwrap();
        let params = model.init_params(10, &mut rng);
        // Labels are independent of inputs, so any fixed model is at chance.
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let data = (0..n * 5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut perm = labels.clone();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let ds = Dataset::new(Tensor::new(vec![n, 5], data).unwrap(), perm, 10, Provenance::Synthetic).unwrap();
        let acc = accuracy(&model, &params, &ds).unwrap();
        // 3σ of Binomial(10000, 0.1)/10000 = 0.009.
        assert!((acc - 0.1).abs() < 0.01, "{acc}");
    }

    #[test]
    fn accuracy_of_empty_dataset_is_an_error() {
        let (model, params) = constant_model(0, 2);
        let ds = Dataset::empty(&[2], 2, Provenance::Synthetic);
        assert!(matches!(accuracy(&model, &params, &ds), Err(Error::Usage(_))));
    }

    #[test]
    fn snapshot_examples() {
        assert_eq!(select_best_snapshot(&history(&[0.1, 0.2, 0.3], &[0.5, 0.6, 0.7])).unwrap(), (2, 0.7));
        assert_eq!(select_best_snapshot(&history(&[0.5, 0.9, 0.7], &[0.4, 0.8, 0.9])).unwrap(), (1, 0.8));
        assert_eq!(select_best_snapshot(&history(&[0.6, 0.9, 0.9], &[0.1, 0.2, 0.3])).unwrap(), (1, 0.2));
        assert!(select_best_snapshot(&[]).is_err());
    }

    #[test]
    fn bootstrap_of_constant_collapses() {
        let iv = bootstrap_ci(&[0.8; 10], 0.95, BOOTSTRAP_RESAMPLES, &mut stream(1, &[])).unwrap();
        for v in [iv.low, iv.high, iv.mean] {
            assert!((v - 0.8).abs() < 1e-12, "{iv:?}");
        }
        let iv = bootstrap_ci(&[0.42], 0.95, BOOTSTRAP_RESAMPLES, &mut stream(1, &[])).unwrap();
        assert_eq!((iv.low, iv.high, iv.mean), (0.42, 0.42, 0.42));
    }

    #[test]
    fn bootstrap_interval_narrows_with_more_data() {
        let binary = |n: usize| -> Vec<f64> { (0..n).map(|i| (i % 2) as f64).collect() };
        let a = bootstrap_ci(&binary(10), 0.95, BOOTSTRAP_RESAMPLES, &mut stream(2, &[])).unwrap();
        let b = bootstrap_ci(&binary(100), 0.95, BOOTSTRAP_RESAMPLES, &mut stream(2, &[])).unwrap();
        assert!(a.low < 0.5 && a.high > 0.5);
        assert!(b.low < 0.5 && b.high > 0.5);
        assert!(b.high - b.low < a.high - a.low);
    }

    #[test]
    fn bootstrap_is_deterministic_for_a_seed() {
        let v = [0.1, 0.5, 0.3, 0.9];
        let a = bootstrap_ci(&v, 0.95, 1000, &mut stream(3, &[])).unwrap();
        let b = bootstrap_ci(&v, 0.95, 1000, &mut stream(3, &[])).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bootstrap_brackets_the_mean(values in proptest::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
            let iv = bootstrap_ci(&values, 0.95, 2000, &mut stream(seed, &[])).unwrap();
            prop_assert!(iv.low <= iv.mean + 1e-12 && iv.mean <= iv.high + 1e-12, "{:?}", iv);
        }

        #[test]
        fn snapshot_ignores_worse_appended_rounds(vals in proptest::collection::vec(0.0f64..1.0, 1..20), extra in 1usize..5) {
            let tests: Vec<f64> = vals.iter().map(|v| 1.0 - v).collect();
            let mut h = history(&vals, &tests);
            let before = select_best_snapshot(&h).unwrap();
            let worst = vals.iter().copied().fold(f64::INFINITY, f64::min);
            for j in 0..extra {
                h.push(record(vals.len() + j, worst - 0.01, 0.0));
            }
            prop_assert_eq!(select_best_snapshot(&h).unwrap(), before);
        }

        #[test]
        fn accuracy_is_shuffle_invariant(seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let model = Model::new(EncoderSpec::Mlp { input_dim: 3, hidden: vec![4] }).unwrap();
            let params = model.init_params(3, &mut rng);
            let n = 40;
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let ds = Dataset::new(Tensor::new(vec![n, 3], data).unwrap(), labels, 3, Provenance::Synthetic).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let shuffled = ds.subset(&order);
            prop_assert_eq!(accuracy(&model, &params, &ds).unwrap(), accuracy(&model, &params, &shuffled).unwrap());
        }
    }
}
