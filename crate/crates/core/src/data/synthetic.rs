//! Synthetic tasks whose client labeling mechanisms are subset-consistent by
//! construction: a client's conditional label distribution is the global
//! conditional renormalized onto its label set.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet, Provenance};
use crate::error::{Error, Result};
use crate::nn::{softmax, Tensor};
use crate::rng::StreamRng;

/// Gaussian-mixture inputs with a linear-softmax labeling function
/// `p(y | x) = softmax(W x + b)_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub dim: usize,
    pub num_labels: usize,
    /// One input mixture component per label.
    pub centers: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub label_weights: Vec<Vec<f64>>,
    pub label_bias: Vec<f64>,
    pub client_labels: Vec<LabelSet>,
}

impl SyntheticTask {
    /// Isotropic mixture with centers drawn from `N(0, separation² I)`.
    /// The labeling function is the mixture's own Bayes posterior under
    /// equal component weights, which is linear-softmax in `x`.
    pub fn gaussian_mixture(
        dim: usize,
        num_labels: usize,
        separation: f64,
        noise_std: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if dim == 0 || num_labels < 2 || noise_std <= 0.0 || separation <= 0.0 {
            return Err(Error::config(
                "synthetic task needs dim > 0, at least two labels, and positive scales",
            ));
        }
        let centers: Vec<Vec<f64>> = (0..num_labels)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect()
            })
            .collect();
        let var = noise_std * noise_std;
        let label_weights = centers
            .iter()
            .map(|c| c.iter().map(|v| v / var).collect())
            .collect();
        let label_bias = centers
            .iter()
            .map(|c| -c.iter().map(|v| v * v).sum::<f64>() / (2.0 * var))
            .collect();
        Ok(SyntheticTask {
            dim,
            num_labels,
            centers,
            noise_std,
            label_weights,
            label_bias,
            client_labels: Vec::new(),
        })
    }

    /// A task whose conditional is the same vector `p` at every input.
    pub fn constant_conditional(p: &[f64]) -> Result<Self> {
        if p.len() < 2 || p.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("constant conditional needs ≥2 strictly positive entries"));
        }
        let n = p.len();
        Ok(SyntheticTask {
            dim: 1,
            num_labels: n,
            centers: vec![vec![0.0]; n],
            noise_std: 1.0,
            label_weights: vec![vec![0.0]; n],
            label_bias: p.iter().map(|v| v.ln()).collect(),
            client_labels: Vec::new(),
        })
    }

    pub fn with_client_labels(mut self, sets: Vec<LabelSet>) -> Result<Self> {
        if let Some(bad) = sets
            .iter()
            .flat_map(|s| s.global_labels())
            .find(|&&g| g >= self.num_labels)
        {
            return Err(Error::config(format!("client label {bad} outside the task's labels")));
        }
        self.client_labels = sets;
        Ok(self)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.label_weights
            .iter()
            .zip(&self.label_bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Global conditional `p(Y | x)`.
    pub fn conditional(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// `p(Y = y | x, Y ∈ labels)` in the label set's local order.
    pub fn client_conditional(&self, labels: &LabelSet, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        let restricted: Vec<f64> = labels.global_labels().iter().map(|&g| z[g]).collect();
        softmax(&restricted)
    }

    /// Draws an input from the mixture component of `label`.
    pub fn sample_input(&self, component: usize, rng: &mut StreamRng) -> Vec<f64> {
        self.centers[component]
            .iter()
            .map(|&c| {
                let e: f64 = StandardNormal.sample(rng);
                c + self.noise_std * e
            })
            .collect()
    }

    /// Samples `n` pairs from the global joint distribution.
    pub fn generate(&self, n: usize, rng: &mut StreamRng) -> Result<Dataset> {
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let comp = rng.random_range(0..self.num_labels);
            let x = self.sample_input(comp, rng);
            labels.push(sample_categorical(&self.conditional(&x), rng));
            data.extend(x);
        }
        Dataset::new(
            Tensor::new(vec![n, self.dim], data)?,
            labels,
            self.num_labels,
            Provenance::Synthetic,
        )
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(p: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// One client's synthetic sample and the exact conditional behind each label.
#[derive(Debug, Clone)]
pub struct ClientSample {
    pub labels: LabelSet,
    /// Labels are global ids.
    pub dataset: Dataset,
    /// `p(· | x_i, Y ∈ labels)` in local order, one row per sample.
    pub conditionals: Vec<Vec<f64>>,
}

/// Draws `n_per_client` samples for every client of the task. Inputs come
/// from the mixture components of the client's own labels; labels come from
/// the renormalized global conditional.
pub fn synth_generate(task: &SyntheticTask, n_per_client: usize, rng: &mut StreamRng) -> Result<Vec<ClientSample>> {
    task.client_labels
        .iter()
        .map(|labels| {
            if labels.is_empty() {
                return Err(Error::config("client with an empty label set"));
            }
            let mut data = Vec::with_capacity(n_per_client * task.dim);
            let mut ys = Vec::with_capacity(n_per_client);
            let mut conditionals = Vec::with_capacity(n_per_client);
            for _ in 0..n_per_client {
                let comp = labels.global(rng.random_range(0..labels.len()));
                let x = task.sample_input(comp, rng);
                let cond = task.client_conditional(labels, &x);
                ys.push(labels.global(sample_categorical(&cond, rng)));
                conditionals.push(cond);
                data.extend(x);
            }
            Ok(ClientSample {
                labels: labels.clone(),
                dataset: Dataset::new(
                    Tensor::new(vec![n_per_client, task.dim], data)?,
                    ys,
                    task.num_labels,
                    Provenance::Synthetic,
                )?,
                conditionals,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn full_label_set_recovers_global_conditional() {
        let task = SyntheticTask::gaussian_mixture(3, 4, 1.5, 1.0, &mut stream(1, &[])).unwrap();
        let x = [0.3, -0.7, 1.1];
        let full = task.client_conditional(&LabelSet::full(4), &x);
        for (a, b) in full.iter().zip(task.conditional(&x)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn renormalization_example() {
        let task = SyntheticTask::constant_conditional(&[0.2, 0.3, 0.5]).unwrap();
        let c = task.client_conditional(&LabelSet::new(vec![0, 1]).unwrap(), &[0.0]);
        assert_abs_diff_eq!(c[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn mixture_posterior_matches_bayes_rule() {
        let mut rng = stream(4, &[]);
        let task = SyntheticTask::gaussian_mixture(2, 3, 2.0, 0.8, &mut rng).unwrap();
        let x = [0.4, -0.2];
        let dens: Vec<f64> = task
            .centers
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * 0.64)).exp()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        for (p, d) in task.conditional(&x).iter().zip(&dens) {
            assert_abs_diff_eq!(*p, d / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn client_samples_stay_inside_label_sets() {
        let task = SyntheticTask::gaussian_mixture(2, 5, 2.0, 1.0, &mut stream(2, &[]))
            .unwrap()
            .with_client_labels(vec![
                LabelSet::new(vec![0, 3]).unwrap(),
                LabelSet::new(vec![1, 2, 4]).unwrap(),
            ])
            .unwrap();
        let out = synth_generate(&task, 200, &mut stream(3, &[])).unwrap();
        for c in &out {
            assert!(c.dataset.labels.iter().all(|&y| c.labels.contains(y)));
            for row in &c.conditionals {
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}
