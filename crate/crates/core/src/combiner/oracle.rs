//! Reference checks for the combiner: an exhaustive simplex grid search with
//! its own objective evaluation, random subset-consistent tasks, and the
//! perfect-combination check over a set of inputs.

use rand::seq::index;
use rand::Rng;

use super::fixed_x::{combine_fixed_x, SolverOptions};
use super::losses::ClientPrediction;
use crate::data::{covers, LabelSet, SyntheticTask};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Largest label count the grid search accepts.
pub const GRID_MAX_LABELS: usize = 4;
pub const GRID_RESOLUTION: f64 = 0.01;

/// Pairwise objective written directly over ordered pairs (each unordered
/// pair appears twice, hence the half).
pub fn naive_pairwise_objective(h: &[f64], preds: &[(Vec<usize>, Vec<f64>)], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((labels, probs), w) in preds.iter().zip(weights) {
        for a in 0..labels.len() {
            for b in 0..labels.len() {
                if a == b {
                    continue;
                }
                let d = probs[a] * h[labels[b]] - probs[b] * h[labels[a]];
                total += 0.5 * w * d * d;
            }
        }
    }
    total
}

/// MSE objective over explicit loops, one input.
pub fn naive_mse_objective(h: &[f64], preds: &[(Vec<usize>, Vec<f64>)], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((labels, probs), w) in preds.iter().zip(weights) {
        for (a, &y) in labels.iter().enumerate() {
            total += w * (probs[a] - h[y]).powi(2);
        }
    }
    total
}

fn plain(preds: &[ClientPrediction]) -> Vec<(Vec<usize>, Vec<f64>)> {
    preds
        .iter()
        .map(|p| (p.labels.global_labels().to_vec(), p.probs.row(0).to_vec()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub probs: Vec<f64>,
    pub objective: f64,
    pub evaluated: usize,
}

/// Minimizes the pairwise objective over every simplex point whose
/// coordinates are multiples of `GRID_RESOLUTION`. Ties keep the first point
/// in lexicographic order.
pub fn grid_search(preds: &[ClientPrediction], weights: &[f64], num_labels: usize) -> Result<GridResult> {
    if num_labels == 0 || num_labels > GRID_MAX_LABELS {
        return Err(Error::usage(format!(
            "grid search supports 1..={GRID_MAX_LABELS} labels, got {num_labels}"
        )));
    }
    let steps = (1.0 / GRID_RESOLUTION).round() as usize;
    let preds = plain(preds);
    let mut best = GridResult { probs: Vec::new(), objective: f64::INFINITY, evaluated: 0 };
    let mut counts = vec![0usize; num_labels];
    let mut h = vec![0.0; num_labels];
    enumerate(0, steps, &mut counts, &mut |c| {
        for (hi, &ci) in h.iter_mut().zip(c) {
            *hi = ci as f64 / steps as f64;
        }
        let v = naive_pairwise_objective(&h, &preds, weights);
        best.evaluated += 1;
        if v < best.objective {
            best.objective = v;
            best.probs = h.clone();
        }
    });
    Ok(best)
}

fn enumerate(pos: usize, remaining: usize, counts: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c;
        enumerate(pos + 1, remaining - c, counts, visit);
    }
}

/// True when the label-overlap graph of the sets is connected over the
/// covered labels, so perfect clients pin down every ratio.
pub fn overlap_connected(sets: &[LabelSet], num_labels: usize) -> bool {
    if !covers(sets, num_labels) {
        return false;
    }
    let mut reached = vec![false; num_labels];
    reached[0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for s in sets {
            let g = s.global_labels();
            if g.iter().any(|&y| reached[y]) && g.iter().any(|&y| !reached[y]) {
                for &y in g {
                    reached[y] = true;
                }
                changed = true;
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Random client label sets (sizes 1..=num_labels) covering all labels with
/// a connected overlap graph.
pub fn random_label_sets(num_labels: usize, clients: usize, rng: &mut StreamRng) -> Result<Vec<LabelSet>> {
    for _ in 0..10_000 {
        let sets: Vec<LabelSet> = (0..clients)
            .map(|_| {
                let size = rng.random_range(1..=num_labels);
                let mut pick = index::sample(rng, num_labels, size).into_vec();
                pick.sort_unstable();
                LabelSet::new(pick)
            })
            .collect::<Result<_>>()?;
        if overlap_connected(&sets, num_labels) {
            return Ok(sets);
        }
    }
    Err(Error::config(format!(
        "could not draw {clients} connected label sets over {num_labels} labels"
    )))
}

/// A task with random linear-softmax conditionals (logits in [-1.5, 1.5])
/// and connected random client label sets.
pub fn random_subset_consistent_task(num_labels: usize, clients: usize, dim: usize, rng: &mut StreamRng) -> Result<SyntheticTask> {
    let mut task = SyntheticTask::gaussian_mixture(dim, num_labels, 1.0, 1.0, rng)?;
    let scale = 1.5 / dim as f64;
    task.label_weights = (0..num_labels)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    task.label_bias = vec![0.0; num_labels];
    let sets = random_label_sets(num_labels, clients, rng)?;
    task.with_client_labels(sets)
}

/// Exact client predictions of a task at one input.
pub fn exact_client_predictions(task: &SyntheticTask, x: &[f64]) -> Result<Vec<ClientPrediction>> {
    task.client_labels
        .iter()
        .enumerate()
        .map(|(k, labels)| ClientPrediction::single(k, labels.clone(), task.client_conditional(labels, x)))
        .collect()
}

/// Combines exact client conditionals at every input and returns the largest
/// sup-norm deviation from the global conditional. Clients are weighted
/// equally.
pub fn perfect_combination_check(task: &SyntheticTask, inputs: &[Vec<f64>], opts: &SolverOptions) -> Result<f64> {
    if !covers(&task.client_labels, task.num_labels) {
        return Err(Error::config("client label sets do not cover every label"));
    }
    let m = task.client_labels.len();
    let weights = vec![1.0 / m as f64; m];
    let mut worst = 0.0f64;
    for x in inputs {
        let preds = exact_client_predictions(task, x)?;
        let combined = combine_fixed_x(&preds, &weights, task.num_labels, opts)?;
        let truth = task.conditional(x);
        for (a, b) in combined.probs.iter().zip(&truth) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn grid_counts_simplex_points() {
        let pred = ClientPrediction::single(0, LabelSet::full(3), vec![0.2, 0.3, 0.5]).unwrap();
        let g = grid_search(&[pred], &[1.0], 3).unwrap();
        assert_eq!(g.evaluated, 101 * 102 / 2);
        assert_eq!(g.objective, 0.0);
        assert_eq!(g.probs, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn connectivity() {
        let s = |v: Vec<usize>| LabelSet::new(v).unwrap();
        assert!(overlap_connected(&[s(vec![0, 1]), s(vec![1, 2])], 3));
        assert!(!overlap_connected(&[s(vec![0, 1]), s(vec![2, 3])], 4));
        assert!(!overlap_connected(&[s(vec![0, 1])], 3));
    }

    #[test]
    fn random_sets_are_connected() {
        let mut rng = stream(3, &[0]);
        for _ in 0..20 {
            let sets = random_label_sets(4, 3, &mut rng).unwrap();
            assert!(overlap_connected(&sets, 4));
        }
    }

    #[test]
    fn single_full_label_client_is_exact() {
        let mut rng = stream(5, &[0]);
        let task = SyntheticTask::gaussian_mixture(3, 4, 1.0, 1.0, &mut rng)
            .unwrap()
            .with_client_labels(vec![LabelSet::full(4)])
            .unwrap();
        let inputs: Vec<Vec<f64>> = (0..10).map(|i| task.sample_input(i % 4, &mut rng)).collect();
        let dev = perfect_combination_check(&task, &inputs, &SolverOptions::default()).unwrap();
        assert!(dev < 1e-12, "{dev}");
    }
}
