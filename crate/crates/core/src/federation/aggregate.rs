//! Sample-weighted parameter averaging.
//!
//! With public labels every parameter is averaged with weights `n_k / n`.
//! With private labels the encoder is averaged the same way, while the
//! classifier row of label `y` is averaged only over the clients holding
//! `y`, with weights `n_k / n'_y` where `n'_y` sums their sample counts.

use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::nn::{Classifier, ParameterSet};

/// A client's returned parameters. In private mode the classifier holds one
/// row per label of the client's label set, in that set's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundUpdate {
    pub client: usize,
    pub params: ParameterSet,
    pub samples: usize,
    pub train_loss: f64,
}

/// One contribution to a classifier row: update index, local row, weight.
pub type RowTerm = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    /// Encoder weight per update.
    pub encoder: Vec<f64>,
    /// Terms per global label; empty when no update holds the label.
    pub rows: Vec<Vec<RowTerm>>,
}

fn total_samples(counts: &[usize]) -> Result<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::usage("aggregation over zero samples"));
    }
    Ok(n)
}

/// Weights used by [`aggregate_private`].
pub fn private_weights(counts: &[usize], label_sets: &[LabelSet], num_labels: usize) -> Result<AggregationWeights> {
    if counts.len() != label_sets.len() {
        return Err(Error::usage("one label set per update is required"));
    }
    let n = total_samples(counts)?;
    let encoder = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_labels];
    for (k, set) in label_sets.iter().enumerate() {
        set.validate()?;
        for (local, &g) in set.global_labels().iter().enumerate() {
            if g >= num_labels {
                return Err(Error::usage(format!("client label {g} outside 0..{num_labels}")));
            }
            holders[g].push((k, local));
        }
    }
    let rows = holders
        .into_iter()
        .map(|h| {
            let n_y: usize = h.iter().map(|&(k, _)| counts[k]).sum();
            h.into_iter()
                .filter(|_| n_y > 0)
                .map(|(k, local)| (k, local, counts[k] as f64 / n_y as f64))
                .collect()
        })
        .collect();
    Ok(AggregationWeights { encoder, rows })
}

fn weighted_sum<'a>(terms: impl Iterator<Item = (f64, &'a [f64])>, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (w, x) in terms {
        for (o, v) in out.iter_mut().zip(x) {
            *o += w * v;
        }
    }
}

pub fn aggregate_public(updates: &[RoundUpdate]) -> Result<ParameterSet> {
    let first = updates
        .first()
        .ok_or_else(|| Error::usage("aggregation of an empty update list"))?;
    if updates.iter().any(|u| !u.params.same_shape(&first.params)) {
        return Err(Error::usage("public aggregation needs identically shaped updates"));
    }
    let counts: Vec<usize> = updates.iter().map(|u| u.samples).collect();
    let n = total_samples(&counts)?;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut out = first.params.zeros_like();
    weighted_sum(
        weights.iter().zip(updates).map(|(&w, u)| (w, u.params.theta_phi.as_slice())),
        &mut out.theta_phi,
    );
    let rows = first.params.num_labels();
    let dim = first.params.theta_psi.dim();
    let mut wrow = vec![0.0; dim];
    let mut brow = [0.0];
    for y in 0..rows {
        weighted_sum(
            weights.iter().zip(updates).map(|(&w, u)| (w, u.params.theta_psi.row(y).0)),
            &mut wrow,
        );
        let biases: Vec<[f64; 1]> = updates.iter().map(|u| [u.params.theta_psi.row(y).1]).collect();
        weighted_sum(weights.iter().zip(&biases).map(|(&w, b)| (w, b.as_slice())), &mut brow);
        out.theta_psi.set_row(y, &wrow, brow[0]);
    }
    Ok(out)
}

/// Per-label classifier averaging for private label sets. Rows of labels
/// that no update holds keep their value from `previous`.
pub fn aggregate_private(
    previous: &ParameterSet,
    updates: &[RoundUpdate],
    label_sets: &[LabelSet],
) -> Result<ParameterSet> {
    if updates.is_empty() {
        return Err(Error::usage("aggregation of an empty update list"));
    }
    let num_labels = previous.num_labels();
    let dim = previous.theta_psi.dim();
    for (u, s) in updates.iter().zip(label_sets) {
        if u.params.theta_phi.len() != previous.theta_phi.len()
            || u.params.num_labels() != s.len()
            || u.params.theta_psi.dim() != dim
        {
            return Err(Error::usage(format!(
                "update from client {} has {} classifier rows for a label set of {}",
                u.client,
                u.params.num_labels(),
                s.len()
            )));
        }
    }
    let counts: Vec<usize> = updates.iter().map(|u| u.samples).collect();
    let weights = private_weights(&counts, label_sets, num_labels)?;

    let mut theta_phi = vec![0.0; previous.theta_phi.len()];
    weighted_sum(
        weights
            .encoder
            .iter()
            .zip(updates)
            .map(|(&w, u)| (w, u.params.theta_phi.as_slice())),
        &mut theta_phi,
    );
    let mut psi = Classifier::zeros(num_labels, dim);
    let mut wrow = vec![0.0; dim];
    let mut brow = [0.0];
    for (y, terms) in weights.rows.iter().enumerate() {
        if terms.is_empty() {
            let (w, b) = previous.theta_psi.row(y);
            psi.set_row(y, w, b);
            continue;
        }
        weighted_sum(
            terms
                .iter()
                .map(|&(k, local, w)| (w, updates[k].params.theta_psi.row(local).0)),
            &mut wrow,
        );
        let biases: Vec<[f64; 1]> = terms
            .iter()
            .map(|&(k, local, _)| [updates[k].params.theta_psi.row(local).1])
            .collect();
        weighted_sum(terms.iter().zip(&biases).map(|(t, b)| (t.2, b.as_slice())), &mut brow);
        psi.set_row(y, &wrow, brow[0]);
    }
    Ok(ParameterSet {
        theta_phi,
        theta_psi: psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(encoder: Vec<f64>, rows: Vec<Vec<f64>>) -> ParameterSet {
        let dim = rows.first().map_or(1, |r| r.len() - 1);
        let weights = rows.iter().flat_map(|r| r[..dim].to_vec()).collect();
        let bias = rows.iter().map(|r| r[dim]).collect();
        ParameterSet {
            theta_phi: encoder,
            theta_psi: Classifier::from_parts(rows.len(), dim, weights, bias).unwrap(),
        }
    }

    fn update(client: usize, p: ParameterSet, samples: usize) -> RoundUpdate {
        RoundUpdate {
            client,
            params: p,
            samples,
            train_loss: 0.0,
        }
    }

    fn random_params(rng: &mut crate::rng::StreamRng, enc: usize, rows: usize, dim: usize) -> ParameterSet {
        let mut r = || rng.random::<f64>() * 4.0 - 2.0;
        let theta_phi = (0..enc).map(|_| r()).collect();
        let w = (0..rows * dim).map(|_| r()).collect();
        let b = (0..rows).map(|_| r()).collect();
        ParameterSet {
            theta_phi,
            theta_psi: Classifier::from_parts(rows, dim, w, b).unwrap(),
        }
    }

    #[test]
    fn single_update_is_returned_unchanged() {
        let p = params(vec![0.3, -1.2], vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(aggregate_public(&[update(0, p.clone(), 17)]).unwrap(), p);
    }

    #[test]
    fn equal_weights_average() {
        let a = params(vec![0.0], vec![vec![0.0, 0.0]]);
        let b = params(vec![2.0], vec![vec![2.0, 2.0]]);
        let out = aggregate_public(&[update(0, a, 5), update(1, b, 5)]).unwrap();
        assert_eq!(out.theta_phi, vec![1.0]);
        assert_eq!(out.theta_psi.row(0), (&[1.0][..], 1.0));
    }

    #[test]
    fn public_matches_brute_force_weighted_mean() {
        let mut rng = stream(8, &[]);
        let counts = [13usize, 400, 7, 91];
        let ups: Vec<RoundUpdate> = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| update(k, random_params(&mut rng, 6, 3, 4), c))
            .collect();
        let out = aggregate_public(&ups).unwrap();
        let n: usize = counts.iter().sum();
        for idx in 0..out.len() {
            let expected: f64 = ups
                .iter()
                .map(|u| u.params.get(idx) * u.samples as f64)
                .sum::<f64>()
                / n as f64;
            assert_abs_diff_eq!(out.get(idx), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_update_list_is_a_usage_error() {
        assert!(matches!(aggregate_public(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn single_holder_row_is_copied() {
        let prev = params(vec![0.0], vec![vec![9.0, 9.0]; 3]);
        let a = params(vec![1.0], vec![vec![5.0, 0.5], vec![6.0, 0.6]]);
        let b = params(vec![3.0], vec![vec![7.0, 0.7]]);
        let sets = [LabelSet::new(vec![0, 2]).unwrap(), LabelSet::new(vec![0]).unwrap()];
        let out = aggregate_private(&prev, &[update(0, a, 100), update(1, b, 300)], &sets).unwrap();
        // Label 2 is held only by client 0 (local row 1).
        assert_eq!(out.theta_psi.row(2), (&[6.0][..], 0.6));
        // Label 1 is held by nobody and keeps its previous row.
        assert_eq!(out.theta_psi.row(1), (&[9.0][..], 9.0));
        assert_abs_diff_eq!(out.theta_phi[0], 0.25 * 1.0 + 0.75 * 3.0, epsilon = 1e-15);
    }

    #[test]
    fn shared_row_weighted_by_holder_samples() {
        let prev = params(vec![0.0], vec![vec![0.0, 0.0]; 2]);
        let a = params(vec![0.0], vec![vec![1.0, 10.0]]);
        let b = params(vec![0.0], vec![vec![3.0, 30.0], vec![5.0, 50.0]]);
        let sets = [LabelSet::new(vec![0]).unwrap(), LabelSet::new(vec![0, 1]).unwrap()];
        let eq = aggregate_private(&prev, &[update(0, a.clone(), 2000), update(1, b.clone(), 2000)], &sets).unwrap();
        assert_abs_diff_eq!(eq.theta_psi.row(0).0[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.theta_psi.row(0).1, 20.0, epsilon = 1e-15);
        let skew = aggregate_private(&prev, &[update(0, a, 3000), update(1, b, 1000)], &sets).unwrap();
        assert_abs_diff_eq!(skew.theta_psi.row(0).0[0], 0.75 * 1.0 + 0.25 * 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(skew.theta_psi.row(0).1, 0.75 * 10.0 + 0.25 * 30.0, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_row_count_is_rejected() {
        let prev = params(vec![0.0], vec![vec![0.0, 0.0]; 2]);
        let a = params(vec![0.0], vec![vec![1.0, 1.0]]);
        let sets = [LabelSet::new(vec![0, 1]).unwrap()];
        assert!(aggregate_private(&prev, &[update(0, a, 10)], &sets).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(counts in proptest::collection::vec(1usize..5000, 1..8), seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let num_labels = 6;
            let sets: Vec<LabelSet> = counts.iter().map(|_| {
                let k = rng.random_range(1..=num_labels);
                let mut v = rand::seq::index::sample(&mut rng, num_labels, k).into_vec();
                v.sort_unstable();
                LabelSet::new(v).unwrap()
            }).collect();
            let w = private_weights(&counts, &sets, num_labels).unwrap();
            prop_assert!((w.encoder.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (y, terms) in w.rows.iter().enumerate() {
                let held = sets.iter().any(|s| s.contains(y));
                prop_assert_eq!(held, !terms.is_empty());
                if held {
                    prop_assert!((terms.iter().map(|t| t.2).sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn private_with_full_sets_is_bitwise_public(counts in proptest::collection::vec(1usize..3000, 1..6), seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let ups: Vec<RoundUpdate> = counts.iter().enumerate()
                .map(|(k, &c)| update(k, random_params(&mut rng, 5, 4, 3), c)).collect();
            let sets = vec![LabelSet::full(4); counts.len()];
            let prev = random_params(&mut rng, 5, 4, 3);
            prop_assert_eq!(aggregate_private(&prev, &ups, &sets).unwrap(), aggregate_public(&ups).unwrap());
        }
    }
}
