//! Exact combination at a single input: minimize the pairwise objective over
//! the probability simplex by projected gradient descent.

use serde::{Deserialize, Serialize};

use super::losses::{loss_and_gradient, ClientPrediction, TuningLoss};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub iterations: usize,
    pub step: f64,
    /// Stop once an iteration moves no coordinate by more than this.
    pub tolerance: f64,
    /// Finish with an exact solve of the optimality system on the support
    /// found by the descent.
    pub refine: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { iterations: 500, step: 0.1, tolerance: 1e-8, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub probs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Pairwise objective and gradient at a single candidate `h`.
pub fn fixed_x_objective(h: &[f64], preds: &[ClientPrediction], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let t = Tensor::new(vec![1, h.len()], h.to_vec())?;
    let (loss, grad) = loss_and_gradient(TuningLoss::Pairwise, &t, preds, weights)?;
    Ok((loss, grad.into_data()))
}

pub fn combine_fixed_x(
    preds: &[ClientPrediction],
    weights: &[f64],
    num_labels: usize,
    opts: &SolverOptions,
) -> Result<Combination> {
    if num_labels == 0 {
        return Err(Error::usage("cannot combine over an empty label set"));
    }
    for p in preds {
        if p.probs.rows() != 1 {
            return Err(Error::usage(format!("client {} must predict exactly one input", p.client)));
        }
    }
    let mut covered = vec![false; num_labels];
    for p in preds {
        for &g in p.labels.global_labels() {
            if g >= num_labels {
                return Err(Error::usage(format!("client {} holds label {g} outside 0..{num_labels}", p.client)));
            }
            covered[g] = true;
        }
    }
    if let Some(y) = covered.iter().position(|c| !c) {
        return Err(Error::config(format!("label {y} is not held by any client; its probability is undetermined")));
    }

    let mut h = vec![1.0 / num_labels as f64; num_labels];
    let mut iterations = 0;
    for _ in 0..opts.iterations {
        iterations += 1;
        let (_, grad) = fixed_x_objective(&h, preds, weights)?;
        let stepped: Vec<f64> = h.iter().zip(&grad).map(|(x, g)| x - opts.step * g).collect();
        let next = project_simplex(&stepped);
        let moved = next.iter().zip(&h).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        h = next;
        if moved < opts.tolerance {
            break;
        }
    }
    let (mut objective, _) = fixed_x_objective(&h, preds, weights)?;
    if opts.refine {
        if let Some(exact) = refine_on_support(&h, preds, weights) {
            let (v, _) = fixed_x_objective(&exact, preds, weights)?;
            if v <= objective {
                h = exact;
                objective = v;
            }
        }
    }
    Ok(Combination { probs: h, objective, iterations })
}

/// The objective is the quadratic form `hᵀ Q h`; this builds `Q`.
pub fn pairwise_quadratic_form(preds: &[ClientPrediction], weights: &[f64], num_labels: usize) -> Vec<f64> {
    let n = num_labels;
    let mut q = vec![0.0; n * n];
    for (p, &w) in preds.iter().zip(weights) {
        let ys = p.labels.global_labels();
        let a = p.probs.row(0);
        for i in 0..ys.len() {
            for j in i + 1..ys.len() {
                // term (a_i h_{y_j} − a_j h_{y_i})²
                let (u, cu) = (ys[j], a[i]);
                let (v, cv) = (ys[i], -a[j]);
                q[u * n + u] += w * cu * cu;
                q[v * n + v] += w * cv * cv;
                q[u * n + v] += w * cu * cv;
                q[v * n + u] += w * cu * cv;
            }
        }
    }
    q
}

/// Minimizes `hᵀ Q h` subject to `Σ h = 1` with `h` zero off the support of
/// `start`. Returns `None` if the system is singular or the solution leaves
/// the simplex.
fn refine_on_support(start: &[f64], preds: &[ClientPrediction], weights: &[f64]) -> Option<Vec<f64>> {
    let n = start.len();
    let q = pairwise_quadratic_form(preds, weights, n);
    let support: Vec<usize> = (0..n).filter(|&i| start[i] > 0.0).collect();
    let s = support.len();
    // [2 Q_SS  1; 1ᵀ 0] [h; λ] = [0; 1]
    let dim = s + 1;
    let mut m = vec![0.0; dim * (dim + 1)];
    let cols = dim + 1;
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            m[r * cols + c] = 2.0 * q[i * n + j];
        }
        m[r * cols + s] = 1.0;
        m[s * cols + r] = 1.0;
    }
    m[s * cols + dim] = 1.0;
    let x = solve_augmented(&mut m, dim)?;
    let mut h = vec![0.0; n];
    for (r, &i) in support.iter().enumerate() {
        if !(x[r] >= 0.0) {
            return None;
        }
        h[i] = x[r];
    }
    Some(h)
}

/// Gaussian elimination with partial pivoting on an `n × (n+1)` augmented
/// matrix.
fn solve_augmented(m: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let cols = n + 1;
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a * cols + col].abs().total_cmp(&m[b * cols + col].abs()))?;
        if m[pivot * cols + col].abs() < 1e-14 {
            return None;
        }
        if pivot != col {
            for c in 0..cols {
                m.swap(pivot * cols + c, col * cols + c);
            }
        }
        for r in col + 1..n {
            let f = m[r * cols + col] / m[col * cols + col];
            if f != 0.0 {
                for c in col..cols {
                    m[r * cols + c] -= f * m[col * cols + c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = m[r * cols + n];
        for c in r + 1..n {
            acc -= m[r * cols + c] * x[c];
        }
        x[r] = acc / m[r * cols + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSet;
    use proptest::prelude::*;

    fn pred(k: usize, labels: &[usize], p: &[f64]) -> ClientPrediction {
        ClientPrediction::single(k, LabelSet::new(labels.to_vec()).unwrap(), p.to_vec()).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_overlapping_clients_recover_global() {
        let preds = [pred(0, &[0, 1], &[0.4, 0.6]), pred(1, &[1, 2], &[0.375, 0.625])];
        let c = combine_fixed_x(&preds, &[0.5, 0.5], 3, &SolverOptions::default()).unwrap();
        for (a, b) in c.probs.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-3, "{:?}", c.probs);
        }
    }

    #[test]
    fn single_full_client_is_returned() {
        let c = combine_fixed_x(&[pred(0, &[0, 1, 2], &[0.1, 0.7, 0.2])], &[1.0], 3, &SolverOptions::default()).unwrap();
        for (a, b) in c.probs.iter().zip([0.1, 0.7, 0.2]) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_clients_give_uniform() {
        let u = [1.0 / 3.0; 3];
        let preds = [pred(0, &[0, 1, 2], &u), pred(1, &[2, 0, 1], &u)];
        let c = combine_fixed_x(&preds, &[0.3, 0.7], 3, &SolverOptions::default()).unwrap();
        for a in c.probs {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_form_matches_objective() {
        let preds = [pred(0, &[0, 2], &[0.3, 0.7]), pred(1, &[2, 1, 0], &[0.2, 0.5, 0.3])];
        let w = [0.4, 0.6];
        let q = pairwise_quadratic_form(&preds, &w, 3);
        let h = [0.1, 0.6, 0.3];
        let mut quad = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                quad += h[i] * q[i * 3 + j] * h[j];
            }
        }
        let (v, _) = fixed_x_objective(&h, &preds, &w).unwrap();
        assert!((quad - v).abs() < 1e-15);
    }

    #[test]
    fn descent_alone_meets_tolerance_on_overlapping_example() {
        let preds = [pred(0, &[0, 1], &[0.4, 0.6]), pred(1, &[1, 2], &[0.375, 0.625])];
        let opts = SolverOptions { refine: false, ..SolverOptions::default() };
        let c = combine_fixed_x(&preds, &[0.5, 0.5], 3, &opts).unwrap();
        for (a, b) in c.probs.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-3, "{:?}", c.probs);
        }
    }

    #[test]
    fn uncovered_label_is_an_error() {
        let preds = [pred(0, &[0, 1], &[0.4, 0.6])];
        assert!(combine_fixed_x(&preds, &[1.0], 3, &SolverOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
