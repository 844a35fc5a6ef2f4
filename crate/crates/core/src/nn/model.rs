//! Encoder + linear-softmax classifier.
//!
//! A model is `h(x) = softmax(W φ(x) + b)` where `φ` is the encoder and each
//! row of `(W, b)` belongs to one label of the model's label set.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Cache, Layer};
use crate::nn::loss::{softmax_in_place, LOG_CLAMP};
use crate::nn::Tensor;
use crate::rng::StreamRng;

/// Encoder architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Dense layers with ReLU after each; no hidden layers means the
    /// representation is the raw input.
    Mlp { input_dim: usize, hidden: Vec<usize> },
    /// conv, conv, pool, conv, conv, pool, flatten, dense, dropout.
    /// All convolutions are 3×3 / stride 1 / same padding followed by ReLU.
    PaperCnn {
        channels: usize,
        height: usize,
        width: usize,
        filters: usize,
        fc_width: usize,
        dropout: f64,
    },
}

impl EncoderSpec {
    pub const CNN_FILTERS: usize = 3;
    pub const CNN_FC_WIDTH: usize = 128;
    pub const CNN_DROPOUT: f64 = 0.5;

    pub fn paper_cnn(channels: usize, height: usize, width: usize) -> Self {
        EncoderSpec::PaperCnn {
            channels,
            height,
            width,
            filters: Self::CNN_FILTERS,
            fc_width: Self::CNN_FC_WIDTH,
            dropout: Self::CNN_DROPOUT,
        }
    }

    pub fn input_len(&self) -> usize {
        match *self {
            EncoderSpec::Mlp { input_dim, .. } => input_dim,
            EncoderSpec::PaperCnn {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    pub fn representation_dim(&self) -> usize {
        match self {
            EncoderSpec::Mlp { input_dim, hidden } => hidden.last().copied().unwrap_or(*input_dim),
            EncoderSpec::PaperCnn { fc_width, .. } => *fc_width,
        }
    }

    fn layers(&self) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        match *self {
            EncoderSpec::Mlp {
                input_dim,
                ref hidden,
            } => {
                if input_dim == 0 || hidden.contains(&0) {
                    return Err(Error::config("MLP layer sizes must be positive"));
                }
                let mut prev = input_dim;
                for &h in hidden {
                    layers.push(Layer::Dense {
                        input: prev,
                        output: h,
                    });
                    layers.push(Layer::Relu { len: h });
                    prev = h;
                }
            }
            EncoderSpec::PaperCnn {
                channels,
                height,
                width,
                filters,
                fc_width,
                dropout,
            } => {
                if channels == 0 || filters == 0 || fc_width == 0 {
                    return Err(Error::config("CNN sizes must be positive"));
                }
                if height < 4 || width < 4 {
                    return Err(Error::config(format!(
                        "CNN input {height}x{width} is too small for two 2x2 poolings"
                    )));
                }
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Error::config(format!("dropout rate {dropout} outside [0, 1)")));
                }
                let (mut h, mut w, mut c) = (height, width, channels);
                for _ in 0..2 {
                    for _ in 0..2 {
                        layers.push(Layer::Conv3x3 {
                            in_c: c,
                            out_c: filters,
                            h,
                            w,
                        });
                        layers.push(Layer::Relu { len: filters * h * w });
                        c = filters;
                    }
                    layers.push(Layer::MaxPool2 { c, h, w });
                    h /= 2;
                    w /= 2;
                }
                let flat = c * h * w;
                layers.push(Layer::Flatten { len: flat });
                layers.push(Layer::Dense {
                    input: flat,
                    output: fc_width,
                });
                layers.push(Layer::Relu { len: fc_width });
                layers.push(Layer::Dropout {
                    p: dropout,
                    len: fc_width,
                });
            }
        }
        Ok(layers)
    }
}

/// Per-label classifier rows `(w_y, b_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    rows: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Classifier {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Classifier {
            rows,
            dim,
            weights: vec![0.0; rows * dim],
            bias: vec![0.0; rows],
        }
    }

    pub fn from_parts(rows: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * dim || bias.len() != rows {
            return Err(Error::config(format!(
                "classifier {rows}x{dim} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Classifier {
            rows,
            dim,
            weights,
            bias,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.weights[i * self.dim..(i + 1) * self.dim], self.bias[i])
    }

    pub fn set_row(&mut self, i: usize, w: &[f64], b: f64) {
        self.weights[i * self.dim..(i + 1) * self.dim].copy_from_slice(w);
        self.bias[i] = b;
    }

    /// New classifier holding the given rows, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Classifier {
        let mut out = Classifier::zeros(rows.len(), self.dim);
        for (dst, &src) in rows.iter().enumerate() {
            let (w, b) = self.row(src);
            out.set_row(dst, w, b);
        }
        out
    }

    /// Logits `W φ + b` for one representation vector.
    pub fn logits_into(&self, rep: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let w = &self.weights[r * self.dim..(r + 1) * self.dim];
            *o = self.bias[r] + w.iter().zip(rep).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Row-wise softmax probabilities for a `batch × dim` representation tensor.
    pub fn probabilities(&self, reps: &Tensor) -> Tensor {
        let n = reps.rows();
        let mut out = Tensor::zeros(vec![n, self.rows]);
        for i in 0..n {
            let row = out.row_mut(i);
            self.logits_into(reps.row(i), row);
            softmax_in_place(row);
        }
        out
    }

    /// Accumulates the gradient of `Σ_b dz_b · (W φ_b + b)` into `grad`,
    /// returning the gradient with respect to the representations.
    pub fn backward_into(&self, reps: &Tensor, dlogits: &Tensor, grad: &mut Classifier) -> Tensor {
        let mut drep = Tensor::zeros(vec![reps.rows(), self.dim]);
        for i in 0..reps.rows() {
            let rep = reps.row(i);
            let dz = dlogits.row(i);
            let dr = drep.row_mut(i);
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[r] += g;
                let gw = &mut grad.weights[r * self.dim..(r + 1) * self.dim];
                let w = &self.weights[r * self.dim..(r + 1) * self.dim];
                for j in 0..self.dim {
                    gw[j] += g * rep[j];
                    dr[j] += g * w[j];
                }
            }
        }
        drep
    }
}

/// Full model parameters: encoder `theta_phi` and classifier `theta_psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub theta_phi: Vec<f64>,
    pub theta_psi: Classifier,
}

impl ParameterSet {
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            theta_phi: vec![0.0; self.theta_phi.len()],
            theta_psi: Classifier::zeros(self.theta_psi.rows, self.theta_psi.dim),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.theta_psi.rows
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.theta_phi.len() == other.theta_phi.len()
            && self.theta_psi.rows == other.theta_psi.rows
            && self.theta_psi.dim == other.theta_psi.dim
    }

    /// Copy whose classifier holds only the given rows, in that order.
    pub fn restrict(&self, rows: &[usize]) -> ParameterSet {
        ParameterSet {
            theta_phi: self.theta_phi.clone(),
            theta_psi: self.theta_psi.select_rows(rows),
        }
    }

    /// Encoder, classifier weights and classifier biases as flat slices.
    pub fn slices(&self) -> [&[f64]; 3] {
        [&self.theta_phi, &self.theta_psi.weights, &self.theta_psi.bias]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [
            &mut self.theta_phi,
            &mut self.theta_psi.weights,
            &mut self.theta_psi.bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at a flat index over encoder, weights, biases (in that order).
    pub fn get(&self, mut idx: usize) -> f64 {
        for s in self.slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut idx: usize, value: f64) {
        for s in self.slices_mut() {
            if idx < s.len() {
                s[idx] = value;
                return;
            }
            idx -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// What the loss differentiates against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Mean cross-entropy against local label indices.
    Labels(&'a [usize]),
    /// Upstream gradient `∂L/∂p` for each probability entry (batch × rows).
    ProbabilityGradient(&'a Tensor),
}

/// Everything backward needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    batch: usize,
    caches: Vec<Cache>,
    representations: Tensor,
    logit_scale: Option<Vec<f64>>,
    probabilities: Tensor,
}

impl ForwardPass {
    pub fn representations(&self) -> &Tensor {
        &self.representations
    }

    pub fn probabilities(&self) -> &Tensor {
        &self.probabilities
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Fingerprint of every ReLU on/off decision and max-pool winner. Two
    /// passes with equal fingerprints lie on the same linear piece of the
    /// encoder.
    pub fn switch_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.caches {
            match c {
                Cache::Mask(m) => m.hash(&mut h),
                Cache::Argmax(a) => a.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

/// Compiled encoder plus classifier layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: EncoderSpec,
    layers: Vec<Layer>,
    offsets: Vec<usize>,
    encoder_len: usize,
}

impl Model {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        let layers = spec.layers()?;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Model {
            spec,
            layers,
            offsets,
            encoder_len: total,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn encoder_len(&self) -> usize {
        self.encoder_len
    }

    pub fn representation_dim(&self) -> usize {
        self.spec.representation_dim()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Dropout { p, .. } if *p > 0.0))
    }

    /// He-normal encoder weights, uniform(±1/√r) classifier weights, zero biases.
    pub fn init_params(&self, num_labels: usize, rng: &mut StreamRng) -> ParameterSet {
        let mut theta_phi = vec![0.0; self.encoder_len];
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let nw = l.weight_count();
            if nw == 0 {
                continue;
            }
            let std = (2.0 / l.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut theta_phi[off..off + nw] {
                *v = normal.sample(rng);
            }
        }
        let dim = self.representation_dim();
        let bound = 1.0 / (dim as f64).sqrt();
        let uni = Uniform::new(-bound, bound).expect("non-empty range");
        let weights = (0..num_labels * dim).map(|_| uni.sample(rng)).collect();
        ParameterSet {
            theta_phi,
            theta_psi: Classifier {
                rows: num_labels,
                dim,
                weights,
                bias: vec![0.0; num_labels],
            },
        }
    }

    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.theta_phi.len() != self.encoder_len {
            return Err(Error::config(format!(
                "encoder expects {} parameters, got {}",
                self.encoder_len,
                params.theta_phi.len()
            )));
        }
        if params.theta_psi.dim != self.representation_dim() {
            return Err(Error::config(format!(
                "classifier width {} does not match representation size {}",
                params.theta_psi.dim,
                self.representation_dim()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.row_len() != self.spec.input_len() && batch.rows() > 0 {
            return Err(Error::config(format!(
                "batch rows have {} values, encoder expects {}",
                batch.row_len(),
                self.spec.input_len()
            )));
        }
        Ok(())
    }

    fn encode_with_caches(
        &self,
        params: &ParameterSet,
        batch: &Tensor,
        train: bool,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<(Tensor, Vec<Cache>)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let n = batch.rows();
        let mut act = batch.data().to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let p = &params.theta_phi[off..off + l.param_count()];
            let (next, cache) = l.forward(p, act, n, train, rng.as_deref_mut())?;
            act = next;
            caches.push(cache);
        }
        let reps = Tensor::new(vec![n, self.representation_dim()], act)?;
        Ok((reps, caches))
    }

    /// Representations in evaluation mode (dropout off).
    pub fn encode(&self, params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
        Ok(self.encode_with_caches(params, batch, false, None)?.0)
    }

    /// Class probabilities in evaluation mode.
    pub fn predict(&self, params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
        let reps = self.encode(params, batch)?;
        Ok(params.theta_psi.probabilities(&reps))
    }

    pub fn forward(
        &self,
        params: &ParameterSet,
        batch: &Tensor,
        train: bool,
        rng: Option<&mut StreamRng>,
    ) -> Result<ForwardPass> {
        self.forward_scaled(params, batch, train, rng, None)
    }

    /// Forward pass where logit `y` is multiplied by `logit_scale[y]` before
    /// the softmax.
    pub fn forward_scaled(
        &self,
        params: &ParameterSet,
        batch: &Tensor,
        train: bool,
        rng: Option<&mut StreamRng>,
        logit_scale: Option<&[f64]>,
    ) -> Result<ForwardPass> {
        let (reps, caches) = self.encode_with_caches(params, batch, train, rng)?;
        let rows = params.theta_psi.rows;
        if let Some(s) = logit_scale {
            if s.len() != rows {
                return Err(Error::config(format!(
                    "logit scale has {} entries for {rows} classifier rows",
                    s.len()
                )));
            }
        }
        let n = reps.rows();
        let mut probs = Tensor::zeros(vec![n, rows]);
        for i in 0..n {
            let row = probs.row_mut(i);
            params.theta_psi.logits_into(reps.row(i), row);
            if let Some(s) = logit_scale {
                row.iter_mut().zip(s).for_each(|(z, a)| *z *= a);
            }
            softmax_in_place(row);
        }
        if !probs.all_finite() {
            return Err(Error::numerical("softmax output", "non-finite probability"));
        }
        Ok(ForwardPass {
            batch: n,
            caches,
            representations: reps,
            logit_scale: logit_scale.map(<[f64]>::to_vec),
            probabilities: probs,
        })
    }

    /// Gradient of the loss selected by `target` with respect to every
    /// parameter, given the pass produced by `forward` with the same params.
    pub fn backward(
        &self,
        params: &ParameterSet,
        pass: &ForwardPass,
        target: Target<'_>,
    ) -> Result<ParameterSet> {
        self.check_params(params)?;
        let n = pass.batch;
        let rows = params.theta_psi.rows;
        if pass.probabilities.row_len() != rows {
            return Err(Error::usage("forward pass was computed with different parameters"));
        }
        let mut dlogits = Tensor::zeros(vec![n, rows]);
        match target {
            Target::Labels(labels) => {
                if labels.len() != n {
                    return Err(Error::usage(format!(
                        "{} labels for a forward pass of {n} samples",
                        labels.len()
                    )));
                }
                let inv = 1.0 / n as f64;
                for (i, &y) in labels.iter().enumerate() {
                    if y >= rows {
                        return Err(Error::usage(format!(
                            "label index {y} out of range for {rows} classifier rows"
                        )));
                    }
                    let p = pass.probabilities.row(i);
                    // Below the clamp the loss is constant in the logits.
                    if p[y] < LOG_CLAMP {
                        continue;
                    }
                    let dz = dlogits.row_mut(i);
                    for (j, d) in dz.iter_mut().enumerate() {
                        *d = (p[j] - if j == y { 1.0 } else { 0.0 }) * inv;
                    }
                }
            }
            Target::ProbabilityGradient(gp) => {
                if gp.shape() != pass.probabilities.shape() {
                    return Err(Error::usage(format!(
                        "probability gradient shape {:?} does not match {:?}",
                        gp.shape(),
                        pass.probabilities.shape()
                    )));
                }
                for i in 0..n {
                    let p = pass.probabilities.row(i);
                    let g = gp.row(i);
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    let dz = dlogits.row_mut(i);
                    for j in 0..rows {
                        dz[j] = p[j] * (g[j] - dot);
                    }
                }
            }
        }
        if let Some(s) = &pass.logit_scale {
            for i in 0..n {
                dlogits.row_mut(i).iter_mut().zip(s).for_each(|(d, a)| *d *= a);
            }
        }

        let mut grads = params.zeros_like();
        let drep = params
            .theta_psi
            .backward_into(&pass.representations, &dlogits, &mut grads.theta_psi);
        let mut g = drep.into_data();
        for ((l, &off), cache) in self
            .layers
            .iter()
            .zip(&self.offsets)
            .zip(&pass.caches)
            .rev()
        {
            let np = l.param_count();
            g = l.backward(
                &params.theta_phi[off..off + np],
                cache,
                g,
                n,
                &mut grads.theta_phi[off..off + np],
            );
        }
        if !grads.all_finite() {
            return Err(Error::numerical("backward pass", "non-finite gradient"));
        }
        Ok(grads)
    }
}

/// A model together with the context of its most recent forward pass.
#[derive(Debug)]
pub struct Network<'m> {
    model: &'m Model,
    last: Option<ForwardPass>,
}

impl<'m> Network<'m> {
    pub fn new(model: &'m Model) -> Self {
        Network { model, last: None }
    }

    pub fn forward(
        &mut self,
        params: &ParameterSet,
        batch: &Tensor,
        train: bool,
        rng: Option<&mut StreamRng>,
        logit_scale: Option<&[f64]>,
    ) -> Result<&ForwardPass> {
        let pass = self
            .model
            .forward_scaled(params, batch, train, rng, logit_scale)?;
        Ok(self.last.insert(pass))
    }

    /// Backward through the last forward pass; the context is consumed.
    pub fn backward(&mut self, params: &ParameterSet, target: Target<'_>) -> Result<ParameterSet> {
        let pass = self
            .last
            .take()
            .ok_or_else(|| Error::usage("backward called without a preceding forward pass"))?;
        self.model.backward(params, &pass, target)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Batch with entries uniform in [-1, 1).
pub fn random_batch(rng: &mut StreamRng, rows: usize, len: usize) -> Tensor {
    let data = (0..rows * len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(vec![rows, len], data).expect("consistent shape")
}
