use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(format!("unknown optimizer `{other}` (expected adam or sgd)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Optimizer hyperparameters and running state. Adam moments are allocated
/// lazily on the first step and must keep the shape of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Option<ParameterSet>,
    second_moment: Option<ParameterSet>,
}

impl OptimizerState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: None,
            second_moment: None,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. A non-finite gradient refuses the step
    /// and leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        if !params.same_shape(grads) {
            return Err(Error::usage("gradient shape does not match parameters"));
        }
        if !grads.all_finite() {
            return Err(Error::numerical("optimizer step", "non-finite gradient; step refused"));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= self.lr * gv;
                    }
                }
                self.step += 1;
            }
            OptimizerKind::Adam => {
                let m = self.first_moment.get_or_insert_with(|| grads.zeros_like());
                let v = self.second_moment.get_or_insert_with(|| grads.zeros_like());
                if !m.same_shape(params) || !v.same_shape(params) {
                    return Err(Error::usage("Adam moments do not match parameter shape"));
                }
                self.step += 1;
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
                let slices = params
                    .slices_mut()
                    .into_iter()
                    .zip(grads.slices())
                    .zip(m.slices_mut())
                    .zip(v.slices_mut());
                for (((p, g), m), v) in slices {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
