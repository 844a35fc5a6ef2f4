use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::federation::LabelMode;
use crate::nn::ParameterSet;

/// The coordinator's view: the global model over all labels and every
/// client's label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub params: ParameterSet,
    pub label_sets: Vec<LabelSet>,
    pub round: usize,
}

impl ServerState {
    pub fn new(params: ParameterSet, label_sets: Vec<LabelSet>) -> Result<Self> {
        let n = params.num_labels();
        for s in &label_sets {
            s.validate()?;
            if let Some(&bad) = s.global_labels().iter().find(|&&g| g >= n) {
                return Err(Error::config(format!("client label {bad} outside the {n} global labels")));
            }
        }
        Ok(ServerState {
            params,
            label_sets,
            round: 0,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.params.num_labels()
    }

    /// Parameters sent to client `k`: the full encoder, and either the full
    /// classifier (public) or the client's rows in label-set order (private).
    pub fn distribute(&self, k: usize, mode: LabelMode) -> Result<ParameterSet> {
        let set = self
            .label_sets
            .get(k)
            .ok_or_else(|| Error::usage(format!("unknown client {k}")))?;
        Ok(match mode {
            LabelMode::Public => self.params.clone(),
            LabelMode::Private => self.params.restrict(set.global_labels()),
        })
    }
}
