use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FashionMnist,
    Cifar10,
    Synthetic,
}

/// Inputs (`N × sample shape`) with global label ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::config(format!(
                "{} inputs but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config(format!("label {bad} outside 0..{num_classes}")));
        }
        if provenance != Provenance::Synthetic
            && images.data().iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::config("pixel values must lie in [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn empty(sample_shape: &[usize], num_classes: usize, provenance: Provenance) -> Self {
        let mut shape = vec![0];
        shape.extend_from_slice(sample_shape);
        Dataset {
            images: Tensor::zeros(shape),
            labels: Vec::new(),
            num_classes,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance,
        }
    }

    /// Appends `other`, which must have the same sample shape.
    pub fn concat(mut self, other: &Dataset) -> Result<Dataset> {
        if self.sample_shape() != other.sample_shape() {
            return Err(Error::config("cannot concatenate datasets of different shapes"));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.images.into_data();
        data.extend_from_slice(other.images.data());
        self.images = Tensor::new(shape, data)?;
        self.labels.extend_from_slice(&other.labels);
        Ok(self)
    }

    /// Indices of the samples carrying each label.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}
