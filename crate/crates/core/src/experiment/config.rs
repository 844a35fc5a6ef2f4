//! Experiment configuration files.
//!
//! The format is line oriented: `key = value`, `#` starts a comment, and
//! sweepable keys accept comma-separated lists.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{LabelMode, Method, FEDRS_PRIVATE_MESSAGE};
use crate::nn::{EncoderSpec, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    FashionMnist,
    Cifar10,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn default_pool_size(self) -> usize {
        match self {
            DatasetKind::FashionMnist => 6000,
            DatasetKind::Cifar10 | DatasetKind::Synthetic => 5000,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fashion-mnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(format!("unknown dataset `{other}` (expected fashion-mnist, cifar10 or synthetic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mlp,
    Cnn,
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "cnn" => Ok(EncoderKind::Cnn),
            other => Err(format!("unknown encoder `{other}` (expected mlp or cnn)")),
        }
    }
}

/// Parameters of the generated Gaussian-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
    pub task_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 20,
            classes: 10,
            separation: 1.0,
            noise: 1.0,
            task_seed: 0,
            train_size: 60_000,
            test_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub label_modes: Vec<LabelMode>,
    pub clients: usize,
    pub labels_per_client: Vec<usize>,
    pub samples_per_client: usize,
    pub unlabeled_pool_size: usize,
    pub val_fraction: f64,
    pub rounds: usize,
    pub local_epochs: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub fedprox_mu: f64,
    pub fedrs_alpha: f64,
    pub tuning_epochs: usize,
    pub tuning_optimizer: OptimizerKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub encoder: EncoderKind,
    /// Hidden widths of the MLP encoder.
    pub hidden: Vec<usize>,
    pub synthetic: SyntheticConfig,
    /// Cells run concurrently; 0 uses every available core.
    pub workers: usize,
    pub confidence: f64,
}

impl ExperimentConfig {
    /// Defaults for a dataset.
    pub fn new(dataset: DatasetKind) -> Self {
        ExperimentConfig {
            dataset,
            data_dir: None,
            methods: vec![Method::FedAvg],
            label_modes: vec![LabelMode::Private],
            clients: 10,
            labels_per_client: vec![5],
            samples_per_client: 2000,
            unlabeled_pool_size: dataset.default_pool_size(),
            val_fraction: 0.2,
            rounds: 100,
            local_epochs: vec![1],
            batch_size: 64,
            lr: 1e-3,
            fedprox_mu: 1e-2,
            fedrs_alpha: 0.5,
            tuning_epochs: 3,
            tuning_optimizer: OptimizerKind::Adam,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("results"),
            encoder: match dataset {
                DatasetKind::Synthetic => EncoderKind::Mlp,
                _ => EncoderKind::Cnn,
            },
            hidden: vec![64, 64],
            synthetic: SyntheticConfig::default(),
            workers: 0,
            confidence: 0.95,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = read_entries(text)?;
        let dataset = match entries.get("dataset") {
            Some((_, v)) => parse_one::<DatasetKind>("dataset", v)?,
            None => return Err(Error::key("dataset", "required key is missing")),
        };
        let mut cfg = ExperimentConfig::new(dataset);
        for (key, (_, value)) in &entries {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "dataset" => {}
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "method" => self.methods = parse_list(key, v)?,
            "label_mode" => self.label_modes = parse_list(key, v)?,
            "clients" => self.clients = parse_one(key, v)?,
            "labels_per_client" => self.labels_per_client = parse_list(key, v)?,
            "samples_per_client" => self.samples_per_client = parse_one(key, v)?,
            "unlabeled_pool_size" => self.unlabeled_pool_size = parse_one(key, v)?,
            "val_fraction" => self.val_fraction = parse_one(key, v)?,
            "rounds" => self.rounds = parse_one(key, v)?,
            "local_epochs" => self.local_epochs = parse_list(key, v)?,
            "batch_size" => self.batch_size = parse_one(key, v)?,
            "lr" => self.lr = parse_one(key, v)?,
            "fedprox_mu" => self.fedprox_mu = parse_one(key, v)?,
            "fedrs_alpha" => self.fedrs_alpha = parse_one(key, v)?,
            "tuning_epochs" => self.tuning_epochs = parse_one(key, v)?,
            "tuning_optimizer" => self.tuning_optimizer = parse_one(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "encoder" => self.encoder = parse_one(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() { Vec::new() } else { parse_list(key, v)? };
            }
            "synthetic_dim" => s.dim = parse_one(key, v)?,
            "synthetic_classes" => s.classes = parse_one(key, v)?,
            "synthetic_separation" => s.separation = parse_one(key, v)?,
            "synthetic_noise" => s.noise = parse_one(key, v)?,
            "synthetic_task_seed" => s.task_seed = parse_one(key, v)?,
            "synthetic_train_size" => s.train_size = parse_one(key, v)?,
            "synthetic_test_size" => s.test_size = parse_one(key, v)?,
            "workers" => self.workers = parse_one(key, v)?,
            "confidence" => self.confidence = parse_one(key, v)?,
            other => return Err(Error::key(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |key: &str, len: usize| {
            if len == 0 {
                Err(Error::key(key, "list must not be empty"))
            } else {
                Ok(())
            }
        };
        nonempty("method", self.methods.len())?;
        nonempty("label_mode", self.label_modes.len())?;
        nonempty("labels_per_client", self.labels_per_client.len())?;
        nonempty("local_epochs", self.local_epochs.len())?;
        nonempty("seeds", self.seeds.len())?;
        if self.methods.contains(&Method::FedRs) && self.label_modes.contains(&LabelMode::Private) {
            return Err(Error::key("label_mode", FEDRS_PRIVATE_MESSAGE));
        }
        let num_labels = self.num_labels();
        if let Some(&l) = self.labels_per_client.iter().find(|&&l| l < 2 || l > num_labels) {
            return Err(Error::key(
                "labels_per_client",
                format!("{l} is outside 2..={num_labels}"),
            ));
        }
        if self.clients == 0 {
            return Err(Error::key("clients", "must be positive"));
        }
        if self.samples_per_client == 0 {
            return Err(Error::key("samples_per_client", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::key("val_fraction", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::key("batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::key("lr", "must be finite and non-negative"));
        }
        if !(self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite()) {
            return Err(Error::key("fedprox_mu", "must be finite and non-negative"));
        }
        if !(self.fedrs_alpha >= 0.0 && self.fedrs_alpha.is_finite()) {
            return Err(Error::key("fedrs_alpha", "must be finite and non-negative"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::key("confidence", "must lie in (0, 1)"));
        }
        if self.methods.iter().any(|m| m.is_tuning()) && self.unlabeled_pool_size == 0 {
            return Err(Error::key("unlabeled_pool_size", "central tuning needs a non-empty pool"));
        }
        if self.dataset == DatasetKind::Synthetic {
            let s = &self.synthetic;
            if s.dim == 0 {
                return Err(Error::key("synthetic_dim", "must be positive"));
            }
            if s.classes < 2 {
                return Err(Error::key("synthetic_classes", "needs at least two classes"));
            }
            if !(s.separation > 0.0 && s.separation.is_finite()) {
                return Err(Error::key("synthetic_separation", "must be positive"));
            }
            if !(s.noise > 0.0 && s.noise.is_finite()) {
                return Err(Error::key("synthetic_noise", "must be positive"));
            }
            if s.test_size == 0 {
                return Err(Error::key("synthetic_test_size", "must be positive"));
            }
            if self.encoder == EncoderKind::Cnn {
                return Err(Error::key("encoder", "the CNN needs image data"));
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        match self.dataset {
            DatasetKind::Synthetic => self.synthetic.classes,
            _ => 10,
        }
    }

    /// Encoder for inputs of the given per-sample shape.
    pub fn encoder_spec(&self, sample_shape: &[usize]) -> Result<EncoderSpec> {
        match self.encoder {
            EncoderKind::Mlp => Ok(EncoderSpec::Mlp {
                input_dim: sample_shape.iter().product(),
                hidden: self.hidden.clone(),
            }),
            EncoderKind::Cnn => match *sample_shape {
                [c, h, w] => Ok(EncoderSpec::paper_cnn(c, h, w)),
                _ => Err(Error::key("encoder", format!("the CNN needs image inputs, got shape {sample_shape:?}"))),
            },
        }
    }

    /// Sweep points in emission order.
    pub fn sweep(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &label_mode in &self.label_modes {
                for &labels_per_client in &self.labels_per_client {
                    for &local_epochs in &self.local_epochs {
                        out.push(SweepPoint { method, label_mode, labels_per_client, local_epochs });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub label_mode: LabelMode,
    pub labels_per_client: usize,
    pub local_epochs: usize,
}

/// Key → (line number, raw value).
fn read_entries(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {line_no}: expected `key = value`")));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {line_no}: missing key")));
        }
        if let Some((first, _)) = out.insert(key.to_string(), (line_no, value.trim().to_string())) {
            return Err(Error::key(key, format!("set twice (lines {first} and {line_no})")));
        }
    }
    Ok(out)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| Error::key(key, format!("cannot parse `{}`: {e}", value.trim())))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|item| parse_one(key, item)).collect()
}
