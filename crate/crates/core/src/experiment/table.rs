//! Per-seed and aggregated result tables and their CSV/JSON files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bootstrap_ci, BOOTSTRAP_RESAMPLES};
use crate::rng::{stream, tag};

pub const RESULTS_HEADER: &str = "dataset,method,label_mode,labels_per_client,local_epochs,seed,best_test_acc,best_round";
pub const AGGREGATE_HEADER: &str = "dataset,method,label_mode,labels_per_client,local_epochs,mean,ci_low,ci_high";

/// Values in the table carry exactly what the files print.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub dataset: String,
    pub method: String,
    pub label_mode: String,
    pub labels_per_client: usize,
    pub local_epochs: usize,
}

/// One (sweep point, seed) cell. Failed cells have neither accuracy nor
/// round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub key: RowKey,
    pub seed: u64,
    pub best_test_acc: Option<f64>,
    pub best_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(flatten)]
    pub key: RowKey,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl ResultsTable {
    /// Builds the table from per-seed rows, aggregating every key in order
    /// of first appearance with a percentile bootstrap over its successful
    /// seeds.
    pub fn from_rows(rows: Vec<ResultRow>, level: f64) -> Result<Self> {
        let rows: Vec<ResultRow> = rows
            .into_iter()
            .map(|mut r| {
                r.best_test_acc = r.best_test_acc.map(round6);
                r
            })
            .collect();
        let mut keys: Vec<RowKey> = Vec::new();
        for r in &rows {
            if !keys.contains(&r.key) {
                keys.push(r.key.clone());
            }
        }
        let mut aggregates = Vec::with_capacity(keys.len());
        for (i, key) in keys.into_iter().enumerate() {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.key == key)
                .filter_map(|r| r.best_test_acc)
                .collect();
            let agg = if values.is_empty() {
                AggregateRow { key, mean: None, ci_low: None, ci_high: None }
            } else {
                let mut rng = stream(0, &[tag::BOOTSTRAP, i as u64]);
                let iv = bootstrap_ci(&values, level, BOOTSTRAP_RESAMPLES, &mut rng)?;
                AggregateRow {
                    key,
                    mean: Some(round6(iv.mean)),
                    ci_low: Some(round6(iv.low)),
                    ci_high: Some(round6(iv.high)),
                }
            };
            aggregates.push(agg);
        }
        Ok(ResultsTable { rows, aggregates })
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let k = &r.key;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                k.dataset,
                k.method,
                k.label_mode,
                k.labels_per_client,
                k.local_epochs,
                r.seed,
                fmt_opt(r.best_test_acc),
                r.best_round.map_or_else(|| "-1".to_string(), |b| b.to_string())
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(AGGREGATE_HEADER);
        out.push('\n');
        for a in &self.aggregates {
            let k = &a.key;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                k.dataset,
                k.method,
                k.label_mode,
                k.labels_per_client,
                k.local_epochs,
                fmt_opt(a.mean),
                fmt_opt(a.ci_low),
                fmt_opt(a.ci_high)
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `results.csv`, `aggregate.csv` and `results.json` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_file(&dir.join("results.csv"), &self.results_csv())?;
        write_file(&dir.join("aggregate.csv"), &self.aggregate_csv())?;
        write_file(&dir.join("results.json"), &self.to_json()?)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(l: usize) -> RowKey {
        RowKey {
            dataset: "synthetic".into(),
            method: "fedavg".into(),
            label_mode: "private".into(),
            labels_per_client: l,
            local_epochs: 1,
        }
    }

    fn row(l: usize, seed: u64, acc: Option<f64>) -> ResultRow {
        ResultRow { key: key(l), seed, best_test_acc: acc, best_round: acc.map(|_| 3) }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ResultsTable::default();
        assert_eq!(t.results_csv(), format!("{RESULTS_HEADER}\n"));
        assert_eq!(t.aggregate_csv(), format!("{AGGREGATE_HEADER}\n"));
    }

    #[test]
    fn single_seed_has_degenerate_interval() {
        let t = ResultsTable::from_rows(vec![row(2, 0, Some(0.8123456789))], 0.95).unwrap();
        let a = &t.aggregates[0];
        assert_eq!(a.mean, Some(0.812346));
        assert_eq!(a.ci_low, a.mean);
        assert_eq!(a.ci_high, a.mean);
        assert!(t.results_csv().ends_with("synthetic,fedavg,private,2,1,0,0.812346,3\n"));
    }

    #[test]
    fn json_round_trip() {
        let t = ResultsTable::from_rows(
            vec![row(2, 0, Some(0.5)), row(2, 1, Some(0.61)), row(5, 0, None)],
            0.95,
        )
        .unwrap();
        assert_eq!(ResultsTable::from_json(&t.to_json().unwrap()).unwrap(), t);
        assert_eq!(t.aggregates.len(), 2);
        assert_eq!(t.aggregates[1].mean, None);
        assert!(t.results_csv().contains(",5,1,0,nan,-1\n"));
    }

    #[test]
    fn emit_to_unwritable_path_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        assert!(ResultsTable::default().emit(&file.join("sub")).is_err());
    }
}
