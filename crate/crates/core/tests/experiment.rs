use labelfed::experiment::{emit, load_data, run, ExperimentConfig, ResultsTable};
use labelfed::metrics::RoundRecord;

const CONFIG: &str = "\
dataset = synthetic
method = fedavg, tune_pairwise
label_mode = public, private
labels_per_client = 2, 3
local_epochs = 1
clients = 3
samples_per_client = 60
unlabeled_pool_size = 40
rounds = 3
seeds = 0, 1
hidden = 8
synthetic_dim = 4
synthetic_classes = 4
synthetic_train_size = 800
synthetic_test_size = 200
";

#[test]
fn sweep_runs_every_cell_and_emits_files() {
    let cfg = ExperimentConfig::parse(CONFIG).unwrap();
    let data = load_data(&cfg).unwrap();
    let out = run(&cfg, &data).unwrap();
    assert_eq!(out.cells.len(), 2 * 2 * 2 * 2);
    assert_eq!(out.failed(), 0);
    assert_eq!(out.table.rows.len(), 16);
    assert_eq!(out.table.aggregates.len(), 8);
    for a in &out.table.aggregates {
        let (lo, m, hi) = (a.ci_low.unwrap(), a.mean.unwrap(), a.ci_high.unwrap());
        assert!(lo <= m && m <= hi);
    }

    let dir = tempfile::tempdir().unwrap();
    emit(&out, cfg.dataset, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(csv, out.table.results_csv());
    let json = std::fs::read_to_string(dir.path().join("results.json")).unwrap();
    assert_eq!(ResultsTable::from_json(&json).unwrap(), out.table);

    for cell in &out.cells {
        let stem = cell.stem(cfg.dataset);
        let lines = std::fs::read_to_string(dir.path().join("runs").join(format!("{stem}.jsonl"))).unwrap();
        let records: Vec<RoundRecord> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records, cell.result.as_ref().unwrap().history);
        assert_eq!(records.len(), 3);
    }
}

#[test]
fn reruns_are_identical() {
    let cfg = ExperimentConfig::parse(CONFIG).unwrap();
    let data = load_data(&cfg).unwrap();
    let a = run(&cfg, &data).unwrap();
    let b = run(&cfg, &data).unwrap();
    assert_eq!(a.table.results_csv(), b.table.results_csv());
    assert_eq!(a.table.aggregate_csv(), b.table.aggregate_csv());
}

#[test]
fn fedrs_with_private_labels_is_refused_at_parse_time() {
    let err = ExperimentConfig::parse("dataset = synthetic\nmethod = fedrs\nlabel_mode = public, private\n").unwrap_err();
    assert!(err.to_string().contains("label_mode"), "{err}");
}
