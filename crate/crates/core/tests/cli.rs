//! The `ragbias` binary end to end on the synthetic world.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

use ragbias::benchmark::load_bbq;
use ragbias::generation::GenerationRecord;
use ragbias::metrics::{MetricKind, PredictionSet};
use ragbias::pipeline::{load_run_report, markdown_cells, RunReport};

fn ragbias(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragbias"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let mut cfg = common::world(dir, 8);
    cfg["backends"] = json!([
        {"name": "majority", "type": "mock", "policy": "doc_majority"},
        {"name": "reader", "type": "mock", "policy": "context_follower"},
    ]);
    cfg["mitigations"] = json!([{"kind": "none"}, {"kind": "ddp"}]);
    cfg["k_values"] = json!([3]);
    common::save_config(dir, &cfg)
}

#[test]
fn run_resume_score_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let run_dir = tmp.path().join("runs").join("syn");

    let out = stdout(&ragbias(&["run"], &config));
    assert!(out.starts_with("config fingerprint "), "{out}");
    assert!(out.contains("slices scored, 0 skipped"), "{out}");
    let metrics = std::fs::read(run_dir.join("metrics/metrics.json")).unwrap();
    let report_md = std::fs::read_to_string(run_dir.join("report.md")).unwrap();

    let again = ragbias(&["run"], &config);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--resume"));

    // Resume after losing one slice's records regenerates the same numbers.
    let records = run_dir.join("records");
    let victim = std::fs::read_dir(&records).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(&victim).unwrap();
    stdout(&ragbias(&["run", "--resume"], &config));
    assert!(victim.exists());
    assert_eq!(std::fs::read(run_dir.join("metrics/metrics.json")).unwrap(), metrics);

    stdout(&ragbias(&["score"], &config));
    assert_eq!(std::fs::read(run_dir.join("metrics/metrics.json")).unwrap(), metrics);
    assert_eq!(std::fs::read_to_string(run_dir.join("report.md")).unwrap(), report_md);

    let plan = stdout(&ragbias(&["run", "--dry-run"], &config));
    assert!(plan.contains("estimated backend calls 0"), "{plan}");

    let json_path = stdout(&ragbias(&["report", "--format", "json"], &config));
    let parsed: RunReport = serde_json::from_str(&std::fs::read_to_string(json_path.trim()).unwrap()).unwrap();
    assert_eq!(parsed, load_run_report(&run_dir).unwrap());

    let csv_path = stdout(&ragbias(&["report", "--format", "csv"], &config));
    let csv = std::fs::read_to_string(csv_path.trim()).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("run_id,slice,metric,value"), "{csv}");

    let bad = ragbias(&["report", "--format", "pdf"], &config);
    assert!(!bad.status.success());
}

/// Every scored slice equals a recount of its stored records.
#[test]
fn metrics_match_records() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    stdout(&ragbias(&["run"], &config));
    let run_dir = tmp.path().join("runs").join("syn");
    let report = load_run_report(&run_dir).unwrap();
    let bbq = load_bbq(&tmp.path().join("bbq.jsonl")).unwrap();
    let by_id: HashMap<&str, _> = bbq.instances.iter().map(|i| (i.id.as_str(), i)).collect();

    let variant_slices: Vec<_> = report.slices.iter().filter(|s| s.key.variant.is_some()).collect();
    assert!(!variant_slices.is_empty());
    for s in variant_slices {
        let body = std::fs::read_to_string(run_dir.join("records").join(format!("{}.jsonl", s.id))).unwrap();
        let recs: Vec<GenerationRecord> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), s.records);
        let (ps, skipped) = PredictionSet::from_records(&recs, &by_id);
        assert!(skipped.is_empty());
        let counts = ps.counts();
        for kind in MetricKind::ALL {
            assert_eq!(s.report.value(kind), counts.value(kind).ok(), "{} {kind}", s.id);
        }
    }
}

#[test]
fn markdown_cells_round_trip_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    stdout(&ragbias(&["run"], &config));
    let run_dir = tmp.path().join("runs").join("syn");
    let report = load_run_report(&run_dir).unwrap();
    let md = std::fs::read_to_string(run_dir.join("report.md")).unwrap();
    let cells = markdown_cells(&md);
    assert!(!cells.is_empty());

    // Cells hold percentages rounded to two decimals.
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", x * 100.0).parse::<f64>().unwrap());
    let mut matched = 0;
    for s in report.slices.iter().filter(|s| s.key.variant.is_none()) {
        let section = format!("bbq: Diff-Bias, mitigation {}", s.key.mitigation);
        let column = s.key.column_label();
        let cell = cells
            .iter()
            .find(|c| c.section == section && c.row == s.key.backend && c.column == column)
            .unwrap_or_else(|| panic!("no cell for {}", s.id));
        assert_eq!(cell.ambiguous, pct(s.report.value(MetricKind::DiffBiasA)), "{}", s.id);
        assert_eq!(cell.disambiguated, pct(s.report.value(MetricKind::DiffBiasD)), "{}", s.id);
        matched += 1;
    }
    // Two backends, two mitigations, baseline plus three collections per retriever.
    assert_eq!(matched, 2 * 2 * (1 + 3 * 2));
}

#[test]
fn ingest_and_index_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let out = stdout(&ragbias(&["ingest"], &config));
    assert!(out.contains("rows read 24, documents 24, rejected 0"), "{out}");
    assert!(out.contains("collection stereo: 12 documents"), "{out}");
    let corpus = tmp.path().join("runs/syn/corpus");
    assert!(corpus.join("rejects.jsonl").exists());
    assert!(corpus.join("stats_full.csv").exists());

    let out = stdout(&ragbias(&["index"], &config));
    assert_eq!(out.lines().count(), 3 * 2, "{out}");

    let broken = tmp.path().join("broken.json");
    std::fs::write(&broken, "{\"version\": 2}").unwrap();
    let o = ragbias(&["run"], &broken);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}
