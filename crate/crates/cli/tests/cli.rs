use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdprobe_cli::validate::{summarize_records, summarize_templates, TemplateVerdict};
use pdprobe_cli::{read_records, report, Format};
use pdprobe_core::evaluation::EvalRecord;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn pdprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A copy of the shipped fixture directory, optionally with the manifest
/// rewritten.
fn workspace(edit: impl FnOnce(String) -> String) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["cohort.jsonl", "probes.jsonl"] {
        std::fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    let manifest = std::fs::read_to_string(fixtures().join("manifest.toml")).unwrap();
    std::fs::write(dir.path().join("manifest.toml"), edit(manifest)).unwrap();
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn record_then_replay_is_byte_identical() {
    let dir = workspace(|m| m.replace("probes.jsonl", "fresh.jsonl"));
    let manifest = dir.path().join("manifest.toml");
    let rec = dir.path().join("rec");
    let rep = dir.path().join("rep");
    let o = pdprobe(&[
        "run",
        "--mode",
        "record",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&rec),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("fresh.jsonl").exists());
    let o = pdprobe(&[
        "replay",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&rep),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "records.jsonl",
        "audits.jsonl",
        "summary.csv",
        "summary.txt",
    ] {
        assert_eq!(
            std::fs::read(rec.join(f)).unwrap(),
            std::fs::read(rep.join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_eq!(
        std::fs::read_to_string(rep.join("failures.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn shipped_fixture_replays_cleanly() {
    let dir = workspace(|m| m);
    let out = dir.path().join("out");
    let o = pdprobe(&[
        "replay",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
        "--out",
        path_str(&out),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        stdout(&o),
        std::fs::read_to_string(out.join("summary.csv")).unwrap()
    );
}

#[test]
fn incomplete_fixture_exits_with_code_two() {
    let dir = workspace(|m| m);
    let fixture = dir.path().join("probes.jsonl");
    let text = std::fs::read_to_string(&fixture).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains("\"Marie Curie\""))
        .collect();
    std::fs::write(&fixture, kept.join("\n") + "\n").unwrap();
    let out = dir.path().join("out");
    let o = pdprobe(&[
        "replay",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let failures = std::fs::read_to_string(out.join("failures.jsonl")).unwrap();
    assert!(failures.lines().count() >= 1);
    assert!(failures.lines().all(|l| l.contains("Marie Curie")));
    // the remaining subjects still produce records
    assert!(!std::fs::read_to_string(out.join("records.jsonl"))
        .unwrap()
        .is_empty());
}

#[test]
fn usage_errors_exit_with_code_one() {
    let o = pdprobe(&["replay", "--manifest", "/nonexistent/manifest.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = pdprobe(&["report", "--records", "/nonexistent/records.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

fn replayed_records() -> Vec<EvalRecord> {
    let dir = workspace(|m| m);
    let out = dir.path().join("out");
    let o = pdprobe(&[
        "replay",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success());
    read_records(&out.join("records.jsonl")).unwrap()
}

#[test]
fn single_record_report_has_zero_standard_error() {
    let records = replayed_records();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.jsonl");
    std::fs::write(&path, serde_json::to_string(&records[0]).unwrap() + "\n").unwrap();
    let o = pdprobe(&["report", "--records", path_str(&path), "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][5], "0.0000");
    assert_eq!(&rows[0][8], "1");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn report_rows_match_recomputation() {
    let records = replayed_records();
    let csv_text = report(&records, Format::Csv).unwrap();
    let mut groups: BTreeMap<(String, String), Vec<&EvalRecord>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((r.label.clone(), r.sample.clone()))
            .or_default()
            .push(r);
    }
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), groups.len());
    for row in &rows {
        let rs = &groups[&(row[1].to_string(), row[3].to_string())];
        let conf: Vec<f64> = rs.iter().map(|r| r.confidence).collect();
        let m = mean(&conf);
        let se = if conf.len() < 2 {
            0.0
        } else {
            let var = conf.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (conf.len() - 1) as f64;
            (var / conf.len() as f64).sqrt()
        };
        assert_eq!(row[4], format!("{m:.4}"));
        assert_eq!(row[5], format!("{se:.4}"));
        let recall: Vec<f64> = rs
            .iter()
            .filter_map(|r| r.metrics.as_ref().map(|x| x.recall))
            .collect();
        let precision: Vec<f64> = rs
            .iter()
            .filter_map(|r| r.metrics.as_ref().map(|x| x.precision))
            .collect();
        let fmt = |xs: &[f64]| {
            if xs.is_empty() {
                "-".to_string()
            } else {
                format!("{:.4}", mean(xs))
            }
        };
        assert_eq!(row[6], fmt(&recall));
        assert_eq!(row[7], fmt(&precision));
        assert_eq!(row[8], rs.len().to_string());
    }
}

#[test]
fn validate_refuses_vote_backends() {
    let dir = workspace(|m| m.replace("modality = \"logprob\"", "modality = \"vote\""));
    let o = pdprobe(&[
        "validate",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("log-probabilities"));
}

#[test]
fn validate_prints_memorization_table() {
    let dir = workspace(|m| m);
    let o = pdprobe(&[
        "validate",
        "--mode",
        "replay",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("Mem.%"));
    let all: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(all[0], "ALL");
    assert_eq!(all[1], "100.00");
}

fn verdict(property: &str, t: usize, memorized: bool, strength: Option<f64>) -> TemplateVerdict {
    TemplateVerdict {
        subject: "S".into(),
        property_id: property.into(),
        template_index: t,
        top: None,
        memorized,
        strength,
    }
}

#[test]
fn memorization_percentages() {
    let all = summarize_templates(
        &(0..5)
            .map(|t| verdict("P26", t, true, Some(1.0)))
            .collect::<Vec<_>>(),
    );
    assert_eq!(all[0].mem_pct, 100.0);
    assert_eq!(all[0].mean_strength, Some(1.0));
    let none = summarize_templates(
        &(0..5)
            .map(|t| verdict("P26", t, false, None))
            .collect::<Vec<_>>(),
    );
    assert_eq!(none[0].mem_pct, 0.0);
    assert_eq!(none[0].mean_strength, None);
    let mixed = summarize_templates(&[
        verdict("P26", 0, true, Some(2.0)),
        verdict("P26", 1, false, None),
        verdict("P69", 0, true, Some(0.5)),
        verdict("P69", 1, true, None),
    ]);
    assert_eq!(
        mixed
            .iter()
            .map(|r| r.property.as_str())
            .collect::<Vec<_>>(),
        ["ALL", "P26", "P69"]
    );
    assert_eq!(mixed[0].mem_pct, 75.0);
    assert_eq!(mixed[0].mean_strength, Some(1.25));
    assert_eq!(mixed[1].mem_pct, 50.0);
    assert_eq!(mixed[2].mem_pct, 100.0);
    assert_eq!(mixed[2].mean_strength, Some(0.5));
}

#[test]
fn memorization_report_from_records() {
    let records = replayed_records();
    let rows = summarize_records(&records);
    let with_verdict = records.iter().filter(|r| r.memorized.is_some()).count();
    assert_eq!(rows[0].units, with_verdict);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = pdprobe(&["report", "--records", path_str(&path), "--memorization"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), rows.len() + 1);
}

#[test]
fn sweep_prints_one_row_per_budget() {
    let dir = workspace(|m| m);
    let o = pdprobe(&[
        "sweep-k",
        "--manifest",
        path_str(&dir.path().join("manifest.toml")),
        "--ks",
        "0,10,20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        ["0", "10", "20"]
    );
}
