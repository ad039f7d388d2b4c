mod common;

use std::fs;
use std::path::{Path, PathBuf};

use leavs::cli::{run, EXIT_DATA, EXIT_ENDPOINT, EXIT_OK, EXIT_USAGE};
use leavs::eval::AnnotatorRecord;
use leavs::labels_io::{read_labels, write_annotations_csv, write_reports, FindingGroup, ReadMode};
use leavs::schema::{Organ, UrgencyLevel};
use serde_json::Value;

use common::*;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn leavs(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("leavs").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Reports, a scenario and the script built from it.
fn workspace(dir: &Path) -> (PathBuf, PathBuf) {
    let reports = corpus(5, 31);
    let reports_path = dir.join("reports.jsonl");
    write_reports(&reports_path, &reports).unwrap();
    let scenario = clean_scenario(&reports, &[Organ::Liver, Organ::RightKidney, Organ::LeftKidney], 32);
    let scenario_path = dir.join("scenario.json");
    fs::write(&scenario_path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
    let script = dir.join("script.json");
    let o = leavs(&[
        "fixture",
        "--reports",
        s(&reports_path),
        "--scenario",
        s(&scenario_path),
        "--out",
        s(&script),
        "--organs",
        "liver,right_kidney,left_kidney",
        "--model",
        "scripted",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    (reports_path, script)
}

fn label(dir: &Path, reports: &Path, script: &Path, out: &str, extra: &[&str]) -> Outcome {
    let out = dir.join(out);
    let mut args = vec![
        "label",
        "--reports",
        s(reports),
        "--scripted",
        s(script),
        "--out",
        out.to_str().unwrap(),
        "--organs",
        "liver,right_kidney,left_kidney",
        "--model",
        "scripted",
    ];
    args.extend_from_slice(extra);
    leavs(&args)
}

#[test]
fn label_is_reproducible_and_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let (reports, script) = workspace(dir.path());
    let a = label(dir.path(), &reports, &script, "a.jsonl", &[]);
    assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
    assert!(a.stdout.contains("labeled 5 reports"));
    let b = label(dir.path(), &reports, &script, "b.jsonl", &["--parallelism", "4"]);
    assert_eq!(b.code, EXIT_OK, "{}", b.stderr);

    let la = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, fs::read(dir.path().join("b.jsonl")).unwrap());
    for suffix in [".failures.jsonl", ".checkpoint.json", ".transcripts.jsonl", ".manifest.json"] {
        assert!(dir.path().join(format!("a.jsonl{suffix}")).exists(), "missing {suffix}");
    }
    let manifest = |name: &str| -> Value {
        serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
    };
    let (ma, mb) = (manifest("a.jsonl.manifest.json"), manifest("b.jsonl.manifest.json"));
    assert_eq!(ma["command"], "label");
    assert_eq!(ma["inputs"]["reports"], mb["inputs"]["reports"]);
    assert!(ma["template_hashes"].as_object().unwrap().len() > 5);
    assert_ne!(ma["manifest_hash"], mb["manifest_hash"], "parallelism is part of the recorded config");
    let again = label(dir.path(), &reports, &script, "a2.jsonl", &[]);
    assert_eq!(again.code, EXIT_OK);
    assert_eq!(ma["manifest_hash"], manifest("a2.jsonl.manifest.json")["manifest_hash"]);

    let labels = read_labels(&dir.path().join("a.jsonl"), ReadMode::Strict).unwrap().records;
    let first = &labels[0];
    let inspect = leavs(&[
        "inspect",
        "--transcripts",
        s(&dir.path().join("a.jsonl.transcripts.jsonl")),
        "--report",
        &first.report_id,
        "--organ",
        first.organ.token(),
    ]);
    assert_eq!(inspect.code, EXIT_OK, "{}", inspect.stderr);
    assert!(inspect.stdout.contains("filtration_list/summary"));
    let json = leavs(&[
        "inspect",
        "--transcripts",
        s(&dir.path().join("a.jsonl.transcripts.jsonl")),
        "--report",
        &first.report_id,
        "--organ",
        first.organ.token(),
        "--json",
    ]);
    let entries: Value = serde_json::from_str(&json.stdout).unwrap();
    for r in &first.transcript_refs {
        assert!(entries.as_array().unwrap().iter().any(|e| e["id"] == r.as_str()), "ref {r} not in cell transcript");
    }
}

#[test]
fn resume_keeps_completed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let (reports, script) = workspace(dir.path());
    assert_eq!(label(dir.path(), &reports, &script, "a.jsonl", &[]).code, EXIT_OK);
    let first = fs::read(dir.path().join("a.jsonl")).unwrap();
    let resumed = label(dir.path(), &reports, &script, "a.jsonl", &["--resume"]);
    assert_eq!(resumed.code, EXIT_OK, "{}", resumed.stderr);
    assert_eq!(first, fs::read(dir.path().join("a.jsonl")).unwrap());

    let changed = label(dir.path(), &reports, &script, "a.jsonl", &["--resume", "--ablation", "fast_filtration"]);
    assert_eq!(changed.code, EXIT_USAGE, "{}", changed.stderr);
    assert!(changed.stderr.contains("checkpoint"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(leavs(&[]).code, EXIT_USAGE);
    assert_eq!(leavs(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(leavs(&["--help"]).code, EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let (reports, script) = workspace(dir.path());
    let out = dir.path().join("x.jsonl");
    let no_backend = leavs(&["label", "--reports", s(&reports), "--out", s(&out)]);
    assert_eq!(no_backend.code, EXIT_USAGE);
    assert!(no_backend.stderr.contains("--endpoint"));
    let clash = label(dir.path(), &reports, &script, "x.jsonl", &["--ablation", "fast_filtration,no_filtration"]);
    assert_eq!(clash.code, EXIT_USAGE);
    let bad_organ = label(dir.path(), &reports, &script, "x.jsonl", &["--organs", "heart"]);
    assert_eq!(bad_organ.code, EXIT_USAGE);

    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "model = m\ncolour = blue\n").unwrap();
    let bad_key = label(dir.path(), &reports, &script, "x.jsonl", &["--config", s(&cfg)]);
    assert_eq!(bad_key.code, EXIT_USAGE);
    assert!(bad_key.stderr.contains("colour"));
}

#[test]
fn config_file_settings_apply_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (reports, script) = workspace(dir.path());
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# scripted run\nparallelism = 3\ntemperature = 0.0\n").unwrap();
    assert_eq!(label(dir.path(), &reports, &script, "c.jsonl", &["--config", s(&cfg)]).code, EXIT_OK);
    assert_eq!(label(dir.path(), &reports, &script, "d.jsonl", &["--config", s(&cfg), "--parallelism", "2"]).code, EXIT_OK);
    let m = |name: &str| -> Value {
        serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
    };
    assert_eq!(m("c.jsonl.manifest.json")["config"]["parallelism"], 3);
    assert_eq!(m("d.jsonl.manifest.json")["config"]["parallelism"], 2);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = workspace(dir.path());
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"report_id\":\"a\",\"text\":\"Liver is normal.\"}\nnot json\n").unwrap();
    let strict = label(dir.path(), &broken, &script, "o.jsonl", &[]);
    assert_eq!(strict.code, EXIT_DATA, "{}", strict.stderr);
    assert!(strict.stderr.contains("broken.jsonl:2:"), "{}", strict.stderr);
    let lenient = label(dir.path(), &broken, &script, "o.jsonl", &["--lenient"]);
    assert_eq!(lenient.code, EXIT_OK, "{}", lenient.stderr);

    let missing = label(dir.path(), &dir.path().join("nope.jsonl"), &script, "o.jsonl", &[]);
    assert_eq!(missing.code, EXIT_DATA);

    let inspect = leavs(&[
        "inspect",
        "--transcripts",
        s(&dir.path().join("o.jsonl.transcripts.jsonl")),
        "--report",
        "zzz",
        "--organ",
        "liver",
    ]);
    assert_eq!(inspect.code, EXIT_DATA);
}

#[test]
fn unreachable_endpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (reports, _) = workspace(dir.path());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let out = dir.path().join("e.jsonl");
    let o = leavs(&[
        "label",
        "--reports",
        s(&reports),
        "--out",
        s(&out),
        "--endpoint",
        &url,
        "--model",
        "m",
        "--retry-limit",
        "0",
        "--organs",
        "liver",
    ]);
    assert_eq!(o.code, EXIT_ENDPOINT, "{}", o.stderr);
    assert!(o.stderr.contains("progress saved"));
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn merge_matches_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("merged.jsonl");
    let o = leavs(&[
        "merge",
        "--labels",
        s(&golden("labels.jsonl")),
        "--out",
        s(&out),
        "--any-abnormality",
        "--join-organs",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(golden("merged_joined.jsonl")).unwrap());

    let strict = dir.path().join("strict.jsonl");
    let o = leavs(&[
        "merge",
        "--labels",
        s(&golden("labels.jsonl")),
        "--out",
        s(&strict),
        "--positive-policy",
        "positive_only",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(fs::read_to_string(&strict).unwrap(), fs::read_to_string(golden("merged_positive_only.jsonl")).unwrap());
}

#[test]
fn evaluate_writes_csv_and_json() {
    use leavs::schema::{FindingType, OrganFindingLabel, UncertaintyCategory};
    let dir = tempfile::tempdir().unwrap();
    let mut labels = Vec::new();
    let mut records = Vec::new();
    for i in 0..16 {
        let id = format!("r{i:03}");
        let truth = i % 2 == 0;
        let predicted = if i == 3 { true } else { truth };
        if predicted {
            labels.push(OrganFindingLabel {
                report_id: id.clone(),
                organ: Organ::Liver,
                finding_type: FindingType::Focal,
                uncertainty: UncertaintyCategory::Positive,
                urgency: Some(UrgencyLevel::new((i % 3 + 1) as u8).unwrap()),
                evidence: vec![0],
                transcript_refs: Vec::new(),
            });
        }
        for (k, reader) in ["H1", "H2", "H3"].iter().enumerate() {
            let label = if k == 2 && i == 4 { !truth } else { truth };
            records.push(AnnotatorRecord {
                annotator: reader.to_string(),
                report_id: id.clone(),
                organ: Organ::Liver,
                finding_group: FindingGroup::Focal,
                label,
                urgency: label.then(|| UrgencyLevel::new(((i + k) % 3 + 1) as u8).unwrap()),
            });
        }
    }
    let labels_path = dir.path().join("labels.jsonl");
    leavs::labels_io::write_labels(&labels_path, &labels).unwrap();
    let ann = dir.path().join("ann.csv");
    write_annotations_csv(&ann, &records).unwrap();
    let metrics = dir.path().join("metrics.csv");
    let args = |threads: &'static str, out: &Path| -> Vec<String> {
        [
            "evaluate", "--labels", s(&labels_path), "--annotations", s(&ann), "--out", s(out), "--min-positive", "0",
            "--iterations", "100", "--seed", "3", "--threads", threads, "--human-eval",
        ]
        .iter()
        .map(|a| a.to_string())
        .collect()
    };
    let a = args("1", &metrics);
    let o = leavs(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let csv = fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("table,"), "{csv}");
    let liver = csv.lines().find(|l| l.starts_with("finding_types,liver,focal,leavs,cell")).expect("liver focal row");
    // 8 positives, one false positive: precision 8/9, recall 1, F1 16/17.
    assert!(liver.contains(&format!("{}", 16.0 / 17.0)), "{liver}");
    assert!(csv.lines().any(|l| l.contains(",human_avg,macro,")), "{csv}");
    let json: Value = serde_json::from_str(&fs::read_to_string(metrics.with_extension("json")).unwrap()).unwrap();
    assert!(json["rows"].as_array().unwrap().len() >= 3);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    let parallel = dir.path().join("metrics_par.csv");
    let b = args("4", &parallel);
    assert_eq!(leavs(&b.iter().map(String::as_str).collect::<Vec<_>>()).code, EXIT_OK);
    assert_eq!(csv, fs::read_to_string(&parallel).unwrap(), "thread count changed the metrics");

    let bad = leavs(&["evaluate", "--labels", s(&labels_path), "--annotations", s(&ann), "--out", s(&metrics), "--iterations", "0"]);
    assert_eq!(bad.code, EXIT_USAGE);
}
