use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use tsc_core::metrics::compute_att;
use tsc_core::scenario::{named, SCENARIOS};
use tsc_core::sim::run::EpisodeTrace;

fn tsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsc"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tsc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Copy of a shipped run config with a shorter episode.
fn short_config(dir: &Path, name: &str, duration: f64) -> PathBuf {
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(shipped(name).join("run.json")).unwrap())
            .unwrap();
    let base = shipped(name);
    cfg["roadnet"] = base.join("roadnet.json").to_str().unwrap().into();
    cfg["flow"] = base.join("flow.json").to_str().unwrap().into();
    cfg["duration_s"] = duration.into();
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn shipped_scenarios_match_the_generator() {
    let tmp = tempfile::tempdir().unwrap();
    for name in SCENARIOS {
        let dir = tmp.path().join(name);
        named(name).unwrap().write_to(&dir).unwrap();
        for file in ["roadnet.json", "flow.json", "run.json"] {
            let fresh = std::fs::read(dir.join(file)).unwrap();
            let ours = std::fs::read(shipped(name).join(file)).unwrap();
            assert!(
                fresh == ours,
                "{name}/{file} is stale; regenerate with `tsc scenario {name}`"
            );
        }
        let out = tmp.path().join(format!("{name}_cli"));
        ok(&["scenario", name, "--out", s(&out)]);
        assert_eq!(
            std::fs::read(out.join("flow.json")).unwrap(),
            std::fs::read(dir.join("flow.json")).unwrap()
        );
        ok(&["validate", "network", s(&dir.join("roadnet.json"))]);
        ok(&[
            "validate",
            "flow",
            s(&dir.join("flow.json")),
            "--roadnet",
            s(&dir.join("roadnet.json")),
        ]);
    }
}

#[test]
fn run_is_reproducible_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg = shipped("grid3x3").join("run.json");
    ok(&["run", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["run", "--config", s(&cfg), "--out", s(&b)]);
    for file in ["metrics.json", "trace.jsonl"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    assert!(a.join("timing.json").exists());
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    let trace = EpisodeTrace::read_jsonl(&a.join("trace.jsonl")).unwrap();
    let offline = compute_att(&trace).unwrap();
    assert!(
        (metrics["att"].as_f64().unwrap() - offline).abs() < 0.006,
        "{} vs {offline}",
        metrics["att"]
    );
    assert!(metrics["vehicles_finished"].as_u64() <= metrics["vehicles_entered"].as_u64());

    let ici = tmp.path().join("ici.json");
    ok(&[
        "ici",
        "--roadnet",
        s(&shipped("grid3x3").join("roadnet.json")),
        "--trace",
        s(&a.join("trace.jsonl")),
        "--out",
        s(&ici),
    ]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ici).unwrap()).unwrap();
    assert_eq!(report["per_intersection"].as_object().unwrap().len(), 9);
    assert!(report["summary"]["mean"].as_f64().unwrap() > 0.0);

    let reseeded = tmp.path().join("c");
    ok(&[
        "run",
        "--config",
        s(&cfg),
        "--seed",
        "99",
        "--out",
        s(&reseeded),
    ]);
}

#[test]
fn compare_writes_one_row_per_assignment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "grid3x3_congested", 1800.0);
    let mixed = tmp.path().join("mixed.json");
    std::fs::write(
        &mixed,
        r#"{"*": {"kind": "max_pressure"}, "intersection_2_2": {"kind": "complexity_aware"}}"#,
    )
    .unwrap();
    let csv = tmp.path().join("table.csv");
    ok(&[
        "compare",
        "--config",
        s(&cfg),
        "--kinds",
        "fixed-time,max-pressure",
        "--assignment",
        s(&mixed),
        "--out",
        s(&csv),
    ]);
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let labels: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(labels, ["fixed_time", "max_pressure", "mixed"]);
    let att = |k: usize| rows[k][1].parse::<f64>().unwrap();
    assert!(att(1) < att(0), "{text}");

    let dup = tsc(&[
        "compare",
        "--config",
        s(&cfg),
        "--kinds",
        "max-pressure,max-pressure",
    ]);
    assert!(!dup.status.success());
    let unknown = tmp.path().join("unknown.json");
    std::fs::write(
        &unknown,
        r#"{"intersection_9_9": {"kind": "max_pressure"}}"#,
    )
    .unwrap();
    assert!(
        !tsc(&["compare", "--config", s(&cfg), "--assignment", s(&unknown)])
            .status
            .success()
    );
}

#[test]
fn corpus_round_trip_and_corruption_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "spillback2x2", 600.0);
    let out = tmp.path().join("gen");
    ok(&[
        "datagen",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--horizon",
        "2",
        "--max-records",
        "40",
    ]);
    let records = out.join("records.jsonl");
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"], 40);
    ok(&["validate", "corpus", s(&records)]);

    let corpus = tmp.path().join("corpus.jsonl");
    let labels = tmp.path().join("labels.jsonl");
    let stdout = ok(&[
        "refine",
        s(&records),
        "--out",
        s(&corpus),
        "--labels",
        s(&labels),
    ])
    .stdout;
    let stats: Value = serde_json::from_slice(&stdout).unwrap();
    let kept = std::fs::read_to_string(&corpus).unwrap().lines().count() as u64;
    assert_eq!(stats["kept"].as_u64().unwrap(), kept);
    assert_eq!(stats["total"], 40);
    assert_eq!(
        std::fs::read_to_string(&labels).unwrap().lines().count(),
        40
    );
    // Refining again appends.
    ok(&["refine", s(&records), "--out", s(&corpus)]);
    assert_eq!(
        std::fs::read_to_string(&corpus).unwrap().lines().count() as u64,
        2 * kept
    );

    let mut lines: Vec<Value> = std::fs::read_to_string(&records)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let wrong = if lines[2]["golden_action"] == "NLSL" {
        "ETWT"
    } else {
        "NLSL"
    };
    lines[2]["golden_action"] = wrong.into();
    let bad = tmp.path().join("bad.jsonl");
    let text: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    std::fs::write(&bad, text.join("\n") + "\n").unwrap();
    let res = tsc(&["validate", "corpus", s(&bad)]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bad.jsonl:3:"), "{err}");
    assert!(!err.contains("bad.jsonl:1:"), "{err}");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": "toy1x1", "duration_s": 60, "surprise": 1}"#,
    )
    .unwrap();
    let res = tsc(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("surprise"));
    assert!(
        !tsc(&["validate", "network", s(&tmp.path().join("missing.json"))])
            .status
            .success()
    );
    std::fs::write(&cfg, r#"{"scenario": "toy1x1", "duration_s": 120}"#).unwrap();
    ok(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
}
