mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;

const STAGES: [&str; 7] = [
    "curate",
    "filter",
    "ground",
    "generate",
    "evaluate",
    "finetune-prep",
    "score-curation",
];

#[test]
fn mock_pipeline_is_byte_identical_and_matches_golden() {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for root in [a.path(), b.path()] {
        for (stage, code) in run_pipeline(root) {
            assert_eq!(code, 0, "{stage} failed");
        }
    }
    assert!(
        start.elapsed() < Duration::from_secs(30),
        "took {:?}",
        start.elapsed()
    );

    let da = tree_digest(a.path());
    let db = tree_digest(b.path());
    assert_eq!(da, db);

    let rendered = render_digest(&da);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path())
        .expect("golden snapshot; rerun with UPDATE_GOLDEN=1");
    assert_eq!(rendered, golden);
}

#[test]
fn pipeline_outcomes_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(run_pipeline(root).iter().all(|(_, c)| *c == 0));

    let filtered = read_jsonl(&root.join("filtered.jsonl"));
    assert_eq!(filtered.len(), 5);
    let kept: Vec<bool> = filtered
        .iter()
        .map(|r| r["kept"].as_bool().unwrap_or(true))
        .collect();
    assert_eq!(kept, [true, true, false, true, true]);

    let masks = root.join("masks");
    assert!(masks
        .join("k01_0001000_put-pan-on-stove/relocated.png")
        .is_file());
    assert!(!masks.join("k01_0005000_cut-tomato/relocated.png").exists());
    assert!(!masks.join("k01_0010000_open-drawer").exists());

    let ground = read_jsonl(&root.join("audit/ground.jsonl"));
    let stir = &ground[2]["detail"];
    assert_eq!(stir["location"], serde_json::json!(["pot"]));
    let wash = &ground[3]["detail"];
    assert!(wash["flags"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f == "empty_relevant_set"));

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("metrics.json")).unwrap()).unwrap();
    let reports = metrics.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["target"], "action");
    assert_eq!(reports[1]["target"], "final");
    assert_eq!(reports[0]["n_pairs"], 4);

    let table = std::fs::read_to_string(root.join("table.md")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn audit_has_one_terminal_record_per_triplet_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(run_pipeline(root).iter().all(|(_, c)| *c == 0));
    let expected: BTreeMap<&str, usize> = [
        ("curate", 5),
        ("filter", 5),
        ("ground", 4),
        ("generate", 4),
        ("evaluate", 4),
        ("finetune-prep", 4),
        ("score-curation", 4),
    ]
    .into_iter()
    .collect();
    for stage in STAGES {
        let records = read_jsonl(&root.join("audit").join(format!("{stage}.jsonl")));
        let mut ids: Vec<&str> = records
            .iter()
            .map(|r| r["triplet_id"].as_str().unwrap())
            .collect();
        assert_eq!(ids.len(), expected[stage], "{stage}");
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), expected[stage], "{stage} repeats a triplet");
        assert!(records
            .iter()
            .all(|r| r["stage"] == stage && r["status"] != "failed"));
    }
}

#[test]
fn rerun_truncates_audit_log() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run_pipeline(root);
    let first = std::fs::read(root.join("audit/filter.jsonl")).unwrap();
    run_pipeline(root);
    assert_eq!(
        std::fs::read(root.join("audit/filter.jsonl")).unwrap(),
        first
    );
}

#[test]
fn filter_on_empty_manifest_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.jsonl");
    std::fs::write(&manifest, "").unwrap();
    let out = dir.path().join("out.jsonl");
    assert_eq!(
        stepframe(&["filter", "--manifest", p(&manifest), "--out", p(&out)]),
        3
    );
    let missing = dir.path().join("absent.jsonl");
    assert_eq!(
        stepframe(&["filter", "--manifest", p(&missing), "--out", p(&out)]),
        3
    );
}

#[test]
fn evaluate_with_missing_generated_frame_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(run_pipeline(root).iter().all(|(_, c)| *c == 0));
    std::fs::remove_file(root.join("gen/final/k02_0008000_wash-cup.png")).unwrap();
    let code = stepframe(&[
        "evaluate",
        "--generated",
        p(&root.join("gen")),
        "--gt",
        p(&root.join("filtered.jsonl")),
        "--masks",
        p(&root.join("masks")),
        "--out",
        p(&root.join("m2.json")),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let out = dir.path().join("o.jsonl");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let args = [
        "stepframe",
        "--config",
        p(&bad),
        "filter",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
    ];
    assert_eq!(stepframe_cli::run(args, Vec::<(String, String)>::new()), 2);

    let args = [
        "stepframe",
        "filter",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
    ];
    let env = vec![("STEPFRAME_NOT_A_SETTING".to_string(), "1".to_string())];
    assert_eq!(stepframe_cli::run(args, env), 2);

    assert_eq!(
        stepframe_cli::run(
            ["stepframe", "no-such-stage"],
            Vec::<(String, String)>::new()
        ),
        2
    );
    assert_eq!(
        stepframe(&[
            "--workers",
            "0",
            "filter",
            "--manifest",
            p(&manifest),
            "--out",
            p(&out)
        ]),
        2
    );
}

#[test]
fn strict_fixture_gap_makes_filter_exit_4_but_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(run_pipeline(root).iter().all(|(_, c)| *c == 0));
    let fx = root.join("fx");
    std::fs::create_dir(&fx).unwrap();
    std::fs::write(fx.join("vlm.json"), r#"{"version": 1, "strict": true}"#).unwrap();
    std::fs::copy(fixtures().join("detector.json"), fx.join("detector.json")).unwrap();
    let out = root.join("refiltered.jsonl");
    let curated = root.join("curated.jsonl");
    let args = [
        "stepframe",
        "--backend",
        "mock",
        "--fixtures",
        p(&fx),
        "filter",
        "--manifest",
        p(&curated),
        "--out",
        p(&out),
    ];
    assert_eq!(stepframe_cli::run(args, Vec::<(String, String)>::new()), 4);
    let records = read_jsonl(&out);
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r["kept"] == false));
}

#[test]
fn workers_do_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    let fx = fixtures();
    let curated = b.path().join("curated.jsonl");
    assert_eq!(
        stepframe(&[
            "--workers",
            "1",
            "curate",
            "--dataset",
            "Custom",
            "--annotations",
            p(&fx.join("annotations.jsonl")),
            "--videos",
            p(&fx.join("videos")),
            "--out",
            p(&curated),
        ]),
        0
    );
    assert_eq!(
        std::fs::read(a.path().join("curated.jsonl")).unwrap(),
        std::fs::read(&curated).unwrap()
    );
}
