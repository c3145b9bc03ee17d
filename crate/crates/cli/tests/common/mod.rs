#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mock")
}

pub fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mock_pipeline.sha256")
}

/// Runs the CLI in-process with mock backends and no environment.
pub fn stepframe(args: &[&str]) -> u8 {
    let fx = fixtures();
    let mut argv: Vec<String> = vec![
        "stepframe".into(),
        "--backend".into(),
        "mock".into(),
        "--fixtures".into(),
        fx.to_string_lossy().into_owned(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    stepframe_cli::run(argv, Vec::<(String, String)>::new())
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Every stage over the mock fixture, writing under `root`. Returns the exit
/// code of each stage in order.
pub fn run_pipeline(root: &Path) -> Vec<(&'static str, u8)> {
    let fx = fixtures();
    let ann = fx.join("annotations.jsonl");
    let videos = fx.join("videos");
    let curated = root.join("curated.jsonl");
    let filtered = root.join("filtered.jsonl");
    let masks = root.join("masks");
    let gen = root.join("gen");
    vec![
        (
            "curate",
            stepframe(&[
                "curate",
                "--dataset",
                "Custom",
                "--annotations",
                p(&ann),
                "--videos",
                p(&videos),
                "--out",
                p(&curated),
            ]),
        ),
        (
            "filter",
            stepframe(&["filter", "--manifest", p(&curated), "--out", p(&filtered)]),
        ),
        (
            "ground",
            stepframe(&["ground", "--manifest", p(&filtered), "--out", p(&masks)]),
        ),
        (
            "generate",
            stepframe(&[
                "generate",
                "--manifest",
                p(&filtered),
                "--masks",
                p(&masks),
                "--out",
                p(&gen),
            ]),
        ),
        (
            "evaluate",
            stepframe(&[
                "evaluate",
                "--generated",
                p(&gen),
                "--gt",
                p(&filtered),
                "--masks",
                p(&masks),
                "--out",
                p(&root.join("metrics.json")),
                "--table",
                p(&root.join("table.md")),
            ]),
        ),
        (
            "finetune-prep",
            stepframe(&[
                "finetune-prep",
                "--manifest",
                p(&filtered),
                "--masks",
                p(&masks),
                "--out",
                p(&root.join("finetune.json")),
            ]),
        ),
        (
            "score-curation",
            stepframe(&[
                "score-curation",
                "--auto",
                p(&filtered),
                "--manual",
                p(&curated),
                "--out",
                p(&root.join("curation.json")),
            ]),
        ),
    ]
}

/// sha256 of every file under `root`, keyed by its `/`-separated relative path.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel: Vec<String> = path
                    .strip_prefix(root)
                    .unwrap()
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect();
                let bytes = std::fs::read(&path).unwrap();
                out.insert(rel.join("/"), format!("{:x}", Sha256::digest(&bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn render_digest(d: &BTreeMap<String, String>) -> String {
    d.iter().map(|(k, v)| format!("{v}  {k}\n")).collect()
}

pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
