use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use transgnn_core::graph::{save_dataset, Graph, NodeData, Split};
use transgnn_core::nn::SparseMatrix;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_transgnn"));
    c.env_remove("TRANSGNN_CACHE_DIR").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// Two rings of 15 with chords and two bridges; features are a group
/// indicator plus a deterministic pattern. Per group: 5 train, 4 val,
/// 6 test.
fn write_fixture(dir: &Path) -> PathBuf {
    let n = 30;
    let d = 4;
    let mut trip = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for v in 0..n {
        let c = v / 15;
        labels.push(c);
        split.push(match v % 15 {
            0..=4 => Split::Train,
            5..=8 => Split::Val,
            _ => Split::Test,
        });
        trip.push((v, c, 1.0));
        trip.push((v, 2, ((v * 7) % 5) as f64 * 0.2));
        trip.push((v, 3, ((v * 3) % 4) as f64 * 0.25));
    }
    let x = SparseMatrix::from_triplets(n, d, trip).unwrap();
    let data = Arc::new(NodeData::new(x, labels, split, 2).unwrap());
    let mut edges = Vec::new();
    for base in [0, 15] {
        for i in 0..15 {
            edges.push((base + i, base + (i + 1) % 15));
            edges.push((base + i, base + (i + 4) % 15));
        }
    }
    edges.extend([(2, 17), (9, 25)]);
    let g = Graph::new(data, edges).unwrap();
    let out = dir.join("toy");
    save_dataset(&g, &out).unwrap();
    out
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_combo_is_a_usage_error_listing_the_syntax() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let out = run(&[
        "train",
        "--dataset-dir",
        ds.to_str().unwrap(),
        "--combo",
        "base+foo",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(
        err.contains("base+trans-sim") && err.contains("base+trans+sim"),
        "{err}"
    );
}

#[test]
fn bad_flags_exit_with_usage_code() {
    let out = run(&["train", "--dataset-dir", "x", "--backbone", "gat"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--dataset-dir", "x", "--sgc-layers", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = run(&["prepare-trans", "--dataset-dir", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
}

#[test]
fn gradcheck_passes_and_reports_every_case() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gradcheck", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    // 2 backbones x 2 modes x 5 combos, plus one fault case per backbone.
    assert_eq!(
        stdout.lines().filter(|l| l.ends_with("PASS")).count(),
        22,
        "{stdout}"
    );
    let csv = fs::read_to_string(tmp.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 23);
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out_dir = tmp.path().join(name);
        let out = run(&[
            "prepare-trans",
            "--dataset-dir",
            ds.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--threshold",
            "0.2",
            "--clusters",
            "2",
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        trees.push(files_under(&out_dir));
    }
    assert!(trees[0]
        .iter()
        .any(|(p, _)| p.ends_with("transitivity.json")));
    assert!(trees[0].iter().any(|(p, _)| p.ends_with("partition.tsv")));
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn threshold_above_one_gives_empty_transitivity_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "prepare-trans",
        "--dataset-dir",
        ds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--threshold",
        "1.1",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("empty"), "{}", text(&out.stderr));
    let json = fs::read_to_string(out_dir.join("transitivity.json")).unwrap();
    assert!(json.contains("\"edges_before_pruning\": 0"), "{json}");
    let edges = fs::read_to_string(out_dir.join("transitivity").join("edges.tsv")).unwrap();
    assert!(edges
        .lines()
        .all(|l| l.trim().is_empty() || l.starts_with('#')));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn robustness_grid_shape_and_clean_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let common = |out: &Path| {
        vec![
            "--dataset-dir".to_string(),
            ds.to_str().unwrap().to_string(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--threshold".into(),
            "0.2".into(),
            "--clusters".into(),
            "2".into(),
            "--epochs".into(),
            "20".into(),
            "--seeds".into(),
            "2".into(),
        ]
    };
    let rob = tmp.path().join("rob");
    let mut args = vec!["robustness".to_string()];
    args.extend(common(&rob));
    args.push("--plot-data".into());
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows = csv_rows(&rob.join("robustness.csv"));
    // 2 modes x 6 rates x 2 models x 2 seeds.
    assert_eq!(rows.len(), 48);
    for mode in ["add", "remove"] {
        let rates: std::collections::BTreeSet<&str> = rows
            .iter()
            .filter(|r| r[0] == mode)
            .map(|r| r[1].as_str())
            .collect();
        assert_eq!(rates.len(), 6, "{mode}");
        assert!(rob
            .join("plot")
            .join(format!("robustness_{mode}.csv"))
            .is_file());
    }

    let clean = tmp.path().join("clean");
    let mut args = vec!["train".to_string()];
    args.extend(common(&clean));
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let trained = csv_rows(&clean.join("results.csv"));
    for mode in ["add", "remove"] {
        let zero: Vec<_> = rows
            .iter()
            .filter(|r| r[0] == mode && r[1] == "0.0")
            .map(|r| (r[2].clone(), r[3].clone(), r[4].clone(), r[5].clone()))
            .collect();
        let want: Vec<_> = trained
            .iter()
            .map(|r| (r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone()))
            .collect();
        assert_eq!(zero, want, "{mode}");
    }
}

#[test]
fn ablation_lists_every_combo_with_its_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let out_dir = tmp.path().join("abl");
    let out = run(&[
        "ablation",
        "--dataset-dir",
        ds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--threshold",
        "0.2",
        "--epochs",
        "10",
        "--seeds",
        "2",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows = csv_rows(&out_dir.join("ablation.csv"));
    assert_eq!(rows.len(), 10);
    for combo in [
        "base",
        "base+trans",
        "base+sim",
        "base+trans+sim",
        "base+trans-sim",
    ] {
        assert_eq!(rows.iter().filter(|r| r[0] == combo).count(), 2, "{combo}");
    }
}

#[test]
fn baseline_only_skips_the_transitivity_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_fixture(tmp.path());
    let out_dir = tmp.path().join("base");
    let out = run(&[
        "train",
        "--dataset-dir",
        ds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--baseline-only",
        "--epochs",
        "30",
        "--seeds",
        "3",
        "--backbone",
        "sgc",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(!stdout.contains("transitivity"), "{stdout}");
    let rows = csv_rows(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[0] == "SGC"));
    assert!(!out_dir.join("transitivity.json").exists());
}
