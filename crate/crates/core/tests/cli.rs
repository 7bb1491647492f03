// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_layer-painter");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("LAYER_PAINTER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(layers: usize, extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let text: String = (0..24)
            .map(|i| format!("line {i} of the tiny corpus {}\n", "xyz".repeat(i % 4)))
            .collect();
        std::fs::write(dir.path().join("text.txt"), text).unwrap();
        let model = dir.path().join("model.lpw");
        let layers = layers.to_string();
        let mut args = vec![
            "gen-model", "--out", s(&model), "--layers", &layers, "--d-model", "8", "--heads", "2",
            "--d-ff", "16", "--vocab", "256", "--max-seq", "48", "--seed", "3",
        ];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self, sub: &str, out: &str, extra: &[&str]) -> Output {
        let (model, text, out) = (self.path("model.lpw"), self.path("text.txt"), self.path(out));
        let mut args = vec![sub, "--model", s(&model), "--text", s(&text), "--out", s(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn baseline_run_normalizes_to_one() {
    let f = Fixture::new(4, &[]);
    let out = f.cmd("run", "base", &["--variant", "baseline", "--max-items", "12"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&f.path("base/results.csv"));
    assert_eq!(rows[0].last().unwrap(), "normalized_median");
    assert_eq!(rows[1].last().unwrap(), "1.000000");
    assert!(f.path("base/tasks.csv").exists());
    assert_eq!(std::fs::read_to_string(f.path("base/plan.txt")).unwrap(), "[1]\n[2]\n[3]\n[4]\n");
}

#[test]
fn exit_codes_follow_error_class() {
    let f = Fixture::new(32, &[]);
    let plan = f.cmd("run", "o", &["--variant", "skip", "--start-layer", "40"]);
    assert_eq!(code(&plan), 4);
    assert!(String::from_utf8_lossy(&plan.stderr).contains("2N + 1"));
    assert!(!f.path("o/results.csv").exists());

    let usage = f.cmd("run", "o", &["--variant", "skip", "--start-layer", "x"]);
    assert_eq!(code(&usage), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&f.cmd("run", "o", &["--variant", "baseline", "--workers", "0"])), 2);

    let missing = run(&["run", "--model", "/nonexistent.lpw", "--text", s(&f.path("text.txt")),
        "--out", s(&f.path("o")), "--variant", "baseline"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn corpus_vocabulary_must_fit_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.lpw");
    let out = run(&["gen-model", "--out", s(&model), "--layers", "3", "--d-model", "8", "--heads", "2",
        "--d-ff", "8", "--vocab", "64"]);
    assert_eq!(code(&out), 0);
    std::fs::write(dir.path().join("t.txt"), "hello\n").unwrap();
    let out = run(&["run", "--model", s(&model), "--text", s(&dir.path().join("t.txt")),
        "--out", s(&dir.path().join("o")), "--variant", "baseline"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn single_layer_parallel_block_scores_like_baseline() {
    let f = Fixture::new(32, &[]);
    let out = f.cmd("sweep", "sw", &[
        "--variants", "parallel,random_order,middle_repeat", "--start-layers", "15",
        "--seeds", "2", "--max-items", "6",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&f.path("sw/sweep.csv"));
    let header = &rows[0];
    let first_task = header.iter().position(|h| h == "depth").unwrap() + 1;
    let last = header.len() - 1;
    assert_eq!(rows.len(), 5);
    for row in &rows[2..] {
        assert_eq!(row[1], "15");
        assert_eq!(row[first_task..last], rows[1][first_task..last], "{}", row[0]);
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let f = Fixture::new(8, &[]);
    let sweep = ["--variants", "skip,reverse,random_order,parallel,looped_parallel,skip_single",
        "--iterations", "2,3", "--seeds", "3", "--max-items", "8"];
    for (sub, extra) in [
        ("sweep", &sweep[..]),
        ("similarity", &["--samples", "10"][..]),
        ("run", &["--variant", "random_order", "--start-layer", "2", "--seeds", "3"][..]),
    ] {
        let a = f.cmd(sub, &format!("{sub}_a"), extra);
        assert_eq!(code(&a), 0, "{sub}: {}", String::from_utf8_lossy(&a.stderr));
        let b = f.cmd(sub, &format!("{sub}_b"), extra);
        assert_eq!(a.stdout.len(), b.stdout.len());
        let (sa, sb) = (snapshot(&f.path(&format!("{sub}_a"))), snapshot(&f.path(&format!("{sub}_b"))));
        assert!(!sa.is_empty());
        assert_eq!(sa, sb, "{sub}");
    }
    let names: Vec<String> = snapshot(&f.path("sweep_a")).into_iter().map(|(n, _)| n).collect();
    for expected in ["sweep.csv", "comparison.svg", "best_iterations.csv", "task_cloze.svg"] {
        assert!(names.iter().any(|n| n == expected), "{expected} in {names:?}");
    }
}

#[test]
fn zero_layer_model_has_uniform_similarity() {
    let f = Fixture::new(5, &["--zero-layers"]);
    let out = f.cmd("similarity", "sim", &["--samples", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&f.path("sim/similarity.csv"));
    let values: Vec<&String> = rows.iter().flatten().filter(|v| v.contains('.')).collect();
    assert_eq!(values.len(), 25);
    assert!(values.iter().all(|v| *v == "1.000000"));
    let svg = std::fs::read_to_string(f.path("sim/similarity.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn info_reports_plan_shape() {
    let out = run(&["info", "--layers", "32", "--variant", "parallel", "--start-layer", "8"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("depth: 18"), "{text}");
    assert!(text.contains("M = 15"));
    assert!(text.contains("mean{9,10,11,12,13,14,15,16,17,18,19,20,21,22,23}"));
}
