#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sckls"))
}

/// Runs the binary, returning (exit code, stdout, stderr).
pub fn run(args: &[&str]) -> (i32, String, String) {
    let out: Output = bin().args(args).output().expect("spawn sckls");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn run_ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = run(args);
    assert_eq!(code, 0, "sckls {args:?} failed: {stderr}");
    stdout
}

pub fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus").join(name)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a data file with header x1..xd,y; values in shortest round-trip form.
pub fn write_xy(path: &Path, x: &[Vec<f64>], y: &[f64]) {
    let d = x[0].len();
    let mut s: String = (1..=d).map(|k| format!("x{k},")).collect();
    s.push_str("y\n");
    for (r, v) in x.iter().zip(y) {
        for c in r {
            s.push_str(&format!("{c:?},"));
        }
        s.push_str(&format!("{v:?}\n"));
    }
    std::fs::write(path, s).unwrap();
}

pub fn write_points(path: &Path, x: &[Vec<f64>]) {
    let d = x[0].len();
    let mut s = (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in x {
        s.push_str(&r.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

pub fn uniform_points(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

/// Parses the `prediction` column of a predictions CSV, keeping the text.
pub fn prediction_column(csv: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let k = header.iter().position(|h| *h == "prediction").expect("prediction column");
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}
