#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_s2v")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs the binary with `S2V_LOG` silenced.
pub fn s2v<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(bin())
        .args(args)
        .env("S2V_LOG", "off")
        .output()
        .expect("run s2v")
}

/// Runs the binary and fails with its stderr unless it exits with 0.
pub fn s2v_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = s2v(args);
    if !out.status.success() {
        panic!("s2v failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// Outputs compared byte for byte against the stored copies.
pub const GOLDEN_FILES: [&str; 12] = [
    "ingest.txt",
    "vocab.tsv",
    "model/manifest.txt",
    "model/input.vec",
    "index.txt",
    "content.vec",
    "provenance.tsv",
    "match.tsv",
    "metrics.txt",
    "curve.tsv",
    "scores.tsv",
    "plot.tsv",
];

/// Large outputs compared through their SHA-256 digests.
pub const DIGEST_FILES: [&str; 3] = ["sessions.tsv", "model/output.vec", "index.bin"];

/// ingest, vocab, train, elastic build, coldstart-ads, match, eval and
/// export-plot on the bundled fixture, writing everything under `out`.
pub fn run_pipeline(out: &Path) {
    let f = fixtures();
    let o = |name: &str| out.join(name);
    let conf = f.join("pipeline.conf");
    let base = |cmd: &[&str]| {
        let mut args: Vec<std::ffi::OsString> = vec!["--config".into(), conf.clone().into()];
        args.extend(cmd.iter().map(Into::into));
        args
    };
    let path = |p: PathBuf| p.to_string_lossy().into_owned();
    std::fs::create_dir_all(out).unwrap();

    s2v_ok(base(&["ingest", "--events", &path(f.join("events.tsv")), "--out", &path(o("sessions.tsv")), "--report", &path(o("ingest.txt"))]));
    s2v_ok(base(&["vocab", "--sessions", &path(o("sessions.tsv")), "--out", &path(o("vocab.tsv"))]));
    s2v_ok(base(&["train", "--sessions", &path(o("sessions.tsv")), "--vocab", &path(o("vocab.tsv")), "--out-dir", &path(o("model"))]));
    let vectors = path(o("model/input.vec"));
    s2v_ok(base(&["elastic", "build", "--vectors", &vectors, "--out", &path(o("index.bin")), "--dump", &path(o("index.txt"))]));
    s2v_ok(base(&[
        "coldstart-ads",
        "--vectors",
        &vectors,
        "--catalog",
        &path(f.join("catalog.tsv")),
        "--index",
        &path(o("index.bin")),
        "--out",
        &path(o("content.vec")),
        "--provenance",
        &path(o("provenance.tsv")),
    ]));
    s2v_ok(base(&[
        "match",
        "--vectors",
        &vectors,
        "--ads",
        &path(o("content.vec")),
        "--queries",
        &path(f.join("queries.txt")),
        "--index",
        &path(o("index.bin")),
        "--out",
        &path(o("match.tsv")),
    ]));
    let judgments = path(f.join("judgments.tsv"));
    s2v_ok(base(&[
        "eval",
        "--vectors",
        &vectors,
        "--judgments",
        &judgments,
        "--out",
        &path(o("metrics.txt")),
        "--curve",
        &path(o("curve.tsv")),
        "--scores",
        &path(o("scores.tsv")),
    ]));
    s2v_ok(base(&["export-plot", "--vectors", &vectors, "--judgments", &judgments, "--out", &path(o("plot.tsv"))]));
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

fn digest_lines(out: &Path) -> String {
    DIGEST_FILES
        .iter()
        .map(|f| format!("{}  {}\n", sha256_hex(&std::fs::read(out.join(f)).unwrap()), f))
        .collect()
}

/// Copies the pipeline outputs into the golden directory.
pub fn bless(out: &Path) {
    let g = golden_dir();
    for f in GOLDEN_FILES {
        let dest = g.join(f);
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::copy(out.join(f), dest).unwrap();
    }
    std::fs::write(g.join("digests.txt"), digest_lines(out)).unwrap();
}

/// Names of outputs that differ from the golden copies.
pub fn golden_mismatches(out: &Path) -> Vec<String> {
    let g = golden_dir();
    let mut bad: Vec<String> = GOLDEN_FILES
        .iter()
        .filter(|f| std::fs::read(out.join(f)).ok() != std::fs::read(g.join(f)).ok())
        .map(|f| f.to_string())
        .collect();
    if std::fs::read_to_string(g.join("digests.txt")).ok() != Some(digest_lines(out)) {
        bad.push("digests.txt".into());
    }
    bad
}
