#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xlab_core::datasets::synthetic_bars;

pub fn xlab<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_xlab"))
        .arg("--quiet")
        .args(args)
        .env_remove("XLAB_DATA_ROOT")
        .output()
        .expect("spawn xlab")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

/// Writes a small `bars` dataset in IDX form plus a registry file naming it.
/// Returns the registry path.
pub fn synthetic_registry(dir: &Path, train: usize, val: usize) -> PathBuf {
    let data = dir.join("bars");
    std::fs::create_dir_all(&data).unwrap();
    synthetic_bars("bars", train, 11).write_idx(&data, "train", true).unwrap();
    synthetic_bars("bars", val, 12).write_idx(&data, "t10k", false).unwrap();
    let reg = dir.join("registry.txt");
    std::fs::write(
        &reg,
        "# name train-images train-labels test-images test-labels\n\
         bars bars/train-images-idx3-ubyte.gz bars/train-labels-idx1-ubyte.gz \
         bars/t10k-images-idx3-ubyte bars/t10k-labels-idx1-ubyte\n",
    )
    .unwrap();
    reg
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Artifacts that must be bit-identical between repeated `extract` runs.
pub const EXTRACT_ARTIFACTS: [&str; 8] = [
    "victim.xlab",
    "stimuli.xstm",
    "responses.xrsp",
    "extracted.xlab",
    "report.json",
    "confusion.csv",
    "classdist.csv",
    "history.csv",
];

/// Small but complete `extract` invocation on the synthetic dataset.
pub fn small_extract_args(registry: &Path, out: &Path) -> Vec<String> {
    [
        "--registry",
        registry.to_str().unwrap(),
        "extract",
        "--dataset",
        "bars",
        "--noise",
        "ising",
        "--protocol",
        "reduced",
        "--count",
        "200",
        "--epochs",
        "2",
        "--victim-epochs",
        "1",
        "--sweeps",
        "5",
        "--betas",
        "0.0,0.3",
        "--out",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Compares the named artifacts of two run directories byte for byte and
/// returns the names that differ.
pub fn differing(a: &Path, b: &Path, names: &[&str]) -> Vec<String> {
    names.iter().filter(|n| read(a.join(n)) != read(b.join(n))).map(|n| n.to_string()).collect()
}
