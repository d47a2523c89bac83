#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use aim_core::{Checkpoint, Tensor};
use aim_merge::tmap;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn aim<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_aim"))
        .args(args)
        .output()
        .expect("spawn aim");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

#[derive(serde::Deserialize)]
struct JsonTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn json_checkpoint(path: &Path) -> Checkpoint {
    let map: BTreeMap<String, JsonTensor> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut c = Checkpoint::new();
    for (name, t) in map {
        c.insert(name, Tensor::new(t.shape, t.values).unwrap());
    }
    c
}

/// Writes a JSON checkpoint fixture as TMAP into `dir`.
pub fn stage(dir: &Path, fixture_name: &str) -> PathBuf {
    let c = json_checkpoint(&fixture(fixture_name));
    let out = dir.join(fixture_name.replace(".json", ".tmap"));
    tmap::save(&c, &out).unwrap();
    out
}

pub fn assert_close(a: &Checkpoint, b: &Checkpoint, tol: f64) {
    assert_eq!(a.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        assert_eq!(ta.shape(), tb.shape(), "{name}");
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert!((x - y).abs() <= tol, "{name}: {x} vs {y}");
        }
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
