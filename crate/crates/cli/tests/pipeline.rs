mod common;

use std::fs;

use aim_core::MergeDelta;
use aim_merge::manifest::{manifest_path, sha256_file, RunManifest};
use aim_merge::profile_io::{self, Profile};
use aim_merge::{calib, tmap};
use common::{aim, assert_close, fixture, json_checkpoint, p, stage};
use tempfile::TempDir;

fn profile_toy(dir: &TempDir, variant: &str, calib_path: &std::path::Path) -> (std::path::PathBuf, common::Run) {
    let base = stage(dir.path(), "toy_base.json");
    let out = dir.path().join(format!("{variant}.json"));
    let run = aim([
        "profile",
        "--spec",
        p(&fixture("toy_spec.json")),
        "--base",
        p(&base),
        "--calib",
        p(calib_path),
        "--variant",
        variant,
        "--out",
        p(&out),
    ]);
    (out, run)
}

#[test]
fn profile_matches_golden() {
    let dir = TempDir::new().unwrap();
    let (out, run) = profile_toy(&dir, "activation", &fixture("toy_calib.csv"));
    assert_eq!(run.code, 0, "{}", run.stderr);

    let Profile::Activation(got) = profile_io::load(&out).unwrap() else {
        panic!("expected an activation profile");
    };
    let want: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("toy_profile_activation.json")).unwrap()).unwrap();
    assert_eq!(got.sample_count, want["sample_count"].as_u64().unwrap() as usize);
    assert_eq!(got.layers.len(), 2);
    for (name, values) in &got.layers {
        let expected: Vec<f64> = serde_json::from_value(want["layers"][name].clone()).unwrap();
        assert_eq!(values.len(), expected.len());
        for (a, b) in values.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{name}: {a} vs {b}");
        }
    }
    assert!(manifest_path(&out).exists());
}

#[test]
fn profile_from_binary_calibration_matches_csv() {
    let dir = TempDir::new().unwrap();
    let samples = calib::parse_csv(&fs::read_to_string(fixture("toy_calib.csv")).unwrap()).unwrap();
    let bin = dir.path().join("calib.bin");
    fs::write(&bin, calib::encode_binary(&samples)).unwrap();
    let (from_bin, r1) = profile_toy(&dir, "activation", &bin);
    let from_csv = dir.path().join("from_csv.json");
    fs::copy(&from_bin, &from_csv).unwrap();
    let (again, r2) = profile_toy(&dir, "activation", &fixture("toy_calib.csv"));
    assert_eq!((r1.code, r2.code), (0, 0));
    assert_eq!(profile_io::load(&from_csv).unwrap(), profile_io::load(&again).unwrap());
}

#[test]
fn missing_calibration_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (_, run) = profile_toy(&dir, "activation", &dir.path().join("absent.csv"));
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("absent.csv"));
}

#[test]
fn sensitivity_on_zero_inputs_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("nobias.json");
    let text = fs::read_to_string(fixture("toy_spec.json"))
        .unwrap()
        .replace("true", "false");
    fs::write(&spec, text).unwrap();
    let mut base = json_checkpoint(&fixture("toy_base.json"));
    base.tensors.remove("l0.bias");
    let base_path = dir.path().join("nobias.tmap");
    tmap::save(&base, &base_path).unwrap();
    let zeros = dir.path().join("zeros.csv");
    fs::write(&zeros, "0,0,0\n0,0,0\n").unwrap();
    let out = dir.path().join("s.json");
    let run = aim([
        "profile",
        "--spec",
        p(&spec),
        "--base",
        p(&base_path),
        "--calib",
        p(&zeros),
        "--variant",
        "sensitivity",
        "--out",
        p(&out),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let Profile::Sensitivity(s) = profile_io::load(&out).unwrap() else {
        panic!("expected a sensitivity profile");
    };
    assert_eq!(s.tensors.len(), 2);
    assert!(s.tensors.values().flat_map(|t| t.data()).all(|&v| v == 0.0));
}

fn merge_args<'a>(
    dir: &'a TempDir,
    method: &'a str,
    extra: &[&'a str],
) -> (Vec<String>, std::path::PathBuf, std::path::PathBuf) {
    let base = stage(dir.path(), "toy_base.json");
    let a = stage(dir.path(), "toy_expert_a.json");
    let b = stage(dir.path(), "toy_expert_b.json");
    let delta = dir.path().join(format!("{method}.delta.tmap"));
    let model = dir.path().join(format!("{method}.model.tmap"));
    let mut args: Vec<String> = [
        "merge",
        "--method",
        method,
        "--base",
        p(&base),
        "--expert",
        p(&a),
        "--expert",
        p(&b),
        "--out-delta",
        p(&delta),
        "--out-model",
        p(&model),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    (args, delta, model)
}

#[test]
fn task_arithmetic_matches_golden() {
    let dir = TempDir::new().unwrap();
    let (args, delta, model) = merge_args(&dir, "task_arithmetic", &["--lambda", "0.75", "--lambda", "0.5"]);
    let run = aim(&args);
    assert_eq!(run.code, 0, "{}", run.stderr);

    let want = json_checkpoint(&fixture("toy_ta_delta.json"));
    assert_close(&tmap::load(&delta).unwrap(), &want, 1e-15);
    let base = json_checkpoint(&fixture("toy_base.json"));
    let expected_model = MergeDelta::from_checkpoint(want).apply_to(&base).unwrap();
    assert_close(&tmap::load(&model).unwrap(), &expected_model, 1e-15);
}

#[test]
fn config_file_and_flags_agree() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("merge.json");
    fs::write(
        &config,
        r#"{"method":"dare_ties","lambdas":[0.75,0.5],"density":0.5,"drop_rate":0.3,"seed":11}"#,
    )
    .unwrap();

    let (mut from_file, d1, _) = merge_args(&dir, "dare_ties", &["--config", p(&config)]);
    // The config file alone must carry the method.
    let pos = from_file.iter().position(|a| a == "--method").unwrap();
    from_file.drain(pos..pos + 2);
    assert_eq!(aim(&from_file).code, 0);
    let bytes_file = fs::read(&d1).unwrap();

    let (flags, d2, _) = merge_args(
        &dir,
        "dare_ties",
        &[
            "--lambda",
            "0.75",
            "0.5",
            "--density",
            "0.5",
            "--drop-rate",
            "0.3",
            "--seed",
            "11",
        ],
    );
    assert_eq!(aim(&flags).code, 0);
    assert_eq!(bytes_file, fs::read(&d2).unwrap());

    // A flag overrides the file.
    let (over, d3, _) = merge_args(&dir, "dare_ties", &["--config", p(&config), "--seed", "12"]);
    assert_eq!(aim(&over).code, 0);
    assert_ne!(bytes_file, fs::read(&d3).unwrap());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("merge.json");
    fs::write(&config, r#"{"method":"ties","dropout":0.3}"#).unwrap();
    let (args, _, _) = merge_args(&dir, "ties", &["--config", p(&config)]);
    assert_eq!(aim(&args).code, 2);
}

#[test]
fn average_with_expert_equal_to_base_returns_base() {
    let dir = TempDir::new().unwrap();
    let base = stage(dir.path(), "toy_base.json");
    let model = dir.path().join("m.tmap");
    let run = aim([
        "merge",
        "--method",
        "average",
        "--base",
        p(&base),
        "--expert",
        p(&base),
        "--out-delta",
        p(&dir.path().join("d.tmap")),
        "--out-model",
        p(&model),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&base).unwrap());
}

#[test]
fn dare_ties_is_deterministic() {
    let hashes = |dir: &TempDir| {
        let (args, delta, model) = merge_args(dir, "dare_ties", &["--seed", "1234"]);
        assert_eq!(aim(&args).code, 0);
        (sha256_file(&delta).unwrap(), sha256_file(&model).unwrap())
    };
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(hashes(&d1), hashes(&d2));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let (args, delta, _) = merge_args(&dir, "dare_ta", &["--seed", "5"]);
    let mut hashes = Vec::new();
    for threads in ["1", "3"] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_aim"))
            .args(&args)
            .env("AIM_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        hashes.push(sha256_file(&delta).unwrap());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn incompatible_experts_are_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let base = stage(dir.path(), "toy_base.json");
    let mut other = json_checkpoint(&fixture("toy_expert_a.json"));
    other.insert("l0.bias", aim_core::Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap());
    let odd = dir.path().join("odd.tmap");
    tmap::save(&other, &odd).unwrap();
    let run = aim([
        "merge",
        "--method",
        "ties",
        "--base",
        p(&base),
        "--expert",
        p(&odd),
        "--out-delta",
        p(&dir.path().join("d.tmap")),
    ]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.contains("l0.bias"));
}

#[test]
fn corrupted_checkpoint_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let base = stage(dir.path(), "toy_base.json");
    let mut bytes = fs::read(&base).unwrap();
    bytes[0] = b'X';
    fs::write(&base, bytes).unwrap();
    let a = stage(dir.path(), "toy_expert_a.json");
    let run = aim([
        "merge",
        "--method",
        "ties",
        "--base",
        p(&base),
        "--expert",
        p(&a),
        "--out-delta",
        p(&dir.path().join("d.tmap")),
    ]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("bad magic"));
}

struct Relaxed {
    dir: TempDir,
    base: std::path::PathBuf,
    delta: std::path::PathBuf,
    model: std::path::PathBuf,
    profile: std::path::PathBuf,
}

fn relax_setup() -> Relaxed {
    let dir = TempDir::new().unwrap();
    let (args, delta, model) = merge_args(&dir, "task_arithmetic", &["--lambda", "0.75", "0.5"]);
    assert_eq!(aim(&args).code, 0);
    let (profile, run) = profile_toy(&dir, "activation", &fixture("toy_calib.csv"));
    assert_eq!(run.code, 0);
    let base = dir.path().join("toy_base.tmap");
    Relaxed {
        dir,
        base,
        delta,
        model,
        profile,
    }
}

fn relax(r: &Relaxed, omega: &str, with_spec: bool) -> (common::Run, std::path::PathBuf) {
    let out = r.dir.path().join(format!("relaxed-{omega}-{with_spec}.tmap"));
    let mut args = vec![
        "relax".to_string(),
        "--base".into(),
        p(&r.base).into(),
        "--delta".into(),
        p(&r.delta).into(),
        "--profile".into(),
        p(&r.profile).into(),
        "--omega".into(),
        omega.into(),
        "--out".into(),
        p(&out).into(),
    ];
    if with_spec {
        args.extend(["--spec".into(), p(&fixture("toy_spec.json")).into()]);
    }
    (aim(&args), out)
}

#[test]
fn relax_matches_golden_with_and_without_spec() {
    let r = relax_setup();
    let want = json_checkpoint(&fixture("toy_relax_activation_0.4.json"));
    for with_spec in [true, false] {
        let (run, out) = relax(&r, "0.4", with_spec);
        assert_eq!(run.code, 0, "{}", run.stderr);
        assert_close(&tmap::load(&out).unwrap(), &want, 1e-12);
    }
}

#[test]
fn relax_omega_one_equals_merged_model() {
    let r = relax_setup();
    let (run, out) = relax(&r, "1.0", true);
    assert_eq!(run.code, 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&r.model).unwrap());
}

#[test]
fn relax_defaults_to_omega_0_4() {
    let r = relax_setup();
    let out = r.dir.path().join("default.tmap");
    let run = aim([
        "relax",
        "--base",
        p(&r.base),
        "--delta",
        p(&r.delta),
        "--profile",
        p(&r.profile),
        "--out",
        p(&out),
    ]);
    assert_eq!(run.code, 0);
    let (_, explicit) = relax(&r, "0.4", false);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&explicit).unwrap());
    let m = RunManifest::load(&manifest_path(&out)).unwrap();
    assert_eq!(m.config["omega"], 0.4);
}

#[test]
fn relax_rejects_out_of_range_omega() {
    let r = relax_setup();
    let (run, out) = relax(&r, "1.5", false);
    assert_eq!(run.code, 2);
    assert!(!out.exists());
}

#[test]
fn relax_with_foreign_profile_is_a_validation_error() {
    let r = relax_setup();
    let foreign = r.dir.path().join("foreign.json");
    fs::write(
        &foreign,
        r#"{"kind":"activation","model_spec_id":"","sample_count":1,"layers":{"l9":[1.0]}}"#,
    )
    .unwrap();
    let out = r.dir.path().join("x.tmap");
    let run = aim([
        "relax",
        "--base",
        p(&r.base),
        "--delta",
        p(&r.delta),
        "--profile",
        p(&foreign),
        "--out",
        p(&out),
    ]);
    assert_eq!(run.code, 3, "{}", run.stderr);

    // Built for the same layer names but a different spec.
    let mut profile = profile_io::load(&r.profile).unwrap();
    if let Profile::Activation(a) = &mut profile {
        a.model_spec_id = "0000000000000000".into();
    }
    profile_io::save(&profile, &foreign).unwrap();
    let run = aim([
        "relax",
        "--base",
        p(&r.base),
        "--delta",
        p(&r.delta),
        "--profile",
        p(&foreign),
        "--spec",
        p(&fixture("toy_spec.json")),
        "--out",
        p(&out),
    ]);
    assert_eq!(run.code, 3, "{}", run.stderr);
}

#[test]
fn sensitivity_relaxation_runs_end_to_end() {
    let r = relax_setup();
    let (profile, run) = profile_toy(&r.dir, "sensitivity", &fixture("toy_calib.csv"));
    assert_eq!(run.code, 0);
    let out = r.dir.path().join("sens.tmap");
    let run = aim([
        "relax",
        "--base",
        p(&r.base),
        "--delta",
        p(&r.delta),
        "--profile",
        p(&profile),
        "--omega",
        "0.0",
        "--out",
        p(&out),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let Profile::Sensitivity(s) = profile_io::load(&profile).unwrap() else {
        unreachable!()
    };
    let base = tmap::load(&r.base).unwrap();
    let delta = tmap::load(&r.delta).unwrap();
    let got = tmap::load(&out).unwrap();
    for (name, g) in &s.tensors {
        for (k, &sv) in g.data().iter().enumerate() {
            let want = base[name.as_str()].data()[k] + (1.0 - sv) * delta[name.as_str()].data()[k];
            assert!((got[name.as_str()].data()[k] - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn rerun_reproduces_outputs_bitwise() {
    let dir = TempDir::new().unwrap();
    let (args, delta, model) = merge_args(&dir, "dare_ties", &["--seed", "99", "--density", "0.4"]);
    assert_eq!(aim(&args).code, 0);
    let before = (fs::read(&delta).unwrap(), fs::read(&model).unwrap());
    let manifest = manifest_path(&delta);
    let m = RunManifest::load(&manifest).unwrap();
    assert_eq!(m.seed, Some(99));
    assert_eq!(m.config["density"], 0.4);
    assert_eq!(m.config["drop_rate"], 0.5);
    assert_eq!(m.outputs[0].sha256, sha256_file(&delta).unwrap());

    fs::remove_file(&delta).unwrap();
    fs::remove_file(&model).unwrap();
    let run = aim(["rerun", "--manifest", p(&manifest)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(before, (fs::read(&delta).unwrap(), fs::read(&model).unwrap()));

    // A changed input blocks the replay.
    let base = dir.path().join("toy_base.tmap");
    let mut c = tmap::load(&base).unwrap();
    c.meta.insert("edited".into(), "yes".into());
    tmap::save(&c, &base).unwrap();
    assert_eq!(aim(["rerun", "--manifest", p(&manifest)]).code, 3);
}

#[test]
fn manifest_has_no_wall_clock() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let text = |dir: &TempDir| {
        let (args, delta, _) = merge_args(dir, "ties", &[]);
        assert_eq!(aim(&args).code, 0);
        fs::read_to_string(manifest_path(&delta))
            .unwrap()
            .replace(p(dir.path()), "<dir>")
    };
    assert_eq!(text(&d1), text(&d2));
}
