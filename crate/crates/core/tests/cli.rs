mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use vocalfold::cli::PipelineConfig;
use vocalfold::signal::write_wav;

const RATE: f64 = 8000.0;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocalfold")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn vowel_clip(dir: &Path, name: &str) -> std::path::PathBuf {
    let flow = rosenberg_train(RATE, 125.0, 2400, 0.6, 0.12);
    let speech = synth_vowel(&flow, RATE, &VOWEL_A, 0.7);
    let path = dir.join(name);
    write_wav(&path, &speech, 8000).unwrap();
    path
}

#[test]
fn default_config_prints_and_reloads() {
    let o = run(&["--print-default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, PipelineConfig::default());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[optimizer]\nmax_iters = 0\n").unwrap();
    let o = run(&["--config", path_str(&bad), "--print-default-config"]);
    assert_eq!(o.status.code(), Some(0), "printing the default ignores --config");
    let o = run(&["--config", path_str(&bad), "selftest"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["estimate"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.csv");
    std::fs::write(&manifest, "path,speaker_id,label,vowel\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let o = run(&["estimate", "--manifest", path_str(&manifest), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let missing = dir.path().join("nope.csv");
    let o = run(&["estimate", "--manifest", path_str(&missing), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn phase_writes_portraits_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let clip = vowel_clip(dir.path(), "a.wav");
    let prefix = dir.path().join("seg");
    let o = run(&["phase", "--clip", path_str(&clip), "--segment", "3", "--steps", "500", "--out", path_str(&prefix)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["rows"], 501);

    let traj = std::fs::read_to_string(dir.path().join("seg.trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 502);
    for side in ["left", "right"] {
        let portrait = std::fs::read_to_string(dir.path().join(format!("seg.{side}.csv"))).unwrap();
        assert_eq!(portrait.lines().count(), 502);
    }

    let o = run(&["phase", "--clip", path_str(&clip), "--segment", "999", "--out", path_str(&prefix)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_separates_labelled_features() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from(
        "segment_id,speaker_id,vowel,label,alpha,beta,delta,res_energy,res_mean_abs,res_max_abs,converged\n",
    );
    for s in 0..9 {
        let (label, alpha) = if s < 4 { ("positive", 0.6) } else { ("negative", 0.2) };
        for k in 0..5 {
            let jitter = 0.01 * k as f64;
            csv.push_str(&format!(
                "spk{s}/a/{k},spk{s},a,{label},{},{},0.0,{},{},{},true\n",
                alpha + jitter,
                0.3 - jitter,
                1e-3 * (s + 1) as f64,
                0.01,
                0.02
            ));
        }
    }
    let features = dir.path().join("features.csv");
    std::fs::write(&features, csv).unwrap();
    let report = dir.path().join("eval.json");
    let o = run(&["eval", "--features", path_str(&features), "--out", path_str(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mean_auc"], 1.0);
    assert_eq!(json["folds"].as_array().unwrap().len(), 3);

    let o = run(&["eval", "--features", path_str(&features), "--vowel", "i"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("leaves no segments"));
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
