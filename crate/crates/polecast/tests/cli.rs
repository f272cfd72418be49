use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polecast::commands::{Decomposition, Manifest};
use polecast::sweep::{SweepConfig, SweepResult};
use polecast_core::featurize::read_dataset_all;
use polecast_core::Waveform;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn polecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polecast")).args(args).env("POLECAST_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = polecast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"
[model]
d_embed = 8
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
d_ff = 16
conv_channels = 4
hidden = 8

[train]
epochs = 2
"#;

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--nets", "3", "--order-min", "5", "--order-max", "5", "--seed", "7", "--out", p(out)]);
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.nets.len(), 3);
    for entry in &manifest.nets {
        assert_eq!(entry.order, 5);
        let text = fs::read_to_string(a.join(&entry.file)).unwrap();
        assert_eq!(text, fs::read_to_string(b.join(&entry.file)).unwrap());
        assert_eq!(text.lines().filter(|l| l.contains(":") && !l.starts_with('*')).count(), 5 + 6);
    }
}

#[test]
fn gen_zero_nets_and_bad_range() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--nets", "0", "--out", p(dir.path())]);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.nets.is_empty());

    let out = polecast(&["gen", "--nets", "1", "--order-min", "10", "--order-max", "2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(polecast(&["gen"]).status.code(), Some(2));
}

#[test]
fn decompose_reference_net_with_check() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("tf.json");
    let out = ok(&["decompose", "--spef", p(&data("reference_net.spef")), "--json-out", p(&json), "--check"]);
    let d: Decomposition = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(d.transfer_function.terms.len(), 5);
    assert!(d.check_error.unwrap() < 1e-8);
    assert!(String::from_utf8_lossy(&out.stderr).contains("reconstruction error"));
}

#[test]
fn decompose_single_rc_and_malformed() {
    let out = ok(&["decompose", "--spef", p(&data("single_rc.spef"))]);
    let d: Decomposition = serde_json::from_slice(&out.stdout).unwrap();
    let term = &d.transfer_function.terms[0];
    assert_eq!(d.transfer_function.terms.len(), 1);
    // R = 1 kΩ, C = 1000 fF.
    assert!((term.pole + 1e9).abs() < 1e9 * 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.spef");
    fs::write(&bad, "*D_NET x 1\n*CONN\n*I D:Y O\n*CAP\n1 x:0 abc\n*END\n").unwrap();
    let out = polecast(&["decompose", "--spef", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));

    let missing = polecast(&["decompose", "--spef", p(&dir.path().join("missing.spef"))]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn simulate_single_rc_step() {
    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = (dir.path().join("w.json"), dir.path().join("w.csv"));
    let spef = data("single_rc.spef");
    ok(&["simulate", "--spef", p(&spef), "--samples", "5", "--t-span", "4e-9", "--out", p(&json), "--csv", p(&csv)]);
    let w = Waveform::from_json(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!((w.samples[1] - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
    assert!((w.samples[1] - 0.632121).abs() < 1e-6);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 6);
}

#[test]
fn simulate_from_tf_matches_spef() {
    let dir = tempfile::tempdir().unwrap();
    let tf = dir.path().join("tf.json");
    let spef = data("reference_net.spef");
    ok(&["decompose", "--spef", p(&spef), "--json-out", p(&tf)]);
    let a = ok(&["simulate", "--spef", p(&spef), "--stim", "ramp:2e-11"]);
    let b = ok(&["simulate", "--tf", p(&tf), "--stim", "ramp:2e-11"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_compare_and_bad_ramp() {
    let spef = data("reference_net.spef");
    let out = ok(&["simulate", "--spef", p(&spef), "--compare", "--csv", "/dev/null"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let dev: f64 = stderr.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(dev < 1e-4, "{stderr}");

    let out = polecast(&["simulate", "--spef", p(&spef), "--stim", "ramp:1e-6", "--t-span", "1e-9"]);
    assert_eq!(out.status.code(), Some(2));
    let out = polecast(&["simulate", "--spef", p(&spef), "--stim", "square"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dataset_counts_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let nets = dir.path().join("nets");
    let ds = dir.path().join("d.jsonl");
    ok(&["gen", "--nets", "10", "--order-min", "2", "--order-max", "8", "--seed", "3", "--out", p(&nets)]);
    let out = ok(&["dataset", "--spef-dir", p(&nets), "--samples-per-net", "4", "--samples", "32", "--out", p(&ds)]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_records"], 40);
    assert_eq!(summary["max_identity_error"], 0.0);
    assert!(summary["norm_stats"]["sigma_t"].as_f64().unwrap() > 0.0);

    let records = read_dataset_all(&ds).unwrap();
    assert_eq!(records.len(), 40);
    for r in &records {
        assert_eq!(r.n_samples(), 32);
        for k in 0..32 {
            let sum = r.base_target.samples[k] + r.correction_target.samples[k];
            assert!((sum - r.target.samples[k]).abs() <= 1e-12);
        }
    }
    let bad = polecast(&["dataset", "--spef-dir", p(&nets), "--stims", "square", "--out", p(&ds)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let nets = dir.path().join("nets");
    let ds = dir.path().join("d.jsonl");
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    ok(&["gen", "--nets", "6", "--order-min", "2", "--order-max", "6", "--seed", "5", "--out", p(&nets)]);
    ok(&["dataset", "--spef-dir", p(&nets), "--samples-per-net", "3", "--samples", "16", "--out", p(&ds)]);

    let reports: Vec<serde_json::Value> = ["a", "b"]
        .iter()
        .map(|name| {
            let ck = dir.path().join(format!("{name}.json"));
            ok(&["train", "--data", p(&ds), "--config", p(&cfg), "--out", p(&ck), "--seed", "11"]);
            let mut r: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{name}.report.json"))).unwrap()).unwrap();
            r.as_object_mut().unwrap().remove("wall_time_s");
            r
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["seed"], 11);

    let report = dir.path().join("eval.json");
    let overlay = dir.path().join("overlay.csv");
    ok(&["eval", "--model", p(&dir.path().join("a.json")), "--data", p(&ds), "--report", p(&report), "--overlay", p(&overlay)]);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(eval["n_records"], 18);
    assert_eq!(eval["records"].as_array().unwrap().len(), 18);
    assert!(eval["rmse"].as_f64().unwrap().is_finite());
    let csv = fs::read_to_string(&overlay).unwrap();
    assert_eq!(csv.lines().count(), 1 + 18 * 16);
    assert!(csv.starts_with("record_id,order,device_id,t,truth,base,prediction\n"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 1.0\n").unwrap();
    let out = polecast(&["train", "--data", p(&ds), "--config", p(&bad), "--out", p(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_rejects_missing_and_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.jsonl");
    fs::write(&ds, "").unwrap();
    let report = dir.path().join("r.json");
    let out = polecast(&["eval", "--model", p(&dir.path().join("none.json")), "--data", p(&ds), "--report", p(&report)]);
    assert_eq!(out.status.code(), Some(3));
    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, "{\"format\": \"something-else\"}").unwrap();
    let out = polecast(&["eval", "--model", p(&corrupt), "--data", p(&ds), "--report", p(&report)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_small_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let mut sweep = SweepConfig {
        per_net: 2,
        min_steps: 2,
        n_samples: 16,
        model: neuralcast::ModelConfig { seq_len: 16, target_len: 16, ..neuralcast::ModelConfig::tiny() },
        ..SweepConfig::default()
    };
    sweep.train.epochs = 2;
    fs::write(&cfg, serde_json::to_string(&sweep).unwrap()).unwrap();

    let runs: Vec<SweepResult> = ["a", "b"]
        .iter()
        .map(|name| {
            let csv = dir.path().join(format!("{name}.csv"));
            ok(&["sweep", "--n-list", "2,5", "--config", p(&cfg), "--out", p(&csv), "--seed", "4"]);
            assert!(fs::read_to_string(csv.with_extension("svg")).unwrap().contains("<polyline"));
            SweepResult::from_csv(&fs::read_to_string(&csv).unwrap()).unwrap()
        })
        .collect();
    assert_eq!(runs[0].rows.len(), 2);
    for (a, b) in runs[0].rows.iter().zip(&runs[1].rows) {
        assert_eq!(a.val_rmse.to_bits(), b.val_rmse.to_bits());
        assert!(a.train_time_s >= 0.0);
    }
    assert_eq!(runs[0].to_svg(), runs[1].to_svg());

    let out = polecast(&["sweep", "--n-list", "5,2", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}
