//! End-to-end runs of the `vforecast` binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vforecast::harness::{EvalReport, ExperimentConfig, Method};
use vforecast::nets::VisualAeConfig;
use vforecast::raster::RenderSpec;
use vforecast::series::SplitCounts;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vforecast"));
    c.env("VFORECAST_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Harmonic profile shrunk to 8×8 images and a handful of series.
fn small_config(dir: &Path, counts: SplitCounts) -> PathBuf {
    let mut cfg = ExperimentConfig::desk("harmonic").unwrap();
    cfg.out_dir = dir.join("run");
    cfg.dataset.counts = counts;
    cfg.render = RenderSpec {
        width: 8,
        height: 8,
        ..RenderSpec::default()
    };
    cfg.visual = VisualAeConfig::tiny();
    cfg.train.max_epochs = Some(3);
    cfg.train.batch_size = Some(8);
    cfg.eval.model_seeds = vec![0];
    let path = dir.join("exp.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_requested_counts_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["gen", "--data-seed", "7", "--counts", "100,10,20", "--out", s(&out)]);
        outs.push(out.join("data"));
    }
    for (file, rows) in [("train.csv", 100), ("validation.csv", 10), ("test.csv", 20)] {
        let a = fs::read(outs[0].join(file)).unwrap();
        assert_eq!(a, fs::read(outs[1].join(file)).unwrap(), "{file} differs");
        assert_eq!(a.iter().filter(|b| **b == b'\n').count(), rows);
    }
    assert_eq!(
        fs::read(outs[0].join("manifest.json")).unwrap(),
        fs::read(outs[1].join("manifest.json")).unwrap()
    );
}

#[test]
fn ou_manifest_records_parameter_priors() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--profile", "desk-ou", "--counts", "2,1,1", "--out", s(dir.path())]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    let g = &m["generator"];
    assert_eq!(g["kind"], "ou");
    assert_eq!(g["gamma"]["normal"]["mean"].as_f64(), Some(8e-8));
    assert_eq!(g["gamma"]["normal"]["std"].as_f64(), Some(4e-8));
    assert_eq!(g["sigma"]["normal"]["mean"].as_f64(), Some(1e-2));
    assert_eq!(g["sigma"]["normal"]["std"].as_f64(), Some(5e-3));
}

#[test]
fn train_eval_report_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        SplitCounts {
            train: 24,
            validation: 8,
            test: 12,
        },
    );
    let cfg_s = s(&cfg);
    let run_dir = dir.path().join("run");

    ok(&["train", "-c", cfg_s, "--seed", "0"]);
    let ckpt = run_dir.join("models/visualae-seed0.ckpt");
    let hist = run_dir.join("models/visualae-seed0.history.csv");
    let first = (fs::read(&ckpt).unwrap(), fs::read(&hist).unwrap());
    ok(&["train", "-c", cfg_s, "--seed", "0"]);
    assert_eq!(fs::read(&ckpt).unwrap(), first.0, "checkpoint not reproducible");
    assert_eq!(fs::read(&hist).unwrap(), first.1, "history not reproducible");
    let hist_text = String::from_utf8(first.1).unwrap();
    assert!(hist_text.starts_with("epoch,train_loss,val_loss,lr\n"));
    assert_eq!(hist_text.lines().count(), 4);

    for m in ["visual", "rw", "control"] {
        ok(&["eval", "-c", cfg_s, "--method", m]);
    }
    let reports: Vec<PathBuf> = ["visualae", "randomwalk", "control"]
        .iter()
        .map(|m| run_dir.join(format!("reports/{m}.json")))
        .collect();
    let control = EvalReport::read_json(&reports[2]).unwrap();
    assert_eq!(control.pooled.pred_iou.mean, 1.0);
    assert_eq!(control.pooled.pred_jsd.mean, 0.0);
    let rw = EvalReport::read_json(&reports[1]).unwrap();
    assert!(rw.pooled.pred_iou.mean < 1.0);
    let visual = EvalReport::read_json(&reports[0]).unwrap();
    assert_eq!(visual.per_seed.len(), 1);
    assert_eq!(visual.per_seed[0].seed, Some(0));
    let profile = fs::read_to_string(run_dir.join("reports/visualae.profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 1 + 8);

    let table_dir = dir.path().join("table");
    let mut args = vec!["report", "--out", s(&table_dir)];
    args.extend(reports.iter().map(|p| s(p)));
    let table = ok(&args);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains("Control"), "control should rank first:\n{table}");
    let curves = fs::read_to_string(table_dir.join("profile.csv")).unwrap();
    // prediction region of an 8-wide image at c = 0.75 is columns 6 and 7
    assert_eq!(curves.lines().count(), 1 + 2);
    assert!(curves.lines().nth(2).unwrap().starts_with("1,"));

    let images = dir.path().join("pred");
    let line = ok(&["predict", "-c", cfg_s, "--index", "3", "--checkpoint", s(&ckpt), "--images", s(&images)]);
    assert!(line.contains("IoU pred"));
    for f in ["input.pgm", "truth.pgm", "forecast.pgm"] {
        assert!(fs::read(images.join(f)).unwrap().starts_with(b"P5"));
    }
}

#[test]
fn report_refuses_mixed_settings_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let counts = SplitCounts {
        train: 2,
        validation: 1,
        test: 6,
    };
    let cfg = small_config(dir.path(), counts);
    ok(&["eval", "-c", s(&cfg), "--method", "control"]);
    let a = dir.path().join("a.json");
    fs::rename(dir.path().join("run/reports/control.json"), &a).unwrap();
    ok(&["eval", "-c", s(&cfg), "--method", "control", "--data-seed", "5"]);
    let b = dir.path().join("run/reports/control.json");

    let out = run(&["report", s(&a), s(&b)]);
    assert_eq!(code(&out), 1);
    ok(&["report", "--force", s(&a), s(&b)]);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    // config errors
    assert_eq!(code(&run(&["gen", "--overlap", "0.7", "--out", s(dir.path())])), 1);
    assert_eq!(code(&run(&["gen", "-c", "/nonexistent/exp.toml"])), 1);
    assert_eq!(code(&run(&["train", "--method", "rw"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "method = \"visual\"\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&run(&["eval", "-c", s(&bad)])), 1);

    // numeric model needs an input length divisible by 4
    let mut cfg = ExperimentConfig::desk("harmonic").unwrap();
    cfg.method = Method::Numeric;
    cfg.window.input_len = Some(162);
    let odd = dir.path().join("odd.toml");
    fs::write(&odd, cfg.to_toml()).unwrap();
    assert_eq!(code(&run(&["train", "-c", s(&odd)])), 1);

    // data errors
    let csv = dir.path().join("short.csv");
    fs::write(&csv, "1.0\n").unwrap();
    let out = run(&["rasterize", "--input", s(&csv), "--out", s(&dir.path().join("img"))]);
    assert_eq!(code(&out), 2);
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "1.0,abc,3.0\n").unwrap();
    assert_eq!(code(&run(&["wpe", "--input", s(&garbage)])), 2);

    // numeric failure: a diverging learning rate
    let cfg = small_config(
        dir.path(),
        SplitCounts {
            train: 16,
            validation: 4,
            test: 4,
        },
    );
    let out = run(&["train", "-c", s(&cfg), "--method", "numeric", "--lr", "1e30", "--seed", "0"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rasterize_and_wpe_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    fs::write(&csv, "1,3,2,4\n0,1,2,3,4,5\n").unwrap();
    let values = dir.path().join("wpe.csv");
    let text = ok(&["wpe", "--input", s(&csv), "--csv", s(&values)]);
    assert!(text.starts_with("series 2"), "{text}");
    let rows: Vec<f64> = fs::read_to_string(&values)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!((rows[0] - 2f64.ln() / 6f64.ln()).abs() < 1e-12);
    assert_eq!(rows[1], 0.0);

    let out = dir.path().join("img");
    ok(&["rasterize", "--input", s(&csv), "--out", s(&out), "--width", "8", "--height", "8"]);
    let n = fs::read_dir(&out).unwrap().count();
    assert_eq!(n, 2);
}

#[test]
fn thread_cap_must_be_positive() {
    let out = bin()
        .env("VFORECAST_THREADS", "zero")
        .args(["gen", "--counts", "1,1,1", "--out", "/tmp/unused-vf"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
