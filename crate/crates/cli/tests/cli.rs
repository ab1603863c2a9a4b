use std::path::Path;
use std::process::{Command, Output};

use mstnet::data::write_synthetic_dataset;

fn mstnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mstnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn missing_config_exits_with_usage_status() {
    let out = mstnet(&["eval", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.cfg"));
}

#[test]
fn unknown_key_exits_with_usage_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "model.preset = tiny\n");
    let out = mstnet(&["diag", "--config", &cfg, "--set", "model.hmu_grops=4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hmu_grops"));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    write_synthetic_dataset(&root, 3, 32, 5).unwrap();
    let gt = root.join("GT");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "eval.pred_dir = {g}\neval.gt_dir = {g}\neval.output_dir = {o}\n",
            g = gt.display(),
            o = tmp.path().join("metrics").display()
        ),
    );
    let out = mstnet(&["eval", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("images 3"), "{line}");
    assert!(line.contains("MAE 0.0000"), "{line}");
    assert!(line.contains("S 1.0000"), "{line}");
    assert!(tmp.path().join("metrics/metrics.json").exists());
}

#[test]
fn train_then_infer_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    write_synthetic_dataset(&root, 4, 32, 9).unwrap();
    let run = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "model.preset = tiny\ntrain.main_scale = 32\ntrain.epochs = 1\ntrain.batch_size = 2\n\
             data.train_roots = {r}\ndata.test_root = {r}\nrun.output_dir = {o}\ninfer.output_dir = {p}\n",
            r = root.display(),
            o = run.display(),
            p = tmp.path().join("pred").display()
        ),
    );
    let out = mstnet(&["train", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("last.ckpt");
    assert!(ckpt.exists());

    let out = mstnet(&["infer", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(tmp.path().join("pred")).unwrap().count(), 4);

    let out = mstnet(&["infer", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--set", "model.hmu_groups=2"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        let cfg = mstnet::config::RunConfig::from_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
