use std::path::Path;

use mstnet::app;
use mstnet::checkpoint::{CheckpointRecord, EntryKind};
use mstnet::config::{ModelConfig, RunConfig};
use mstnet::data::write_synthetic_dataset;
use mstnet::model::Model;
use mstnet::train::Sgd;
use mstnet::Error;

fn tiny_run(root: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(&format!(
        "model.preset = tiny\ntrain.main_scale = 32\ntrain.epochs = 2\ntrain.batch_size = 2\ntrain.parallel_loading = false\n\
         data.train_roots = {root}\ndata.test_root = {root}\nrun.output_dir = {out}\n",
        root = root.display(),
        out = out.display()
    ))
    .unwrap();
    cfg
}

#[test]
fn empty_record_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = CheckpointRecord::empty(&RunConfig::default().fingerprint(), 0).unwrap();
    let p = tmp.path().join("empty.ckpt");
    rec.save(&p).unwrap();
    assert_eq!(CheckpointRecord::load(&p).unwrap(), rec);
}

#[test]
fn parameters_round_trip_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
    let model = Model::<f32>::new(&cfg.model, 42).unwrap();
    let rec = CheckpointRecord::capture(&model, &Sgd::new(0.9, 5e-4), 7, &cfg.fingerprint()).unwrap();
    let p = tmp.path().join("m.ckpt");
    rec.save(&p).unwrap();
    let back = CheckpointRecord::load(&p).unwrap();
    assert_eq!(back, rec);
    assert_eq!(back.epoch, 7);

    let mut fresh = Model::<f32>::new(&cfg.model, 1).unwrap();
    back.restore(&mut fresh, &cfg.fingerprint()).unwrap();
    for ((_, a), (_, b)) in model.store.entries().zip(fresh.store.entries()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &mstnet::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
}

#[test]
fn corruption_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
    let model = Model::<f32>::new(&cfg.model, 0).unwrap();
    let mut bytes = CheckpointRecord::capture(&model, &Sgd::new(0.9, 0.0), 1, &cfg.fingerprint()).unwrap().to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(CheckpointRecord::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    assert!(matches!(CheckpointRecord::from_bytes(&bytes[..10]), Err(Error::Checkpoint(_))));
    let p = tmp.path().join("bad.ckpt");
    std::fs::write(&p, b"MSTNCKPT garbage").unwrap();
    assert!(CheckpointRecord::load(&p).is_err());
}

#[test]
fn changed_group_count_is_refused() {
    let mut cfg = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
    cfg.model.hmu_groups = 6;
    let model = Model::<f32>::new(&cfg.model, 0).unwrap();
    let rec = CheckpointRecord::capture(&model, &Sgd::new(0.9, 0.0), 1, &cfg.fingerprint()).unwrap();
    let mut edited = cfg.clone();
    edited.model.hmu_groups = 4;
    let mut other = Model::<f32>::new(&edited.model, 0).unwrap();
    match rec.restore(&mut other, &edited.fingerprint()) {
        Err(Error::FingerprintMismatch { expected, found }) => {
            assert_eq!(expected, edited.fingerprint());
            assert_eq!(found, cfg.fingerprint());
            let msg = Error::FingerprintMismatch { expected: expected.clone(), found: found.clone() }.to_string();
            assert!(msg.contains(&expected) && msg.contains(&found));
        }
        other => panic!("expected a fingerprint refusal, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn train_infer_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_dataset(&data, 4, 48, 1).unwrap();
    let out = tmp.path().join("run");
    let cfg = tiny_run(&data, &out);
    let result = app::run_train(&cfg).unwrap();
    assert_eq!(result.iterations, 4);
    for f in ["epoch001.ckpt", "epoch002.ckpt", "last.ckpt", "loss.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iteration,lr,lambda,bcel,ual,total"));
    assert_eq!(lines.count(), 4);
    let rec = CheckpointRecord::load(&out.join("last.ckpt")).unwrap();
    assert_eq!(rec.epoch, 2);
    assert!(rec.entries.iter().any(|e| e.kind == EntryKind::Momentum));

    // inference over the training images, then evaluation
    let mut infer = cfg.clone();
    infer.paths.checkpoint = Some(out.join("last.ckpt"));
    infer.paths.infer_output = Some(tmp.path().join("pred"));
    infer.paths.dump_dir = Some(tmp.path().join("dump"));
    assert_eq!(app::run_infer(&infer).unwrap(), 4);
    let pred = image::open(tmp.path().join("pred").join("syn000.png")).unwrap();
    assert_eq!((pred.width(), pred.height()), (48, 48));
    assert!(pred.as_luma8().is_some());
    let dumps = std::fs::read_dir(tmp.path().join("dump")).unwrap().count();
    // per image: 5 levels × 3 attention maps + 5 decoder means
    assert_eq!(dumps, 4 * 20);

    let mut eval = infer.clone();
    eval.paths.eval_pred = Some(tmp.path().join("pred"));
    eval.paths.eval_output = Some(tmp.path().join("report"));
    let report = app::run_eval(&eval).unwrap();
    assert_eq!(report.num_images, 4);
    assert!(tmp.path().join("report").join("metrics.json").exists());

    // a checkpoint from another configuration is refused
    let mut wrong = infer.clone();
    wrong.model.hmu_groups = 3;
    assert!(matches!(app::run_infer(&wrong), Err(Error::FingerprintMismatch { .. })));
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_dataset(&data, 4, 40, 2).unwrap();
    let logs: Vec<String> = (0..2)
        .map(|i| {
            let out = tmp.path().join(format!("run{i}"));
            let mut cfg = tiny_run(&data, &out);
            cfg.train.epochs = 1;
            app::run_train(&cfg).unwrap();
            std::fs::read_to_string(out.join("loss.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn trailing_single_sample_batch_is_dropped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic_dataset(&data, 5, 32, 3).unwrap();
    let mut cfg = tiny_run(&data, &tmp.path().join("out"));
    cfg.train.epochs = 1;
    let r = app::run_train(&cfg).unwrap();
    assert_eq!(r.iterations, 2);
    assert!(r.logs.iter().all(|l| l.loss.total.is_finite()));
}

#[test]
fn missing_dataset_root_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run(&tmp.path().join("nowhere"), &tmp.path().join("out"));
    match app::run_train(&cfg) {
        Err(Error::Io { path, .. }) => assert!(path.starts_with(tmp.path().join("nowhere"))),
        other => panic!("expected an I/O error, got {:?}", other.map(|_| ())),
    }
}
