use mstnet::config::{Backbone, DecoderUnit, HistogramBand, MergeStrategy, ModelConfig, RunConfig, Scale};
use mstnet::objective::{ScheduleKind, UalForm};
use mstnet::Error;

const EXAMPLE: &str = "
# tiny smoke configuration
model.preset = tiny
model.scale_set = 1.0, 0.5      # order does not matter
train.epochs = 3
train.main_scale = 64
train.ual_form = exp
train.ual_alpha = 1.5
train.lambda_schedule = linear
train.lambda_t_start = 0.3
train.lambda_t_end = 0.7
data.train_roots = /data/a, /data/b
eval.histogram_band = trimmed
";

#[test]
fn parses_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.cfg");
    std::fs::write(&path, EXAMPLE).unwrap();
    let cfg = RunConfig::from_file(&path).unwrap();
    assert_eq!(cfg.model.backbone, Backbone::Tiny);
    assert_eq!(cfg.model.scale_set, vec![Scale::Half, Scale::Main]);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.train.ual.form, UalForm::Exp);
    assert_eq!(cfg.train.lambda_schedule.kind, ScheduleKind::Linear { t_start: 0.3, t_end: 0.7 });
    assert_eq!(cfg.paths.train_roots.len(), 2);
    assert_eq!(cfg.histogram_band, HistogramBand::Trimmed);
    cfg.validate().unwrap();
}

#[test]
fn defaults_follow_the_reference_setup() {
    let cfg = RunConfig::default();
    let (m, t) = (&cfg.model, &cfg.train);
    assert_eq!((m.base_channels, m.hmu_groups, m.hmu_group_channels), (64, 6, 32));
    assert_eq!(m.scale_set, Scale::ALL.to_vec());
    assert_eq!((m.merge_strategy, m.decoder_unit), (MergeStrategy::Siu, DecoderUnit::Hmu));
    assert_eq!((m.fu_repeat, m.last_cbr_repeat, m.decoder_kernel_size, m.head_mid_channels), (1, 1, 3, 32));
    assert_eq!((t.base_lr, t.momentum, t.weight_decay), (0.05, 0.9, 0.0005));
    assert_eq!((t.epochs, t.batch_size, t.main_scale), (40, 8, 384));
}

#[test]
fn unknown_keys_and_bad_values_are_hard_errors() {
    let mut cfg = RunConfig::default();
    assert!(matches!(cfg.set("model.hmu_grups", "4"), Err(Error::Config(_))));
    assert!(matches!(cfg.set("model.hmu_groups", "four"), Err(Error::Config(_))));
    assert!(matches!(cfg.set("model.scale_set", "2.0"), Err(Error::Config(_))));
    assert!(matches!(cfg.apply_overrides(&["novalue"]), Err(Error::Config(_))));
    let err = cfg.apply_text("train.epochs = 2\nbogus = 1\n").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    // linear parameters require the linear schedule
    assert!(cfg.set("train.lambda_t_start", "0.2").is_err());
}

#[test]
fn invariants_are_validated() {
    let mut cfg = RunConfig::default();
    cfg.model.scale_set = vec![Scale::Half, Scale::OneAndHalf];
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::default();
    cfg.train.main_scale = 100;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::default();
    cfg.model.hmu_groups = 1;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::default();
    cfg.model.decoder_kernel_size = 4;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::default();
    cfg.train.base_lr = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::default();
    cfg.train.batch_size = 1;
    assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("batch_size")));
}

#[test]
fn every_canonical_key_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.apply_text(EXAMPLE).unwrap();
    let mut again = RunConfig::default();
    for line in cfg.canonical_lines() {
        let (k, v) = line.split_once('=').unwrap();
        again.set(k, v).unwrap();
    }
    assert_eq!(again.model, cfg.model);
    assert_eq!(again.fingerprint(), cfg.fingerprint());
}

#[test]
fn fingerprint_tracks_model_and_training_settings() {
    let base = RunConfig::default();
    let mut other = base.clone();
    other.set("model.hmu_groups", "4").unwrap();
    assert_ne!(base.fingerprint(), other.fingerprint());
    let mut lr = base.clone();
    lr.set("train.base_lr", "0.01").unwrap();
    assert_ne!(base.fingerprint(), lr.fingerprint());
    let mut paths = base.clone();
    paths.set("run.output_dir", "/tmp/elsewhere").unwrap();
    assert_eq!(base.fingerprint(), paths.fingerprint());
    assert_eq!(base.fingerprint().len(), 64);
}

#[test]
fn presets() {
    let b = ModelConfig::baseline();
    assert_eq!(b.scale_set, vec![Scale::Main]);
    assert_eq!(b.decoder_unit, DecoderUnit::CbrBaseline);
    let e = ModelConfig::extended_baseline();
    assert_eq!((e.base_channels, e.fu_repeat, e.last_cbr_repeat, e.decoder_kernel_size), (128, 3, 3, 5));
    assert!(ModelConfig::preset("nope").is_err());
}

#[test]
fn environment_overrides_dataset_roots() {
    let mut cfg = RunConfig::default();
    std::env::set_var("MSTNET_DATA_ROOT", "/env/root");
    cfg.apply_env();
    std::env::remove_var("MSTNET_DATA_ROOT");
    assert_eq!(cfg.paths.train_roots, vec![std::path::PathBuf::from("/env/root")]);
    assert_eq!(cfg.paths.test_root.as_deref(), Some(std::path::Path::new("/env/root")));
}
