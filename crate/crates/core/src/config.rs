//! Run configuration: model and training hyper-parameters, data and output
//! locations, and the flat `key = value` file format used by the CLI.
//!
//! Every field is addressable by a dotted key (`model.hmu_groups`,
//! `train.base_lr`, ...). Unknown keys and malformed values are hard errors.

use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::objective::{ScheduleKind, ScheduleSpec, UalForm, UalSpec};
use crate::{Error, Result};

/// Environment variable that replaces `data.train_roots` / `data.test_root`
/// with a single dataset root.
pub const DATA_ROOT_ENV: &str = "MSTNET_DATA_ROOT";

/// Input scale relative to the main scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scale {
    Half,
    Main,
    OneAndHalf,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Half, Scale::Main, Scale::OneAndHalf];

    pub fn factor(self) -> f64 {
        match self {
            Scale::Half => 0.5,
            Scale::Main => 1.0,
            Scale::OneAndHalf => 1.5,
        }
    }

    /// Side length of this scale for a main-scale side `s`.
    pub fn side(self, s: usize) -> usize {
        match self {
            Scale::Half => s / 2,
            Scale::Main => s,
            Scale::OneAndHalf => s * 3 / 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "0.5" | ".5" => Ok(Scale::Half),
            "1" | "1.0" => Ok(Scale::Main),
            "1.5" => Ok(Scale::OneAndHalf),
            other => Err(Error::Config(format!("unknown scale '{other}' (expected 0.5, 1.0 or 1.5)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.factor())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    ResNet50,
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeStrategy {
    Siu,
    Addition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderUnit {
    Hmu,
    CbrBaseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub pretrained: bool,
    pub pretrained_path: Option<PathBuf>,
    pub base_channels: usize,
    pub hmu_groups: usize,
    pub hmu_group_channels: usize,
    /// Sorted, deduplicated, always contains [`Scale::Main`].
    pub scale_set: Vec<Scale>,
    pub merge_strategy: MergeStrategy,
    pub decoder_unit: DecoderUnit,
    pub fu_repeat: usize,
    pub last_cbr_repeat: usize,
    pub decoder_kernel_size: usize,
    pub head_mid_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::ResNet50,
            pretrained: false,
            pretrained_path: None,
            base_channels: 64,
            hmu_groups: 6,
            hmu_group_channels: 32,
            scale_set: Scale::ALL.to_vec(),
            merge_strategy: MergeStrategy::Siu,
            decoder_unit: DecoderUnit::Hmu,
            fu_repeat: 1,
            last_cbr_repeat: 1,
            decoder_kernel_size: 3,
            head_mid_channels: 32,
        }
    }
}

impl ModelConfig {
    /// The full mixed-scale model with a ResNet-50 encoder.
    pub fn full() -> Self {
        Self::default()
    }

    /// Encoder/decoder baseline: CBR fusion units, main scale only.
    pub fn baseline() -> Self {
        ModelConfig { decoder_unit: DecoderUnit::CbrBaseline, scale_set: vec![Scale::Main], ..Self::default() }
    }

    /// The widened baseline: 128 channels, three CBR units per level, 5×5
    /// decoder kernels.
    pub fn extended_baseline() -> Self {
        ModelConfig {
            base_channels: 128,
            fu_repeat: 3,
            last_cbr_repeat: 3,
            decoder_kernel_size: 5,
            merge_strategy: MergeStrategy::Addition,
            ..Self::baseline()
        }
    }

    /// Desk-scale model for CPU tests: tiny backbone and narrow decoder.
    pub fn tiny() -> Self {
        ModelConfig {
            backbone: Backbone::Tiny,
            base_channels: 16,
            hmu_groups: 4,
            hmu_group_channels: 8,
            head_mid_channels: 8,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "baseline" => Ok(Self::baseline()),
            "extended" => Ok(Self::extended_baseline()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn has_scale(&self, s: Scale) -> bool {
        self.scale_set.contains(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.base_channels == 0 || self.hmu_group_channels == 0 || self.head_mid_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.hmu_groups < 2 {
            return bad("model.hmu_groups must be at least 2");
        }
        if self.fu_repeat == 0 || self.last_cbr_repeat == 0 {
            return bad("model.fu_repeat and model.last_cbr_repeat must be positive");
        }
        if self.decoder_kernel_size % 2 == 0 {
            return bad("model.decoder_kernel_size must be odd");
        }
        if !self.has_scale(Scale::Main) {
            return bad("model.scale_set must contain the main scale 1.0");
        }
        if self.pretrained && self.backbone != Backbone::ResNet50 {
            return bad("pretrained weights are only available for the resnet50 backbone");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub hflip: bool,
    pub rotate: bool,
    /// Rotation angles are drawn uniformly from `[-max, max]` degrees.
    pub rotate_max_deg: f64,
    /// Probability of each augmentation being applied to a sample.
    pub probability: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation { hflip: true, rotate: true, rotate_max_deg: 15.0, probability: 0.5 }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Augmentation { hflip: false, rotate: false, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub main_scale: usize,
    pub augmentation: Augmentation,
    pub seed: u64,
    pub ual: UalSpec,
    pub lambda_schedule: ScheduleSpec,
    /// Data-loading parallelism; `false` loads samples sequentially.
    pub parallel_loading: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0005,
            warmup_fraction: 0.05,
            epochs: 40,
            batch_size: 8,
            main_scale: 384,
            augmentation: Augmentation::default(),
            seed: 0,
            ual: UalSpec::default(),
            lambda_schedule: ScheduleSpec::default(),
            parallel_loading: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_lr <= 0.0 {
            return bad(format!("train.base_lr must be positive, got {}", self.base_lr));
        }
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("train.batch_size must be at least 2 for batch statistics, got {}", self.batch_size));
        }
        if self.main_scale == 0 || self.main_scale % 32 != 0 {
            return bad(format!("train.main_scale must be a positive multiple of 32, got {}", self.main_scale));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("train.warmup_fraction must lie in [0, 1)".into());
        }
        self.ual.validate()?;
        self.lambda_schedule.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistogramBand {
    Full,
    /// Bins 20..=245 only.
    Trimmed,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub train_roots: Vec<PathBuf>,
    pub test_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub infer_input: Option<PathBuf>,
    pub infer_output: Option<PathBuf>,
    pub dump_dir: Option<PathBuf>,
    pub eval_pred: Option<PathBuf>,
    pub eval_gt: Option<PathBuf>,
    pub eval_output: Option<PathBuf>,
    pub diag_output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub histogram_band: HistogramBand,
    pub gradcheck_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
            histogram_band: HistogramBand::Full,
            gradcheck_eps: 1e-6,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}' as a number")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one dotted key. `model.preset` replaces every model field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let p = &mut self.paths;
        match key.trim() {
            "model.preset" => *m = ModelConfig::preset(v)?,
            "model.backbone" => {
                m.backbone = match v {
                    "resnet50" => Backbone::ResNet50,
                    "tiny" => Backbone::Tiny,
                    _ => return Err(Error::Config(format!("model.backbone: unknown backbone '{v}'"))),
                }
            }
            "model.pretrained" => m.pretrained = parse_bool(key, v)?,
            "model.pretrained_path" => m.pretrained_path = opt_path(v),
            "model.base_channels" => m.base_channels = parse_num(key, v)?,
            "model.hmu_groups" => m.hmu_groups = parse_num(key, v)?,
            "model.hmu_group_channels" => m.hmu_group_channels = parse_num(key, v)?,
            "model.scale_set" => {
                let mut s = v.split(',').map(Scale::parse).collect::<Result<Vec<_>>>()?;
                s.sort();
                s.dedup();
                m.scale_set = s;
            }
            "model.merge_strategy" => {
                m.merge_strategy = match v {
                    "siu" => MergeStrategy::Siu,
                    "addition" => MergeStrategy::Addition,
                    _ => return Err(Error::Config(format!("model.merge_strategy: unknown strategy '{v}'"))),
                }
            }
            "model.decoder_unit" => {
                m.decoder_unit = match v {
                    "hmu" => DecoderUnit::Hmu,
                    "cbr_baseline" => DecoderUnit::CbrBaseline,
                    _ => return Err(Error::Config(format!("model.decoder_unit: unknown unit '{v}'"))),
                }
            }
            "model.fu_repeat" => m.fu_repeat = parse_num(key, v)?,
            "model.last_cbr_repeat" => m.last_cbr_repeat = parse_num(key, v)?,
            "model.decoder_kernel_size" => m.decoder_kernel_size = parse_num(key, v)?,
            "model.head_mid_channels" => m.head_mid_channels = parse_num(key, v)?,

            "train.base_lr" => t.base_lr = parse_num(key, v)?,
            "train.momentum" => t.momentum = parse_num(key, v)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "train.warmup_fraction" => t.warmup_fraction = parse_num(key, v)?,
            "train.epochs" => t.epochs = parse_num(key, v)?,
            "train.batch_size" => t.batch_size = parse_num(key, v)?,
            "train.main_scale" => t.main_scale = parse_num(key, v)?,
            "train.hflip" => t.augmentation.hflip = parse_bool(key, v)?,
            "train.rotate" => t.augmentation.rotate = parse_bool(key, v)?,
            "train.rotate_max_deg" => t.augmentation.rotate_max_deg = parse_num(key, v)?,
            "train.augment_probability" => t.augmentation.probability = parse_num(key, v)?,
            "train.seed" => t.seed = parse_num(key, v)?,
            "train.parallel_loading" => t.parallel_loading = parse_bool(key, v)?,
            "train.ual_form" => t.ual.form = UalForm::parse(v)?,
            "train.ual_alpha" => t.ual.alpha = parse_num(key, v)?,
            "train.lambda_schedule" => {
                t.lambda_schedule.kind = match v {
                    "cosine" => ScheduleKind::Cosine,
                    "linear" => ScheduleKind::Linear { t_start: 0.0, t_end: 1.0 },
                    "constant" => ScheduleKind::Constant { value: 1.0 },
                    _ => return Err(Error::Config(format!("train.lambda_schedule: unknown schedule '{v}'"))),
                }
            }
            "train.lambda_min" => t.lambda_schedule.lambda_min = parse_num(key, v)?,
            "train.lambda_max" => t.lambda_schedule.lambda_max = parse_num(key, v)?,
            "train.lambda_t_start" | "train.lambda_t_end" | "train.lambda_const" => {
                let x: f64 = parse_num(key, v)?;
                match (&mut t.lambda_schedule.kind, key.trim()) {
                    (ScheduleKind::Linear { t_start, .. }, "train.lambda_t_start") => *t_start = x,
                    (ScheduleKind::Linear { t_end, .. }, "train.lambda_t_end") => *t_end = x,
                    (ScheduleKind::Constant { value }, "train.lambda_const") => *value = x,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key} does not apply to the current lambda schedule (set train.lambda_schedule first)"
                        )))
                    }
                }
            }

            "data.train_roots" => {
                p.train_roots = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "data.test_root" => p.test_root = opt_path(v),
            "run.output_dir" => p.output_dir = opt_path(v),
            "run.checkpoint" => p.checkpoint = opt_path(v),
            "infer.input_dir" => p.infer_input = opt_path(v),
            "infer.output_dir" => p.infer_output = opt_path(v),
            "infer.dump_dir" => p.dump_dir = opt_path(v),
            "eval.pred_dir" => p.eval_pred = opt_path(v),
            "eval.gt_dir" => p.eval_gt = opt_path(v),
            "eval.output_dir" => p.eval_output = opt_path(v),
            "eval.histogram_band" => {
                self.histogram_band = match v {
                    "full" => HistogramBand::Full,
                    "trimmed" => HistogramBand::Trimmed,
                    _ => return Err(Error::Config(format!("eval.histogram_band: expected full|trimmed, got '{v}'"))),
                }
            }
            "diag.output" => p.diag_output = opt_path(v),
            "diag.gradcheck_eps" => self.gradcheck_eps = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{raw}'", no + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` override strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not of the form key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Replaces dataset roots with `$MSTNET_DATA_ROOT` when it is set.
    pub fn apply_env(&mut self) {
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            if !root.is_empty() {
                self.paths.train_roots = vec![PathBuf::from(&root)];
                self.paths.test_root = Some(PathBuf::from(root));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Canonical `key = value` listing of the model and training settings.
    pub fn canonical_lines(&self) -> Vec<String> {
        let m = &self.model;
        let t = &self.train;
        let scales: Vec<String> = m.scale_set.iter().map(|s| s.to_string()).collect();
        let mut lines = vec![
            format!("model.backbone = {}", match m.backbone { Backbone::ResNet50 => "resnet50", Backbone::Tiny => "tiny" }),
            format!("model.base_channels = {}", m.base_channels),
            format!("model.hmu_groups = {}", m.hmu_groups),
            format!("model.hmu_group_channels = {}", m.hmu_group_channels),
            format!("model.scale_set = {}", scales.join(",")),
            format!("model.merge_strategy = {}", match m.merge_strategy { MergeStrategy::Siu => "siu", MergeStrategy::Addition => "addition" }),
            format!("model.decoder_unit = {}", match m.decoder_unit { DecoderUnit::Hmu => "hmu", DecoderUnit::CbrBaseline => "cbr_baseline" }),
            format!("model.fu_repeat = {}", m.fu_repeat),
            format!("model.last_cbr_repeat = {}", m.last_cbr_repeat),
            format!("model.decoder_kernel_size = {}", m.decoder_kernel_size),
            format!("model.head_mid_channels = {}", m.head_mid_channels),
            format!("train.base_lr = {}", t.base_lr),
            format!("train.momentum = {}", t.momentum),
            format!("train.weight_decay = {}", t.weight_decay),
            format!("train.warmup_fraction = {}", t.warmup_fraction),
            format!("train.epochs = {}", t.epochs),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.main_scale = {}", t.main_scale),
            format!("train.hflip = {}", t.augmentation.hflip),
            format!("train.rotate = {}", t.augmentation.rotate),
            format!("train.rotate_max_deg = {}", t.augmentation.rotate_max_deg),
            format!("train.augment_probability = {}", t.augmentation.probability),
            format!("train.seed = {}", t.seed),
            format!("train.ual_form = {}", t.ual.form.name()),
            format!("train.ual_alpha = {}", t.ual.alpha),
            format!("train.lambda_schedule = {}", t.lambda_schedule.kind.name()),
            format!("train.lambda_min = {}", t.lambda_schedule.lambda_min),
            format!("train.lambda_max = {}", t.lambda_schedule.lambda_max),
        ];
        match t.lambda_schedule.kind {
            ScheduleKind::Linear { t_start, t_end } => {
                lines.push(format!("train.lambda_t_start = {t_start}"));
                lines.push(format!("train.lambda_t_end = {t_end}"));
            }
            ScheduleKind::Constant { value } => lines.push(format!("train.lambda_const = {value}")),
            ScheduleKind::Cosine => {}
        }
        lines
    }

    /// SHA-256 over the canonical model + training settings, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for line in self.canonical_lines() {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
