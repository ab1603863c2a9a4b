//! The four command-line entry points: `train`, `infer`, `eval` and `diag`.

use std::path::{Path, PathBuf};

use mstnet_tensor::{Float, Tensor};

use crate::checkpoint::CheckpointRecord;
use crate::config::{RunConfig, Scale};
use crate::data::{self, Normalization, SampleSource, TrainSet};
use crate::diagnostics::{self, DiagReport};
use crate::eval::{self, MetricConfig, MetricReport};
use crate::model::pretrained::load_backbone;
use crate::model::Model;
use crate::nn::Ctx;
use crate::train::{self, TrainOutputs, TrainResult};
use crate::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{key} must be set")))
}

/// Builds a model and, when configured, loads pretrained backbone weights.
pub fn fresh_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let mut model = Model::new(&cfg.model, cfg.train.seed)?;
    if cfg.model.pretrained {
        let path = required(&cfg.model.pretrained_path, "model.pretrained_path")?;
        let n = load_backbone(&mut model, path)?;
        log::info!("loaded {n} pretrained backbone tensors from {}", path.display());
    }
    Ok(model)
}

/// Loads the checkpoint named by `run.checkpoint`, refusing it when its
/// fingerprint differs from the configuration's.
pub fn load_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let path = required(&cfg.paths.checkpoint, "run.checkpoint")?;
    let rec = CheckpointRecord::load(path)?;
    let mut model = Model::new(&cfg.model, cfg.train.seed)?;
    rec.restore(&mut model, &cfg.fingerprint())?;
    Ok(model)
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.paths.train_roots.is_empty() {
        return Err(Error::Config("data.train_roots must name at least one dataset".into()));
    }
    let out = required(&cfg.paths.output_dir, "run.output_dir")?;
    let pairs = data::index_roots(&cfg.paths.train_roots)?;
    log::info!("training on {} samples", pairs.len());
    let set = TrainSet {
        sources: pairs.into_iter().map(SampleSource::Files).collect(),
        size: cfg.train.main_scale,
        augmentation: cfg.train.augmentation,
        normalization: Normalization::for_backbone(cfg.model.backbone),
        scale_set: cfg.model.scale_set.clone(),
        seed: cfg.train.seed,
    };
    let mut model = fresh_model(cfg)?;
    train::train(cfg, &set, &mut model, Some(&TrainOutputs { dir: out.to_path_buf() }))
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in rd {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.push((s.to_string(), p.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Min-max scaled 8-bit rendering of one channel.
fn channel_image<T: Float>(t: &Tensor<T>, c: usize) -> image::GrayImage {
    let s = t.shape();
    let plane = &t.data()[c * s.plane()..(c + 1) * s.plane()];
    let v: Vec<f32> = plane.iter().map(|x| x.as_f64() as f32).collect();
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let v: Vec<f32> = v.iter().map(|x| (x - lo) / span).collect();
    data::to_gray_u8(&v, s.h, s.w)
}

fn channel_mean(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    let plane = s.plane();
    Tensor::from_fn(mstnet_tensor::Shape::new(1, 1, s.h, s.w), |i| {
        (0..s.c).map(|c| t.data()[c * plane + i]).sum::<f32>() / s.c as f32
    })
}

fn write_dumps(dir: &Path, stem: &str, probes: &[(String, Tensor<f32>)], scales: &[Scale]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in probes {
        if let Some(level) = name.strip_prefix("merge.").and_then(|n| n.strip_suffix(".attention")) {
            // attention channels follow the configured scale order
            for (c, sc) in scales.iter().enumerate().take(t.shape().c) {
                let img = channel_image(t, c);
                data::write_gray_png(&dir.join(format!("{stem}_{level}_attention_{sc}.png")), &img)?;
            }
        } else if let Some(level) = name.strip_prefix("decoder.") {
            data::write_gray_png(&dir.join(format!("{stem}_{level}_mean.png")), &channel_image(&channel_mean(t), 0))?;
        }
    }
    Ok(())
}

/// Predictions for every image in `input`, at each image's own size.
pub fn predict_dir(model: &Model<f32>, cfg: &RunConfig, input: &Path, dump_dir: Option<&Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let norm = Normalization::for_backbone(cfg.model.backbone);
    let images = list_images(input)?;
    if images.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", input.display())));
    }
    let mut out = Vec::with_capacity(images.len());
    for (stem, path) in images {
        let img = data::read_rgb(&path)?;
        let triplet = data::prepare_input(&img, cfg.train.main_scale, norm, &cfg.model.scale_set);
        let ctx = if dump_dir.is_some() { Ctx::eval(&model.store).with_probes() } else { Ctx::eval(&model.store) };
        let prob = model.net.forward(&ctx, &triplet)?.prob.value().clone();
        if let Some(d) = dump_dir {
            write_dumps(d, &stem, &ctx.take_probes(), &cfg.model.scale_set)?;
        }
        out.push((stem, data::resize_bilinear(&prob, img.height() as usize, img.width() as usize)));
    }
    Ok(out)
}

fn write_predictions(preds: &[(String, Tensor<f32>)], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (stem, p) in preds {
        let s = p.shape();
        data::write_gray_png(&out.join(format!("{stem}.png")), &data::to_gray_u8(p.data(), s.h, s.w))?;
    }
    Ok(())
}

fn infer_input(cfg: &RunConfig) -> Result<PathBuf> {
    match (&cfg.paths.infer_input, &cfg.paths.test_root) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(root)) => Ok(root.join("Image")),
        (None, None) => Err(Error::Config("infer.input_dir or data.test_root must be set".into())),
    }
}

/// Writes one 8-bit map per input image. Returns the number written.
pub fn run_infer(cfg: &RunConfig) -> Result<usize> {
    cfg.validate()?;
    let out = required(&cfg.paths.infer_output, "infer.output_dir")?;
    let model = load_model(cfg)?;
    let preds = predict_dir(&model, cfg, &infer_input(cfg)?, cfg.paths.dump_dir.as_deref())?;
    write_predictions(&preds, out)?;
    Ok(preds.len())
}

/// Evaluates `eval.pred_dir`, or, when it is unset, first predicts the test
/// set with the checkpoint into `<eval.output_dir>/predictions`.
pub fn run_eval(cfg: &RunConfig) -> Result<MetricReport> {
    let out = required(&cfg.paths.eval_output, "eval.output_dir")?;
    let gt = match (&cfg.paths.eval_gt, &cfg.paths.test_root) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => root.join("GT"),
        (None, None) => return Err(Error::Config("eval.gt_dir or data.test_root must be set".into())),
    };
    let pred = match &cfg.paths.eval_pred {
        Some(p) => p.clone(),
        None => {
            cfg.validate()?;
            let model = load_model(cfg)?;
            let dir = out.join("predictions");
            write_predictions(&predict_dir(&model, cfg, &infer_input(cfg)?, None)?, &dir)?;
            dir
        }
    };
    let mcfg = MetricConfig { histogram_band: cfg.histogram_band, ..MetricConfig::default() };
    eval::emit_reports(&pred, &gt, out, &mcfg)
}

/// Runs every diagnostic check and writes the JSON report to `diag.output`
/// (stdout when unset). Polarity is measured when a checkpoint and an
/// inference input are configured.
pub fn run_diag(cfg: &RunConfig) -> Result<DiagReport> {
    cfg.validate()?;
    let preds = match (&cfg.paths.checkpoint, infer_input(cfg)) {
        (Some(_), Ok(input)) => {
            let model = load_model(cfg)?;
            let p = predict_dir(&model, cfg, &input, None)?;
            Some(p.iter().flat_map(|(_, t)| t.data().iter().map(|&v| v as f64)).collect::<Vec<f64>>())
        }
        _ => None,
    };
    let report = diagnostics::run_diagnostics(&cfg.model, cfg.train.main_scale, cfg.gradcheck_eps, preds.as_deref())?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Contract(e.to_string()))? + "\n";
    match &cfg.paths.diag_output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?
        }
        None => print!("{text}"),
    }
    Ok(report)
}
