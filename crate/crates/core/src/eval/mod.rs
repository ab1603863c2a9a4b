//! Foreground-map evaluation: per-image metrics, dataset aggregation and
//! report files.
//!
//! Report files written by [`emit_reports`]:
//!
//! * `metrics.json`: `{"num_images", "mae", "s_measure", "weighted_f",
//!   "f_measure": {"max", "mean", "adaptive"}, "e_measure": {...},
//!   "degenerate_masks"}`
//! * `pr_curve.csv`: `threshold,precision,recall,fbeta`
//! * `em_curve.csv`: `threshold,em`
//! * `histogram.csv`: `bin,count`

mod metrics;
mod structure;
mod weighted_f;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use mstnet_tensor::{par, Shape, Tensor};
use serde::Serialize;

pub use metrics::{
    adaptive_threshold, confusion, e_measure, enhanced_alignment, f_measure, histogram, mae, polarity_fraction, prf,
    threshold, Confusion, EMeasure, FMeasure, BETA2, NUM_THRESHOLDS,
};
pub use structure::{centroid, s_measure};
pub use weighted_f::{gaussian_kernel, nearest_foreground, weighted_f_measure};

use crate::config::HistogramBand;
use crate::data::{binarize, read_gray, resize_bilinear};
use crate::{Error, Result};

/// A single-channel map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w, "map buffer does not match {h}x{w}");
        Map { h, w, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub s_alpha: f64,
    pub histogram_band: HistogramBand,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { s_alpha: 0.5, histogram_band: HistogramBand::Full }
    }
}

/// All metrics of one prediction/mask pair.
#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub mae: f64,
    pub s_measure: f64,
    pub weighted_f: f64,
    pub degenerate: bool,
    pub f: FMeasure,
    pub e: EMeasure,
    pub histogram: [u64; 256],
}

pub fn image_metrics(p: &Map, g: &Map, cfg: &MetricConfig) -> Result<ImageMetrics> {
    let (weighted_f, degenerate) = weighted_f_measure(p, g)?;
    Ok(ImageMetrics {
        mae: mae(p, g)?,
        s_measure: s_measure(p, g, cfg.s_alpha)?,
        weighted_f,
        degenerate,
        f: f_measure(p, g)?,
        e: e_measure(p, g)?,
        histogram: histogram(p),
    })
}

/// Compensated summation.
fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Summary {
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub num_images: usize,
    pub mae: f64,
    pub s_measure: f64,
    pub weighted_f: f64,
    pub f_measure: Summary,
    pub e_measure: Summary,
    /// Masks without foreground (weighted F counted as 0).
    pub degenerate_masks: usize,
    #[serde(skip)]
    pub precision: Vec<f64>,
    #[serde(skip)]
    pub recall: Vec<f64>,
    #[serde(skip)]
    pub f_curve: Vec<f64>,
    #[serde(skip)]
    pub e_curve: Vec<f64>,
    #[serde(skip)]
    pub histogram: [u64; 256],
}

fn curve_mean(items: &[ImageMetrics], f: impl Fn(&ImageMetrics) -> &[f64]) -> Vec<f64> {
    let n = items.len() as f64;
    (0..NUM_THRESHOLDS).map(|k| sum(items.iter().map(|m| f(m)[k])) / n).collect()
}

/// Dataset means. Curves are averaged per threshold; max and mean are then
/// taken over the averaged curve.
pub fn aggregate(items: &[ImageMetrics]) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Contract("cannot aggregate zero images".into()));
    }
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| sum(items.iter().map(f)) / n;
    let f_curve = curve_mean(items, |m| &m.f.curve);
    let e_curve = curve_mean(items, |m| &m.e.curve);
    let summary = |c: &[f64], adaptive: f64| Summary {
        max: c.iter().copied().fold(0.0, f64::max),
        mean: sum(c.iter().copied()) / c.len() as f64,
        adaptive,
    };
    let mut hist = [0u64; 256];
    for m in items {
        for (h, v) in hist.iter_mut().zip(m.histogram.iter()) {
            *h += v;
        }
    }
    Ok(MetricReport {
        num_images: items.len(),
        mae: mean(&|m| m.mae),
        s_measure: mean(&|m| m.s_measure),
        weighted_f: mean(&|m| m.weighted_f),
        f_measure: summary(&f_curve, mean(&|m| m.f.adaptive)),
        e_measure: summary(&e_curve, mean(&|m| m.e.adaptive)),
        degenerate_masks: items.iter().filter(|m| m.degenerate).count(),
        precision: curve_mean(items, |m| &m.f.precision),
        recall: curve_mean(items, |m| &m.f.recall),
        f_curve,
        e_curve,
        histogram: hist,
    })
}

fn stems_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in rd {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(s.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

fn gray_f64(path: &Path) -> Result<Tensor<f64>> {
    let img = read_gray(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_vec(Shape::new(1, 1, h, w), img.as_raw().iter().map(|&v| v as f64 / 255.0).collect()))
}

/// Loads an 8-bit prediction, resized bilinearly to `(h, w)` when needed.
pub fn load_prediction(path: &Path, h: usize, w: usize) -> Result<Map> {
    let t = gray_f64(path)?;
    let s = t.shape();
    let t = if (s.h, s.w) == (h, w) { t } else { resize_bilinear(&t, h, w) };
    Ok(Map::new(h, w, t.into_vec()))
}

/// Loads a mask binarized at 128.
pub fn load_mask(path: &Path) -> Result<Map> {
    let img = read_gray(path)?;
    let data = img.as_raw().iter().map(|&v| binarize(v) as f64).collect();
    Ok(Map::new(img.height() as usize, img.width() as usize, data))
}

/// Evaluates every PNG in `pred_dir` against the same stem in `gt_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cfg: &MetricConfig) -> Result<MetricReport> {
    let preds = stems_in(pred_dir)?;
    let gts = stems_in(gt_dir)?;
    let unmatched: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).chain(gts.keys().filter(|k| !preds.contains_key(*k))).collect();
    if !unmatched.is_empty() {
        let list: Vec<&str> = unmatched.iter().map(|s| s.as_str()).collect();
        return Err(Error::Dataset(format!("stems without a partner: {}", list.join(", "))));
    }
    let pairs: Vec<(&PathBuf, &PathBuf)> = preds.iter().map(|(k, p)| (p, &gts[k])).collect();
    let results = par::map_slice(&pairs, |(p, g)| -> Result<ImageMetrics> {
        let gm = load_mask(g)?;
        let pm = load_prediction(p, gm.h, gm.w)?;
        image_metrics(&pm, &gm, cfg)
    });
    let items = results.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(&items)
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Histogram rows for the chosen band.
pub fn histogram_rows(h: &[u64; 256], band: HistogramBand) -> Vec<(usize, u64)> {
    let range = match band {
        HistogramBand::Full => 0..=255,
        HistogramBand::Trimmed => 20..=245,
    };
    range.map(|b| (b, h[b])).collect()
}

/// Writes `metrics.json` and the curve and histogram CSVs into `out_dir`.
pub fn write_report(report: &MetricReport, out_dir: &Path, band: HistogramBand) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(&json, text + "\n").map_err(io(&json))?;

    let pr = out_dir.join("pr_curve.csv");
    let mut f = create(&pr)?;
    writeln!(f, "threshold,precision,recall,fbeta").map_err(io(&pr))?;
    for k in 0..NUM_THRESHOLDS {
        writeln!(f, "{},{},{},{}", threshold(k), report.precision[k], report.recall[k], report.f_curve[k]).map_err(io(&pr))?;
    }
    f.flush().map_err(io(&pr))?;

    let em = out_dir.join("em_curve.csv");
    let mut f = create(&em)?;
    writeln!(f, "threshold,em").map_err(io(&em))?;
    for k in 0..NUM_THRESHOLDS {
        writeln!(f, "{},{}", threshold(k), report.e_curve[k]).map_err(io(&em))?;
    }
    f.flush().map_err(io(&em))?;

    let hp = out_dir.join("histogram.csv");
    let mut f = create(&hp)?;
    writeln!(f, "bin,count").map_err(io(&hp))?;
    for (b, c) in histogram_rows(&report.histogram, band) {
        writeln!(f, "{b},{c}").map_err(io(&hp))?;
    }
    f.flush().map_err(io(&hp))
}

/// Evaluates two folders and writes the report files.
pub fn emit_reports(pred_dir: &Path, gt_dir: &Path, out_dir: &Path, cfg: &MetricConfig) -> Result<MetricReport> {
    let report = evaluate_dirs(pred_dir, gt_dir, cfg)?;
    write_report(&report, out_dir, cfg.histogram_band)?;
    Ok(report)
}
