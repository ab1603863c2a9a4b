//! Threshold-based metrics: MAE, F-measure and E-measure.

use super::Map;
use crate::{Error, Result};

pub const NUM_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;

/// Threshold `k` of the grid, `k/255`.
pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

/// Adaptive threshold: twice the mean prediction, at most 1.
pub fn adaptive_threshold(p: &Map) -> f64 {
    (2.0 * p.mean()).min(1.0)
}

pub(crate) fn check_pair(p: &Map, g: &Map) -> Result<()> {
    if (p.h, p.w) != (g.h, g.w) || p.data.is_empty() {
        return Err(Error::Contract(format!("prediction {}x{} vs mask {}x{}", p.h, p.w, g.h, g.w)));
    }
    Ok(())
}

pub fn mae(p: &Map, g: &Map) -> Result<f64> {
    check_pair(p, g)?;
    Ok(p.data.iter().zip(&g.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.data.len() as f64)
}

/// Largest grid index `k` with `k/255 <= v`.
fn level(v: f64) -> usize {
    let mut k = (v * 255.0).floor().clamp(0.0, 255.0) as usize;
    while k < 255 && threshold(k + 1) <= v {
        k += 1;
    }
    while k > 0 && threshold(k) > v {
        k -= 1;
    }
    k
}

/// Confusion counts for `p >= τ_k`, for every grid threshold.
#[derive(Clone, Debug)]
pub struct Confusion {
    /// Predicted positive on foreground.
    pub tp: Vec<usize>,
    /// Predicted positive on background.
    pub fp: Vec<usize>,
    pub positives: usize,
    pub total: usize,
}

pub fn confusion(p: &Map, g: &Map) -> Confusion {
    let mut fg = [0usize; NUM_THRESHOLDS];
    let mut bg = [0usize; NUM_THRESHOLDS];
    let mut positives = 0;
    for (&pv, &gv) in p.data.iter().zip(&g.data) {
        if pv < 0.0 {
            continue;
        }
        let k = level(pv);
        if gv > 0.5 {
            fg[k] += 1;
        } else {
            bg[k] += 1;
        }
    }
    for &gv in &g.data {
        if gv > 0.5 {
            positives += 1;
        }
    }
    // counts with level >= k
    let (mut tp, mut fp) = (vec![0; NUM_THRESHOLDS], vec![0; NUM_THRESHOLDS]);
    let (mut a, mut b) = (0, 0);
    for k in (0..NUM_THRESHOLDS).rev() {
        a += fg[k];
        b += bg[k];
        tp[k] = a;
        fp[k] = b;
    }
    Confusion { tp, fp, positives, total: p.data.len() }
}

fn confusion_at(p: &Map, g: &Map, t: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut pos) = (0, 0, 0);
    for (&pv, &gv) in p.data.iter().zip(&g.data) {
        let fg = gv > 0.5;
        pos += fg as usize;
        if pv >= t {
            if fg {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp, pos)
}

/// Precision, recall and Fβ from counts; zero denominators give zero.
pub fn prf(tp: usize, fp: usize, positives: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    let den = BETA2 * precision + recall;
    let f = if positives == 0 || den == 0.0 { 0.0 } else { (1.0 + BETA2) * precision * recall / den };
    (precision, recall, f)
}

#[derive(Clone, Debug)]
pub struct FMeasure {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub curve: Vec<f64>,
    pub adaptive: f64,
}

impl FMeasure {
    pub fn max(&self) -> f64 {
        self.curve.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.curve.iter().sum::<f64>() / self.curve.len() as f64
    }
}

/// Fβ (β² = 0.3) at every grid threshold plus the adaptive threshold. An
/// empty mask yields zeros everywhere.
pub fn f_measure(p: &Map, g: &Map) -> Result<FMeasure> {
    check_pair(p, g)?;
    let c = confusion(p, g);
    if c.positives == 0 {
        log::debug!("F-measure on an empty mask is defined as 0");
    }
    let mut out = FMeasure { precision: Vec::new(), recall: Vec::new(), curve: Vec::new(), adaptive: 0.0 };
    for k in 0..NUM_THRESHOLDS {
        let (pr, rc, f) = prf(c.tp[k], c.fp[k], c.positives);
        out.precision.push(pr);
        out.recall.push(rc);
        out.curve.push(f);
    }
    let (tp, fp, pos) = confusion_at(p, g, adaptive_threshold(p));
    out.adaptive = prf(tp, fp, pos).2;
    Ok(out)
}

/// Enhanced alignment from the four counts of a binarized prediction.
/// Normalized by the pixel count so that a perfect match scores 1.
pub fn enhanced_alignment(tp: usize, fp: usize, positives: usize, total: usize) -> f64 {
    let n = total as f64;
    let pred_fg = tp + fp;
    let pred_bg = total - pred_fg;
    let sum = if positives == 0 {
        pred_bg as f64
    } else if positives == total {
        pred_fg as f64
    } else {
        let fn_ = positives - tp;
        let tn = pred_bg - fn_;
        let mp = pred_fg as f64 / n;
        let mg = positives as f64 / n;
        let parts = [(tp, 1.0 - mp, 1.0 - mg), (fp, 1.0 - mp, -mg), (fn_, -mp, 1.0 - mg), (tn, -mp, -mg)];
        parts
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
                (align + 1.0).powi(2) / 4.0 * count as f64
            })
            .sum()
    };
    sum / n
}

#[derive(Clone, Debug)]
pub struct EMeasure {
    pub curve: Vec<f64>,
    pub adaptive: f64,
}

impl EMeasure {
    pub fn max(&self) -> f64 {
        self.curve.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.curve.iter().sum::<f64>() / self.curve.len() as f64
    }
}

pub fn e_measure(p: &Map, g: &Map) -> Result<EMeasure> {
    check_pair(p, g)?;
    let c = confusion(p, g);
    let curve = (0..NUM_THRESHOLDS).map(|k| enhanced_alignment(c.tp[k], c.fp[k], c.positives, c.total)).collect();
    let (tp, fp, pos) = confusion_at(p, g, adaptive_threshold(p));
    Ok(EMeasure { curve, adaptive: enhanced_alignment(tp, fp, pos, c.total) })
}

/// Counts of 8-bit prediction values.
pub fn histogram(p: &Map) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in &p.data {
        h[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    h
}

/// Fraction of values strictly inside `(lo, hi)`.
pub fn polarity_fraction(p: &[f64], lo: f64, hi: f64) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().filter(|&&v| v > lo && v < hi).count() as f64 / p.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_matches_grid_comparison() {
        for i in 0..=2550 {
            let v = i as f64 / 2550.0;
            let k = level(v);
            assert!(threshold(k) <= v);
            assert!(k == 255 || threshold(k + 1) > v);
        }
    }

    #[test]
    fn hand_computed_f() {
        let p = Map::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        let g = Map::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let f = f_measure(&p, &g).unwrap();
        let k = 128;
        assert_eq!(f.precision[k], 0.5);
        assert_eq!(f.recall[k], 1.0);
        assert!((f.curve[k] - 0.65 / 1.15).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_f_is_zero() {
        let p = Map::new(2, 2, vec![0.3, 0.9, 0.1, 0.0]);
        let g = Map::new(2, 2, vec![0.0; 4]);
        let f = f_measure(&p, &g).unwrap();
        assert!(f.curve.iter().all(|&v| v == 0.0));
        assert_eq!(f.adaptive, 0.0);
    }

    #[test]
    fn e_measure_perfect_and_inverted() {
        let g = Map::new(8, 8, (0..64).map(|i| ((i % 8) < 4) as u8 as f64).collect());
        let inv = Map::new(8, 8, g.data.iter().map(|v| 1.0 - v).collect());
        assert!((e_measure(&g, &g).unwrap().curve[128] - 1.0).abs() < 1e-12);
        assert!(e_measure(&inv, &g).unwrap().curve[128] < 0.25);
    }

    #[test]
    fn histogram_half_lands_in_128() {
        let h = histogram(&Map::new(1, 3, vec![0.5; 3]));
        assert_eq!(h[128], 3);
        assert_eq!(h.iter().sum::<u64>(), 3);
    }

    #[test]
    fn polarity_examples() {
        assert_eq!(polarity_fraction(&[0.5; 10], 0.3, 0.7), 1.0);
        assert_eq!(polarity_fraction(&[0.0, 1.0, 1.0], 0.3, 0.7), 0.0);
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((polarity_fraction(&grid, 0.3, 0.7) - 0.4).abs() <= 1.0 / 1000.0);
    }
}
