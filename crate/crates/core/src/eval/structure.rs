//! Structure measure: object-aware plus region-aware similarity.

use super::metrics::check_pair;
use super::Map;
use crate::Result;

const EPS: f64 = f64::EPSILON;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn object_similarity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, s) = mean_std(values);
    2.0 * x / (x * x + 1.0 + s + EPS)
}

fn object_score(p: &Map, g: &Map) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&pv, &gv) in p.data.iter().zip(&g.data) {
        if gv > 0.5 {
            fg.push(pv);
        } else {
            bg.push(1.0 - pv);
        }
    }
    let u = fg.len() as f64 / p.data.len() as f64;
    u * object_similarity(&fg) + (1.0 - u) * object_similarity(&bg)
}

/// Rounds half away from zero.
fn round_half_away(v: f64) -> usize {
    v.round() as usize
}

/// Foreground centroid as 1-based (column, row), rounded.
pub fn centroid(g: &Map) -> (usize, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..g.h {
        for x in 0..g.w {
            if g.data[y * g.w + x] > 0.5 {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return (round_half_away(g.w as f64 / 2.0), round_half_away(g.h as f64 / 2.0));
    }
    (round_half_away(sx / n as f64), round_half_away(sy / n as f64))
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let (sx, sy, sxy) = if p.len() < 2 {
        (0.0, 0.0, 0.0)
    } else {
        let d = n - 1.0;
        (
            p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d,
            g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d,
            p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d,
        )
    };
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn block(m: &Map, y0: usize, y1: usize, x0: usize, x1: usize) -> Vec<f64> {
    (y0..y1).flat_map(|y| (x0..x1).map(move |x| (y, x))).map(|(y, x)| m.data[y * m.w + x]).collect()
}

fn region_score(p: &Map, g: &Map) -> f64 {
    let (cx, cy) = centroid(g);
    let (h, w) = (g.h, g.w);
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    quads
        .iter()
        .map(|&(y0, y1, x0, x1)| {
            let n = (y1 - y0) * (x1 - x0);
            if n == 0 {
                return 0.0;
            }
            n as f64 / area * ssim(&block(p, y0, y1, x0, x1), &block(g, y0, y1, x0, x1))
        })
        .sum()
}

/// S-measure with the given object/region balance (0.5 by default).
/// An empty mask scores `1 - mean(p)`, a full mask `mean(p)`.
pub fn s_measure(p: &Map, g: &Map, alpha: f64) -> Result<f64> {
    check_pair(p, g)?;
    let y = g.data.iter().filter(|&&v| v > 0.5).count() as f64 / g.data.len() as f64;
    Ok(if y == 0.0 {
        1.0 - p.mean()
    } else if y == 1.0 {
        p.mean()
    } else {
        (alpha * object_score(p, g) + (1.0 - alpha) * region_score(p, g)).max(0.0)
    })
}
