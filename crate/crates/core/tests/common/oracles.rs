//! Straightforward re-derivations of the metrics, written independently of
//! the library code: plain loops, 2-D indexing, no shared helpers.

#![allow(dead_code)]

use rand::Rng;

pub struct Pair {
    pub h: usize,
    pub w: usize,
    pub p: Vec<f64>,
    pub g: Vec<f64>,
}

/// A random prediction and a random rectangle-ish binary mask (never empty,
/// never full) of size `h × w`.
pub fn random_pair(rng: &mut impl Rng, h: usize, w: usize) -> Pair {
    let y0 = rng.gen_range(0..h - 1);
    let x0 = rng.gen_range(0..w - 1);
    let y1 = rng.gen_range(y0 + 1..=h);
    let x1 = rng.gen_range(x0 + 1..=w);
    let mut g = vec![0.0; h * w];
    for y in y0..y1 {
        for x in x0..x1 {
            g[y * w + x] = 1.0;
        }
    }
    // flip a couple of pixels to make shapes irregular
    for _ in 0..2 {
        let i = rng.gen_range(0..h * w);
        g[i] = 1.0 - g[i];
    }
    if g.iter().all(|&v| v == 1.0) {
        g[0] = 0.0;
    }
    if g.iter().all(|&v| v == 0.0) {
        g[0] = 1.0;
    }
    let p = (0..h * w).map(|i| (0.6 * g[i] + 0.4 * rng.gen::<f64>()).clamp(0.0, 1.0)).collect();
    Pair { h, w, p, g }
}

pub fn mae(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - g[i]).abs();
    }
    s / p.len() as f64
}

/// Fβ² = 0.3 of `p >= t` against `g`.
pub fn f_at(p: &[f64], g: &[f64], t: f64) -> f64 {
    let mut tp = 0.0;
    let mut predicted = 0.0;
    let mut actual = 0.0;
    for i in 0..p.len() {
        let pb = p[i] >= t;
        let gb = g[i] > 0.5;
        if pb {
            predicted += 1.0;
        }
        if gb {
            actual += 1.0;
        }
        if pb && gb {
            tp += 1.0;
        }
    }
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    if precision + recall == 0.0 {
        return 0.0;
    }
    1.3 * precision * recall / (0.3 * precision + recall)
}

pub fn f_curve(p: &[f64], g: &[f64]) -> Vec<f64> {
    (0..256).map(|k| f_at(p, g, k as f64 / 255.0)).collect()
}

pub fn adaptive_threshold(p: &[f64]) -> f64 {
    let m = p.iter().sum::<f64>() / p.len() as f64;
    if 2.0 * m > 1.0 {
        1.0
    } else {
        2.0 * m
    }
}

/// Enhanced-alignment score of the binary map `fm` against `g`, built from
/// the bias matrices pixel by pixel.
pub fn e_binary(fm: &[f64], g: &[f64]) -> f64 {
    let n = fm.len() as f64;
    let gsum: f64 = g.iter().sum();
    let enhanced: Vec<f64> = if gsum == 0.0 {
        fm.iter().map(|v| 1.0 - v).collect()
    } else if gsum == n {
        fm.to_vec()
    } else {
        let mf = fm.iter().sum::<f64>() / n;
        let mg = gsum / n;
        (0..fm.len())
            .map(|i| {
                let a = fm[i] - mf;
                let b = g[i] - mg;
                let xi = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
                (xi + 1.0) * (xi + 1.0) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

pub fn e_at(p: &[f64], g: &[f64], t: f64) -> f64 {
    let fm: Vec<f64> = p.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
    let gb: Vec<f64> = g.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    e_binary(&fm, &gb)
}

pub fn e_curve(p: &[f64], g: &[f64]) -> Vec<f64> {
    (0..256).map(|k| e_at(p, g, k as f64 / 255.0)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample (n − 1) standard deviation; zero for fewer than two values.
fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Structure measure from its definition: α·S_object + (1 − α)·S_region.
pub fn s_measure(pr: &Pair, alpha: f64) -> f64 {
    let (h, w) = (pr.h, pr.w);
    let at = |m: &[f64], y: usize, x: usize| m[y * w + x];
    let fg_frac = pr.g.iter().filter(|&&v| v > 0.5).count() as f64 / (h * w) as f64;
    if fg_frac == 0.0 {
        return 1.0 - mean(&pr.p);
    }
    if fg_frac == 1.0 {
        return mean(&pr.p);
    }

    // object-aware part
    let score = |vals: &[f64]| {
        if vals.is_empty() {
            return 0.0;
        }
        let x = mean(vals);
        2.0 * x / (x * x + 1.0 + std(vals) + f64::EPSILON)
    };
    let mut in_fg = vec![];
    let mut in_bg = vec![];
    for y in 0..h {
        for x in 0..w {
            if at(&pr.g, y, x) > 0.5 {
                in_fg.push(at(&pr.p, y, x));
            } else {
                in_bg.push(1.0 - at(&pr.p, y, x));
            }
        }
    }
    let s_object = fg_frac * score(&in_fg) + (1.0 - fg_frac) * score(&in_bg);

    // region-aware part; split at the rounded 1-based centroid
    let (mut cx, mut cy, mut cnt) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if at(&pr.g, y, x) > 0.5 {
                cx += x as f64 + 1.0;
                cy += y as f64 + 1.0;
                cnt += 1.0;
            }
        }
    }
    let sx = ((cx / cnt) + 0.5).floor() as usize;
    let sy = ((cy / cnt) + 0.5).floor() as usize;
    let ssim = |y0: usize, y1: usize, x0: usize, x1: usize| -> f64 {
        let mut a = vec![];
        let mut b = vec![];
        for y in y0..y1 {
            for x in x0..x1 {
                a.push(at(&pr.p, y, x));
                b.push(at(&pr.g, y, x));
            }
        }
        let n = a.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let (va, vb, cov) = if a.len() < 2 {
            (0.0, 0.0, 0.0)
        } else {
            let mut va = 0.0;
            let mut vb = 0.0;
            let mut cov = 0.0;
            for i in 0..a.len() {
                va += (a[i] - ma).powi(2);
                vb += (b[i] - mb).powi(2);
                cov += (a[i] - ma) * (b[i] - mb);
            }
            (va / (n - 1.0), vb / (n - 1.0), cov / (n - 1.0))
        };
        let num = 4.0 * ma * mb * cov;
        let den = (ma * ma + mb * mb) * (va + vb);
        if num != 0.0 {
            num / (den + f64::EPSILON)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let total = (h * w) as f64;
    let mut s_region = 0.0;
    for (y0, y1, x0, x1) in [(0, sy, 0, sx), (0, sy, sx, w), (sy, h, 0, sx), (sy, h, sx, w)] {
        let area = ((y1 - y0) * (x1 - x0)) as f64;
        if area > 0.0 {
            s_region += area / total * ssim(y0, y1, x0, x1);
        }
    }
    (alpha * s_object + (1.0 - alpha) * s_region).max(0.0)
}

/// Nearest foreground pixel by exhaustive search; ties go to the smallest
/// (row, column).
pub fn brute_edt(g: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let mut dist = vec![f64::INFINITY; h * w];
    let mut idx = vec![usize::MAX; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = usize::MAX;
            for yy in 0..h {
                for xx in 0..w {
                    if g[yy * w + xx] <= 0.5 {
                        continue;
                    }
                    let d2 = (y as isize - yy as isize).pow(2) as usize + (x as isize - xx as isize).pow(2) as usize;
                    // row-major scan visits candidates in (row, col) order,
                    // so a strict comparison keeps the first on ties
                    if d2 < best {
                        best = d2;
                        idx[y * w + x] = yy * w + xx;
                    }
                }
            }
            dist[y * w + x] = (best as f64).sqrt();
        }
    }
    (dist, idx)
}

/// Weighted F-measure (β = 1) with a normalized 7×7, σ = 5 Gaussian and
/// zero padding.
pub fn weighted_f(pr: &Pair) -> f64 {
    let (h, w) = (pr.h, pr.w);
    let fg: Vec<bool> = pr.g.iter().map(|&v| v > 0.5).collect();
    if !fg.iter().any(|&f| f) {
        return 0.0;
    }
    let (dist, idx) = brute_edt(&pr.g, h, w);
    let e: Vec<f64> = (0..h * w).map(|i| (pr.p[i] - if fg[i] { 1.0 } else { 0.0 }).abs()).collect();
    let mut et = e.clone();
    for i in 0..h * w {
        if !fg[i] {
            et[i] = e[idx[i]];
        }
    }
    let mut k = [[0.0f64; 7]; 7];
    let mut ks = 0.0;
    for a in 0..7 {
        for b in 0..7 {
            let (dy, dx) = (a as f64 - 3.0, b as f64 - 3.0);
            k[a][b] = (-(dy * dy + dx * dx) / 50.0).exp();
            ks += k[a][b];
        }
    }
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for a in 0..7 {
                for b in 0..7 {
                    let yy = y as isize + a as isize - 3;
                    let xx = x as isize + b as isize - 3;
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        s += k[a][b] / ks * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y * w + x] = s;
        }
    }
    let mut min_e = e.clone();
    for i in 0..h * w {
        if fg[i] && ea[i] < e[i] {
            min_e[i] = ea[i];
        }
    }
    let mut ew = min_e.clone();
    for i in 0..h * w {
        if !fg[i] {
            ew[i] *= 2.0 - (0.5f64.ln() / 5.0 * dist[i]).exp();
        }
    }
    let n_fg = fg.iter().filter(|&&f| f).count() as f64;
    let fg_err: f64 = (0..h * w).filter(|&i| fg[i]).map(|i| ew[i]).sum();
    let bg_err: f64 = (0..h * w).filter(|&i| !fg[i]).map(|i| ew[i]).sum();
    let tpw = n_fg - fg_err;
    let r = 1.0 - fg_err / n_fg;
    let p = tpw / (tpw + bg_err + f64::EPSILON);
    2.0 * r * p / (r + p + f64::EPSILON)
}
