//! Weighted F-measure: dependency-smoothed errors with distance-decayed
//! background weighting (β = 1).

use super::metrics::check_pair;
use super::Map;
use crate::Result;

const EPS: f64 = f64::EPSILON;
pub const GAUSS_SIZE: usize = 7;
pub const GAUSS_SIGMA: f64 = 5.0;

/// Normalized 7×7 Gaussian, σ = 5.
pub fn gaussian_kernel() -> [[f64; GAUSS_SIZE]; GAUSS_SIZE] {
    let r = (GAUSS_SIZE / 2) as isize;
    let mut k = [[0.0; GAUSS_SIZE]; GAUSS_SIZE];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = ((i as isize - r) as f64, (j as isize - r) as f64);
            *v = (-(x * x + y * y) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
            sum += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= sum);
    k
}

/// Distance to, and index of, the nearest foreground pixel for every pixel.
/// Ties resolve to the smallest (row, column). `None` when there is no
/// foreground.
pub fn nearest_foreground(g: &Map) -> Option<(Vec<f64>, Vec<usize>)> {
    let (h, w) = (g.h, g.w);
    let fg = |y: usize, x: usize| g.data[y * w + x] > 0.5;
    // per column: nearest foreground row for each row, upper one on ties
    let mut col_best: Vec<Option<usize>> = vec![None; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if fg(y, x) {
                last = Some(y);
            }
            col_best[y * w + x] = last;
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if fg(y, x) {
                next = Some(y);
            }
            let up = col_best[y * w + x];
            col_best[y * w + x] = match (up, next) {
                (Some(u), Some(d)) => Some(if d - y < y - u { d } else { u }),
                (u, d) => u.or(d),
            };
        }
    }
    if col_best.iter().all(Option::is_none) {
        return None;
    }
    let mut dist = vec![0.0; h * w];
    let mut idx = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, usize, usize)> = None;
            let consider = |best: &mut Option<(usize, usize, usize)>, xc: usize| {
                if let Some(r) = col_best[y * w + xc] {
                    let cand = (r.abs_diff(y).pow(2) + xc.abs_diff(x).pow(2), r, xc);
                    if best.map_or(true, |b| cand < b) {
                        *best = Some(cand);
                    }
                }
            };
            for dx in 0..w {
                if best.is_some_and(|(d2, _, _)| dx * dx > d2) {
                    break;
                }
                if x + dx < w {
                    consider(&mut best, x + dx);
                }
                if dx > 0 && dx <= x {
                    consider(&mut best, x - dx);
                }
            }
            let (d2, r, c) = best.expect("foreground exists");
            dist[y * w + x] = (d2 as f64).sqrt();
            idx[y * w + x] = r * w + c;
        }
    }
    Some((dist, idx))
}

/// Weighted F-measure. Returns `(score, degenerate)`; an empty mask scores 0
/// and is flagged.
pub fn weighted_f_measure(p: &Map, g: &Map) -> Result<(f64, bool)> {
    check_pair(p, g)?;
    let Some((dist, idx)) = nearest_foreground(g) else {
        return Ok((0.0, true));
    };
    let (h, w) = (g.h, g.w);
    let n = h * w;
    let is_fg: Vec<bool> = g.data.iter().map(|&v| v > 0.5).collect();
    let gb: Vec<f64> = is_fg.iter().map(|&f| f as u8 as f64).collect();
    let e: Vec<f64> = p.data.iter().zip(&gb).map(|(a, b)| (a - b).abs()).collect();
    let et: Vec<f64> = (0..n).map(|i| if is_fg[i] { e[i] } else { e[idx[i]] }).collect();
    let k = gaussian_kernel();
    let r = (GAUSS_SIZE / 2) as isize;
    let mut ea = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y + i as isize - r;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let xx = x + j as isize - r;
                    if xx >= 0 && xx < w as isize {
                        s += kv * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y as usize * w + x as usize] = s;
        }
    }
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut fp_w, mut fg_n) = (0.0, 0.0, 0usize);
    for i in 0..n {
        let m = if is_fg[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        if is_fg[i] {
            fg_err += m;
            fg_n += 1;
        } else {
            fp_w += m * (2.0 - (decay * dist[i]).exp());
        }
    }
    let tp_w = fg_n as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_n as f64;
    let precision = tp_w / (tp_w + fp_w + EPS);
    Ok((2.0 * recall * precision / (recall + precision + EPS), false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        assert!((k.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0][1], k[1][0]);
        assert!(k[3][3] > k[0][0]);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let mut g = Map::new(10, 10, vec![0.0; 100]);
        for y in 3..7 {
            for x in 3..7 {
                g.data[y * 10 + x] = 1.0;
            }
        }
        assert!((weighted_f_measure(&g, &g).unwrap().0 - 1.0).abs() < 1e-9);
        let z = Map::new(10, 10, vec![0.0; 100]);
        assert_eq!(weighted_f_measure(&z, &g).unwrap().0, 0.0);
        assert_eq!(weighted_f_measure(&g, &z).unwrap(), (0.0, true));
    }

    #[test]
    fn nearest_foreground_ties_prefer_upper_left() {
        let mut g = Map::new(3, 3, vec![0.0; 9]);
        g.data[1] = 1.0; // (0,1)
        g.data[3] = 1.0; // (1,0)
        let (d, i) = nearest_foreground(&g).unwrap();
        assert_eq!(i[0], 1);
        assert_eq!(d[0], 1.0);
        assert_eq!(i[4], 1);
    }
}
