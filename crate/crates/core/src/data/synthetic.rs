//! Procedural image/mask pairs: a textured ellipse on a textured background.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// One pair, fully determined by `seed`.
pub fn synthetic_pair(size: usize, seed: u64) -> (RgbImage, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let (cx, cy) = (rng.gen_range(0.3..0.7) * s, rng.gen_range(0.3..0.7) * s);
    let (rx, ry) = (rng.gen_range(0.12..0.28) * s, rng.gen_range(0.12..0.28) * s);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let bg: [f64; 3] = [rng.gen_range(0.2..0.5), rng.gen_range(0.3..0.6), rng.gen_range(0.2..0.5)];
    let fg: [f64; 3] = [bg[0] + rng.gen_range(0.2..0.35), bg[1] - rng.gen_range(0.1..0.2), bg[2] + rng.gen_range(0.1..0.3)];
    let (fa, fb) = (rng.gen_range(0.15..0.35), rng.gen_range(0.15..0.35));
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = theta.sin_cos();
    let mut img = RgbImage::new(size as u32, size as u32);
    let mut mask = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let inside = (u / rx).powi(2) + (v / ry).powi(2) <= 1.0;
            let tex = if inside {
                0.06 * ((x as f64) * fa + phase).sin() * ((y as f64) * fb).cos()
            } else {
                0.06 * ((x as f64) * fb).cos() * ((y as f64) * fa + phase).sin()
            };
            let base = if inside { fg } else { bg };
            let px: [u8; 3] = std::array::from_fn(|c| ((base[c] + tex).clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel(x as u32, y as u32, Rgb(px));
            mask.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
        }
    }
    (img, mask)
}

/// Writes `n` pairs as `root/Image/synNNN.png` and `root/GT/synNNN.png`.
pub fn write_synthetic_dataset(root: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    let (idir, mdir) = (root.join(super::IMAGE_DIR), root.join(super::MASK_DIR));
    for d in [&idir, &mdir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for i in 0..n {
        let (img, mask) = synthetic_pair(size, seed.wrapping_mul(1000).wrapping_add(i as u64));
        let name = format!("syn{i:03}.png");
        for (p, r) in [(idir.join(&name), img.save(idir.join(&name))), (mdir.join(&name), mask.save(mdir.join(&name)))] {
            r.map_err(|e| Error::Image { path: p, reason: e.to_string() })?;
        }
    }
    Ok(())
}
