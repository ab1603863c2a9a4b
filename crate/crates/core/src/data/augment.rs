//! Geometric augmentation shared by images and masks.

use mstnet_tensor::{Float, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Augmentation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Horizontal mirror of every plane.
pub fn hflip<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |i| {
        let col = i % s.w;
        x.data()[i - col + (s.w - 1 - col)]
    })
}

/// Folds a coordinate into `[0, n-1]` by mirroring about the edge pixels.
fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = v.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Rotation by `deg` degrees (counter-clockwise) about the image centre.
/// Samples falling outside the image are taken from its mirror image.
pub fn rotate<T: Float>(x: &Tensor<T>, deg: f64, interp: Interp) -> Tensor<T> {
    if deg == 0.0 {
        return x.clone();
    }
    let s = x.shape();
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    let (sin, cos) = deg.to_radians().sin_cos();
    let mut out = Tensor::zeros(s);
    let src = x.data();
    let dst = out.data_mut();
    for y in 0..s.h {
        for xx in 0..s.w {
            let (dy, dx) = (y as f64 - cy, xx as f64 - cx);
            // inverse map: rotate the output coordinate by -deg
            let sx = reflect(cos * dx - sin * dy + cx, s.w);
            let sy = reflect(sin * dx + cos * dy + cy, s.h);
            for nc in 0..s.n * s.c {
                let plane = &src[nc * s.plane()..(nc + 1) * s.plane()];
                dst[nc * s.plane() + y * s.w + xx] = match interp {
                    Interp::Nearest => {
                        let (iy, ix) = ((sy.round() as usize).min(s.h - 1), (sx.round() as usize).min(s.w - 1));
                        plane[iy * s.w + ix]
                    }
                    Interp::Bilinear => {
                        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
                        let (fy, fx) = (T::lit(sy - y0 as f64), T::lit(sx - x0 as f64));
                        let one = T::one();
                        let top = plane[y0 * s.w + x0] * (one - fx) + plane[y0 * s.w + x1] * fx;
                        let bot = plane[y1 * s.w + x0] * (one - fx) + plane[y1 * s.w + x1] * fx;
                        top * (one - fy) + bot * fy
                    }
                };
            }
        }
    }
    out
}

/// A sampled geometric transform: optional mirror, then rotation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub angle_deg: f64,
}

impl Transform {
    pub fn sample(aug: &Augmentation, rng: &mut ChaCha8Rng) -> Self {
        let flip = aug.hflip && rng.gen_bool(aug.probability);
        let angle_deg = if aug.rotate && rng.gen_bool(aug.probability) {
            rng.gen_range(-aug.rotate_max_deg..=aug.rotate_max_deg)
        } else {
            0.0
        };
        Transform { flip, angle_deg }
    }

    pub fn apply<T: Float>(&self, x: &Tensor<T>, interp: Interp) -> Tensor<T> {
        let f = if self.flip { hflip(x) } else { x.clone() };
        rotate(&f, self.angle_deg, interp)
    }
}
