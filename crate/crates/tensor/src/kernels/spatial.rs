//! Resampling and pooling kernels over `[n·c]` independent planes.

use crate::{par, Float, Shape};

/// One output coordinate of a separable bilinear resize: two source taps
/// and their weights.
#[derive(Clone, Copy, Debug)]
pub struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w0: T,
    pub w1: T,
}

/// Half-pixel-centred (non corner-aligned) bilinear taps for resizing an
/// axis of length `input` to `output`.
pub fn bilinear_taps<T: Float>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l1 = src - i0 as f64;
            Tap { i0, i1, w0: T::lit(1.0 - l1), w1: T::lit(l1) }
        })
        .collect()
}

pub fn resize_bilinear<T: Float>(x: &[T], xs: Shape, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps::<T>(xs.h, oh);
    let tx = bilinear_taps::<T>(xs.w, ow);
    let mut out = vec![T::zero(); xs.n * xs.c * oh * ow];
    par::for_each_chunk(&mut out, oh * ow, |pi, dst| {
        let src = &x[pi * xs.plane()..(pi + 1) * xs.plane()];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * xs.w..(a.i0 + 1) * xs.w];
            let r1 = &src[a.i1 * xs.w..(a.i1 + 1) * xs.w];
            for (ox, b) in tx.iter().enumerate() {
                // lerp form keeps constant regions exactly constant
                let top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.w1;
                let bot = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.w1;
                dst[oy * ow + ox] = top + (bot - top) * a.w1;
            }
        }
    });
    out
}

pub fn resize_bilinear_backward<T: Float>(gy: &[T], xs: Shape, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps::<T>(xs.h, oh);
    let tx = bilinear_taps::<T>(xs.w, ow);
    let mut gx = vec![T::zero(); xs.numel()];
    par::for_each_chunk(&mut gx, xs.plane(), |pi, dst| {
        let g = &gy[pi * oh * ow..(pi + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let (va0, va1) = (v * a.w0, v * a.w1);
                dst[a.i0 * xs.w + b.i0] = dst[a.i0 * xs.w + b.i0] + va0 * b.w0;
                dst[a.i0 * xs.w + b.i1] = dst[a.i0 * xs.w + b.i1] + va0 * b.w1;
                dst[a.i1 * xs.w + b.i0] = dst[a.i1 * xs.w + b.i0] + va1 * b.w0;
                dst[a.i1 * xs.w + b.i1] = dst[a.i1 * xs.w + b.i1] + va1 * b.w1;
            }
        }
    });
    gx
}

/// `[start, end)` window of adaptive pooling output `o`.
pub fn adaptive_window(o: usize, input: usize, output: usize) -> (usize, usize) {
    let start = (o * input) / output;
    let end = ((o + 1) * input).div_ceil(output);
    (start, end)
}

pub fn adaptive_avg_pool<T: Float>(x: &[T], xs: Shape, oh: usize, ow: usize) -> Vec<T> {
    let mut out = vec![T::zero(); xs.n * xs.c * oh * ow];
    par::for_each_chunk(&mut out, oh * ow, |pi, dst| {
        let src = &x[pi * xs.plane()..(pi + 1) * xs.plane()];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, xs.h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, xs.w, ow);
                let mut s = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        s = s + src[iy * xs.w + ix];
                    }
                }
                dst[oy * ow + ox] = s / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
            }
        }
    });
    out
}

pub fn adaptive_avg_pool_backward<T: Float>(gy: &[T], xs: Shape, oh: usize, ow: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); xs.numel()];
    par::for_each_chunk(&mut gx, xs.plane(), |pi, dst| {
        let g = &gy[pi * oh * ow..(pi + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, xs.h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, xs.w, ow);
                let v = g[oy * ow + ox] / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dst[iy * xs.w + ix] = dst[iy * xs.w + ix] + v;
                    }
                }
            }
        }
    });
    gx
}

/// Adaptive max pooling. Returns values and the flat in-plane argmax of
/// each output (first maximum wins on ties).
pub fn adaptive_max_pool<T: Float>(x: &[T], xs: Shape, oh: usize, ow: usize) -> (Vec<T>, Vec<usize>) {
    let planes = xs.n * xs.c;
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0usize; planes * oh * ow];
    par::for_each_chunk2(&mut out, oh * ow, &mut arg, oh * ow, |pi, dst, idx| {
        let src = &x[pi * xs.plane()..(pi + 1) * xs.plane()];
        for oy in 0..oh {
            let (y0, y1) = adaptive_window(oy, xs.h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_window(ox, xs.w, ow);
                let mut best = y0 * xs.w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let j = iy * xs.w + ix;
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                }
                dst[oy * ow + ox] = src[best];
                idx[oy * ow + ox] = best;
            }
        }
    });
    (out, arg)
}

/// Scatters pooled gradients back through recorded argmax positions.
pub fn argmax_backward<T: Float>(gy: &[T], arg: &[usize], xs: Shape, out_plane: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); xs.numel()];
    par::for_each_chunk(&mut gx, xs.plane(), |pi, dst| {
        let g = &gy[pi * out_plane..(pi + 1) * out_plane];
        let a = &arg[pi * out_plane..(pi + 1) * out_plane];
        for (&gv, &j) in g.iter().zip(a) {
            dst[j] = dst[j] + gv;
        }
    });
    gx
}

/// Max pooling with a square window and implicit `-inf` padding.
pub fn max_pool<T: Float>(x: &[T], xs: Shape, k: usize, stride: usize, pad: usize) -> (Vec<T>, Vec<usize>, Shape) {
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let os = xs.with_hw(oh, ow);
    let planes = xs.n * xs.c;
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0usize; planes * oh * ow];
    par::for_each_chunk2(&mut out, oh * ow, &mut arg, oh * ow, |pi, dst, idx| {
        let src = &x[pi * xs.plane()..(pi + 1) * xs.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<usize> = None;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= xs.w as isize {
                            continue;
                        }
                        let j = iy as usize * xs.w + ix as usize;
                        if best.map_or(true, |b| src[j] > src[b]) {
                            best = Some(j);
                        }
                    }
                }
                let b = best.expect("pooling window lies entirely in padding");
                dst[oy * ow + ox] = src[b];
                idx[oy * ow + ox] = b;
            }
        }
    });
    (out, arg, os)
}
