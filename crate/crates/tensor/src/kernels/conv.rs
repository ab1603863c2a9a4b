//! im2col convolution kernels.

use crate::scalar::{gemm, Trans};
use crate::{par, Float, Shape};

/// Static convolution hyper-parameters (square kernels only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom { stride: 1, padding: 0, dilation: 1 }
    }
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom { stride, padding, dilation }
    }

    /// Stride-1 geometry that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom { stride: 1, padding: dilation * (kernel / 2), dilation }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        assert!(padded >= span, "convolution kernel span {span} exceeds padded input {padded}");
        (padded - span) / self.stride + 1
    }

    pub fn out_shape(&self, x: Shape, w: Shape) -> Shape {
        assert_eq!(x.c, w.c, "conv input channels {} vs weight {}", x.c, w.c);
        assert_eq!(w.h, w.w, "only square kernels are supported");
        Shape::new(x.n, w.n, self.out_len(x.h, w.h), self.out_len(x.w, w.w))
    }

    fn is_pointwise(&self, k: usize) -> bool {
        k == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one `[c, h, w]` image into a `[c·k·k, oh·ow]` column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, oh: usize, ow: usize, col: &mut [T]) {
    let p = oh * ow;
    debug_assert_eq!(col.len(), c * k * k * p);
    let pad = g.padding as isize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - pad;
                let dx = (kx * g.dilation) as isize - pad;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        // Contiguous run of valid columns.
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize + dx;
                            *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride) as isize + dx;
                            *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto an image,
/// accumulating into `x`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Float>(col: &[T], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, oh: usize, ow: usize, x: &mut [T]) {
    let p = oh * ow;
    let pad = g.padding as isize;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                let dy = (ky * g.dilation) as isize - pad;
                let dx = (kx * g.dilation) as isize - pad;
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride) as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `x: [n, ci, h, w]`, `wt: [co, ci, k, k]`.
pub fn conv2d_forward<T: Float>(x: &[T], xs: Shape, wt: &[T], ws: Shape, bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let os = g.out_shape(xs, ws);
    let (k, kdim, p) = (ws.h, ws.c * ws.h * ws.w, os.plane());
    let mut out = vec![T::zero(); os.numel()];
    par::for_each_chunk(&mut out, os.item(), |n, y| {
        let xi = &x[n * xs.item()..(n + 1) * xs.item()];
        if g.is_pointwise(k) {
            gemm(Trans::No, Trans::No, ws.n, kdim, p, wt, xi, T::zero(), y);
        } else {
            let mut col = vec![T::zero(); kdim * p];
            im2col(xi, xs.c, xs.h, xs.w, k, g, os.h, os.w, &mut col);
            gemm(Trans::No, Trans::No, ws.n, kdim, p, wt, &col, T::zero(), y);
        }
        if let Some(b) = bias {
            for (co, plane) in y.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + b[co]);
            }
        }
    });
    out
}

/// Gradient with respect to the input.
pub fn conv2d_backward_input<T: Float>(gy: &[T], xs: Shape, wt: &[T], ws: Shape, g: ConvGeom) -> Vec<T> {
    let os = g.out_shape(xs, ws);
    let (k, kdim, p) = (ws.h, ws.c * ws.h * ws.w, os.plane());
    let mut gx = vec![T::zero(); xs.numel()];
    par::for_each_chunk(&mut gx, xs.item(), |n, gxi| {
        let gyi = &gy[n * os.item()..(n + 1) * os.item()];
        if g.is_pointwise(k) {
            gemm(Trans::Yes, Trans::No, kdim, ws.n, p, wt, gyi, T::zero(), gxi);
        } else {
            let mut col = vec![T::zero(); kdim * p];
            gemm(Trans::Yes, Trans::No, kdim, ws.n, p, wt, gyi, T::zero(), &mut col);
            col2im(&col, xs.c, xs.h, xs.w, k, g, os.h, os.w, gxi);
        }
    });
    gx
}

/// Gradient with respect to the weights, and optionally the bias.
///
/// Per-item partial gradients are reduced in batch order so the result does
/// not depend on the number of worker threads.
pub fn conv2d_backward_weight<T: Float>(gy: &[T], x: &[T], xs: Shape, ws: Shape, g: ConvGeom, with_bias: bool) -> (Vec<T>, Option<Vec<T>>) {
    let os = g.out_shape(xs, ws);
    let (k, kdim, p) = (ws.h, ws.c * ws.h * ws.w, os.plane());
    let partials: Vec<Vec<T>> = par::map_range(xs.n, |n| {
        let xi = &x[n * xs.item()..(n + 1) * xs.item()];
        let gyi = &gy[n * os.item()..(n + 1) * os.item()];
        let mut gw = vec![T::zero(); ws.numel()];
        if g.is_pointwise(k) {
            gemm(Trans::No, Trans::Yes, ws.n, p, kdim, gyi, xi, T::zero(), &mut gw);
        } else {
            let mut col = vec![T::zero(); kdim * p];
            im2col(xi, xs.c, xs.h, xs.w, k, g, os.h, os.w, &mut col);
            gemm(Trans::No, Trans::Yes, ws.n, p, kdim, gyi, &col, T::zero(), &mut gw);
        }
        gw
    });
    let mut gw = vec![T::zero(); ws.numel()];
    for part in &partials {
        for (a, &b) in gw.iter_mut().zip(part) {
            *a = *a + b;
        }
    }
    let gb = with_bias.then(|| {
        let mut gb = vec![T::zero(); ws.n];
        for n in 0..xs.n {
            for (co, v) in gb.iter_mut().enumerate() {
                let off = n * os.item() + co * p;
                *v = *v + gy[off..off + p].iter().copied().sum::<T>();
            }
        }
        gb
    });
    (gw, gb)
}

/// Multiply-accumulate count of one forward convolution.
pub fn conv2d_macs(xs: Shape, ws: Shape, g: ConvGeom) -> u64 {
    let os = g.out_shape(xs, ws);
    (os.numel() as u64) * (ws.c * ws.h * ws.w) as u64
}
