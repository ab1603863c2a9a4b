//! Differentiable operations on [`Var`].
//!
//! Each op computes its forward value with the slice kernels, captures what
//! the adjoint needs, and propagates meta (shape-only) inputs to meta
//! outputs without touching data.

use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::{norm, spatial};
use crate::{profile, Float, Shape, Tensor, Var};

fn any_meta<T: Float>(vs: &[&Var<T>]) -> bool {
    vs.iter().any(|v| v.is_meta())
}

fn meta<T: Float>(shape: Shape) -> Var<T> {
    Var::constant(Tensor::meta(shape))
}

/// 2-D convolution, `x: [n, ci, h, w]`, `w: [co, ci, k, k]`, `b: [1, co, 1, 1]`.
pub fn conv2d<T: Float>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, g: ConvGeom) -> Var<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let os = g.out_shape(xs, ws);
    if let Some(b) = b {
        assert_eq!(b.shape().numel(), ws.n, "conv bias length");
    }
    profile::record_macs(conv::conv2d_macs(xs, ws, g));
    let mut parents = vec![x, w];
    parents.extend(b);
    if any_meta(&parents) {
        return meta(os);
    }
    let out = conv::conv2d_forward(x.value().data(), xs, w.value().data(), ws, b.map(|b| b.value().data()), g);
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let (need_x, need_w) = (x.requires_grad(), w.requires_grad());
    let has_b = b.is_some();
    let need_b = b.is_some_and(|b| b.requires_grad());
    Var::from_op(Tensor::from_vec(os, out), &parents, move |gy| {
        let gx = need_x.then(|| Tensor::from_vec(xs, conv::conv2d_backward_input(gy.data(), xs, wv.data(), ws, g)));
        let mut res = vec![gx];
        if need_w || need_b {
            let (gw, gb) = conv::conv2d_backward_weight(gy.data(), xv.data(), xs, ws, g, need_b);
            res.push(need_w.then(|| Tensor::from_vec(ws, gw)));
            if has_b {
                res.push(gb.map(|gb| Tensor::from_vec(Shape::new(1, ws.n, 1, 1), gb)));
            }
        } else {
            res.push(None);
            if has_b {
                res.push(None);
            }
        }
        res
    })
}

/// Batch normalization with fixed statistics (inference mode).
pub fn batch_norm_eval<T: Float>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, mean: &Tensor<T>, var: &Tensor<T>, eps: f64) -> Var<T> {
    let xs = x.shape();
    if any_meta(&[x, gamma, beta]) || mean.is_meta() {
        return meta(xs);
    }
    let inv: Vec<T> = var.data().iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
    let g = gamma.value().data();
    let scale: Vec<T> = g.iter().zip(&inv).map(|(&g, &i)| g * i).collect();
    let shift: Vec<T> = (0..xs.c).map(|c| beta.value().data()[c] - mean.data()[c] * scale[c]).collect();
    let out = norm::channel_affine(x.value().data(), xs, &scale, &shift);
    let xv = x.value().clone();
    let mv = mean.clone();
    let cs = Shape::new(1, xs.c, 1, 1);
    Var::from_op(Tensor::from_vec(xs, out), &[x, gamma, beta], move |gy| {
        let zeros = vec![T::zero(); xs.c];
        let gx = norm::channel_affine(gy.data(), xs, &scale, &zeros);
        // xhat = (x - mean) * inv
        let xhat: Vec<T> = {
            let neg: Vec<T> = (0..xs.c).map(|c| T::zero() - mv.data()[c] * inv[c]).collect();
            norm::channel_affine(xv.data(), xs, &inv, &neg)
        };
        let (gb, gg) = norm::channel_sums(gy.data(), &xhat, xs);
        vec![Some(Tensor::from_vec(xs, gx)), Some(Tensor::from_vec(cs, gg)), Some(Tensor::from_vec(cs, gb))]
    })
}

/// Output of [`batch_norm_train`]: the normalized value and the batch
/// statistics used for running-average updates.
pub struct BatchNormTrain<T: Float> {
    pub out: Var<T>,
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Batch normalization with batch statistics (training mode).
pub fn batch_norm_train<T: Float>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> BatchNormTrain<T> {
    let xs = x.shape();
    if any_meta(&[x, gamma, beta]) {
        return BatchNormTrain { out: meta(xs), mean: vec![T::zero(); xs.c], var: vec![T::one(); xs.c] };
    }
    let count = xs.n * xs.plane();
    assert!(count > 1, "batch normalization in training mode needs more than one value per channel");
    let (mean, var) = norm::channel_moments(x.value().data(), xs);
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
    let neg: Vec<T> = (0..xs.c).map(|c| T::zero() - mean[c] * inv[c]).collect();
    let xhat = norm::channel_affine(x.value().data(), xs, &inv, &neg);
    let g = gamma.value().data().to_vec();
    let out = norm::channel_affine(&xhat, xs, &g, beta.value().data());
    let cs = Shape::new(1, xs.c, 1, 1);
    let unbiased: Vec<T> = {
        let f = T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap();
        var.iter().map(|&v| v * f).collect()
    };
    let m = T::from_usize(count).unwrap();
    let out = Var::from_op(Tensor::from_vec(xs, out), &[x, gamma, beta], move |gy| {
        let (sum_g, sum_gx) = norm::channel_sums(gy.data(), &xhat, xs);
        // dx = gamma * inv * (gy - mean(gy) - xhat * mean(gy * xhat))
        let mut gx = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let k = g[c] * inv[c];
                let (mg, mgx) = (sum_g[c] / m, sum_gx[c] / m);
                let off = (n * xs.c + c) * xs.plane();
                for i in off..off + xs.plane() {
                    gx[i] = k * (gy.data()[i] - mg - xhat[i] * mgx);
                }
            }
        }
        vec![Some(Tensor::from_vec(xs, gx)), Some(Tensor::from_vec(cs, sum_gx)), Some(Tensor::from_vec(cs, sum_g))]
    });
    BatchNormTrain { out, mean, var: unbiased }
}

pub fn relu<T: Float>(x: &Var<T>) -> Var<T> {
    if x.is_meta() {
        return meta(x.shape());
    }
    let y = x.value().map(|v| v.max(T::zero()));
    let mask = y.clone();
    Var::from_op(y, &[x], move |gy| vec![Some(gy.zip_map(&mask, |g, m| if m > T::zero() { g } else { T::zero() }))])
}

pub fn sigmoid<T: Float>(x: &Var<T>) -> Var<T> {
    if x.is_meta() {
        return meta(x.shape());
    }
    let y = x.value().map(|v| T::one() / (T::one() + (-v).exp()));
    let yc = y.clone();
    Var::from_op(y, &[x], move |gy| vec![Some(gy.zip_map(&yc, |g, s| g * s * (T::one() - s)))])
}

pub fn add<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    assert_eq!(a.shape(), b.shape(), "add shape mismatch");
    if any_meta(&[a, b]) {
        return meta(a.shape());
    }
    let y = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op(y, &[a, b], |gy| vec![Some(gy.clone()), Some(gy.clone())])
}

pub fn scale<T: Float>(x: &Var<T>, k: f64) -> Var<T> {
    if x.is_meta() {
        return meta(x.shape());
    }
    let k = T::lit(k);
    Var::from_op(x.value().map(|v| v * k), &[x], move |gy| vec![Some(gy.map(|g| g * k))])
}

fn bcast_index(b: Shape, n: usize, c: usize, h: usize, w: usize) -> usize {
    let bn = if b.n == 1 { 0 } else { n };
    let bc = if b.c == 1 { 0 } else { c };
    let bh = if b.h == 1 { 0 } else { h };
    let bw = if b.w == 1 { 0 } else { w };
    ((bn * b.c + bc) * b.h + bh) * b.w + bw
}

fn check_bcast(a: Shape, b: Shape) {
    for (x, y) in a.dims().into_iter().zip(b.dims()) {
        assert!(y == x || y == 1, "cannot broadcast {b} onto {a}");
    }
}

/// Elementwise product where `b` broadcasts over its unit dimensions.
pub fn mul<T: Float>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let (sa, sb) = (a.shape(), b.shape());
    check_bcast(sa, sb);
    if any_meta(&[a, b]) {
        return meta(sa);
    }
    let (av, bv) = (a.value().clone(), b.value().clone());
    let mut y = vec![T::zero(); sa.numel()];
    {
        let (ad, bd) = (av.data(), bv.data());
        let mut i = 0;
        for n in 0..sa.n {
            for c in 0..sa.c {
                for h in 0..sa.h {
                    for w in 0..sa.w {
                        y[i] = ad[i] * bd[bcast_index(sb, n, c, h, w)];
                        i += 1;
                    }
                }
            }
        }
    }
    let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
    Var::from_op(Tensor::from_vec(sa, y), &[a, b], move |gy| {
        let (ad, bd, g) = (av.data(), bv.data(), gy.data());
        let mut ga = need_a.then(|| vec![T::zero(); sa.numel()]);
        let mut gb = need_b.then(|| vec![T::zero(); sb.numel()]);
        let mut i = 0;
        for n in 0..sa.n {
            for c in 0..sa.c {
                for h in 0..sa.h {
                    for w in 0..sa.w {
                        let j = bcast_index(sb, n, c, h, w);
                        if let Some(ga) = ga.as_mut() {
                            ga[i] = g[i] * bd[j];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] = gb[j] + g[i] * ad[i];
                        }
                        i += 1;
                    }
                }
            }
        }
        vec![ga.map(|v| Tensor::from_vec(sa, v)), gb.map(|v| Tensor::from_vec(sb, v))]
    })
}

/// Concatenation along the channel axis.
pub fn concat_channels<T: Float>(xs: &[&Var<T>]) -> Var<T> {
    assert!(!xs.is_empty(), "concat of zero tensors");
    let s0 = xs[0].shape();
    for x in xs {
        let s = x.shape();
        assert_eq!((s.n, s.h, s.w), (s0.n, s0.h, s0.w), "concat shape mismatch: {s} vs {s0}");
    }
    let widths: Vec<usize> = xs.iter().map(|x| x.shape().c).collect();
    let total: usize = widths.iter().sum();
    let os = s0.with_c(total);
    if any_meta(xs) {
        return meta(os);
    }
    let plane = s0.plane();
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s0.n {
        for x in xs {
            let s = x.shape();
            out.extend_from_slice(&x.value().data()[n * s.item()..(n + 1) * s.item()]);
        }
    }
    let needs: Vec<bool> = xs.iter().map(|x| x.requires_grad()).collect();
    Var::from_op(Tensor::from_vec(os, out), xs, move |gy| {
        let mut offset = 0;
        let mut res = Vec::with_capacity(widths.len());
        for (&c, &need) in widths.iter().zip(&needs) {
            if need {
                let s = s0.with_c(c);
                let mut g = Vec::with_capacity(s.numel());
                for n in 0..s0.n {
                    let start = (n * total + offset) * plane;
                    g.extend_from_slice(&gy.data()[start..start + c * plane]);
                }
                res.push(Some(Tensor::from_vec(s, g)));
            } else {
                res.push(None);
            }
            offset += c;
        }
        res
    })
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Float>(x: &Var<T>, start: usize, len: usize) -> Var<T> {
    let xs = x.shape();
    assert!(start + len <= xs.c, "channel slice {start}+{len} out of range for {xs}");
    let os = xs.with_c(len);
    if x.is_meta() {
        return meta(os);
    }
    let plane = xs.plane();
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..xs.n {
        let off = (n * xs.c + start) * plane;
        out.extend_from_slice(&x.value().data()[off..off + len * plane]);
    }
    Var::from_op(Tensor::from_vec(os, out), &[x], move |gy| {
        let mut g = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            let off = (n * xs.c + start) * plane;
            g[off..off + len * plane].copy_from_slice(&gy.data()[n * os.item()..(n + 1) * os.item()]);
        }
        vec![Some(Tensor::from_vec(xs, g))]
    })
}

/// Softmax across channels at every spatial location.
pub fn softmax_channels<T: Float>(x: &Var<T>) -> Var<T> {
    let xs = x.shape();
    if x.is_meta() {
        return meta(xs);
    }
    let plane = xs.plane();
    let mut y = vec![T::zero(); xs.numel()];
    let xd = x.value().data();
    for n in 0..xs.n {
        for p in 0..plane {
            let idx = |c: usize| (n * xs.c + c) * plane + p;
            let m = (0..xs.c).map(|c| xd[idx(c)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for c in 0..xs.c {
                let e = (xd[idx(c)] - m).exp();
                y[idx(c)] = e;
                s = s + e;
            }
            for c in 0..xs.c {
                y[idx(c)] = y[idx(c)] / s;
            }
        }
    }
    let yt = Tensor::from_vec(xs, y);
    let yc = yt.clone();
    Var::from_op(yt, &[x], move |gy| {
        let (y, g) = (yc.data(), gy.data());
        let mut gx = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            for p in 0..plane {
                let idx = |c: usize| (n * xs.c + c) * plane + p;
                let dot: T = (0..xs.c).map(|c| g[idx(c)] * y[idx(c)]).sum();
                for c in 0..xs.c {
                    gx[idx(c)] = y[idx(c)] * (g[idx(c)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_vec(xs, gx))]
    })
}

/// Half-pixel-centred bilinear resize to `(oh, ow)`.
pub fn resize_bilinear<T: Float>(x: &Var<T>, oh: usize, ow: usize) -> Var<T> {
    let xs = x.shape();
    let os = xs.with_hw(oh, ow);
    if x.is_meta() {
        return meta(os);
    }
    if (xs.h, xs.w) == (oh, ow) {
        return Var::from_op(x.value().clone(), &[x], |gy| vec![Some(gy.clone())]);
    }
    let y = spatial::resize_bilinear(x.value().data(), xs, oh, ow);
    Var::from_op(Tensor::from_vec(os, y), &[x], move |gy| {
        vec![Some(Tensor::from_vec(xs, spatial::resize_bilinear_backward(gy.data(), xs, oh, ow)))]
    })
}

pub fn adaptive_avg_pool<T: Float>(x: &Var<T>, oh: usize, ow: usize) -> Var<T> {
    let xs = x.shape();
    let os = xs.with_hw(oh, ow);
    if x.is_meta() {
        return meta(os);
    }
    let y = spatial::adaptive_avg_pool(x.value().data(), xs, oh, ow);
    Var::from_op(Tensor::from_vec(os, y), &[x], move |gy| {
        vec![Some(Tensor::from_vec(xs, spatial::adaptive_avg_pool_backward(gy.data(), xs, oh, ow)))]
    })
}

pub fn adaptive_max_pool<T: Float>(x: &Var<T>, oh: usize, ow: usize) -> Var<T> {
    let xs = x.shape();
    let os = xs.with_hw(oh, ow);
    if x.is_meta() {
        return meta(os);
    }
    let (y, arg) = spatial::adaptive_max_pool(x.value().data(), xs, oh, ow);
    Var::from_op(Tensor::from_vec(os, y), &[x], move |gy| {
        vec![Some(Tensor::from_vec(xs, spatial::argmax_backward(gy.data(), &arg, xs, oh * ow)))]
    })
}

/// Spatial mean per channel, `[n, c, h, w] -> [n, c, 1, 1]`.
pub fn global_avg_pool<T: Float>(x: &Var<T>) -> Var<T> {
    adaptive_avg_pool(x, 1, 1)
}

pub fn max_pool2d<T: Float>(x: &Var<T>, k: usize, stride: usize, pad: usize) -> Var<T> {
    let xs = x.shape();
    if x.is_meta() {
        let oh = (xs.h + 2 * pad - k) / stride + 1;
        let ow = (xs.w + 2 * pad - k) / stride + 1;
        return meta(xs.with_hw(oh, ow));
    }
    let (y, arg, os) = spatial::max_pool(x.value().data(), xs, k, stride, pad);
    let plane = os.plane();
    Var::from_op(Tensor::from_vec(os, y), &[x], move |gy| {
        vec![Some(Tensor::from_vec(xs, spatial::argmax_backward(gy.data(), &arg, xs, plane)))]
    })
}

/// Sum of all elements as a scalar.
pub fn sum<T: Float>(x: &Var<T>) -> Var<T> {
    let xs = x.shape();
    if x.is_meta() {
        return meta(Shape::SCALAR);
    }
    let s = x.value().sum();
    Var::from_op(Tensor::scalar(s), &[x], move |gy| vec![Some(Tensor::full(xs, gy.data()[0]))])
}

pub fn mean<T: Float>(x: &Var<T>) -> Var<T> {
    let n = x.shape().numel() as f64;
    scale(&sum(x), 1.0 / n)
}

/// `Σ x ⊙ w` for a constant weight tensor `w`.
pub fn dot_const<T: Float>(x: &Var<T>, w: &Tensor<T>) -> Var<T> {
    assert_eq!(x.shape(), w.shape(), "dot_const shape mismatch");
    if x.is_meta() {
        return meta(Shape::SCALAR);
    }
    let s = x.value().data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
    let wc = w.clone();
    Var::from_op(Tensor::scalar(s), &[x], move |gy| {
        let g = gy.data()[0];
        vec![Some(wc.map(|v| v * g))]
    })
}
