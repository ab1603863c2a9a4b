//! Per-channel batch normalization kernels.

use crate::{par, Float, Shape};

/// Per-channel mean and biased variance over batch and space.
pub fn channel_moments<T: Float>(x: &[T], xs: Shape) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(xs.n * xs.plane()).unwrap();
    let stats = par::map_range(xs.c, |c| {
        let mut s = T::zero();
        for n in 0..xs.n {
            let off = (n * xs.c + c) * xs.plane();
            s = s + x[off..off + xs.plane()].iter().copied().sum::<T>();
        }
        let mean = s / count;
        let mut v = T::zero();
        for n in 0..xs.n {
            let off = (n * xs.c + c) * xs.plane();
            v = v + x[off..off + xs.plane()].iter().map(|&a| (a - mean) * (a - mean)).sum::<T>();
        }
        (mean, v / count)
    });
    stats.into_iter().unzip()
}

/// `y = x · scale[c] + shift[c]`.
pub fn channel_affine<T: Float>(x: &[T], xs: Shape, scale: &[T], shift: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut out, xs.plane().max(1), |pi, dst| {
        let c = pi % xs.c;
        let src = &x[pi * xs.plane()..(pi + 1) * xs.plane()];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s * scale[c] + shift[c];
        }
    });
    out
}

/// Per-channel sums of `a` and of `a · b`.
pub fn channel_sums<T: Float>(a: &[T], b: &[T], xs: Shape) -> (Vec<T>, Vec<T>) {
    let r = par::map_range(xs.c, |c| {
        let (mut sa, mut sab) = (T::zero(), T::zero());
        for n in 0..xs.n {
            let off = (n * xs.c + c) * xs.plane();
            for i in off..off + xs.plane() {
                sa = sa + a[i];
                sab = sab + a[i] * b[i];
            }
        }
        (sa, sab)
    });
    r.into_iter().unzip()
}
