//! Thread-local FLOP accounting.
//!
//! Convolutions report `2 × multiply-accumulates` while a counter is active
//! on the current thread. Normalization, activation, pooling and resampling
//! are not counted.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` with a fresh counter and returns its result together with the
/// number of floating-point operations recorded.
pub fn count_flops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let total = COUNTER.with(|c| c.replace(prev)).unwrap_or(0);
    if let Some(p) = prev {
        COUNTER.with(|c| c.set(Some(p + total)));
    }
    (out, total)
}

/// Adds `macs` multiply-accumulates (counted as two FLOPs each).
pub fn record_macs(macs: u64) {
    COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + 2 * macs));
        }
    });
}
