//! Instrumented floating-point operation counter.
//!
//! Every public primitive in [`super::ops`] reports its cost here. The
//! conventions are fixed and shared with the closed-form counts in
//! `analysis`:
//!
//! * one multiply-accumulate is 2 FLOPs; bias terms seed the accumulator and
//!   are free,
//! * elementwise add, multiply and scale cost 1 per element,
//! * softmax and the sigmoid exponential cost 4 per element,
//! * layer norm costs 7 per element,
//! * a length-`L` FFT costs `5 L ceil(log2 L)`,
//! * reshapes, transposes, slices, concatenations and broadcasts are free.
//!
//! The counter is thread-local, so concurrent test threads do not interfere.

use std::cell::Cell;

pub const SOFTMAX_PER_ELEMENT: u64 = 4;
pub const LAYER_NORM_PER_ELEMENT: u64 = 7;
pub const RELU_PER_ELEMENT: u64 = 1;
pub const SIGMOID_PER_ELEMENT: u64 = 4;
pub const SWISH_PER_ELEMENT: u64 = 5;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(flops: u64) {
    COUNTER.with(|c| c.set(c.get().wrapping_add(flops)));
}

/// Current value of this thread's counter.
pub fn current() -> u64 {
    COUNTER.with(Cell::get)
}

/// Run `f` and return its result together with the FLOPs it executed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = current();
    let out = f();
    (out, current().wrapping_sub(start))
}

/// Run `f` without charging its work to the counter.
pub(crate) fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    let start = current();
    let out = f();
    COUNTER.with(|c| c.set(start));
    out
}

/// Nominal radix-2 cost of one complex FFT of length `len`.
pub fn fft_flops(len: usize) -> u64 {
    if len <= 1 {
        return 0;
    }
    let log2 = usize::BITS - (len - 1).leading_zeros();
    5 * len as u64 * u64::from(log2)
}
