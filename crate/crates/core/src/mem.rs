//! Live matrix-buffer accounting.
//!
//! Solver paths allocate their state, stage and scratch matrices as
//! [`Tracked`] buffers. A thread-local registry counts how many are alive and
//! the peak since the last reset, which is what the memory report measures:
//! the adjoint backward pass holds a fixed set of buffers whatever the step
//! count, while backprop through a stored trajectory holds one per layer.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

use crate::Mat;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn register() {
    LIVE.with(|live| {
        let now = live.get() + 1;
        live.set(now);
        PEAK.with(|peak| peak.set(peak.get().max(now)));
    });
}

/// Number of tracked buffers currently alive on this thread.
pub fn live_buffers() -> usize {
    LIVE.with(Cell::get)
}

/// Measures the peak number of live tracked buffers while `f` runs, relative
/// to the number alive when it started.
pub fn measure_peak<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let baseline = live_buffers();
    let saved_peak = PEAK.with(|p| p.replace(baseline));
    let out = f();
    let peak = PEAK.with(|p| p.replace(saved_peak.max(p.get())));
    (out, peak - baseline)
}

/// A matrix buffer counted by the registry for as long as it lives.
#[derive(Debug)]
pub struct Tracked(Mat);

impl Tracked {
    pub fn new(m: Mat) -> Self {
        register();
        Tracked(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Mat::zeros(rows, cols))
    }

    pub fn into_inner(self) -> Mat {
        let this = std::mem::ManuallyDrop::new(self);
        LIVE.with(|live| live.set(live.get() - 1));
        // SAFETY: `this` is never dropped, so the matrix is moved out exactly once.
        unsafe { std::ptr::read(&this.0) }
    }
}

impl Clone for Tracked {
    fn clone(&self) -> Self {
        Self::new(self.0.clone())
    }
}

impl Drop for Tracked {
    fn drop(&mut self) {
        LIVE.with(|live| live.set(live.get() - 1));
    }
}

impl Deref for Tracked {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

impl DerefMut for Tracked {
    fn deref_mut(&mut self) -> &mut Mat {
        &mut self.0
    }
}
