//! Process-wide switch for the row/batch-parallel kernel paths.
//!
//! Both paths split work into the same fixed blocks and reduce partial
//! results in the same order, so outputs are bit-identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(false);

pub fn set_enabled(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Runs `f(index, chunk)` over fixed-size chunks of `data`.
pub(crate) fn for_each_chunk<T: Send>(
    data: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    let chunk = chunk.max(1);
    if enabled() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Maps `0..n` through `f`, keeping index order in the result.
pub(crate) fn map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if enabled() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
