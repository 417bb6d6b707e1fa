//! Execution mode switch.
//!
//! `Reference` runs every kernel on the calling thread in a fixed order and
//! is bitwise reproducible. `Parallel` (only with the `parallel` feature)
//! splits batch and row work across the rayon pool. Work is always cut into
//! fixed-size pieces and reduced in index order, so the two modes only differ
//! where a kernel itself changes summation order.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Reference,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn set_exec_mode(mode: ExecMode) {
    let v = match mode {
        ExecMode::Reference => 0,
        ExecMode::Parallel => 1,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn exec_mode() -> ExecMode {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 1 {
        ExecMode::Parallel
    } else {
        ExecMode::Reference
    }
}

/// Configures the global rayon pool; `threads <= 1` selects reference mode.
pub fn configure_threads(threads: usize) {
    if threads <= 1 {
        set_exec_mode(ExecMode::Reference);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        // A second call keeps the first pool; only the mode changes.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        set_exec_mode(ExecMode::Parallel);
    }
}

/// Calls `f(chunk_index, chunk)` over `chunk_len`-sized pieces of `data`.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec_mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(i)` for `i in 0..n`, results in index order.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec_mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
