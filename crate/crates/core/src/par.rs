//! Data-parallel loop helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they compile to plain loops. A runtime switch can force the sequential
//! path even when rayon is compiled in, which the benches use to compare
//! both implementations in one binary.
//!
//! Every call site is written so each output element is produced by an
//! independent sequential computation: results are bit-identical between the
//! parallel and sequential paths, not merely equal up to reassociation.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all `par` helpers onto the sequential path at runtime.
pub fn set_force_sequential(value: bool) {
    FORCE_SEQUENTIAL.store(value, Ordering::SeqCst);
}

pub fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Splits `out` into `chunk` sized pieces and runs `f(chunk_index, piece)`
/// on each, in parallel when available.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        if !force_sequential() {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Runs `f(i)` for `i` in `0..n`, in parallel when available.
pub fn for_each_index<F>(n: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !force_sequential() {
            use rayon::prelude::*;
            (0..n).into_par_iter().for_each(f);
            return;
        }
    }
    for i in 0..n {
        f(i);
    }
}
