//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it (or
//! inside [`sequential`]) they run on the calling thread. Reductions always use
//! fixed-size chunks summed in index order, so results are bit-identical
//! across thread counts and across both modes.

use std::cell::Cell;
use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const CHUNK: usize = 2048;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every helper in this module forced onto the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

pub fn map<T, F>(range: Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return range.into_par_iter().map(f).collect();
    }
    range.map(f).collect()
}

pub fn for_each_mut<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            for (j, v) in chunk.iter_mut().enumerate() {
                f(c * CHUNK + j, v);
            }
        });
        return;
    }
    out.iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

/// Deterministic sum of `f(i)` over `range`.
pub fn sum<F>(range: Range<usize>, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let start = range.start;
    let end = range.end.max(start);
    let chunks = (end - start).div_ceil(CHUNK);
    map(0..chunks, |c| {
        let lo = start + c * CHUNK;
        let hi = (lo + CHUNK).min(end);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    })
    .into_iter()
    .sum()
}

/// Deterministic dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len().div_ceil(CHUNK);
    map(0..chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(a.len());
        let (x, y) = (&a[lo..hi], &b[lo..hi]);
        // four accumulators let the compiler vectorize
        let mut acc = [0.0f64; 4];
        let mut i = 0;
        while i + 4 <= x.len() {
            for l in 0..4 {
                acc[l] += x[i + l] * y[i + l];
            }
            i += 4;
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        while i < x.len() {
            s += x[i] * y[i];
            i += 1;
        }
        s
    })
    .into_iter()
    .sum()
}

/// Deterministic vector-valued reduction: `f(i, acc)` adds into a length-`width` accumulator.
pub fn sum_vec<F>(range: Range<usize>, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let start = range.start;
    let len = range.end.saturating_sub(start);
    let chunks = len.div_ceil(CHUNK);
    let partials = map(0..chunks, |c| {
        let mut acc = vec![0.0; width];
        let lo = start + c * CHUNK;
        let hi = (lo + CHUNK).min(range.end);
        for i in lo..hi {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_identical_in_both_modes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = sum(0..100_000, f);
        let b = sequential(|| sum(0..100_000, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn sequential_scope_restores_flag() {
        sequential(|| assert!(!is_parallel()));
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
    }
}

/// Sizes the global thread pool; a no-op without the `parallel` feature.
pub fn configure_threads(threads: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::Error::ConfigInvalid { path: "threads".into(), message: e.to_string() })?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}
