//! Data-parallel helpers with a sequential fallback.
//!
//! The crate's hot loops (value-iteration sweeps, Monte Carlo batches,
//! per-day calibration) are embarrassingly parallel. With the default
//! `parallel` feature they run on rayon; built with
//! `--no-default-features` they fall back to plain iterators. The
//! `parallel: bool` arguments select the path at runtime so benchmarks can
//! compare both in a single binary; without the feature the flag is
//! ignored and everything is sequential.
//!
//! All helpers are deterministic: outputs are written by index, and
//! reductions are either order-independent (max) or folded in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cap the global rayon pool from the `LOBMM_THREADS` environment variable.
/// Call once at startup; later calls are no-ops.
pub fn init_thread_pool_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("LOBMM_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}

/// Fill `out[i] = f(i)` for all indices.
pub fn fill_indexed<F>(out: &mut [f64], f: F, parallel: bool)
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
        return;
    }
    let _ = parallel;
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}

/// Fill two index-aligned slices at once (value and action of a sweep).
pub fn fill_indexed2<F>(out_a: &mut [f64], out_b: &mut [u16], f: F, parallel: bool)
where
    F: Fn(usize) -> (f64, u16) + Sync,
{
    debug_assert_eq!(out_a.len(), out_b.len());
    #[cfg(feature = "parallel")]
    if parallel {
        out_a
            .par_iter_mut()
            .zip(out_b.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a, b))| {
                let (va, vb) = f(i);
                *a = va;
                *b = vb;
            });
        return;
    }
    let _ = parallel;
    for (i, (a, b)) in out_a.iter_mut().zip(out_b.iter_mut()).enumerate() {
        let (va, vb) = f(i);
        *a = va;
        *b = vb;
    }
}

/// Map `f` over `0..n` and collect results in index order.
pub fn map_indexed<T, F>(n: usize, f: F, parallel: bool) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Maximum of `f(i)` over `0..n`; returns 0.0 for an empty range.
pub fn max_indexed<F>(n: usize, f: F, parallel: bool) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n)
            .into_par_iter()
            .map(&f)
            .reduce(|| 0.0_f64, f64::max);
    }
    let _ = parallel;
    (0..n).map(f).fold(0.0_f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt();
        let mut a = vec![0.0; 1000];
        let mut b = vec![0.0; 1000];
        fill_indexed(&mut a, f, true);
        fill_indexed(&mut b, f, false);
        assert_eq!(a, b);
        assert_eq!(max_indexed(1000, f, true), max_indexed(1000, f, false));
    }
}
