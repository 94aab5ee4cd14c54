//! Execution helpers shared by the scan, fan-out and evaluation loops.
//!
//! With the `parallel` feature, CPU-bound maps run on the rayon pool and
//! I/O-bound fan-outs run on a bounded set of scoped worker threads. Without
//! it both degrade to a plain sequential loop with identical output.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicUsize, Ordering};
#[cfg(feature = "parallel")]
use std::sync::Mutex;

/// Default bound on concurrent provider calls.
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Whether this build runs loops in parallel.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `items` with at most `bound` calls in flight, returning
/// results in input order regardless of completion order.
///
/// Intended for blocking calls (HTTP providers, generators), so it uses
/// dedicated threads rather than the rayon pool.
pub fn bounded_map<T, R, F>(items: &[T], bound: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        let workers = bound.max(1).min(items.len());
        if workers > 1 {
            return bounded_map_threads(items, workers, &f);
        }
    }
    let _ = bound;
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn bounded_map_threads<T, R, F>(items: &[T], workers: usize, f: &F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("every slot is filled before the scope ends")
        })
        .collect()
}

/// CPU-bound order-preserving map.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// CPU-bound order-preserving map over an index range.
pub fn par_map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}
