//! Order-preserving parallel map over independent jobs, plus wall-clock timing.
//! Without `std` both degrade to sequential execution and zero timings.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

static THREAD_LIMIT: AtomicUsize = AtomicUsize::new(0);

/// Caps the number of worker threads used by experiment sweeps; `0` means
/// "use the available parallelism".
pub fn set_thread_limit(n: usize) {
    THREAD_LIMIT.store(n, Ordering::Relaxed);
}

pub fn thread_limit() -> usize {
    THREAD_LIMIT.load(Ordering::Relaxed)
}

#[cfg(feature = "std")]
fn workers(jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = match thread_limit() {
        0 => avail,
        n => n,
    };
    cap.min(jobs).max(1)
}

/// Applies `f` to every item; results come back in input order.
#[cfg(feature = "std")]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let w = workers(items.len());
    if w <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..w {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("job result missing")).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "std")]
pub(crate) struct Stopwatch(std::time::Instant);

#[cfg(feature = "std")]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }
    pub(crate) fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(not(feature = "std"))]
pub(crate) struct Stopwatch;

#[cfg(not(feature = "std"))]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch
    }
    pub(crate) fn seconds(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = map(&items, |v| v * v);
        assert_eq!(out, items.iter().map(|v| v * v).collect::<Vec<_>>());
    }
}
