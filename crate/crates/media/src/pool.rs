use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::MediaError;

/// Runs `job(0..n)` on at most `jobs` threads (0 = available parallelism)
/// and returns results in index order. Stops handing out work after the
/// first failure and returns the lowest-index error.
pub(crate) fn run_bounded<T, F>(jobs: usize, n: usize, job: F) -> Result<Vec<T>, MediaError>
where
    T: Send,
    F: Fn(usize) -> Result<T, MediaError> + Sync,
{
    let threads = if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get())
    } else {
        jobs
    }
    .min(n.max(1));
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<T, MediaError>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = job(i);
                if result.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots.into_inner().unwrap() {
        match slot {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    Ok(out)
}
