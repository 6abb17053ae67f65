//! Minimal scoped worker pool.
//!
//! Work items are claimed from a shared counter, but every result is stored
//! at its item index, so output never depends on scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

/// `threads == 0` means one worker per available core.
pub fn resolve_workers(threads: usize) -> usize {
    if threads == 0 {
        thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
}

/// Evaluates `f(0..count)` on at most `workers` threads and returns results in index order.
pub fn map_indexed<T, F>(workers: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut parts: Vec<Vec<(usize, T)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= count {
                            break;
                        }
                        local.push((i, f(i)));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    for part in parts.iter_mut() {
        for (i, v) in part.drain(..) {
            slots[i] = Some(v);
        }
    }
    slots
        .into_iter()
        .map(|v| v.expect("every index is produced once"))
        .collect()
}

/// Fills `out` (row-major, `row_len` entries per row) by contiguous row blocks,
/// one block per worker; `fill(row, slice)` writes one row.
pub fn fill_rows<F>(workers: usize, out: &mut [f64], row_len: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if row_len == 0 {
        return;
    }
    let rows = out.len() / row_len;
    let workers = workers.max(1).min(rows.max(1));
    if workers <= 1 {
        for (r, row) in out.chunks_exact_mut(row_len).enumerate() {
            fill(r, row);
        }
        return;
    }
    let per_block = rows.div_ceil(workers);
    thread::scope(|s| {
        for (b, block) in out.chunks_mut(per_block * row_len).enumerate() {
            let fill = &fill;
            s.spawn(move || {
                for (k, row) in block.chunks_exact_mut(row_len).enumerate() {
                    fill(b * per_block + k, row);
                }
            });
        }
    });
}
