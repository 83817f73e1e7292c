//! Deterministic fan-out over independent work items.
//!
//! Results are merged by item index, so the output is identical for any
//! worker count. `MECHLAB_THREADS` caps the number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};

fn worker_count(items: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("MECHLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(available);
    cap.min(available).min(items.max(1))
}

/// Applies `f` to every index in `0..len` and returns results in index order.
pub fn par_map_indexed<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let workers = worker_count(len);
    if workers <= 1 || len <= 1 {
        return (0..len).map(f).collect();
    }
    let mut slots: Vec<Option<R>> = Vec::with_capacity(len);
    slots.resize_with(len, || None);
    let next = AtomicUsize::new(0);
    let slots_ptr = SlotWriter(slots.as_mut_ptr());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let f = &f;
            let next = &next;
            let slots_ptr = &slots_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= len {
                    break;
                }
                let value = f(i);
                // Each index is claimed by exactly one worker.
                unsafe { *slots_ptr.0.add(i) = Some(value) };
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("worker filled every slot"))
        .collect()
}

struct SlotWriter<R>(*mut Option<R>);
unsafe impl<R: Send> Sync for SlotWriter<R> {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = par_map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_is_fine() {
        let out: Vec<u32> = par_map_indexed(0, |_| unreachable!());
        assert!(out.is_empty());
    }
}
