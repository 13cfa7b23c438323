//! Bounded fan-out over a work list with order-preserving collection.

use std::sync::Mutex;

/// Apply `f` to every item using at most `cap` worker threads. Results
/// come back in input order regardless of completion order, so callers
/// stay deterministic. `cap` of 0 or 1 runs inline.
pub fn parallel_map<T, R, F>(items: Vec<T>, cap: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    let workers = cap.clamp(1, n.max(1));
    if workers <= 1 {
        return items.into_iter().map(f).collect();
    }

    let queue = Mutex::new(items.into_iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((idx, item)) = queue.lock().expect("queue lock").pop() else {
                    return;
                };
                let out = f(item);
                results.lock().expect("results lock")[idx] = Some(out);
            });
        }
    });

    results
        .into_inner()
        .expect("all workers joined")
        .into_iter()
        .map(|slot| slot.expect("every index was filled"))
        .collect()
}
