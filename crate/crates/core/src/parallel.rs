//! Deterministic data-parallel reductions.

use rayon::prelude::*;

/// Trials per work unit. Fixed so the reduction tree never depends on the
/// number of threads.
pub const CHUNK: u64 = 256;

/// Folds trials `0..n` into per-chunk accumulators in parallel, then merges
/// the chunks sequentially in index order. The result is bit-identical for
/// any thread count.
pub fn fold_trials<A, E, I, F, M>(n: u64, init: I, step: F, merge: M) -> Result<A, E>
where
    A: Send,
    E: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) -> Result<(), E> + Sync,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<A, E>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                step(&mut acc, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

/// `f(0), …, f(n−1)` evaluated in parallel, returned in index order.
pub fn map_trials<T, E, F>(n: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_is_independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    fold_trials(
                        10_000,
                        || 0.0f64,
                        |acc, i| {
                            *acc += 1.0 / (i as f64 + 1.0).sqrt();
                            Ok::<_, ()>(())
                        },
                        |a, b| *a += b,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }

    #[test]
    fn map_keeps_order_and_propagates_errors() {
        assert_eq!(map_trials(5, |i| Ok::<_, ()>(i * 2)).unwrap(), vec![0, 2, 4, 6, 8]);
        assert_eq!(map_trials(5, |i| if i == 3 { Err(i) } else { Ok(i) }), Err(3));
    }
}
