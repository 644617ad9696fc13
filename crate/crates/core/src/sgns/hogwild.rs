use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::embed::EmbeddingTable;
use crate::error::Result;
use crate::scalar::Real;

use super::trainer::{LearningRate, ReferenceTrainer};

/// Table shared by workers without locking.
///
/// Updates touch few rows at a time, so concurrent writers rarely collide;
/// when they do, one of the updates is partially lost. Results carry no
/// determinism guarantee.
struct SharedTable<T>(UnsafeCell<EmbeddingTable<T>>);

unsafe impl<T: Send> Sync for SharedTable<T> {}

impl<T> SharedTable<T> {
    #[allow(clippy::mut_from_ref)]
    unsafe fn get(&self) -> &mut EmbeddingTable<T> {
        &mut *self.0.get()
    }
}

/// Lock-free multi-worker variant of the reference trainer. Batches of each
/// epoch are dealt round-robin to `threads` workers; with one thread this is
/// the reference trainer.
pub fn train_hogwild<T: Real>(
    trainer: &ReferenceTrainer<'_>,
    threads: usize,
) -> Result<EmbeddingTable<T>> {
    let threads = threads.max(1);
    let shared = SharedTable(UnsafeCell::new(trainer.init_table::<T>()?));
    let rate = trainer.learning_rate();
    let processed = AtomicU64::new(0);

    for epoch in 0..trainer.config().epochs {
        let plan = trainer.plan(epoch);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let plan = &plan;
                    let shared = &shared;
                    let processed = &processed;
                    let rate: &LearningRate = &rate;
                    scope.spawn(move || {
                        for batch in plan.batches.iter().skip(w).step_by(threads) {
                            let start = processed.fetch_add(batch.pairs.len() as u64, Ordering::Relaxed);
                            let mut local = start;
                            // SAFETY: aliasing mutable access is the point of
                            // this mode; rows are plain floats.
                            let table = unsafe { shared.get() };
                            trainer.run_batch(table, batch, rate, &mut local)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            r?;
        }
    }
    Ok(shared.0.into_inner())
}
