use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::info;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::session::Session;
use crate::sgns::{ReferenceTrainer, TrainingConfig};
use crate::vocab::Vocabulary;

use super::client::Client;
use super::partition::partition_dims;
use super::shard::{run_shard, ShardOptions, ShardState};
use super::transport::{wire, ByteCounter, TrafficReport, TransportKind};

/// How batches of different clients are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientSchedule {
    /// Clients run freely; their batches interleave on the shards.
    #[default]
    Concurrent,
    /// One batch at a time, clients taking turns round-robin.
    Serialized,
}

#[derive(Debug, Clone)]
pub struct PsConfig {
    pub shards: usize,
    pub clients: usize,
    pub transport: TransportKind,
    pub schedule: ClientSchedule,
    /// How long a client waits for shard replies before retrying.
    pub timeout: Duration,
    /// Shards write their slices here at the end of every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Test hook: `(shard, n)` kills `shard` on its `n + 1`-th request.
    pub fail_shard: Option<(usize, u64)>,
}

impl Default for PsConfig {
    fn default() -> Self {
        PsConfig {
            shards: 1,
            clients: 1,
            transport: TransportKind::InProcess,
            schedule: ClientSchedule::Concurrent,
            timeout: Duration::from_secs(30),
            checkpoint_dir: None,
            fail_shard: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsEpochStats {
    pub epoch: usize,
    pub pairs: usize,
    pub batches: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct PsOutcome<T> {
    pub table: EmbeddingTable<T>,
    pub traffic: TrafficReport,
    pub epochs: Vec<PsEpochStats>,
}

impl<T> PsOutcome<T> {
    pub fn batches(&self) -> usize {
        self.epochs.iter().map(|e| e.batches).sum()
    }
}

/// Contiguous range of an epoch's batches owned by each client.
pub fn client_ranges(batches: usize, clients: usize) -> Vec<std::ops::Range<usize>> {
    (0..clients)
        .map(|c| (c * batches / clients)..((c + 1) * batches / clients))
        .collect()
}

/// Global batch order of the serialized schedule: clients take turns, one
/// batch each, skipping clients whose range is exhausted.
pub fn serialized_order(batches: usize, clients: usize) -> Vec<usize> {
    let ranges = client_ranges(batches, clients);
    let longest = ranges.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut order = Vec::with_capacity(batches);
    for step in 0..longest {
        for r in &ranges {
            if step < r.len() {
                order.push(r.start + step);
            }
        }
    }
    order
}

#[derive(Default)]
struct Gate {
    turn: usize,
    arrived: usize,
    generation: u64,
    failed: bool,
}

/// Turnstile for the serialized schedule plus an epoch barrier, both
/// released on failure.
struct Coordinator {
    clients: usize,
    state: Mutex<Gate>,
    cv: Condvar,
}

impl Coordinator {
    fn new(clients: usize) -> Self {
        Coordinator {
            clients,
            state: Mutex::new(Gate::default()),
            cv: Condvar::new(),
        }
    }

    fn fail(&self) {
        self.state.lock().unwrap().failed = true;
        self.cv.notify_all();
    }

    /// Blocks until `position` in the serialized order is up.
    fn wait_turn(&self, position: usize) -> bool {
        let mut g = self.state.lock().unwrap();
        while g.turn != position && !g.failed {
            g = self.cv.wait(g).unwrap();
        }
        !g.failed
    }

    fn pass_turn(&self) {
        self.state.lock().unwrap().turn += 1;
        self.cv.notify_all();
    }

    fn barrier(&self) -> bool {
        let mut g = self.state.lock().unwrap();
        let generation = g.generation;
        g.arrived += 1;
        if g.arrived == self.clients {
            g.arrived = 0;
            g.turn = 0;
            g.generation += 1;
            self.cv.notify_all();
        } else {
            while g.generation == generation && !g.failed {
                g = self.cv.wait(g).unwrap();
            }
        }
        !g.failed
    }
}

/// Trains with the parameter-server protocol. Shards own column slices of
/// the table and run as event loops; clients drive minibatches of each
/// epoch plan through them.
pub fn run_distributed<T: Real>(
    sessions: &[Session],
    vocab: &Vocabulary,
    config: &TrainingConfig,
    ps: &PsConfig,
) -> Result<PsOutcome<T>> {
    if ps.clients == 0 {
        return Err(Error::InvalidArgument("at least one client is required".into()));
    }
    let trainer = ReferenceTrainer::new(sessions, vocab, config.clone())?;
    let slices = partition_dims(config.dim, ps.shards)?;
    let initial: EmbeddingTable<T> = trainer.init_table()?;
    let rate = trainer.learning_rate();
    let plans: Vec<_> = (0..config.epochs).map(|e| trainer.plan(e)).collect();

    let counter = Arc::new(ByteCounter::default());
    let (shard_endpoints, client_endpoints) = wire(ps.transport, ps.shards, ps.clients, counter.clone())?;

    let shard_handles: Vec<_> = shard_endpoints
        .into_iter()
        .zip(&slices)
        .map(|(endpoint, &slice)| {
            let state = ShardState::from_table(&initial, slice, trainer.sampler().clone());
            let options = ShardOptions {
                checkpoint_dir: ps.checkpoint_dir.clone(),
                fail_after_requests: ps
                    .fail_shard
                    .and_then(|(s, n)| (s == slice.shard_id).then_some(n)),
            };
            thread::spawn(move || run_shard(state, endpoint, options))
        })
        .collect();
    drop(initial);

    let coordinator = Coordinator::new(ps.clients);
    let checkpointed = Mutex::new(None::<usize>);
    let epoch_stats = Mutex::new(Vec::<PsEpochStats>::new());

    let client_results: Vec<Result<()>> = thread::scope(|scope| {
        let handles: Vec<_> = client_endpoints
            .into_iter()
            .map(|endpoint| {
                let (trainer, plans, coordinator) = (&trainer, &plans, &coordinator);
                let (checkpointed, epoch_stats) = (&checkpointed, &epoch_stats);
                let sampler = trainer.sampler();
                scope.spawn(move || {
                    let mut client = Client::new(endpoint, sampler, rate, config.negatives, ps.timeout);
                    let me = client.id();
                    let result = (|| -> Result<()> {
                        for plan in plans {
                            let n = plan.batches.len();
                            let mine = client_ranges(n, ps.clients)[me].clone();
                            let order = serialized_order(n, ps.clients);
                            for b in mine {
                                let serialized = ps.schedule == ClientSchedule::Serialized;
                                let position = order.iter().position(|&x| x == b).unwrap_or(0);
                                if serialized && !coordinator.wait_turn(position) {
                                    return Ok(());
                                }
                                client.run_batch::<T>(&plan.batches[b])?;
                                if serialized {
                                    coordinator.pass_turn();
                                }
                            }
                            if !coordinator.barrier() {
                                return Ok(());
                            }
                            if me == 0 {
                                if ps.checkpoint_dir.is_some() && client.checkpoint(plan.epoch as u32)? {
                                    *checkpointed.lock().unwrap() = Some(plan.epoch);
                                }
                                let stats = PsEpochStats {
                                    epoch: plan.epoch,
                                    pairs: plan.pair_count(),
                                    batches: n,
                                    alpha: trainer.learning_rate().at(
                                        plans[..=plan.epoch].iter().map(|p| p.pair_count() as u64).sum(),
                                    ),
                                };
                                info!(
                                    "epoch {}, pairs {}, batches {}, alpha {:.6}",
                                    stats.epoch, stats.pairs, stats.batches, stats.alpha
                                );
                                epoch_stats.lock().unwrap().push(stats);
                            }
                            if !coordinator.barrier() {
                                return Ok(());
                            }
                        }
                        Ok(())
                    })();
                    if result.is_err() {
                        coordinator.fail();
                    } else if me == 0 {
                        client.shutdown_shards();
                    }
                    result
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("client thread panicked"))
            .collect()
    });

    let states: Vec<Option<ShardState<T>>> = shard_handles
        .into_iter()
        .map(|h| h.join().expect("shard thread panicked"))
        .collect();

    let first_error = client_results.into_iter().find_map(Result::err);
    let dead_shard = states.iter().position(Option::is_none);
    if first_error.is_some() || dead_shard.is_some() {
        let msg = match (&first_error, dead_shard) {
            (Some(e), _) => e.to_string(),
            (None, Some(s)) => format!("shard {} stopped", s),
            (None, None) => unreachable!(),
        };
        if let Some(e @ (Error::Protocol { .. } | Error::NonFinite { .. })) = first_error {
            if dead_shard.is_none() {
                return Err(e);
            }
        }
        let last = *checkpointed.lock().unwrap();
        return Err(Error::ShardFailure {
            msg,
            last_completed_epoch: last,
            checkpoint: last.and(ps.checkpoint_dir.clone()),
        });
    }

    let mut table = EmbeddingTable::zeros(vocab.len(), config.dim);
    for state in states.into_iter().flatten() {
        state.copy_into(&mut table);
    }
    Ok(PsOutcome {
        table,
        traffic: counter.report(),
        epochs: epoch_stats.into_inner().unwrap(),
    })
}
