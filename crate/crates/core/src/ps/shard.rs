use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, Real};
use crate::sgns::{apply_update, expand_batch, NegativeSampler, WeightedPair};

use super::partition::DimSlice;
use super::protocol::{
    CoefficientBroadcast, Control, Message, MinibatchRequest, PartialDotsResponse,
};
use super::transport::ShardEndpoint;

/// One shard's slice of every input and output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardState<T> {
    slice: DimSlice,
    rows: usize,
    input_block: Vec<T>,
    output_block: Vec<T>,
    sampler: NegativeSampler,
}

impl<T: Real> ShardState<T> {
    /// Copies the columns of `slice` out of `table`.
    pub fn from_table(table: &EmbeddingTable<T>, slice: DimSlice, sampler: NegativeSampler) -> Self {
        let rows = table.rows();
        let mut input_block = Vec::with_capacity(rows * slice.width());
        let mut output_block = Vec::with_capacity(rows * slice.width());
        for r in 0..rows {
            input_block.extend_from_slice(&table.input(r)[slice.lo..slice.hi]);
            output_block.extend_from_slice(&table.output(r)[slice.lo..slice.hi]);
        }
        ShardState {
            slice,
            rows,
            input_block,
            output_block,
            sampler,
        }
    }

    pub fn slice(&self) -> DimSlice {
        self.slice
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input(&self, id: usize) -> &[T] {
        let w = self.slice.width();
        &self.input_block[id * w..(id + 1) * w]
    }

    pub fn output(&self, id: usize) -> &[T] {
        let w = self.slice.width();
        &self.output_block[id * w..(id + 1) * w]
    }

    fn pair_mut(&mut self, center: usize, context: usize) -> (&mut [T], &mut [T]) {
        let w = self.slice.width();
        (
            &mut self.input_block[center * w..(center + 1) * w],
            &mut self.output_block[context * w..(context + 1) * w],
        )
    }

    /// Writes this shard's columns into `table`.
    pub fn copy_into(&self, table: &mut EmbeddingTable<T>) {
        for r in 0..self.rows {
            table.input_mut(r)[self.slice.lo..self.slice.hi].copy_from_slice(self.input(r));
            table.output_mut(r)[self.slice.lo..self.slice.hi].copy_from_slice(self.output(r));
        }
    }

    fn check_ids(&self, request: &MinibatchRequest) -> Result<()> {
        for p in &request.positives {
            if p.center >= self.rows || p.context >= self.rows {
                return Err(Error::Protocol {
                    batch_id: request.batch_id,
                    msg: format!(
                        "pair ({}, {}) outside vocabulary of {}",
                        p.center, p.context, self.rows
                    ),
                });
            }
        }
        Ok(())
    }

    /// Canonical pair list of a request, negatives regenerated from its seed.
    pub fn expand(&self, request: &MinibatchRequest) -> Vec<WeightedPair> {
        expand_batch(
            &request.positives,
            request.negative_count as usize,
            request.rng_seed,
            &self.sampler,
        )
    }

    fn partials(&self, pairs: &[WeightedPair]) -> Vec<f64> {
        pairs
            .iter()
            .map(|p| dot(self.input(p.center), self.output(p.context)).as_f64())
            .collect()
    }

    fn apply(&mut self, pairs: &[WeightedPair], broadcast: &CoefficientBroadcast) -> Result<()> {
        if pairs.len() != broadcast.coefficients.len() {
            return Err(Error::Protocol {
                batch_id: broadcast.batch_id,
                msg: format!(
                    "{} coefficients for {} pairs",
                    broadcast.coefficients.len(),
                    pairs.len()
                ),
            });
        }
        for (p, &g) in pairs.iter().zip(&broadcast.coefficients) {
            let g = T::from_f64_lossy(g);
            let (center, context) = self.pair_mut(p.center, p.context);
            apply_update(center, context, g);
        }
        Ok(())
    }

    fn write_checkpoint(&self, path: &Path, epoch: u32) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        for x in [
            epoch as u64,
            self.slice.shard_id as u64,
            self.slice.lo as u64,
            self.slice.hi as u64,
            self.rows as u64,
        ] {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in self.input_block.iter().chain(&self.output_block) {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes this shard's partial dot products for every pair of the request
/// (negatives included, sampled from the request seed).
pub fn shard_handle_minibatch<T: Real>(
    state: &ShardState<T>,
    request: &MinibatchRequest,
) -> Result<PartialDotsResponse> {
    state.check_ids(request)?;
    let pairs = state.expand(request);
    Ok(PartialDotsResponse {
        batch_id: request.batch_id,
        shard_id: state.slice.shard_id as u32,
        partials: state.partials(&pairs),
    })
}

/// Applies broadcast coefficients to the shard's dimensions. The pair list is
/// regenerated from `request`; applying the same broadcast twice updates
/// twice, so delivery must be at most once.
pub fn shard_apply_updates<T: Real>(
    state: &mut ShardState<T>,
    request: &MinibatchRequest,
    broadcast: &CoefficientBroadcast,
) -> Result<()> {
    let pairs = state.expand(request);
    state.apply(&pairs, broadcast)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"S2VSHRD1";

pub fn checkpoint_path(dir: &Path, shard_id: usize) -> PathBuf {
    dir.join(format!("shard-{}.ckpt", shard_id))
}

/// Rebuilds a full table from per-shard checkpoint files. Returns the epoch
/// the checkpoint was taken at.
pub fn assemble_checkpoint<T: Real>(dir: &Path, shards: usize) -> Result<(usize, EmbeddingTable<T>)> {
    let mut table: Option<EmbeddingTable<T>> = None;
    let mut epoch = None;
    let mut dim = 0;
    let mut parts = Vec::new();
    for s in 0..shards {
        let mut r = BufReader::new(File::open(checkpoint_path(dir, s))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::invalid("not a shard checkpoint"));
        }
        let mut header = [0u64; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *h = u64::from_le_bytes(b);
        }
        let [e, shard_id, lo, hi, rows] = header.map(|x| x as usize);
        if shard_id != s || epoch.is_some_and(|prev| prev != e) {
            return Err(Error::invalid("inconsistent shard checkpoints"));
        }
        epoch = Some(e);
        dim = dim.max(hi);
        let mut values = Vec::with_capacity(2 * rows * (hi - lo));
        let mut b = [0u8; 8];
        for _ in 0..2 * rows * (hi - lo) {
            r.read_exact(&mut b)?;
            values.push(T::from_f64_lossy(f64::from_le_bytes(b)));
        }
        parts.push((lo, hi, rows, values));
    }
    for (lo, hi, rows, values) in parts {
        let t = table.get_or_insert_with(|| EmbeddingTable::zeros(rows, dim));
        let w = hi - lo;
        let (input, output) = values.split_at(rows * w);
        for r in 0..rows {
            t.input_mut(r)[lo..hi].copy_from_slice(&input[r * w..(r + 1) * w]);
            t.output_mut(r)[lo..hi].copy_from_slice(&output[r * w..(r + 1) * w]);
        }
    }
    Ok((epoch.unwrap_or(0), table.ok_or_else(|| Error::invalid("no shards"))?))
}

#[derive(Debug, Clone, Default)]
pub struct ShardOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Test hook: the event loop dies after handling this many requests.
    pub fail_after_requests: Option<u64>,
}

/// Single-threaded event loop owning one shard. Returns the final state when
/// told to shut down or when every client has disconnected; returns `None`
/// if the injected failure fired.
pub fn run_shard<T: Real>(
    mut state: ShardState<T>,
    mut endpoint: ShardEndpoint,
    options: ShardOptions,
) -> Option<ShardState<T>> {
    let mut pending: HashMap<u64, Vec<WeightedPair>> = HashMap::new();
    let mut counter = 0u64;
    let mut requests = 0u64;

    while let Ok(inbound) = endpoint.inbox.recv() {
        let reply = match Message::decode(&inbound.frame) {
            Err(e) => {
                warn!("shard {}: undecodable frame: {}", state.slice.shard_id, e);
                continue;
            }
            Ok(Message::Request(request)) => {
                requests += 1;
                if options.fail_after_requests.is_some_and(|n| requests > n) {
                    warn!("shard {}: injected failure", state.slice.shard_id);
                    return None;
                }
                match state.check_ids(&request) {
                    Ok(()) => {
                        let pairs = state.expand(&request);
                        let partials = state.partials(&pairs);
                        pending.insert(request.batch_id, pairs);
                        Message::Partial(PartialDotsResponse {
                            batch_id: request.batch_id,
                            shard_id: state.slice.shard_id as u32,
                            partials,
                        })
                    }
                    Err(e) => Message::Control(Control::Error {
                        batch_id: request.batch_id,
                        message: e.to_string(),
                    }),
                }
            }
            Ok(Message::Coefficients(broadcast)) => match pending.remove(&broadcast.batch_id) {
                Some(pairs) => match state.apply(&pairs, &broadcast) {
                    Ok(()) => Message::Control(Control::Ack {
                        batch_id: broadcast.batch_id,
                    }),
                    Err(e) => Message::Control(Control::Error {
                        batch_id: broadcast.batch_id,
                        message: e.to_string(),
                    }),
                },
                None => {
                    warn!(
                        "shard {}: coefficients for unknown batch {} ignored",
                        state.slice.shard_id, broadcast.batch_id
                    );
                    continue;
                }
            },
            Ok(Message::Control(Control::CounterAdd { amount })) => {
                let previous = counter;
                counter += amount;
                Message::Control(Control::CounterValue { previous })
            }
            Ok(Message::Control(Control::Checkpoint { epoch })) => {
                let ok = match &options.checkpoint_dir {
                    Some(dir) => state
                        .write_checkpoint(&checkpoint_path(dir, state.slice.shard_id), epoch)
                        .map_err(|e| warn!("shard {}: checkpoint failed: {}", state.slice.shard_id, e))
                        .is_ok(),
                    None => false,
                };
                Message::Control(Control::CheckpointDone { epoch, ok })
            }
            Ok(Message::Control(Control::Shutdown)) => break,
            Ok(other) => {
                warn!("shard {}: unexpected message {:?}", state.slice.shard_id, other);
                continue;
            }
        };
        if let Some(sink) = endpoint.replies.get_mut(inbound.client) {
            if sink.send_frame(reply.encode()).is_err() {
                warn!(
                    "shard {}: client {} unreachable",
                    state.slice.shard_id, inbound.client
                );
            }
        }
    }
    Some(state)
}
