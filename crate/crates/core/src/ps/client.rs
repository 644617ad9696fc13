use std::time::{Duration, Instant};

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sgns::{coefficient, expand_batch, LearningRate, NegativeSampler, PairBatch, WeightedPair};

use super::protocol::{
    CoefficientBroadcast, Control, Message, MinibatchRequest, PartialDotsResponse,
};
use super::transport::ClientEndpoint;

/// Sums partial dots over shards (in shard-id order) and turns each full dot
/// into the global coefficient of its pair.
pub fn client_aggregate<T: Real>(
    batch_id: u64,
    pairs: &[WeightedPair],
    responses: &[PartialDotsResponse],
    alpha: T,
) -> Result<CoefficientBroadcast> {
    let mut ordered: Vec<&PartialDotsResponse> = responses.iter().collect();
    ordered.sort_by_key(|r| r.shard_id);
    for (s, r) in ordered.iter().enumerate() {
        if r.shard_id as usize != s || r.batch_id != batch_id || r.partials.len() != pairs.len() {
            return Err(Error::Protocol {
                batch_id,
                msg: format!(
                    "bad response from shard {} ({} partials for {} pairs)",
                    r.shard_id,
                    r.partials.len(),
                    pairs.len()
                ),
            });
        }
    }
    if ordered.is_empty() {
        return Err(Error::Protocol {
            batch_id,
            msg: "no shard responses".into(),
        });
    }
    let mut coefficients = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let mut full = T::from_f64_lossy(ordered[0].partials[i]);
        for r in &ordered[1..] {
            full = full + T::from_f64_lossy(r.partials[i]);
        }
        if !full.is_finite() {
            return Err(Error::NonFinite {
                token: format!("#{}", p.center),
            });
        }
        coefficients.push(coefficient(full, p.label, T::from_f64_lossy(p.weight), alpha).as_f64());
    }
    Ok(CoefficientBroadcast {
        batch_id,
        coefficients,
    })
}

/// Drives minibatches against all shards. One batch is in flight at a time.
pub struct Client<'a> {
    endpoint: ClientEndpoint,
    sampler: &'a NegativeSampler,
    rate: LearningRate,
    negatives: usize,
    timeout: Duration,
}

impl<'a> Client<'a> {
    pub fn new(
        endpoint: ClientEndpoint,
        sampler: &'a NegativeSampler,
        rate: LearningRate,
        negatives: usize,
        timeout: Duration,
    ) -> Self {
        Client {
            endpoint,
            sampler,
            rate,
            negatives,
            timeout,
        }
    }

    pub fn id(&self) -> usize {
        self.endpoint.client_id
    }

    fn shards(&self) -> usize {
        self.endpoint.shards.len()
    }

    fn failure(&self, msg: String) -> Error {
        Error::ShardFailure {
            msg: format!("client {}: {}", self.id(), msg),
            last_completed_epoch: None,
            checkpoint: None,
        }
    }

    fn send(&mut self, shard: usize, msg: &Message) -> Result<()> {
        self.endpoint.shards[shard]
            .send_frame(msg.encode())
            .map_err(|e| Error::ShardFailure {
                msg: format!("client {}: shard {} unreachable: {}", self.endpoint.client_id, shard, e),
                last_completed_epoch: None,
                checkpoint: None,
            })
    }

    /// Waits for the next decodable message, up to `deadline`.
    fn recv_until(&mut self, deadline: Instant) -> Result<Option<Message>> {
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            match self.endpoint.inbox.recv_timeout(deadline - now) {
                Ok(frame) => match Message::decode(&frame) {
                    Ok(m) => return Ok(Some(m)),
                    Err(e) => warn!("client {}: undecodable frame: {}", self.id(), e),
                },
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) => return Ok(None),
                Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(self.failure("all shard links closed".into()))
                }
            }
        }
    }

    /// Reserves `amount` pairs on the global counter kept by shard 0 and
    /// returns the count before the reservation.
    pub fn reserve(&mut self, amount: u64) -> Result<u64> {
        self.send(0, &Message::Control(Control::CounterAdd { amount }))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.recv_until(deadline)? {
                Some(Message::Control(Control::CounterValue { previous })) => return Ok(previous),
                Some(other) => warn!("client {}: stray message {:?}", self.id(), other),
                None => return Err(self.failure("counter request timed out".into())),
            }
        }
    }

    fn gather_partials(
        &mut self,
        request: &MinibatchRequest,
    ) -> Result<Vec<PartialDotsResponse>> {
        let batch_id = request.batch_id;
        let mut slots: Vec<Option<PartialDotsResponse>> = vec![None; self.shards()];
        let frame = Message::Request(request.clone());
        for s in 0..self.shards() {
            self.send(s, &frame)?;
        }
        for attempt in 0..2 {
            let deadline = Instant::now() + self.timeout;
            while slots.iter().any(Option::is_none) {
                match self.recv_until(deadline)? {
                    Some(Message::Partial(r)) if r.batch_id == batch_id => {
                        let s = r.shard_id as usize;
                        if s < slots.len() {
                            slots[s] = Some(r);
                        }
                    }
                    Some(Message::Control(Control::Error { batch_id: b, message })) if b == batch_id => {
                        return Err(Error::Protocol { batch_id, msg: message });
                    }
                    Some(other) => warn!("client {}: stray message {:?}", self.id(), other),
                    None => break,
                }
            }
            if slots.iter().all(Option::is_some) {
                break;
            }
            let missing: Vec<usize> = (0..slots.len()).filter(|&s| slots[s].is_none()).collect();
            if attempt == 1 {
                return Err(self.failure(format!(
                    "batch {} timed out twice waiting for shards {:?}",
                    batch_id, missing
                )));
            }
            warn!(
                "client {}: batch {} retried, no answer from shards {:?}",
                self.id(),
                batch_id,
                missing
            );
            for s in missing {
                self.send(s, &frame)?;
            }
        }
        Ok(slots.into_iter().map(|s| s.expect("all present")).collect())
    }

    fn await_acks(&mut self, batch_id: u64) -> Result<()> {
        let deadline = Instant::now() + self.timeout;
        let mut remaining = self.shards();
        while remaining > 0 {
            match self.recv_until(deadline)? {
                Some(Message::Control(Control::Ack { batch_id: b })) if b == batch_id => remaining -= 1,
                Some(Message::Control(Control::Error { batch_id: b, message })) if b == batch_id => {
                    return Err(Error::Protocol { batch_id, msg: message });
                }
                Some(other) => warn!("client {}: stray message {:?}", self.id(), other),
                None => {
                    return Err(self.failure(format!(
                        "batch {}: {} of {} acks missing",
                        batch_id,
                        remaining,
                        self.shards()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Runs one minibatch through the protocol: counter, partial dots,
    /// coefficients, acknowledgements. Returns the learning rate used.
    pub fn run_batch<T: Real>(&mut self, batch: &PairBatch) -> Result<f64> {
        let processed = self.reserve(batch.pairs.len() as u64)?;
        let alpha = self.rate.at(processed);
        let request = MinibatchRequest {
            batch_id: batch.id,
            positives: batch.pairs.clone(),
            negative_count: self.negatives as u32,
            rng_seed: batch.seed,
        };
        let pairs = expand_batch(&batch.pairs, self.negatives, batch.seed, self.sampler);
        let responses = self.gather_partials(&request)?;
        let broadcast = client_aggregate(batch.id, &pairs, &responses, T::from_f64_lossy(alpha))?;
        let frame = Message::Coefficients(broadcast);
        for s in 0..self.shards() {
            self.send(s, &frame)?;
        }
        self.await_acks(batch.id)?;
        Ok(alpha)
    }

    /// Asks every shard to persist its slice; true when all succeeded.
    pub fn checkpoint(&mut self, epoch: u32) -> Result<bool> {
        let frame = Message::Control(Control::Checkpoint { epoch });
        for s in 0..self.shards() {
            self.send(s, &frame)?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut all_ok = true;
        for _ in 0..self.shards() {
            loop {
                match self.recv_until(deadline)? {
                    Some(Message::Control(Control::CheckpointDone { epoch: e, ok })) if e == epoch => {
                        all_ok &= ok;
                        break;
                    }
                    Some(other) => warn!("client {}: stray message {:?}", self.id(), other),
                    None => return Err(self.failure("checkpoint timed out".into())),
                }
            }
        }
        Ok(all_ok)
    }

    pub fn shutdown_shards(&mut self) {
        for s in 0..self.shards() {
            let _ = self.send(s, &Message::Control(Control::Shutdown));
        }
    }
}
