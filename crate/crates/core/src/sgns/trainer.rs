use log::info;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::{dot, Real};
use crate::session::Session;
use crate::vocab::Vocabulary;

use super::pairs::{expand_batch, plan_epoch, EncodedSession, EpochPlan, PairBatch, Subsampler};
use super::step::{apply_update, coefficient, objective_value, sgd_step};
use super::{Label, NegativeSampler, TrainingConfig, UpdateSchedule, WeightedPair};

/// Linear decay from the initial rate to the floor over the scheduled pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub initial: f64,
    pub min: f64,
    pub total_pairs: u64,
}

impl LearningRate {
    pub fn at(&self, processed: u64) -> f64 {
        if self.total_pairs == 0 {
            return self.initial;
        }
        let progress = processed as f64 / self.total_pairs as f64;
        (self.initial - (self.initial - self.min) * progress).max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub pairs: usize,
    pub objective_sample: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub table: EmbeddingTable<T>,
    /// Objective of the fixed sample before the first update.
    pub initial_objective: f64,
    pub epochs: Vec<EpochStats>,
}

/// Single-threaded trainer; deterministic for a given seed.
pub struct ReferenceTrainer<'a> {
    vocab: &'a Vocabulary,
    config: TrainingConfig,
    sessions: Vec<EncodedSession>,
    sampler: NegativeSampler,
    subsampler: Subsampler,
}

impl<'a> ReferenceTrainer<'a> {
    pub fn new(sessions: &[Session], vocab: &'a Vocabulary, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(ReferenceTrainer {
            vocab,
            sessions: sessions.iter().map(|s| EncodedSession::new(s, vocab)).collect(),
            sampler: NegativeSampler::new(vocab, config.negative_distribution),
            subsampler: Subsampler::new(vocab, config.subsample),
            config,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }

    pub fn sampler(&self) -> &NegativeSampler {
        &self.sampler
    }

    pub fn sessions(&self) -> &[EncodedSession] {
        &self.sessions
    }

    pub fn plan(&self, epoch: usize) -> EpochPlan {
        plan_epoch(&self.sessions, &self.config, &self.subsampler, epoch)
    }

    /// Learning-rate schedule over every pair of every planned epoch.
    pub fn learning_rate(&self) -> LearningRate {
        let total_pairs = (0..self.config.epochs)
            .map(|e| self.plan(e).pair_count() as u64)
            .sum();
        LearningRate {
            initial: self.config.initial_lr,
            min: self.config.min_lr,
            total_pairs,
        }
    }

    /// Fixed terms used to report the objective: epoch-0 request pairs, each
    /// positive followed by its sampled negatives, up to the configured size.
    pub fn objective_sample(&self) -> Vec<WeightedPair> {
        let limit = self.config.objective_sample_pairs;
        let n = self.config.negatives;
        let mut out = Vec::new();
        for batch in self.plan(0).batches {
            let expanded = self.expand(&batch);
            let (requests, negatives) = expanded.split_at(batch.pairs.len());
            let mut negatives = negatives.chunks(n.max(1));
            for p in requests {
                if out.len() >= limit {
                    return out;
                }
                out.push(*p);
                if p.label == Label::Positive && n > 0 {
                    out.extend_from_slice(negatives.next().unwrap_or(&[]));
                }
            }
        }
        out
    }

    pub fn expand(&self, batch: &PairBatch) -> Vec<WeightedPair> {
        expand_batch(&batch.pairs, self.config.negatives, batch.seed, &self.sampler)
    }

    pub fn init_table<T: Real>(&self) -> Result<EmbeddingTable<T>> {
        EmbeddingTable::init(self.vocab, self.config.dim, self.config.seed)
    }

    fn non_finite(&self, center: usize) -> Error {
        Error::NonFinite {
            token: self.vocab.token(center).to_string(),
        }
    }

    /// Trains on one batch; `processed` counts request pairs so far and
    /// drives the learning rate.
    pub fn run_batch<T: Real>(
        &self,
        table: &mut EmbeddingTable<T>,
        batch: &PairBatch,
        rate: &LearningRate,
        processed: &mut u64,
    ) -> Result<()> {
        match self.config.schedule {
            UpdateSchedule::Sequential => self.run_sequential(table, batch, rate, processed),
            UpdateSchedule::Synchronous => self.run_synchronous(table, batch, rate, processed),
        }
    }

    fn run_sequential<T: Real>(
        &self,
        table: &mut EmbeddingTable<T>,
        batch: &PairBatch,
        rate: &LearningRate,
        processed: &mut u64,
    ) -> Result<()> {
        let mut rng = SplitMix64::new(batch.seed);
        let mut negatives = Vec::with_capacity(self.config.negatives);
        for pair in &batch.pairs {
            let alpha = T::from_f64_lossy(rate.at(*processed));
            sgd_step(table, pair, alpha).map_err(|_| self.non_finite(pair.center))?;
            if pair.label == Label::Positive {
                negatives.clear();
                self.sampler
                    .extend_negatives(pair.context, self.config.negatives, &mut rng, &mut negatives);
                for &neg in &negatives {
                    sgd_step(table, &WeightedPair::negative(pair.center, neg), alpha)
                        .map_err(|_| self.non_finite(pair.center))?;
                }
            }
            *processed += 1;
        }
        Ok(())
    }

    fn run_synchronous<T: Real>(
        &self,
        table: &mut EmbeddingTable<T>,
        batch: &PairBatch,
        rate: &LearningRate,
        processed: &mut u64,
    ) -> Result<()> {
        let alpha = T::from_f64_lossy(rate.at(*processed));
        let pairs = self.expand(batch);
        let mut coefficients = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let d = dot(table.input(p.center), table.output(p.context));
            if !d.is_finite() {
                return Err(self.non_finite(p.center));
            }
            coefficients.push(coefficient(d, p.label, T::from_f64_lossy(p.weight), alpha));
        }
        for (p, &g) in pairs.iter().zip(&coefficients) {
            let (center, context) = table.pair_mut(p.center, p.context);
            apply_update(center, context, g);
        }
        *processed += batch.pairs.len() as u64;
        Ok(())
    }

    /// Runs every batch of `plan` in order.
    pub fn run_plan<T: Real>(
        &self,
        table: &mut EmbeddingTable<T>,
        plan: &EpochPlan,
        rate: &LearningRate,
        processed: &mut u64,
    ) -> Result<()> {
        for batch in &plan.batches {
            self.run_batch(table, batch, rate, processed)?;
        }
        Ok(())
    }

    pub fn train<T: Real>(&self) -> Result<TrainOutcome<T>> {
        let table = self.init_table()?;
        self.train_from(table)
    }

    pub fn train_from<T: Real>(&self, mut table: EmbeddingTable<T>) -> Result<TrainOutcome<T>> {
        let rate = self.learning_rate();
        let sample = self.objective_sample();
        let initial_objective = objective_value(&table, &sample);
        let mut processed = 0u64;
        let mut epochs = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let plan = self.plan(epoch);
            self.run_plan(&mut table, &plan, &rate, &mut processed)?;
            let stats = EpochStats {
                epoch,
                pairs: plan.pair_count(),
                objective_sample: objective_value(&table, &sample),
                alpha: rate.at(processed),
            };
            info!(
                "epoch {}, pairs {}, objective_sample {:.6}, alpha {:.6}",
                stats.epoch, stats.pairs, stats.objective_sample, stats.alpha
            );
            epochs.push(stats);
        }
        Ok(TrainOutcome {
            table,
            initial_objective,
            epochs,
        })
    }
}

/// Trains a fresh table with the reference trainer.
pub fn train<T: Real>(
    sessions: &[Session],
    vocab: &Vocabulary,
    config: &TrainingConfig,
) -> Result<TrainOutcome<T>> {
    ReferenceTrainer::new(sessions, vocab, config.clone())?.train()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_decays_linearly_to_floor() {
        let r = LearningRate {
            initial: 0.025,
            min: 1e-4,
            total_pairs: 100,
        };
        assert_eq!(r.at(0), 0.025);
        assert!((r.at(50) - (0.025 - 0.0249 * 0.5)).abs() < 1e-15);
        assert_eq!(r.at(100), 1e-4);
        assert_eq!(r.at(1000), 1e-4);
    }
}
