use crate::embed::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::vocab::DEFAULT_SUBSAMPLE_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeDistribution {
    /// Counts raised to the 3/4 power.
    Unigram,
    Uniform,
}

/// How coefficients relate to parameter updates inside a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSchedule {
    /// Every pair sees all updates made before it.
    Sequential,
    /// All coefficients of a minibatch are computed from the table as it was
    /// at the start of the batch, then applied in order. This is what the
    /// parameter-server protocol does.
    Synchronous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    /// Downsampling threshold; `None` keeps every occurrence.
    pub subsample: Option<f64>,
    pub seed: u64,
    /// Sessions per minibatch. Each batch gets its own negative-sampling seed.
    pub minibatch_sessions: usize,
    pub schedule: UpdateSchedule,
    pub negative_distribution: NegativeDistribution,
    pub implicit_negatives: bool,
    pub dwell_weighting: bool,
    /// Pairs in the fixed sample used for per-epoch objective reports.
    pub objective_sample_pairs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: DEFAULT_DIM,
            window: 5,
            negatives: 5,
            epochs: 10,
            initial_lr: 0.025,
            min_lr: 1e-4,
            subsample: Some(DEFAULT_SUBSAMPLE_THRESHOLD),
            seed: 42,
            minibatch_sessions: 200,
            schedule: UpdateSchedule::Sequential,
            negative_distribution: NegativeDistribution::Unigram,
            implicit_negatives: true,
            dwell_weighting: true,
            objective_sample_pairs: 10_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::invalid(format!(
                "learning rates must satisfy 0 < min_lr <= initial_lr (got {} and {})",
                self.min_lr, self.initial_lr
            )));
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0) {
                return Err(Error::invalid("subsample threshold must be positive"));
            }
        }
        if self.minibatch_sessions == 0 {
            return Err(Error::invalid("minibatch must hold at least one session"));
        }
        Ok(())
    }
}
