//! Skip-gram with negative sampling over search sessions, with dwell-time
//! weighted positives and implicit negatives.
//!
//! [`ReferenceTrainer`] is the single-threaded trainer the distributed
//! trainer in [`crate::ps`] is checked against. Both consume the same
//! [`EpochPlan`]s and the same per-batch negative-sampling seeds.

mod config;
mod hogwild;
mod pairs;
mod sampler;
mod step;
mod trainer;

pub use config::{NegativeDistribution, TrainingConfig, UpdateSchedule};
pub use hogwild::train_hogwild;
pub use pairs::{
    expand_batch, generate_pairs, plan_epoch, EncodedSession, EpochPlan, PairBatch, Subsampler,
};
pub use sampler::{NegativeSampler, NEGATIVE_REDRAW_LIMIT, UNIGRAM_POWER};
pub use step::{apply_update, coefficient, objective_value, sgd_step};
pub use trainer::{train, EpochStats, LearningRate, ReferenceTrainer, TrainOutcome};

/// Role of a (center, context) pair in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    ImplicitNegative,
}

impl Label {
    /// Target of the logistic term: 1 for positives, 0 otherwise.
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative | Label::ImplicitNegative => 0.0,
        }
    }

    pub fn to_wire(self) -> u8 {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::ImplicitNegative => 2,
        }
    }

    pub fn from_wire(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Label::Positive),
            1 => Some(Label::Negative),
            2 => Some(Label::ImplicitNegative),
            _ => None,
        }
    }
}

/// One term of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPair {
    pub center: usize,
    pub context: usize,
    pub label: Label,
    pub weight: f64,
}

impl WeightedPair {
    pub fn positive(center: usize, context: usize, weight: f64) -> Self {
        WeightedPair {
            center,
            context,
            label: Label::Positive,
            weight,
        }
    }

    pub fn negative(center: usize, context: usize) -> Self {
        WeightedPair {
            center,
            context,
            label: Label::Negative,
            weight: 1.0,
        }
    }

    pub fn implicit_negative(query: usize, ad: usize) -> Self {
        WeightedPair {
            center: query,
            context: ad,
            label: Label::ImplicitNegative,
            weight: 1.0,
        }
    }
}
