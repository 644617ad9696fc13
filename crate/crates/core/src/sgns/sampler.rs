use crate::rng::SplitMix64;
use crate::vocab::Vocabulary;

use super::NegativeDistribution;

pub const UNIGRAM_POWER: f64 = 0.75;

/// Redraws allowed when a negative sample hits the true context.
pub const NEGATIVE_REDRAW_LIMIT: usize = 8;

/// Draws vocabulary ids from a fixed discrete distribution by inverting the
/// cumulative weights. Every shard builds the same table from the same counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary, distribution: NegativeDistribution) -> Self {
        let counts: Vec<u64> = vocab.entries().iter().map(|e| e.count).collect();
        match distribution {
            NegativeDistribution::Unigram => Self::from_counts(&counts, UNIGRAM_POWER),
            NegativeDistribution::Uniform => Self::from_counts(&counts, 0.0),
        }
    }

    /// Weights `count^power`; power 0 gives the uniform distribution.
    pub fn from_counts(counts: &[u64], power: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += if power == 0.0 { 1.0 } else { (c as f64).powf(power) };
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn probability(&self, id: usize) -> f64 {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let lo = if id == 0 { 0.0 } else { self.cumulative[id - 1] };
        (self.cumulative[id] - lo) / total
    }

    #[inline]
    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let u = rng.next_f64() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    /// `n` negatives for a pair whose true context is `context`. A draw equal
    /// to the context is redrawn up to [`NEGATIVE_REDRAW_LIMIT`] times, then kept.
    pub fn sample_negatives(&self, context: usize, n: usize, rng: &mut SplitMix64) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        self.extend_negatives(context, n, rng, &mut out);
        out
    }

    pub fn extend_negatives(
        &self,
        context: usize,
        n: usize,
        rng: &mut SplitMix64,
        out: &mut Vec<usize>,
    ) {
        for _ in 0..n {
            let mut draw = self.sample(rng);
            let mut redraws = 0;
            while draw == context && redraws < NEGATIVE_REDRAW_LIMIT {
                draw = self.sample(rng);
                redraws += 1;
            }
            out.push(draw);
        }
    }
}
