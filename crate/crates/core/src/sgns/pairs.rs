use crate::rng::{derive_seed, SplitMix64};
use crate::session::{dwell_weight, extract_implicit_negatives, ActionKind, Session};
use crate::vocab::{keep_probability, Vocabulary};

use super::{NegativeSampler, TrainingConfig, WeightedPair};

/// A session mapped onto vocabulary ids. Out-of-vocabulary actions stay as
/// `None` so that adjacency in the original session is still known.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSession {
    ids: Vec<Option<usize>>,
    kinds: Vec<ActionKind>,
    dwell_seconds: Vec<Option<u32>>,
    implicit_negatives: Vec<(usize, usize)>,
}

impl EncodedSession {
    pub fn new(session: &Session, vocab: &Vocabulary) -> Self {
        let implicit_negatives = extract_implicit_negatives(session)
            .into_iter()
            .filter_map(|p| {
                let q = vocab.id(&format!("q:{}", p.query_token))?;
                let ad = vocab.id(&format!("a:{}", p.skipped_ad_token))?;
                Some((q, ad))
            })
            .collect();
        EncodedSession {
            ids: session.actions.iter().map(|a| vocab.id(&a.key())).collect(),
            kinds: session.actions.iter().map(|a| a.kind).collect(),
            dwell_seconds: session.actions.iter().map(|a| a.dwell_seconds).collect(),
            implicit_negatives,
        }
    }

    pub fn ids(&self) -> &[Option<usize>] {
        &self.ids
    }

    /// In-vocabulary (query, skipped ad) pairs.
    pub fn implicit_negatives(&self) -> &[(usize, usize)] {
        &self.implicit_negatives
    }

    /// Dwell weight of the pair between original positions `a` and `b`, or
    /// `None` when the pair is not a query directly followed by a clicked ad.
    fn adjacency_weight(&self, a: usize, b: usize) -> Option<f64> {
        let (first, second) = if a < b { (a, b) } else { (b, a) };
        if second != first + 1
            || self.kinds[first] != ActionKind::Query
            || self.kinds[second] != ActionKind::Ad
        {
            return None;
        }
        let seconds = self.dwell_seconds[second]?;
        Some(dwell_weight(seconds as f64 / 60.0).expect("dwell is non-negative"))
    }
}

/// Per-id keep probabilities for frequent-token downsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsampler {
    keep: Vec<f64>,
}

impl Subsampler {
    pub fn new(vocab: &Vocabulary, threshold: Option<f64>) -> Self {
        let keep = (0..vocab.len())
            .map(|id| match threshold {
                Some(t) => keep_probability(vocab.frequency(id), t).expect("positive frequency"),
                None => 1.0,
            })
            .collect();
        Subsampler { keep }
    }

    /// Draws from `rng` only for ids whose keep probability is below one.
    #[inline]
    pub fn keep(&self, id: usize, rng: &mut SplitMix64) -> bool {
        let p = self.keep[id];
        p >= 1.0 || rng.next_f64() < p
    }
}

/// Positive window pairs of one session.
///
/// Out-of-vocabulary actions are removed and frequent ones downsampled
/// before windowing, so the window spans surviving actions. Pairs are
/// emitted per surviving position, left contexts first. A query directly
/// followed by a clicked ad (in the original session) pairs with it in
/// both directions at the dwell weight; zero-weight pairs are skipped.
pub fn generate_pairs(
    session: &EncodedSession,
    window: usize,
    subsampler: &Subsampler,
    rng: &mut SplitMix64,
    dwell_weighting: bool,
) -> Vec<WeightedPair> {
    let survivors: Vec<(usize, usize)> = session
        .ids
        .iter()
        .enumerate()
        .filter_map(|(pos, id)| id.map(|id| (pos, id)))
        .filter(|&(_, id)| subsampler.keep(id, rng))
        .collect();

    let mut pairs = Vec::new();
    for (i, &(pos, center)) in survivors.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(survivors.len() - 1);
        for (j, &(other_pos, context)) in survivors.iter().enumerate().take(hi + 1).skip(lo) {
            if j == i {
                continue;
            }
            let weight = if dwell_weighting {
                session.adjacency_weight(pos, other_pos).unwrap_or(1.0)
            } else {
                1.0
            };
            if weight > 0.0 {
                pairs.push(WeightedPair::positive(center, context, weight));
            }
        }
    }
    pairs
}

/// Pairs a client sends in one request, plus the seed for its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub id: u64,
    pub seed: u64,
    /// Positives and implicit negatives; sampled negatives are not listed.
    pub pairs: Vec<WeightedPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: usize,
    pub batches: Vec<PairBatch>,
}

impl EpochPlan {
    /// Positives and implicit negatives across all batches.
    pub fn pair_count(&self) -> usize {
        self.batches.iter().map(|b| b.pairs.len()).sum()
    }
}

/// Deterministic pair schedule for one epoch: seeded session shuffle,
/// downsampling, windowing, and each session's implicit negatives right after
/// its positives. Sessions are grouped into minibatches.
pub fn plan_epoch(
    sessions: &[EncodedSession],
    config: &TrainingConfig,
    subsampler: &Subsampler,
    epoch: usize,
) -> EpochPlan {
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    SplitMix64::new(derive_seed(config.seed, &[epoch as u64, 1])).shuffle(&mut order);
    let mut rng = SplitMix64::new(derive_seed(config.seed, &[epoch as u64, 2]));

    let mut batches = Vec::new();
    for (index, chunk) in order.chunks(config.minibatch_sessions).enumerate() {
        let mut pairs = Vec::new();
        for &s in chunk {
            let session = &sessions[s];
            pairs.extend(generate_pairs(
                session,
                config.window,
                subsampler,
                &mut rng,
                config.dwell_weighting,
            ));
            if config.implicit_negatives {
                pairs.extend(
                    session
                        .implicit_negatives
                        .iter()
                        .map(|&(q, ad)| WeightedPair::implicit_negative(q, ad)),
                );
            }
        }
        batches.push(PairBatch {
            id: ((epoch as u64) << 32) | index as u64,
            seed: derive_seed(config.seed, &[epoch as u64, 3, index as u64]),
            pairs,
        });
    }
    EpochPlan { epoch, batches }
}

/// Canonical pair list of a batch: the request pairs in order, then `n`
/// sampled negatives for each positive, in request order.
pub fn expand_batch(
    pairs: &[WeightedPair],
    negatives: usize,
    seed: u64,
    sampler: &NegativeSampler,
) -> Vec<WeightedPair> {
    let mut out = pairs.to_vec();
    let mut rng = SplitMix64::new(seed);
    let mut draws = Vec::with_capacity(negatives);
    for p in pairs.iter().filter(|p| p.label == super::Label::Positive) {
        draws.clear();
        sampler.extend_negatives(p.context, negatives, &mut rng, &mut draws);
        out.extend(draws.iter().map(|&neg| WeightedPair::negative(p.center, neg)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Action;
    use crate::sgns::Label;

    fn action(kind: ActionKind, token: &str, dwell: Option<u32>) -> Action {
        Action {
            kind,
            token: token.into(),
            dwell_seconds: dwell,
            timestamp: 0,
        }
    }

    fn vocab_for(sessions: &[Session]) -> Vocabulary {
        Vocabulary::build(sessions, 1)
    }

    fn no_subsampling(vocab: &Vocabulary) -> Subsampler {
        Subsampler::new(vocab, None)
    }

    #[test]
    fn window_of_one() {
        let s = Session {
            user_id: "u".into(),
            actions: vec![
                action(ActionKind::Link, "a1", None),
                action(ActionKind::Link, "a2", None),
                action(ActionKind::Link, "a3", None),
            ],
            impressions: vec![],
        };
        let vocab = vocab_for(std::slice::from_ref(&s));
        let enc = EncodedSession::new(&s, &vocab);
        let pairs = generate_pairs(&enc, 1, &no_subsampling(&vocab), &mut SplitMix64::new(0), true);
        let id = |t: &str| vocab.id(&format!("l:{}", t)).unwrap();
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.center, p.context)).collect();
        assert_eq!(
            got,
            vec![
                (id("a1"), id("a2")),
                (id("a2"), id("a1")),
                (id("a2"), id("a3")),
                (id("a3"), id("a2")),
            ]
        );
        assert!(pairs.iter().all(|p| p.weight == 1.0 && p.label == Label::Positive));
    }

    #[test]
    fn dwell_weight_on_query_ad_adjacency() {
        let s = Session {
            user_id: "u".into(),
            actions: vec![
                action(ActionKind::Query, "q1", None),
                action(ActionKind::Ad, "ad1", Some(180)),
            ],
            impressions: vec![],
        };
        let vocab = vocab_for(std::slice::from_ref(&s));
        let enc = EncodedSession::new(&s, &vocab);
        let pairs = generate_pairs(&enc, 5, &no_subsampling(&vocab), &mut SplitMix64::new(0), true);
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert!((p.weight - 4f64.ln()).abs() < 1e-12);
        }
        let unweighted =
            generate_pairs(&enc, 5, &no_subsampling(&vocab), &mut SplitMix64::new(0), false);
        assert!(unweighted.iter().all(|p| p.weight == 1.0));
    }

    #[test]
    fn dwell_weight_only_for_immediate_neighbours() {
        let s = Session {
            user_id: "u".into(),
            actions: vec![
                action(ActionKind::Query, "q1", None),
                action(ActionKind::Link, "l1", None),
                action(ActionKind::Ad, "ad1", Some(180)),
                action(ActionKind::Query, "q2", None),
            ],
            impressions: vec![],
        };
        let vocab = vocab_for(std::slice::from_ref(&s));
        let enc = EncodedSession::new(&s, &vocab);
        let pairs = generate_pairs(&enc, 5, &no_subsampling(&vocab), &mut SplitMix64::new(0), true);
        // ad1 follows l1, and q2 follows ad1: no pair qualifies.
        assert!(pairs.iter().all(|p| p.weight == 1.0));
    }

    #[test]
    fn single_action_yields_nothing() {
        let s = Session {
            user_id: "u".into(),
            actions: vec![
                action(ActionKind::Query, "q1", None),
                action(ActionKind::Query, "rare", None),
            ],
            impressions: vec![],
        };
        let vocab = Vocabulary::from_counts(
            [crate::vocab::VocabEntry {
                token: "q:q1".into(),
                kind: ActionKind::Query,
                count: 3,
            }],
            1,
        );
        let enc = EncodedSession::new(&s, &vocab);
        let pairs = generate_pairs(&enc, 5, &no_subsampling(&vocab), &mut SplitMix64::new(0), true);
        assert!(pairs.is_empty());
    }

    #[test]
    fn expansion_puts_negatives_after_request_pairs() {
        let sampler = NegativeSampler::from_counts(&[5, 4, 3, 2], 0.75);
        let pairs = vec![
            WeightedPair::positive(0, 1, 1.0),
            WeightedPair::implicit_negative(0, 2),
            WeightedPair::positive(2, 3, 0.5),
        ];
        let expanded = expand_batch(&pairs, 3, 99, &sampler);
        assert_eq!(expanded.len(), 3 + 6);
        assert_eq!(&expanded[..3], &pairs[..]);
        assert!(expanded[3..6].iter().all(|p| p.center == 0 && p.label == Label::Negative));
        assert!(expanded[6..].iter().all(|p| p.center == 2 && p.label == Label::Negative));
        assert_eq!(expanded, expand_batch(&pairs, 3, 99, &sampler));
    }
}
