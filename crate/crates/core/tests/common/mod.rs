#![allow(dead_code)]

use search2vec::coldstart::AdCreative;
use search2vec::rng::SplitMix64;
use search2vec::session::{Action, AdImpression, AttachedImpression};
use search2vec::sgns::Label;
use search2vec::{ActionKind, Session};

pub fn query(text: &str, ts: u64) -> Action {
    Action {
        kind: ActionKind::Query,
        token: text.to_string(),
        dwell_seconds: None,
        timestamp: ts,
    }
}

pub fn ad(id: &str, dwell: u32, ts: u64) -> Action {
    Action {
        kind: ActionKind::Ad,
        token: id.to_string(),
        dwell_seconds: Some(dwell),
        timestamp: ts,
    }
}

pub fn link(url: &str, ts: u64) -> Action {
    Action {
        kind: ActionKind::Link,
        token: url.to_string(),
        dwell_seconds: None,
        timestamp: ts,
    }
}

/// Random sessions over 30 queries, 15 ads and 5 links, some with an
/// impression block whose click skips higher-ranked ads.
pub fn toy_corpus(sessions: usize, seed: u64) -> Vec<Session> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(sessions);
    for s in 0..sessions {
        let len = 2 + rng.below(6);
        let mut actions = Vec::with_capacity(len);
        let mut ts = 1_000 + s as u64 * 10_000;
        for _ in 0..len {
            ts += 1 + rng.below(120) as u64;
            let a = match rng.below(10) {
                0..=4 => query(&format!("toy query {}", rng.below(30)), ts),
                5..=8 => ad(&format!("ad{}", rng.below(15)), rng.below(900) as u32, ts),
                _ => link(&format!("http://site{}.example/", rng.below(5)), ts),
            };
            actions.push(a);
        }
        let mut impressions = Vec::new();
        if rng.below(3) == 0 {
            // Query, then one long ad click at position 2..=4.
            actions.retain(|a| a.kind != ActionKind::Ad);
            if actions.first().map(|a| a.kind) != Some(ActionKind::Query) {
                actions.insert(0, query(&format!("toy query {}", rng.below(30)), ts));
            }
            let ts0 = actions[0].timestamp;
            let base = rng.below(15) as u64;
            let ads: Vec<String> = (0..4).map(|k| format!("ad{}", (base + 4 * k) % 15)).collect();
            let pos = 2 + rng.below(3);
            let clicked = ads[pos - 1].clone();
            impressions.push(AttachedImpression {
                query_index: 0,
                preceding_actions: 1,
                timestamp: ts0,
                impression: AdImpression::new(ads, Some(pos)).expect("valid impression"),
            });
            actions.insert(1, ad(&clicked, 60 + rng.below(600) as u32, ts0));
            for (i, a) in actions.iter_mut().enumerate() {
                a.timestamp = ts0 + i as u64;
            }
        }
        out.push(Session {
            user_id: format!("u{}", s % 17),
            actions,
            impressions,
        });
    }
    out
}

pub const CLUSTERS: usize = 5;
pub const QUERIES_PER_CLUSTER: usize = 20;
pub const ADS_PER_CLUSTER: usize = 10;

pub fn cluster_query(c: usize, i: usize) -> String {
    format!("c{} query {}", c, i)
}

pub fn cluster_ad(c: usize, i: usize) -> String {
    format!("c{}-ad{}", c, i)
}

/// Sessions drawn from latent clusters: each action comes from the session's
/// cluster with probability `within`, otherwise from a random cluster.
pub fn cluster_corpus(sessions: usize, within: f64, seed: u64) -> Vec<Session> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(sessions);
    for s in 0..sessions {
        let home = rng.below(CLUSTERS);
        let len = 4 + rng.below(5);
        let mut actions = Vec::with_capacity(len);
        let ts0 = s as u64 * 10_000;
        for k in 0..len {
            let c = if rng.next_f64() < within {
                home
            } else {
                rng.below(CLUSTERS)
            };
            let ts = ts0 + k as u64 * 30;
            if k % 2 == 0 {
                actions.push(query(&cluster_query(c, rng.below(QUERIES_PER_CLUSTER)), ts));
            } else {
                actions.push(ad(&cluster_ad(c, rng.below(ADS_PER_CLUSTER)), 900, ts));
            }
        }
        out.push(Session {
            user_id: format!("u{}", s),
            actions,
            impressions: Vec::new(),
        });
    }
    out
}

/// Largest absolute element difference between two tables.
pub fn max_abs_diff<T: search2vec::Real>(
    a: &search2vec::EmbeddingTable<T>,
    b: &search2vec::EmbeddingTable<T>,
) -> f64 {
    let ins = a.input_matrix().iter().zip(b.input_matrix());
    let outs = a.output_matrix().iter().zip(b.output_matrix());
    ins.chain(outs)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

/// Small, fast configuration for synthetic corpora.
pub fn small_config(dim: usize, epochs: usize, seed: u64) -> search2vec::TrainingConfig {
    search2vec::TrainingConfig {
        dim,
        epochs,
        seed,
        subsample: None,
        minibatch_sessions: 50,
        objective_sample_pairs: 2_000,
        ..Default::default()
    }
}

/// Fraction of cluster queries whose nearest ad (cosine of input vectors)
/// belongs to the query's own cluster.
pub fn nearest_ad_precision<T: search2vec::Real>(
    vectors: &search2vec::VectorSet<T>,
) -> f64 {
    use search2vec::session::{ad_key, query_key};
    let mut hits = 0usize;
    let mut total = 0usize;
    for c in 0..CLUSTERS {
        for i in 0..QUERIES_PER_CLUSTER {
            let Some(q) = vectors.get(&query_key(&cluster_query(c, i))) else {
                continue;
            };
            total += 1;
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for ac in 0..CLUSTERS {
                for j in 0..ADS_PER_CLUSTER {
                    if let Some(a) = vectors.get(&ad_key(&cluster_ad(ac, j))) {
                        let s = search2vec::cosine(q, a).unwrap_or(f64::NEG_INFINITY);
                        if s > best.0 {
                            best = (s, ac);
                        }
                    }
                }
            }
            if best.1 == c {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Cluster sessions plus impression sessions in which the planted ad of
/// each cluster is shown first and skipped for a click on position 2.
/// Returns the sessions and the planted (query, ad) pairs.
pub fn planted_skip_corpus(seed: u64) -> (Vec<Session>, Vec<(String, String)>) {
    let mut sessions = cluster_corpus(1_000, 0.9, seed);
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    let planted: Vec<(String, String)> = (0..CLUSTERS)
        .map(|c| (cluster_query(c, 0), cluster_ad(c, 0)))
        .collect();
    let base = sessions.len() as u64 * 10_000;
    for k in 0..400 {
        let c = k % CLUSTERS;
        let (q, skipped) = &planted[c];
        let clicked = cluster_ad(c, 1 + rng.below(ADS_PER_CLUSTER - 1));
        let ts = base + k as u64 * 10_000;
        let mut actions = vec![query(q, ts), ad(&clicked, 300, ts + 5)];
        actions.push(query(&cluster_query(c, 1 + rng.below(QUERIES_PER_CLUSTER - 1)), ts + 400));
        sessions.push(Session {
            user_id: format!("p{}", k),
            actions,
            impressions: vec![AttachedImpression {
                query_index: 0,
                preceding_actions: 1,
                timestamp: ts + 1,
                impression: AdImpression::new(vec![skipped.clone(), clicked], Some(2))
                    .expect("valid impression"),
            }],
        });
    }
    (sessions, planted)
}

/// Mean cosine of the planted pairs' input vectors.
pub fn mean_pair_cosine<T: search2vec::Real>(
    vectors: &search2vec::VectorSet<T>,
    pairs: &[(String, String)],
) -> f64 {
    use search2vec::session::{ad_key, query_key};
    let sims: Vec<f64> = pairs
        .iter()
        .filter_map(|(q, a)| {
            let q = vectors.get(&query_key(q))?;
            let a = vectors.get(&ad_key(a))?;
            search2vec::cosine(q, a).ok()
        })
        .collect();
    sims.iter().sum::<f64>() / sims.len().max(1) as f64
}

/// Head queries of the elastic matching demonstration, each with the five
/// queries listed as its nearest neighbors.
pub const ELASTIC_DEMO: [(&str, [&str; 5]); 3] = [
    (
        "metropolitan opera house",
        [
            "ny opera",
            "new york opera",
            "new york opera house",
            "metropolitan opera",
            "nyc opera house",
        ],
    ),
    (
        "best flight tickets to paris",
        [
            "cheap flights to paris",
            "cheap tickets to paris",
            "best flight fares to paris",
            "cheap airfare paris france",
            "travel to paris france",
        ],
    ),
    (
        "best stock ticker apps",
        [
            "stock tracker app in appstore",
            "best stock apps in appstore",
            "stock ticker apps",
            "best trading apps",
            "real time stocks on the app store",
        ],
    ),
];

/// Tail queries of the demonstration and the head each should match.
pub const ELASTIC_DEMO_TAILS: [(&str, &str); 3] = [
    ("metropolitan opera house that is in new york city", "metropolitan opera house"),
    ("best flight deals that travel to paris france", "best flight tickets to paris"),
    ("what is the best stock ticker trading app in appstore", "best stock ticker apps"),
];

/// Query vectors in which every group of the demonstration shares one axis
/// and each query has a private axis, so a head's nearest neighbors are
/// exactly its group.
pub fn elastic_demo_vectors() -> search2vec::VectorSetF64 {
    use search2vec::session::query_key;
    let mut texts: Vec<(usize, String)> = Vec::new();
    for (g, (head, neighbors)) in ELASTIC_DEMO.iter().enumerate() {
        texts.push((g, head.to_string()));
        for n in neighbors {
            texts.push((g, n.to_string()));
        }
    }
    let dim = ELASTIC_DEMO.len() + texts.len();
    let mut set = search2vec::VectorSetF64::empty(dim);
    for (k, (g, text)) in texts.iter().enumerate() {
        let mut v = vec![0.0; dim];
        v[*g] = 1.0;
        // Heads sit closest to their group axis; neighbors spread out.
        v[ELASTIC_DEMO.len() + k] = if k % 6 == 0 { 0.25 } else { 0.5 + 0.01 * k as f64 };
        set.push(query_key(text), &v).expect("dimension");
    }
    set
}

/// Dimension of the isotropic random vectors used for the LSH recall check.
pub const LSH_RECALL_DIM: usize = 8;

/// `n` standard Gaussian vectors named `a:0`, `a:1`, ...
pub fn gaussian_ads(n: usize, dim: usize, rng: &mut SplitMix64) -> search2vec::VectorSetF32 {
    let mut set = search2vec::VectorSetF32::empty(dim);
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.next_gaussian() as f32).collect();
        set.push(format!("a:{}", i), &v).expect("dimension");
    }
    set
}

/// Mean recall@10 of the default LSH index against exact search for
/// `queries` random queries over 10k random ads.
pub fn lsh_recall_at_10(seed: u64, queries: usize) -> f64 {
    use search2vec::retrieval::{knn_exact, knn_lsh, LshIndex};
    let mut rng = SplitMix64::new(seed);
    let ads = gaussian_ads(10_000, LSH_RECALL_DIM, &mut rng);
    let index = LshIndex::with_defaults(&ads, seed).expect("index");
    let (mut hits, mut total) = (0usize, 0usize);
    for _ in 0..queries {
        let q: Vec<f32> = (0..LSH_RECALL_DIM).map(|_| rng.next_gaussian() as f32).collect();
        let exact = knn_exact(&q, &ads, 10, -1.0).expect("exact");
        let approx = knn_lsh(&q, &index, 10, -1.0).expect("lsh");
        total += exact.len();
        hits += approx.iter().filter(|a| exact.iter().any(|e| e.0 == a.0)).count();
    }
    hits as f64 / total.max(1) as f64
}

/// AUC by comparing every positive with every negative, ties worth one
/// half; `None` when a side is empty.
pub fn pairwise_auc(items: &[(bool, f64)]) -> Option<f64> {
    let pos: Vec<f64> = items.iter().filter(|i| i.0).map(|i| i.1).collect();
    let neg: Vec<f64> = items.iter().filter(|i| !i.0).map(|i| i.1).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn oracle_oauc(pairs: &[(u8, f64)]) -> Option<f64> {
    let aucs: Vec<f64> = [5u8, 4, 3, 2]
        .iter()
        .filter_map(|&t| pairwise_auc(&pairs.iter().map(|&(g, s)| (g >= t, s)).collect::<Vec<_>>()))
        .collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg_of(order: &[usize], list: &[(u8, f64)], cutoff: usize) -> f64 {
    order
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &j)| (2f64.powi(list[j].0 as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG by enumerating every ordering: DCG is averaged over the orderings
/// that sort by score (all tie resolutions), IDCG is the best ordering.
pub fn oracle_ndcg(list: &[(u8, f64)], cutoff: Option<usize>) -> f64 {
    let k = cutoff.unwrap_or(list.len());
    let perms = permutations(list.len());
    let mut ideal = 0.0f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for p in &perms {
        let d = dcg_of(p, list, k);
        ideal = ideal.max(d);
        if p.windows(2).all(|w| list[w[0]].1 >= list[w[1]].1) {
            sum += d;
            count += 1;
        }
    }
    sum / count as f64 / ideal
}

pub fn oracle_macro_ndcg(queries: &[Vec<(u8, f64)>], cutoff: Option<usize>) -> f64 {
    queries.iter().map(|q| oracle_ndcg(q, cutoff)).sum::<f64>() / queries.len() as f64
}

/// Random judged list of 1..=max items; scores come from a few levels so
/// ties are common.
pub fn random_judged_list(rng: &mut SplitMix64, max: usize) -> Vec<(u8, f64)> {
    let n = 1 + rng.below(max);
    (0..n)
        .map(|_| (1 + rng.below(5) as u8, rng.below(6) as f64 / 5.0))
        .collect()
}

pub fn term(center: &[f64], context: &[f64], label: Label, weight: f64) -> f64 {
    let d: f64 = center.iter().zip(context).map(|(a, b)| a * b).sum();
    match label {
        Label::Positive => weight * search2vec::scalar::log_sigmoid(d),
        _ => weight * search2vec::scalar::log_sigmoid(-d),
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between the update made by `sgd_step` (divided by
/// the learning rate) and central finite differences of the objective term.
pub fn gradient_check(label: Label, instances: usize, seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let alpha = 0.01;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = 1 + rng.below(16);
        let weight = match label {
            Label::Positive => 0.1 + 2.0 * rng.next_f64(),
            _ => 1.0,
        };
        let center: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * 0.5).collect();
        let context: Vec<f64> = (0..dim).map(|_| rng.next_gaussian() * 0.5).collect();
        let mut table = search2vec::EmbeddingTableF64::zeros(2, dim);
        table.input_mut(0).copy_from_slice(&center);
        table.output_mut(1).copy_from_slice(&context);
        let pair = search2vec::WeightedPair {
            center: 0,
            context: 1,
            label,
            weight,
        };
        search2vec::sgns::sgd_step(&mut table, &pair, alpha).unwrap();
        let analytic_center: Vec<f64> = table.input(0).iter().zip(&center).map(|(n, o)| (n - o) / alpha).collect();
        let analytic_context: Vec<f64> = table.output(1).iter().zip(&context).map(|(n, o)| (n - o) / alpha).collect();

        let numeric = |which: usize| -> Vec<f64> {
            (0..dim)
                .map(|k| {
                    let (mut cp, mut cm) = (center.clone(), center.clone());
                    let (mut xp, mut xm) = (context.clone(), context.clone());
                    if which == 0 {
                        cp[k] += h;
                        cm[k] -= h;
                    } else {
                        xp[k] += h;
                        xm[k] -= h;
                    }
                    (term(&cp, &xp, label, weight) - term(&cm, &xm, label, weight)) / (2.0 * h)
                })
                .collect()
        };
        worst = worst
            .max(relative_error(&analytic_center, &numeric(0)))
            .max(relative_error(&analytic_context, &numeric(1)));
    }
    worst
}

pub const WORDS: [&str; 8] = ["red", "shoes", "cheap", "running", "sale", "nike", "store", "free"];

pub fn random_text(rng: &mut SplitMix64, max_words: usize) -> String {
    let n = 1 + rng.below(max_words);
    (0..n).map(|_| WORDS[rng.below(WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Components are multiples of 1/8 in [-1, 1], so sums are exact.
pub fn dyadic_vector(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| (rng.below(17) as f64 - 8.0) / 8.0).collect()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

pub fn contains_run(haystack: &[String], needle: &[&str]) -> bool {
    needle.len() <= 10
        && haystack.len() >= needle.len()
        && (0..=haystack.len() - needle.len()).any(|i| haystack[i..i + needle.len()].iter().zip(needle).all(|(a, b)| a == b))
}

/// Anchor vector plus every query whose words occur contiguously in one
/// field of the ad and whose cosine to the anchor exceeds `tau`.
pub fn brute_force_content(creative: &AdCreative, queries: &[(String, Vec<f64>)], anchor: &[f64], tau: f64) -> Vec<f64> {
    let split_text = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>();
    let url: Vec<String> = creative
        .display_url
        .split(['/', '-', '_', '.', '?', ' '])
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    let fields = [split_text(&creative.title), split_text(&creative.description), url];
    let mut out = anchor.to_vec();
    for (text, v) in queries {
        let words: Vec<&str> = text.split(' ').collect();
        if !fields.iter().any(|f| contains_run(f, &words)) {
            continue;
        }
        if oracle_cosine(anchor, v).is_some_and(|c| c > tau) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
    }
    out
}

pub fn creative(id: &str, title: &str, description: &str, url: &str, bid: &str) -> AdCreative {
    AdCreative {
        ad_id: id.into(),
        title: title.into(),
        description: description.into(),
        display_url: url.into(),
        bid_term: bid.into(),
    }
}

/// Scores every ad, sorts the whole list, filters, then truncates.
pub fn full_sort(query: &[f32], ads: &search2vec::VectorSetF32, k: usize, tau: f64) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut all: Vec<(String, f64)> = ads
        .iter()
        .filter(|(_, v)| norm(v) > 0.0)
        .map(|(t, v)| {
            let d: f64 = query.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            (t.to_string(), (d / (qn * norm(v))).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.into_iter().filter(|(_, s)| *s > tau).take(k).collect()
}
