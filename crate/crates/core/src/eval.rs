//! Relevance metrics over editorially graded query/ad pairs: averaged AUC
//! over grade thresholds, macro NDCG, NDCG@K, and score distributions per
//! grade.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::coldstart::{resolve_tail, InvertedIndex};
use crate::embed::{cosine, VectorSet};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::session::{ad_key, normalize_query, query_key};

/// Grade thresholds of the four binary problems averaged by [`oauc`].
pub const OAUC_THRESHOLDS: [u8; 4] = [5, 4, 3, 2];
pub const NDCG_CURVE_KS: std::ops::RangeInclusive<usize> = 2..=9;

#[derive(Debug, Clone, PartialEq)]
pub struct GradedPair {
    pub query: String,
    pub ad: String,
    /// 1 Bad, 2 Fair, 3 Good, 4 Excellent, 5 Perfect.
    pub grade: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub query: String,
    pub ad: String,
    pub grade: u8,
    pub score: f64,
}

/// Reads `query <TAB> ad_id <TAB> grade` lines.
pub fn read_judgments<R: BufRead>(reader: R) -> Result<Vec<GradedPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::parse(i + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let grade: u8 = f[2]
            .trim()
            .parse()
            .ok()
            .filter(|g| (1..=5).contains(g))
            .ok_or_else(|| Error::parse(i + 1, format!("grade must be 1..5, got '{}'", f[2])))?;
        out.push(GradedPair {
            query: normalize_query(f[0]),
            ad: f[1].to_string(),
            grade,
        });
    }
    Ok(out)
}

fn check_finite(scores: impl Iterator<Item = f64>) -> Result<()> {
    for s in scores {
        if !s.is_finite() {
            return Err(Error::invalid(format!("score {} is not finite", s)));
        }
    }
    Ok(())
}

/// AUC of `score` separating `positive` items, ties counted one half.
fn auc(items: &[(bool, f64)]) -> Option<f64> {
    let pos = items.iter().filter(|x| x.0).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut sorted: Vec<(bool, f64)> = items.to_vec();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite scores"));
    // Sum of average ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].1 == sorted[i].1 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += sorted[i..j].iter().filter(|x| x.0).count() as f64 * avg_rank;
        i = j;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// Mean AUC over the grade thresholds 5, 4, 3, 2 (grade at or above the
/// threshold is positive). Thresholds with an empty side are skipped.
pub fn oauc(pairs: &[(u8, f64)]) -> Result<f64> {
    check_finite(pairs.iter().map(|p| p.1))?;
    let aucs: Vec<f64> = OAUC_THRESHOLDS
        .iter()
        .filter_map(|&t| {
            let items: Vec<(bool, f64)> = pairs.iter().map(|&(g, s)| (g >= t, s)).collect();
            auc(&items)
        })
        .collect();
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric(
            "oAUC needs pairs on both sides of some grade threshold".into(),
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn gain(grade: u8) -> f64 {
    (1u64 << grade) as f64 - 1.0
}

fn discount(position: usize, cutoff: Option<usize>) -> f64 {
    match cutoff {
        Some(k) if position > k => 0.0,
        _ => 1.0 / ((position + 1) as f64).log2(),
    }
}

/// DCG of the score ranking. Items with equal scores share the mean
/// discount of the positions they occupy.
fn dcg(list: &[(u8, f64)], cutoff: Option<usize>) -> f64 {
    let mut sorted = list.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].1 == sorted[i].1 {
            j += 1;
        }
        let mean_discount = (i + 1..=j).map(|p| discount(p, cutoff)).sum::<f64>() / (j - i) as f64;
        total += sorted[i..j].iter().map(|x| gain(x.0)).sum::<f64>() * mean_discount;
        i = j;
    }
    total
}

fn ideal_dcg(list: &[(u8, f64)], cutoff: Option<usize>) -> f64 {
    let mut grades: Vec<u8> = list.iter().map(|x| x.0).collect();
    grades.sort_by(|a, b| b.cmp(a));
    grades
        .iter()
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1, cutoff))
        .sum()
}

/// NDCG of one query's judged ads, ranked by score, gains `2^grade - 1`
/// and discount `1 / log2(position + 1)`. `cutoff` limits to the top K.
pub fn ndcg(list: &[(u8, f64)], cutoff: Option<usize>) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::UndefinedMetric("NDCG of an empty list".into()));
    }
    check_finite(list.iter().map(|p| p.1))?;
    if cutoff == Some(0) {
        return Err(Error::invalid("NDCG cutoff must be positive"));
    }
    Ok(dcg(list, cutoff) / ideal_dcg(list, cutoff))
}

/// NDCG averaged over queries.
pub fn macro_ndcg(queries: &[Vec<(u8, f64)>], cutoff: Option<usize>) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::UndefinedMetric("no queries to average".into()));
    }
    let mut total = 0.0;
    for q in queries {
        total += ndcg(q, cutoff)?;
    }
    Ok(total / queries.len() as f64)
}

/// `(K, macro NDCG@K)` for K = 2..9.
pub fn ndcg_curve(queries: &[Vec<(u8, f64)>]) -> Result<Vec<(usize, f64)>> {
    NDCG_CURVE_KS
        .map(|k| macro_ndcg(queries, Some(k)).map(|v| (k, v)))
        .collect()
}

/// Groups scored pairs per query, in query order.
pub fn group_by_query(pairs: &[ScoredPair]) -> Vec<Vec<(u8, f64)>> {
    let mut by_query: BTreeMap<&str, Vec<(u8, f64)>> = BTreeMap::new();
    for p in pairs {
        by_query.entry(&p.query).or_default().push((p.grade, p.score));
    }
    by_query.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Query and ad vectors learned from sessions.
    Context,
    /// Session query vectors against content ad vectors.
    Content,
    /// Query vector taken from the best elastic match other than the query
    /// itself.
    Elastic,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context" => Ok(ScoreMode::Context),
            "content" => Ok(ScoreMode::Content),
            "elastic" => Ok(ScoreMode::Elastic),
            _ => Err(Error::invalid(format!(
                "unknown scoring mode '{}' (context, content, elastic)",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Coverage {
    pub total: usize,
    pub scored: usize,
    pub missing_query: usize,
    pub missing_ad: usize,
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs_total\t{}", self.total)?;
        writeln!(f, "pairs_scored\t{}", self.scored)?;
        writeln!(f, "missing_query\t{}", self.missing_query)?;
        writeln!(f, "missing_ad\t{}", self.missing_ad)
    }
}

/// Vectors a dataset is scored against. `ads` holds context or content
/// vectors depending on the mode; `index` is needed for elastic mode.
pub struct ScoringModel<'a, T> {
    pub queries: &'a VectorSet<T>,
    pub ads: &'a VectorSet<T>,
    pub index: Option<&'a InvertedIndex>,
}

/// Cosine score for every pair whose vectors resolve; the rest are counted
/// in the coverage report and left out.
pub fn score_dataset<T: Real>(
    pairs: &[GradedPair],
    mode: ScoreMode,
    model: &ScoringModel<'_, T>,
) -> Result<(Vec<ScoredPair>, Coverage)> {
    let index = match (mode, model.index) {
        (ScoreMode::Elastic, None) => {
            return Err(Error::invalid("elastic scoring needs an index"))
        }
        (_, i) => i,
    };
    let mut coverage = Coverage {
        total: pairs.len(),
        ..Coverage::default()
    };
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let query: Option<Vec<T>> = match mode {
            ScoreMode::Context | ScoreMode::Content => {
                model.queries.get(&query_key(&p.query)).map(<[T]>::to_vec)
            }
            ScoreMode::Elastic => resolve_tail(&p.query, index.expect("checked"), model.queries, Some(&p.query))
                .ok()
                .map(|m| m.vector),
        };
        let Some(query) = query else {
            coverage.missing_query += 1;
            continue;
        };
        let Some(ad) = model.ads.get(&ad_key(&p.ad)) else {
            coverage.missing_ad += 1;
            continue;
        };
        match cosine(&query, ad) {
            Ok(score) => {
                coverage.scored += 1;
                out.push(ScoredPair {
                    query: p.query.clone(),
                    ad: p.ad.clone(),
                    grade: p.grade,
                    score,
                });
            }
            Err(Error::ZeroVector) => {
                if query.iter().all(|x| x.is_zero()) {
                    coverage.missing_query += 1;
                } else {
                    coverage.missing_ad += 1;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, coverage))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pairs: usize,
    pub queries: usize,
    pub oauc: f64,
    pub macro_ndcg: f64,
    pub ndcg_at: Vec<(usize, f64)>,
}

pub fn evaluate(pairs: &[ScoredPair]) -> Result<MetricsReport> {
    let graded: Vec<(u8, f64)> = pairs.iter().map(|p| (p.grade, p.score)).collect();
    let queries = group_by_query(pairs);
    Ok(MetricsReport {
        pairs: pairs.len(),
        queries: queries.len(),
        oauc: oauc(&graded)?,
        macro_ndcg: macro_ndcg(&queries, None)?,
        ndcg_at: ndcg_curve(&queries)?,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs\t{}", self.pairs)?;
        writeln!(f, "queries\t{}", self.queries)?;
        writeln!(f, "oauc\t{:.6}", self.oauc)?;
        writeln!(f, "macro_ndcg\t{:.6}", self.macro_ndcg)
    }
}

/// `K <TAB> value` rows.
pub fn write_ndcg_curve<W: Write>(curve: &[(usize, f64)], mut w: W) -> Result<()> {
    for (k, v) in curve {
        writeln!(w, "{}\t{:.6}", k, v)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradeSummary {
    pub grade: u8,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank quantile of sorted values: element `ceil(p * n)` (1-based).
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Five-number summary and mean of scores per grade; grades without pairs
/// are left out.
pub fn export_grade_score_distribution(pairs: &[ScoredPair]) -> Vec<GradeSummary> {
    let mut by_grade: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        by_grade.entry(p.grade).or_default().push(p.score);
    }
    by_grade
        .into_iter()
        .map(|(grade, mut s)| {
            s.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
            GradeSummary {
                grade,
                count: s.len(),
                min: s[0],
                q1: nearest_rank(&s, 0.25),
                median: nearest_rank(&s, 0.5),
                q3: nearest_rank(&s, 0.75),
                max: s[s.len() - 1],
                mean: s.iter().sum::<f64>() / s.len() as f64,
            }
        })
        .collect()
}

/// Tab-separated table with a header row.
pub fn write_grade_distribution<W: Write>(rows: &[GradeSummary], mut w: W) -> Result<()> {
    writeln!(w, "grade\tcount\tmin\tq1\tmedian\tq3\tmax\tmean")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.grade, r.count, r.min, r.q1, r.median, r.q3, r.max, r.mean
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example_ndcg() {
        let got = ndcg(&[(5, 0.1), (1, 0.9)], None).unwrap();
        let dcg = 1.0 + 31.0 / 3f64.log2();
        let idcg = 31.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-12);
        assert!((got - 0.6499).abs() < 1e-4);
    }

    #[test]
    fn four_pair_oauc_is_one() {
        let p = [(5, 0.9), (3, 0.8), (2, 0.4), (1, 0.1)];
        assert_eq!(oauc(&p).unwrap(), 1.0);
    }

    #[test]
    fn single_grade_is_undefined() {
        assert!(matches!(
            oauc(&[(3, 0.1), (3, 0.5)]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(oauc(&[(5, 0.5), (1, 0.5)]).unwrap(), 0.5);
    }

    #[test]
    fn quartiles_nearest_rank() {
        let pairs: Vec<ScoredPair> = [0.5, 0.1, 0.4, 0.2, 0.3]
            .iter()
            .map(|&s| ScoredPair {
                query: "q".into(),
                ad: "a".into(),
                grade: 4,
                score: s,
            })
            .collect();
        let rows = export_grade_score_distribution(&pairs);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.min, r.q1, r.median, r.q3, r.max), (0.1, 0.2, 0.3, 0.4, 0.5));
        assert!((r.mean - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_query_set_is_an_error() {
        assert!(macro_ndcg(&[], None).is_err());
    }
}
