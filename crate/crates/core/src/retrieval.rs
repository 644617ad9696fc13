//! Broad-match retrieval: nearest ads to a query by cosine similarity, by
//! exact scan or through random-hyperplane LSH.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use crate::embed::{cosine, VectorSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::{norm_f64, Real};

pub const DEFAULT_K: usize = 30;
pub const DEFAULT_TAU: f64 = 0.65;
pub const DEFAULT_LSH_BITS: usize = 16;
pub const DEFAULT_LSH_TABLES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub query: String,
    pub k: usize,
    pub tau: f64,
    /// Best first; ties in score ordered by ad token.
    pub ads: Vec<(String, f64)>,
}

impl MatchResult {
    /// Tab-separated `query, ad, score` lines.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for (ad, score) in &self.ads {
            writeln!(w, "{}\t{}\t{:.6}", self.query, ad, score)?;
        }
        Ok(())
    }
}

/// Cosine of a query and an ad vector.
pub fn score_pair<T: Real>(query: &[T], ad: &[T]) -> Result<f64> {
    cosine(query, ad)
}

fn by_score_then_token(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

fn dot_norm<T: Real>(q: &[T], q_norm: f64, v: &[T], v_norm: f64) -> f64 {
    let d: f64 = q.iter().zip(v).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    (d / (q_norm * v_norm)).clamp(-1.0, 1.0)
}

fn check_query<T: Real>(query: &[T], dim: usize) -> Result<f64> {
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            left: query.len(),
            right: dim,
        });
    }
    let n = norm_f64(query);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(n)
}

/// Keeps the `k` best candidates, then drops those not above `tau`.
fn finish(mut scored: Vec<(String, f64)>, k: usize, tau: f64) -> Vec<(String, f64)> {
    scored.sort_by(by_score_then_token);
    scored.truncate(k);
    scored.retain(|(_, s)| *s > tau);
    scored
}

/// Exact cosine scan with precomputed norms. Zero vectors never match.
#[derive(Debug, Clone)]
pub struct ExactIndex<'a, T> {
    ads: &'a VectorSet<T>,
    norms: Vec<f64>,
}

impl<'a, T: Real> ExactIndex<'a, T> {
    pub fn new(ads: &'a VectorSet<T>) -> Self {
        let norms = (0..ads.len()).map(|i| norm_f64(ads.row(i))).collect();
        ExactIndex { ads, norms }
    }

    pub fn vectors(&self) -> &VectorSet<T> {
        self.ads
    }

    fn score_rows<I: Iterator<Item = usize>>(&self, query: &[T], q_norm: f64, rows: I) -> Vec<(String, f64)> {
        rows.filter(|&i| self.norms[i] > 0.0)
            .map(|i| {
                (
                    self.ads.token(i).to_string(),
                    dot_norm(query, q_norm, self.ads.row(i), self.norms[i]),
                )
            })
            .collect()
    }

    pub fn search(&self, query: &[T], k: usize, tau: f64) -> Result<Vec<(String, f64)>> {
        let q_norm = check_query(query, self.ads.dim())?;
        Ok(finish(self.score_rows(query, q_norm, 0..self.ads.len()), k, tau))
    }
}

/// Exact top-`k` ads by cosine to `query`, keeping only scores above `tau`.
pub fn knn_exact<T: Real>(query: &[T], ads: &VectorSet<T>, k: usize, tau: f64) -> Result<Vec<(String, f64)>> {
    if ads.is_empty() {
        return Err(Error::invalid("no ad vectors to search"));
    }
    ExactIndex::new(ads).search(query, k, tau)
}

/// Random-hyperplane LSH: each table hashes a vector to the sign pattern of
/// `bits` Gaussian projections.
#[derive(Debug, Clone)]
pub struct LshIndex<'a, T> {
    exact: ExactIndex<'a, T>,
    bits: usize,
    planes: Vec<Vec<f64>>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

impl<'a, T: Real> LshIndex<'a, T> {
    pub fn build(ads: &'a VectorSet<T>, bits: usize, tables: usize, seed: u64) -> Result<Self> {
        if bits > 64 {
            return Err(Error::invalid("at most 64 bits per table"));
        }
        if tables == 0 {
            return Err(Error::invalid("at least one LSH table is required"));
        }
        let dim = ads.dim();
        let planes: Vec<Vec<f64>> = (0..tables)
            .map(|t| {
                let mut rng = SplitMix64::new(derive_seed(seed, &[0x15, t as u64]));
                (0..bits * dim).map(|_| rng.next_gaussian()).collect()
            })
            .collect();
        let mut index = LshIndex {
            exact: ExactIndex::new(ads),
            bits,
            planes,
            tables: vec![HashMap::new(); tables],
        };
        for i in 0..ads.len() {
            for t in 0..tables {
                let h = index.signature(t, ads.row(i));
                index.tables[t].entry(h).or_default().push(i as u32);
            }
        }
        Ok(index)
    }

    pub fn with_defaults(ads: &'a VectorSet<T>, seed: u64) -> Result<Self> {
        Self::build(ads, DEFAULT_LSH_BITS, DEFAULT_LSH_TABLES, seed)
    }

    fn signature(&self, table: usize, v: &[T]) -> u64 {
        let dim = v.len();
        let planes = &self.planes[table];
        let mut h = 0u64;
        for b in 0..self.bits {
            let p = &planes[b * dim..(b + 1) * dim];
            let s: f64 = p.iter().zip(v).map(|(a, x)| a * x.as_f64()).sum();
            if s >= 0.0 {
                h |= 1 << b;
            }
        }
        h
    }

    /// Ads sharing a bucket with `query` in at least one table, ascending.
    pub fn candidates(&self, query: &[T]) -> Vec<usize> {
        let mut seen = vec![false; self.exact.ads.len()];
        for t in 0..self.tables.len() {
            if let Some(bucket) = self.tables[t].get(&self.signature(t, query)) {
                for &i in bucket {
                    seen[i as usize] = true;
                }
            }
        }
        (0..seen.len()).filter(|&i| seen[i]).collect()
    }

    /// Candidates re-ranked by exact cosine; same contract as [`knn_exact`].
    pub fn search(&self, query: &[T], k: usize, tau: f64) -> Result<Vec<(String, f64)>> {
        let q_norm = check_query(query, self.exact.ads.dim())?;
        let rows = self.candidates(query).into_iter();
        Ok(finish(self.exact.score_rows(query, q_norm, rows), k, tau))
    }
}

/// LSH lookup followed by exact re-ranking of the candidates.
pub fn knn_lsh<T: Real>(query: &[T], index: &LshIndex<'_, T>, k: usize, tau: f64) -> Result<Vec<(String, f64)>> {
    index.search(query, k, tau)
}
