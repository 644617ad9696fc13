//! Content vectors for ads without clicks: the bid-term vector plus every
//! phrase of the creative whose query vector is close enough to it.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::embed::{cosine, VectorSet};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::session::{normalize_query, query_key};

use super::queries::{resolve_tail, InvertedIndex};

pub const DEFAULT_TAU_C: f64 = 0.45;
pub const MAX_NGRAM: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdCreative {
    pub ad_id: String,
    pub title: String,
    pub description: String,
    pub display_url: String,
    pub bid_term: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentVector<T> {
    pub ad_id: String,
    /// Head query whose vector anchored the sum.
    pub anchor: String,
    pub vector: Vec<T>,
    /// Phrases added to the anchor, with their cosine to it.
    pub contributing_phrases: Vec<(String, f64)>,
}

/// Reads `ad_id, title, description, display_url, bid_term` lines.
pub fn read_catalog<R: BufRead>(reader: R) -> Result<Vec<AdCreative>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        if f[0].is_empty() {
            return Err(Error::parse(i + 1, "empty ad id"));
        }
        if f[4].trim().is_empty() {
            return Err(Error::parse(i + 1, "empty bid term"));
        }
        out.push(AdCreative {
            ad_id: f[0].to_string(),
            title: f[1].to_string(),
            description: f[2].to_string(),
            display_url: f[3].to_string(),
            bid_term: f[4].to_string(),
        });
    }
    Ok(out)
}

fn text_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn url_tokens(url: &str) -> Vec<String> {
    url.split(|c: char| matches!(c, '/' | '-' | '_' | '.' | '?') || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Contiguous n-grams (n = 1..10) of the title, description and URL, each
/// field on its own, lowercased, first occurrence kept.
pub fn extract_ngrams(creative: &AdCreative) -> Vec<String> {
    let fields = [
        text_tokens(&creative.title),
        text_tokens(&creative.description),
        url_tokens(&creative.display_url),
    ];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for tokens in &fields {
        for n in 1..=MAX_NGRAM.min(tokens.len()) {
            for w in tokens.windows(n) {
                let phrase = w.join(" ");
                if seen.insert(phrase.clone()) {
                    out.push(phrase);
                }
            }
        }
    }
    out
}

/// Sums the anchor vector and the query vectors of all candidate phrases
/// with cosine to the anchor above `tau_c`.
pub fn anchor_phrases_vector<T: Real>(
    creative: &AdCreative,
    queries: &VectorSet<T>,
    anchor: &str,
    anchor_vector: &[T],
    tau_c: f64,
) -> Result<ContentVector<T>> {
    if anchor_vector.len() != queries.dim() {
        return Err(Error::DimensionMismatch {
            left: anchor_vector.len(),
            right: queries.dim(),
        });
    }
    let mut vector = anchor_vector.to_vec();
    let mut contributing = Vec::new();
    for phrase in extract_ngrams(creative) {
        let Some(v) = queries.get(&query_key(&phrase)) else {
            continue;
        };
        let Ok(sim) = cosine(anchor_vector, v) else {
            continue;
        };
        if sim > tau_c {
            for (acc, x) in vector.iter_mut().zip(v) {
                *acc = *acc + *x;
            }
            contributing.push((phrase, sim));
        }
    }
    Ok(ContentVector {
        ad_id: creative.ad_id.clone(),
        anchor: anchor.to_string(),
        vector,
        contributing_phrases: contributing,
    })
}

/// Vector for a bid term: its own query vector, else the vector of its
/// best elastic match.
pub fn resolve_anchor<T: Real>(
    bid_term: &str,
    queries: &VectorSet<T>,
    index: Option<&InvertedIndex>,
) -> Result<(String, Vec<T>)> {
    let text = normalize_query(bid_term);
    if let Some(v) = queries.get(&query_key(&text)) {
        return Ok((text, v.to_vec()));
    }
    let unresolved = |reason: &str| Error::ColdStart {
        item: bid_term.to_string(),
        reason: reason.to_string(),
    };
    let index = index.ok_or_else(|| unresolved("bid term has no vector and no elastic index was given"))?;
    match resolve_tail(&text, index, queries, None) {
        Ok(found) => Ok((found.head, found.vector)),
        Err(Error::ColdStart { .. }) => Err(unresolved("bid term has no vector and no elastic match")),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct ColdStartReport<T> {
    pub vectors: Vec<ContentVector<T>>,
    /// Ads whose anchor could not be resolved.
    pub failures: Vec<(String, String)>,
}

/// Content vectors for a whole catalog.
pub fn build_content_vectors<T: Real>(
    catalog: &[AdCreative],
    queries: &VectorSet<T>,
    index: Option<&InvertedIndex>,
    tau_c: f64,
) -> Result<ColdStartReport<T>> {
    let mut vectors = Vec::with_capacity(catalog.len());
    let mut failures = Vec::new();
    for creative in catalog {
        match resolve_anchor(&creative.bid_term, queries, index) {
            Ok((anchor, v)) => {
                vectors.push(anchor_phrases_vector(creative, queries, &anchor, &v, tau_c)?)
            }
            Err(Error::ColdStart { reason, .. }) => failures.push((creative.ad_id.clone(), reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(ColdStartReport { vectors, failures })
}

/// Content vectors keyed by ad token, in catalog order.
pub fn content_vector_set<T: Real>(vectors: &[ContentVector<T>], dim: usize) -> Result<VectorSet<T>> {
    let mut set = VectorSet::empty(dim);
    for cv in vectors {
        set.push(crate::session::ad_key(&cv.ad_id), &cv.vector)?;
    }
    Ok(set)
}

/// One line per ad: `ad_id <TAB> anchor`, then a `phrase:similarity` field
/// per contributing phrase.
pub fn write_provenance<T, W: Write>(vectors: &[ContentVector<T>], mut w: W) -> Result<()> {
    for cv in vectors {
        write!(w, "{}\t{}", cv.ad_id, cv.anchor)?;
        for (p, s) in &cv.contributing_phrases {
            write!(w, "\t{}:{:.6}", p, s)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
