//! Elastic matching of unseen tail queries: head queries are indexed as
//! documents made of their own words and the words of their nearest
//! neighbor queries, and a tail query inherits from its best BM25 match.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use log::warn;

use crate::embed::VectorSet;
use crate::error::{Error, Result};
use crate::retrieval::ExactIndex;
use crate::scalar::Real;
use crate::session::{normalize_query, query_key, ActionKind};

pub const DEFAULT_ELASTIC_K: usize = 10;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

const INDEX_MAGIC: &[u8; 6] = b"S2VIDX";
const INDEX_VERSION: u32 = 1;

/// A head query with the words of itself and its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDocument {
    /// Normalized query text (no namespace prefix).
    pub head: String,
    /// Neighbor query texts, nearest first.
    pub neighbors: Vec<String>,
    /// Every word of the head and of each neighbor, with repetition.
    pub terms: Vec<String>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Query texts present in `vectors` (tokens with the query prefix).
pub fn query_texts<T: Real>(vectors: &VectorSet<T>) -> Vec<String> {
    vectors
        .tokens()
        .iter()
        .filter_map(|t| match ActionKind::split_key(t) {
            Some((ActionKind::Query, text)) => Some(text.to_string()),
            _ => None,
        })
        .collect()
}

/// Builds one document per head query from its `k` most cosine-similar
/// other queries in `vectors`. Heads without a vector are skipped.
pub fn build_query_documents<T: Real>(heads: &[String], vectors: &VectorSet<T>, k: usize) -> Vec<QueryDocument> {
    let queries = vectors.filter(|t| t.starts_with(ActionKind::Query.prefix()));
    let scan = ExactIndex::new(&queries);
    let mut docs = Vec::with_capacity(heads.len());
    for head in heads {
        let head = normalize_query(head);
        let key = query_key(&head);
        let Some(v) = queries.get(&key) else {
            warn!("head query '{}' has no vector, skipped", head);
            continue;
        };
        let neighbors: Vec<String> = if k == 0 {
            Vec::new()
        } else {
            match scan.search(v, k + 1, f64::NEG_INFINITY) {
                Ok(hits) => hits
                    .into_iter()
                    .filter(|(t, _)| *t != key)
                    .take(k)
                    .filter_map(|(t, _)| {
                        ActionKind::split_key(&t).map(|(_, text)| text.to_string())
                    })
                    .collect(),
                Err(_) => Vec::new(),
            }
        };
        let terms = words(&head)
            .chain(neighbors.iter().flat_map(|n| words(n)))
            .collect();
        docs.push(QueryDocument {
            head,
            neighbors,
            terms,
        });
    }
    docs
}

/// Term postings over query documents, scored with BM25.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    heads: Vec<String>,
    doc_len: Vec<u32>,
    /// Term -> (document id, term frequency), ascending document id.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    head_ids: HashMap<String, u32>,
}

impl InvertedIndex {
    /// Documents get ids in ascending head-query order.
    pub fn build(documents: &[QueryDocument]) -> Self {
        let mut docs: Vec<&QueryDocument> = documents.iter().collect();
        docs.sort_by(|a, b| a.head.cmp(&b.head));
        docs.dedup_by(|a, b| a.head == b.head);
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (id, doc) in docs.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.terms {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((id as u32, n));
            }
            doc_len.push(doc.terms.len() as u32);
        }
        let heads: Vec<String> = docs.iter().map(|d| d.head.clone()).collect();
        Self::from_parts(heads, doc_len, postings)
    }

    fn from_parts(heads: Vec<String>, doc_len: Vec<u32>, postings: BTreeMap<String, Vec<(u32, u32)>>) -> Self {
        let head_ids = heads
            .iter()
            .enumerate()
            .map(|(i, h)| (h.clone(), i as u32))
            .collect();
        InvertedIndex {
            heads,
            doc_len,
            postings,
            head_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> &[String] {
        &self.heads
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    fn avg_len(&self) -> f64 {
        if self.doc_len.is_empty() {
            return 0.0;
        }
        self.doc_len.iter().map(|&l| l as f64).sum::<f64>() / self.doc_len.len() as f64
    }

    /// Head queries ranked by BM25 against `text`, best first, ties by
    /// head query. A head equal to the normalized text is ranked first.
    /// `exclude` removes one head (evaluation of a query against the
    /// others). Empty when no term overlaps.
    pub fn match_tail(&self, text: &str, exclude: Option<&str>) -> Result<Vec<(String, f64)>> {
        let normalized = normalize_query(text);
        if normalized.is_empty() {
            return Err(Error::invalid("tail query is empty"));
        }
        let mut terms: Vec<String> = words(&normalized).collect();
        terms.sort();
        terms.dedup();

        let n = self.heads.len() as f64;
        let avg = self.avg_len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for t in &terms {
            let list = self.postings(t);
            if list.is_empty() {
                continue;
            }
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for &(doc, tf) in list {
                let tf = tf as f64;
                let len = self.doc_len[doc as usize] as f64;
                let norm = 1.0 - BM25_B + BM25_B * len / avg;
                *scores.entry(doc).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }

        let excluded = exclude.map(normalize_query).and_then(|h| self.head_ids.get(&h).copied());
        let exact = self.head_ids.get(&normalized).copied();
        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .filter(|&(d, _)| Some(d) != excluded)
            .collect();
        ranked.sort_by(|a, b| {
            let a_exact = Some(a.0) == exact;
            let b_exact = Some(b.0) == exact;
            b_exact
                .cmp(&a_exact)
                .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(ranked
            .into_iter()
            .map(|(d, s)| (self.heads[d as usize].clone(), s))
            .collect())
    }

    /// Binary form: magic, version, documents (head, length), then terms
    /// with delta-encoded postings. Integers are LEB128 varints.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        put_varint(&mut buf, self.heads.len() as u64);
        for (h, &l) in self.heads.iter().zip(&self.doc_len) {
            put_str(&mut buf, h);
            put_varint(&mut buf, l as u64);
        }
        put_varint(&mut buf, self.postings.len() as u64);
        for (term, list) in &self.postings {
            put_str(&mut buf, term);
            put_varint(&mut buf, list.len() as u64);
            let mut prev = 0u32;
            for &(doc, tf) in list {
                put_varint(&mut buf, (doc - prev) as u64);
                put_varint(&mut buf, tf as u64);
                prev = doc;
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut c = Cursor { buf: &buf, pos: 0 };
        if c.take(INDEX_MAGIC.len())? != INDEX_MAGIC {
            return Err(Error::invalid("not an elastic index file"));
        }
        let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
        if version != INDEX_VERSION {
            return Err(Error::invalid(format!("unsupported index version {}", version)));
        }
        let n = c.varint()? as usize;
        let mut heads = Vec::with_capacity(n);
        let mut doc_len = Vec::with_capacity(n);
        for _ in 0..n {
            heads.push(c.string()?);
            doc_len.push(c.varint()? as u32);
        }
        let terms = c.varint()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = c.string()?;
            let len = c.varint()? as usize;
            let mut list = Vec::with_capacity(len);
            let mut doc = 0u32;
            for _ in 0..len {
                doc += c.varint()? as u32;
                let tf = c.varint()? as u32;
                if doc as usize >= n {
                    return Err(Error::invalid("posting refers to a missing document"));
                }
                list.push((doc, tf));
            }
            postings.insert(term, list);
        }
        if c.pos != buf.len() {
            return Err(Error::invalid("trailing bytes in index file"));
        }
        Ok(Self::from_parts(heads, doc_len, postings))
    }

    /// Text dump: `term <TAB> head:tf,head:tf,...` per term.
    pub fn write_debug<W: Write>(&self, mut w: W) -> Result<()> {
        for (term, list) in &self.postings {
            let entries: Vec<String> = list
                .iter()
                .map(|&(d, tf)| format!("{}:{}", self.heads[d as usize], tf))
                .collect();
            writeln!(w, "{}\t{}", term, entries.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn put_varint(buf: &mut Vec<u8>, mut x: u64) {
    while x >= 0x80 {
        buf.push((x as u8) | 0x80);
        x >>= 7;
    }
    buf.push(x as u8);
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_varint(buf, s.len() as u64);
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::invalid("index file truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn varint(&mut self) -> Result<u64> {
        let mut x = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            x |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(x);
            }
        }
        Err(Error::invalid("varint too long"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.varint()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::invalid("index string is not UTF-8"))
    }
}

/// What a tail query takes over from its top match.
#[derive(Debug, Clone, PartialEq)]
pub struct Inherited<T> {
    pub head: String,
    pub vector: Vec<T>,
    pub ads: Vec<String>,
}

/// Vector and cached broad-match ads of the best match.
pub fn inherit<T: Real>(
    matches: &[(String, f64)],
    vectors: &VectorSet<T>,
    cached_ads: &HashMap<String, Vec<String>>,
) -> Result<Inherited<T>> {
    let Some((head, _)) = matches.first() else {
        return Err(Error::ColdStart {
            item: String::new(),
            reason: "no matching head query".into(),
        });
    };
    let vector = vectors
        .get(&query_key(head))
        .ok_or_else(|| Error::ColdStart {
            item: head.clone(),
            reason: "matched head query has no vector".into(),
        })?
        .to_vec();
    Ok(Inherited {
        head: head.clone(),
        vector,
        ads: cached_ads.get(head).cloned().unwrap_or_default(),
    })
}

/// Elastic lookup of a tail query: best head match (optionally excluding
/// one head) and its vector.
pub fn resolve_tail<T: Real>(
    text: &str,
    index: &InvertedIndex,
    vectors: &VectorSet<T>,
    exclude: Option<&str>,
) -> Result<Inherited<T>> {
    let matches = index.match_tail(text, exclude)?;
    inherit(&matches, vectors, &HashMap::new()).map_err(|e| match e {
        Error::ColdStart { reason, .. } => Error::ColdStart {
            item: text.to_string(),
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(head: &str, terms: &str) -> QueryDocument {
        QueryDocument {
            head: head.into(),
            neighbors: Vec::new(),
            terms: terms.split_whitespace().map(String::from).collect(),
        }
    }

    #[test]
    fn empty_tail_is_an_error() {
        let idx = InvertedIndex::build(&[doc("a b", "a b")]);
        assert!(idx.match_tail("   ", None).is_err());
    }

    #[test]
    fn no_overlap_gives_nothing() {
        let idx = InvertedIndex::build(&[doc("a b", "a b")]);
        assert!(idx.match_tail("zzz", None).unwrap().is_empty());
    }

    #[test]
    fn postings_sorted_and_df_consistent() {
        let idx = InvertedIndex::build(&[doc("z", "x y x"), doc("a", "x"), doc("m", "y")]);
        assert_eq!(idx.heads(), ["a", "m", "z"]);
        assert_eq!(idx.postings("x"), &[(0, 1), (2, 2)]);
        assert_eq!(idx.document_frequency("y"), 2);
    }

    #[test]
    fn varint_round_trip() {
        for x in [0u64, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut b = Vec::new();
            put_varint(&mut b, x);
            let mut c = Cursor { buf: &b, pos: 0 };
            assert_eq!(c.varint().unwrap(), x);
            assert_eq!(c.pos, b.len());
        }
    }

    #[test]
    fn binary_round_trip() {
        let idx = InvertedIndex::build(&[doc("z q", "z q x y x"), doc("a", "a x"), doc("m", "m y")]);
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(InvertedIndex::read_from(&buf[..]).unwrap(), idx);
        assert!(InvertedIndex::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn inherit_empty_is_cold_start_failure() {
        let v = VectorSet::<f64>::empty(2);
        assert!(matches!(
            inherit(&[], &v, &HashMap::new()),
            Err(Error::ColdStart { .. })
        ));
    }
}
