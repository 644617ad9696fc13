//! Action vocabulary with frequency filtering and downsampling.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::session::{ActionKind, Session};

/// Default minimum occurrence count for an action to get a vector.
pub const DEFAULT_MIN_COUNT: u64 = 10;

/// Default downsampling threshold.
pub const DEFAULT_SUBSAMPLE_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    /// Namespaced key (`q:...`, `a:...`, `l:...`).
    pub token: String,
    pub kind: ActionKind,
    pub count: u64,
}

/// Token to dense id map. Ids follow descending count, ties broken by token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
    total: u64,
}

impl Vocabulary {
    /// Counts every action in `sessions` and keeps tokens seen at least
    /// `min_count` times.
    pub fn build<'a, I>(sessions: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a Session>,
    {
        let mut counts: HashMap<String, (ActionKind, u64)> = HashMap::new();
        for session in sessions {
            for action in &session.actions {
                counts.entry(action.key()).or_insert((action.kind, 0)).1 += 1;
            }
        }
        Self::from_counts(
            counts.into_iter().map(|(token, (kind, count))| VocabEntry { token, kind, count }),
            min_count,
        )
    }

    pub fn from_counts<I>(entries: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = VocabEntry>,
    {
        let mut entries: Vec<VocabEntry> =
            entries.into_iter().filter(|e| e.count >= min_count).collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        Self::from_sorted(entries)
    }

    fn from_sorted(entries: Vec<VocabEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.token.clone(), i))
            .collect();
        let total = entries.iter().map(|e| e.count).sum();
        Vocabulary {
            entries,
            index,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn token(&self, id: usize) -> &str {
        &self.entries[id].token
    }

    pub fn count(&self, id: usize) -> u64 {
        self.entries[id].count
    }

    pub fn kind(&self, id: usize) -> ActionKind {
        self.entries[id].kind
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    /// Sum of counts over retained tokens.
    pub fn total_action_count(&self) -> u64 {
        self.total
    }

    /// Relative frequency of `id` among retained occurrences.
    pub fn frequency(&self, id: usize) -> f64 {
        self.entries[id].count as f64 / self.total as f64
    }

    /// `token <TAB> kind <TAB> count`, ordered by id.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}", e.token, e.kind, e.count)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(token), Some(kind), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::parse(i + 1, "expected 'token<TAB>kind<TAB>count'"));
            };
            let kind = ActionKind::from_name(kind)
                .ok_or_else(|| Error::parse(i + 1, format!("unknown kind '{}'", kind)))?;
            match ActionKind::split_key(token) {
                Some((k, _)) if k == kind => {}
                _ => {
                    return Err(Error::parse(
                        i + 1,
                        format!("token '{}' does not carry the {} namespace", token, kind),
                    ))
                }
            }
            let count = count
                .parse::<u64>()
                .map_err(|e| Error::parse(i + 1, format!("bad count: {}", e)))?;
            entries.push(VocabEntry {
                token: token.to_string(),
                kind,
                count,
            });
        }
        let vocab = Self::from_sorted(entries);
        if vocab.index.len() != vocab.entries.len() {
            return Err(Error::invalid("vocabulary file lists a token twice"));
        }
        Ok(vocab)
    }
}

/// Probability of keeping one occurrence of a token with relative
/// frequency `f`: `min(1, sqrt(threshold / f))`.
pub fn keep_probability(frequency: f64, threshold: f64) -> Result<f64> {
    if !(frequency > 0.0) {
        return Err(Error::invalid(format!(
            "token frequency must be positive, got {}",
            frequency
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "subsample threshold must be positive, got {}",
            threshold
        )));
    }
    Ok((threshold / frequency).sqrt().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{Action, Session};

    fn session(tokens: &[&str]) -> Session {
        Session {
            user_id: "u".into(),
            actions: tokens
                .iter()
                .map(|t| Action {
                    kind: ActionKind::Query,
                    token: t.to_string(),
                    dwell_seconds: None,
                    timestamp: 0,
                })
                .collect(),
            impressions: Vec::new(),
        }
    }

    #[test]
    fn min_count_boundary_is_inclusive() {
        let mut sessions = Vec::new();
        for _ in 0..9 {
            sessions.push(session(&["nine", "ten"]));
        }
        sessions.push(session(&["ten", "ten"]));
        let v = Vocabulary::build(&sessions, 10);
        assert_eq!(v.len(), 1);
        assert_eq!(v.id("q:ten"), Some(0));
        assert_eq!(v.count(0), 11);
        assert_eq!(v.id("q:nine"), None);
    }

    #[test]
    fn empty_sessions_give_empty_vocabulary() {
        let v = Vocabulary::build(&[], 10);
        assert!(v.is_empty());
        assert_eq!(v.total_action_count(), 0);
    }

    #[test]
    fn ids_by_count_then_token() {
        let v = Vocabulary::build(&[session(&["b", "a", "c", "c"])], 1);
        let tokens: Vec<&str> = (0..v.len()).map(|i| v.token(i)).collect();
        assert_eq!(tokens, vec!["q:c", "q:a", "q:b"]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&[session(&["b", "a", "c", "c"])], 1);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "q:c\tquery\t2\nq:a\tquery\t1\nq:b\tquery\t1\n"
        );
        assert_eq!(Vocabulary::read_from(buf.as_slice()).unwrap(), v);
        assert!(Vocabulary::read_from("q:x\tad\t3\n".as_bytes()).is_err());
    }

    #[test]
    fn keep_probability_values() {
        assert_eq!(keep_probability(1e-5, 1e-5).unwrap(), 1.0);
        assert!((keep_probability(1e-3, 1e-5).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(keep_probability(1e-7, 1e-5).unwrap(), 1.0);
        assert!(keep_probability(0.0, 1e-5).is_err());
        assert!(keep_probability(-1.0, 1e-5).is_err());
    }
}
