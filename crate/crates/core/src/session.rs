//! Event log ingestion, sessionization and extraction of training signals.
//!
//! Events arrive as `user_id <TAB> timestamp <TAB> kind <TAB> payload`
//! records. Queries, ad clicks and link clicks are *actions*; ad impressions
//! are not, and ride along with the query they were shown for.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Inactivity gap (seconds) that closes a session.
pub const SESSION_GAP_SECONDS: u64 = 30 * 60;

/// Only this many top positions can produce implicit negatives.
pub const IMPLICIT_NEGATIVE_TOP_POSITIONS: usize = 3;

/// The single ad click of a session must dwell strictly longer than this.
pub const IMPLICIT_NEGATIVE_MIN_DWELL_SECONDS: u32 = 10;

/// Dwell times (minutes) above this get weight 1.
pub const DWELL_CAP_MINUTES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Query,
    Ad,
    Link,
}

impl ActionKind {
    /// Namespace prefix used for vocabulary keys.
    pub fn prefix(self) -> &'static str {
        match self {
            ActionKind::Query => "q:",
            ActionKind::Ad => "a:",
            ActionKind::Link => "l:",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Query => "query",
            ActionKind::Ad => "ad",
            ActionKind::Link => "link",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "query" => Some(ActionKind::Query),
            "ad" => Some(ActionKind::Ad),
            "link" => Some(ActionKind::Link),
            _ => None,
        }
    }

    /// Splits a namespaced vocabulary key into kind and bare token.
    pub fn split_key(key: &str) -> Option<(Self, &str)> {
        let (kind, rest) = match key.get(..2)? {
            "q:" => (ActionKind::Query, &key[2..]),
            "a:" => (ActionKind::Ad, &key[2..]),
            "l:" => (ActionKind::Link, &key[2..]),
            _ => return None,
        };
        (!rest.is_empty()).then_some((kind, rest))
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical query form: lowercase, trimmed, internal whitespace collapsed.
pub fn normalize_query(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn query_key(text: &str) -> String {
    format!("q:{}", normalize_query(text))
}

pub fn ad_key(ad_id: &str) -> String {
    format!("a:{}", ad_id)
}

/// Ads shown on one result page, in page order (position 1 first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdImpression {
    ads: Vec<String>,
    clicked_position: Option<usize>,
}

impl AdImpression {
    pub fn new(ads: Vec<String>, clicked_position: Option<usize>) -> Result<Self> {
        if ads.is_empty() {
            return Err(Error::invalid("impression lists no ads"));
        }
        if ads.iter().any(|a| a.is_empty()) {
            return Err(Error::invalid("impression contains an empty ad id"));
        }
        if let Some(p) = clicked_position {
            if p == 0 || p > ads.len() {
                return Err(Error::invalid(format!(
                    "clicked position {} outside 1..={}",
                    p,
                    ads.len()
                )));
            }
        }
        Ok(AdImpression {
            ads,
            clicked_position,
        })
    }

    pub fn ads(&self) -> &[String] {
        &self.ads
    }

    /// 1-based clicked position.
    pub fn clicked_position(&self) -> Option<usize> {
        self.clicked_position
    }

    pub fn clicked_ad(&self) -> Option<&str> {
        self.clicked_position.map(|p| self.ads[p - 1].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    QueryIssued(String),
    AdClicked { ad_id: String, dwell_seconds: u32 },
    LinkClicked(String),
    AdImpression(AdImpression),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub user_id: String,
    pub timestamp: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub kind: ActionKind,
    pub token: String,
    /// Present only for clicked ads.
    pub dwell_seconds: Option<u32>,
    pub timestamp: u64,
}

impl Action {
    /// Namespaced vocabulary key, e.g. `q:red shoes`.
    pub fn key(&self) -> String {
        format!("{}{}", self.kind.prefix(), self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachedImpression {
    /// Index into `Session::actions` of the query this impression belongs to.
    pub query_index: usize,
    /// Number of session actions recorded before this impression.
    pub preceding_actions: usize,
    pub timestamp: u64,
    pub impression: AdImpression,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: String,
    pub actions: Vec<Action>,
    pub impressions: Vec<AttachedImpression>,
}

impl Session {
    /// Reconstructs the event stream this session was built from.
    pub fn to_events(&self) -> Vec<RawEvent> {
        let mut events: Vec<RawEvent> = self
            .actions
            .iter()
            .map(|a| RawEvent {
                user_id: self.user_id.clone(),
                timestamp: a.timestamp,
                payload: match a.kind {
                    ActionKind::Query => Payload::QueryIssued(a.token.clone()),
                    ActionKind::Ad => Payload::AdClicked {
                        ad_id: a.token.clone(),
                        dwell_seconds: a.dwell_seconds.unwrap_or(0),
                    },
                    ActionKind::Link => Payload::LinkClicked(a.token.clone()),
                },
            })
            .collect();
        for imp in self.impressions.iter().rev() {
            events.insert(
                imp.preceding_actions,
                RawEvent {
                    user_id: self.user_id.clone(),
                    timestamp: imp.timestamp,
                    payload: Payload::AdImpression(imp.impression.clone()),
                },
            );
        }
        events
    }
}

/// Implicit negative: an ad shown above the clicked ad and skipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImplicitNegativePair {
    pub query_token: String,
    pub skipped_ad_token: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub lines: usize,
    pub events: usize,
    pub sessions: usize,
    pub discarded_singletons: usize,
    pub dropped_impressions: usize,
    pub malformed: Vec<(usize, String)>,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lines\t{}", self.lines)?;
        writeln!(f, "events\t{}", self.events)?;
        writeln!(f, "sessions\t{}", self.sessions)?;
        writeln!(f, "discarded_singletons\t{}", self.discarded_singletons)?;
        writeln!(f, "dropped_impressions\t{}", self.dropped_impressions)?;
        write!(f, "malformed\t{}", self.malformed.len())
    }
}

fn parse_payload(kind: &str, payload: &str) -> std::result::Result<Payload, String> {
    match kind {
        "Q" => {
            let q = normalize_query(payload);
            if q.is_empty() {
                return Err("empty query".into());
            }
            Ok(Payload::QueryIssued(q))
        }
        "AC" => {
            let (ad, dwell) = payload
                .rsplit_once(',')
                .ok_or_else(|| "ad click payload must be 'ad_id,dwell_seconds'".to_string())?;
            let ad = ad.trim();
            if ad.is_empty() {
                return Err("empty ad id".into());
            }
            let dwell_seconds = dwell
                .trim()
                .parse::<u32>()
                .map_err(|e| format!("bad dwell '{}': {}", dwell, e))?;
            Ok(Payload::AdClicked {
                ad_id: ad.to_string(),
                dwell_seconds,
            })
        }
        "LC" => {
            let link = payload.trim();
            if link.is_empty() {
                return Err("empty link id".into());
            }
            Ok(Payload::LinkClicked(link.to_string()))
        }
        "AI" => {
            let (ads, clicked) = payload
                .rsplit_once(';')
                .ok_or_else(|| "impression payload must be 'ad1|ad2|...;clicked_pos'".to_string())?;
            let ads: Vec<String> = ads.split('|').map(|a| a.trim().to_string()).collect();
            let clicked = match clicked.trim() {
                "" => None,
                p => Some(
                    p.parse::<usize>()
                        .map_err(|e| format!("bad clicked position '{}': {}", p, e))?,
                ),
            };
            AdImpression::new(ads, clicked)
                .map(Payload::AdImpression)
                .map_err(|e| e.to_string())
        }
        other => Err(format!("unknown event kind '{}'", other)),
    }
}

fn encode_payload(payload: &Payload) -> (&'static str, String) {
    match payload {
        Payload::QueryIssued(q) => ("Q", q.clone()),
        Payload::AdClicked {
            ad_id,
            dwell_seconds,
        } => ("AC", format!("{},{}", ad_id, dwell_seconds)),
        Payload::LinkClicked(l) => ("LC", l.clone()),
        Payload::AdImpression(imp) => {
            let clicked = imp
                .clicked_position
                .map(|p| p.to_string())
                .unwrap_or_default();
            ("AI", format!("{};{}", imp.ads.join("|"), clicked))
        }
    }
}

/// Parses one event-log record.
pub fn parse_event_line(line: &str) -> std::result::Result<RawEvent, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, got {}", fields.len()));
    }
    let user_id = fields[0].trim();
    if user_id.is_empty() {
        return Err("empty user id".into());
    }
    let timestamp = fields[1]
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad timestamp '{}': {}", fields[1], e))?;
    let payload = parse_payload(fields[2].trim(), fields[3])?;
    Ok(RawEvent {
        user_id: user_id.to_string(),
        timestamp,
        payload,
    })
}

pub fn format_event_line(event: &RawEvent) -> String {
    let (kind, payload) = encode_payload(&event.payload);
    format!("{}\t{}\t{}\t{}", event.user_id, event.timestamp, kind, payload)
}

/// Reads an event log. Malformed lines are reported, never fatal.
pub fn read_events<R: BufRead>(reader: R) -> Result<(Vec<RawEvent>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        report.lines += 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_line(&line) {
            Ok(ev) => events.push(ev),
            Err(msg) => report.malformed.push((i + 1, msg)),
        }
    }
    report.events = events.len();
    Ok((events, report))
}

#[derive(Default)]
struct SessionBuilder {
    actions: Vec<Action>,
    impressions: Vec<AttachedImpression>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentStats {
    pub discarded_singletons: usize,
    pub dropped_impressions: usize,
}

fn segment_user(
    user_id: &str,
    mut events: Vec<RawEvent>,
    out: &mut Vec<Session>,
    stats: &mut SegmentStats,
) {
    events.sort_by_key(|e| e.timestamp);
    let mut current: Option<SessionBuilder> = None;

    let mut flush = |builder: Option<SessionBuilder>, stats: &mut SegmentStats| {
        if let Some(b) = builder {
            if b.actions.len() >= 2 {
                out.push(Session {
                    user_id: user_id.to_string(),
                    actions: b.actions,
                    impressions: b.impressions,
                });
            } else if !b.actions.is_empty() {
                stats.discarded_singletons += 1;
                stats.dropped_impressions += b.impressions.len();
            }
        }
    };

    for ev in events {
        let within_gap = current
            .as_ref()
            .and_then(|b| b.actions.last())
            .map(|last| ev.timestamp - last.timestamp <= SESSION_GAP_SECONDS)
            .unwrap_or(false);

        let action = match ev.payload {
            Payload::AdImpression(impression) => {
                let query_index = if within_gap {
                    current.as_ref().and_then(|b| {
                        b.actions.iter().rposition(|a| a.kind == ActionKind::Query)
                    })
                } else {
                    None
                };
                match query_index {
                    Some(query_index) => {
                        let b = current.as_mut().unwrap();
                        b.impressions.push(AttachedImpression {
                            query_index,
                            preceding_actions: b.actions.len(),
                            timestamp: ev.timestamp,
                            impression,
                        })
                    }
                    None => stats.dropped_impressions += 1,
                }
                continue;
            }
            Payload::QueryIssued(q) => Action {
                kind: ActionKind::Query,
                token: q,
                dwell_seconds: None,
                timestamp: ev.timestamp,
            },
            Payload::AdClicked {
                ad_id,
                dwell_seconds,
            } => Action {
                kind: ActionKind::Ad,
                token: ad_id,
                dwell_seconds: Some(dwell_seconds),
                timestamp: ev.timestamp,
            },
            Payload::LinkClicked(l) => Action {
                kind: ActionKind::Link,
                token: l,
                dwell_seconds: None,
                timestamp: ev.timestamp,
            },
        };

        if !within_gap {
            flush(current.take(), stats);
            current = Some(SessionBuilder::default());
        }
        current.as_mut().unwrap().actions.push(action);
    }
    flush(current, stats);
}

/// Splits events into sessions at gaps longer than 30 minutes and drops
/// sessions with fewer than two actions.
pub fn segment_sessions(events: Vec<RawEvent>) -> Vec<Session> {
    segment_sessions_with_stats(events).0
}

pub fn segment_sessions_with_stats(events: Vec<RawEvent>) -> (Vec<Session>, SegmentStats) {
    let mut by_user: BTreeMap<String, Vec<RawEvent>> = BTreeMap::new();
    for ev in events {
        by_user.entry(ev.user_id.clone()).or_default().push(ev);
    }
    let mut sessions = Vec::new();
    let mut stats = SegmentStats::default();
    for (user, events) in by_user {
        segment_user(&user, events, &mut sessions, &mut stats);
    }
    (sessions, stats)
}

/// Ingests a whole event log.
pub fn ingest<R: BufRead>(reader: R) -> Result<(Vec<Session>, IngestReport)> {
    let (events, mut report) = read_events(reader)?;
    let (sessions, stats) = segment_sessions_with_stats(events);
    report.sessions = sessions.len();
    report.discarded_singletons = stats.discarded_singletons;
    report.dropped_impressions = stats.dropped_impressions;
    Ok((sessions, report))
}

/// Skipped-ad pairs for a session with exactly one ad click of more than
/// ten seconds dwell.
pub fn extract_implicit_negatives(session: &Session) -> Vec<ImplicitNegativePair> {
    let mut clicks = session
        .actions
        .iter()
        .filter(|a| a.kind == ActionKind::Ad);
    let click = match (clicks.next(), clicks.next()) {
        (Some(c), None) => c,
        _ => return Vec::new(),
    };
    if click.dwell_seconds.unwrap_or(0) <= IMPLICIT_NEGATIVE_MIN_DWELL_SECONDS {
        return Vec::new();
    }

    // The impression block that recorded this click; prefer the latest one
    // shown no later than the click itself.
    let holds_click = |imp: &&AttachedImpression| imp.impression.clicked_ad() == Some(&click.token);
    let block = session
        .impressions
        .iter()
        .rev()
        .filter(holds_click)
        .find(|imp| imp.timestamp <= click.timestamp)
        .or_else(|| session.impressions.iter().find(holds_click));
    let Some(block) = block else {
        return Vec::new();
    };

    let clicked = block.impression.clicked_position.expect("block holds click");
    let query = &session.actions[block.query_index].token;
    let upper = (clicked - 1).min(IMPLICIT_NEGATIVE_TOP_POSITIONS);
    block.impression.ads[..upper]
        .iter()
        .map(|ad| ImplicitNegativePair {
            query_token: query.clone(),
            skipped_ad_token: ad.clone(),
        })
        .collect()
}

/// Weight applied to a query/clicked-ad pair, from the dwell time in minutes:
/// `ln(1 + t)` up to ten minutes and 1 beyond.
pub fn dwell_weight(dwell_minutes: f64) -> Result<f64> {
    if dwell_minutes.is_nan() || dwell_minutes < 0.0 {
        return Err(Error::invalid(format!(
            "dwell time must be non-negative, got {}",
            dwell_minutes
        )));
    }
    if dwell_minutes > DWELL_CAP_MINUTES {
        Ok(1.0)
    } else {
        Ok(dwell_minutes.ln_1p())
    }
}

/// Writes sessions, one per line: the user id followed by the session's
/// events as `timestamp <TAB> kind <TAB> payload` triples in time order.
pub fn write_sessions<W: Write>(mut w: W, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        write!(w, "{}", s.user_id)?;
        for ev in s.to_events() {
            let (kind, payload) = encode_payload(&ev.payload);
            write!(w, "\t{}\t{}\t{}", ev.timestamp, kind, payload)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions<R: BufRead>(reader: R) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 || (fields.len() - 1) % 3 != 0 {
            return Err(Error::parse(lineno, "session record must be user + event triples"));
        }
        let user_id = fields[0].to_string();
        let mut builder = SessionBuilder::default();
        for triple in fields[1..].chunks(3) {
            let timestamp = triple[0]
                .parse::<u64>()
                .map_err(|e| Error::parse(lineno, format!("bad timestamp: {}", e)))?;
            let payload = parse_payload(triple[1], triple[2]).map_err(|m| Error::parse(lineno, m))?;
            match payload {
                Payload::AdImpression(impression) => {
                    let query_index = builder
                        .actions
                        .iter()
                        .rposition(|a| a.kind == ActionKind::Query)
                        .ok_or_else(|| Error::parse(lineno, "impression before any query"))?;
                    builder.impressions.push(AttachedImpression {
                        query_index,
                        preceding_actions: builder.actions.len(),
                        timestamp,
                        impression,
                    });
                }
                Payload::QueryIssued(q) => builder.actions.push(Action {
                    kind: ActionKind::Query,
                    token: q,
                    dwell_seconds: None,
                    timestamp,
                }),
                Payload::AdClicked {
                    ad_id,
                    dwell_seconds,
                } => builder.actions.push(Action {
                    kind: ActionKind::Ad,
                    token: ad_id,
                    dwell_seconds: Some(dwell_seconds),
                    timestamp,
                }),
                Payload::LinkClicked(l) => builder.actions.push(Action {
                    kind: ActionKind::Link,
                    token: l,
                    dwell_seconds: None,
                    timestamp,
                }),
            }
        }
        if builder.actions.len() < 2 {
            return Err(Error::parse(lineno, "session has fewer than two actions"));
        }
        sessions.push(Session {
            user_id,
            actions: builder.actions,
            impressions: builder.impressions,
        });
    }
    Ok(sessions)
}
