//! Wire format of the parameter-server protocol.
//!
//! Every frame is `u32 length | u8 type | payload`, little-endian, where
//! `length` counts the type byte and the payload. Payloads carry ids and
//! scalars only; their size never depends on the embedding dimension.
//!
//! | type | name | payload |
//! |------|------|---------|
//! | 1 | REQ  | `u64 batch_id, u32 n_pairs, n_pairs × (u32 center, u32 context, f64 weight, u8 label), u32 negative_count, u64 rng_seed` |
//! | 2 | PART | `u64 batch_id, u32 shard_id, u32 n, n × f64 partial_dot` |
//! | 3 | COEF | `u64 batch_id, u32 n, n × f64 coefficient` |
//! | 4 | CTRL | `u8 op` followed by op-specific fields (see [`Control`]) |
//!
//! Labels are 0 positive, 1 negative, 2 implicit negative. Partial dots and
//! coefficients follow the canonical pair order: request pairs first, then
//! `negative_count` negatives for each positive pair in request order, drawn
//! with SplitMix64 seeded by `rng_seed`.

use std::io::{self, Read};

use crate::sgns::{Label, WeightedPair};

pub const MSG_REQ: u8 = 1;
pub const MSG_PART: u8 = 2;
pub const MSG_COEF: u8 = 3;
pub const MSG_CTRL: u8 = 4;

/// Bytes of the length prefix.
pub const FRAME_HEADER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchRequest {
    pub batch_id: u64,
    pub positives: Vec<WeightedPair>,
    pub negative_count: u32,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialDotsResponse {
    pub batch_id: u64,
    pub shard_id: u32,
    pub partials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBroadcast {
    pub batch_id: u64,
    pub coefficients: Vec<f64>,
}

/// Control messages. Op codes in parentheses.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// (1) Add to the shard's processed-pair counter; answered by `CounterValue`.
    CounterAdd { amount: u64 },
    /// (2) Counter value before the addition.
    CounterValue { previous: u64 },
    /// (3) Coefficients of the batch were applied.
    Ack { batch_id: u64 },
    /// (4) The shard rejected a batch.
    Error { batch_id: u64, message: String },
    /// (5) Persist the shard's slice as of the end of `epoch`.
    Checkpoint { epoch: u32 },
    /// (6) Checkpoint written (or not).
    CheckpointDone { epoch: u32, ok: bool },
    /// (7) Stop the shard's event loop.
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(MinibatchRequest),
    Partial(PartialDotsResponse),
    Coefficients(CoefficientBroadcast),
    Control(Control),
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unknown control op {0}")]
    UnknownOp(u8),
    #[error("unknown pair label {0}")]
    UnknownLabel(u8),
    #[error("frame length {declared} does not match {actual} bytes")]
    Length { declared: usize, actual: usize },
    #[error("invalid utf-8 in error message")]
    Utf8,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, DecodeError> {
        let n = self.u32()? as usize;
        if self.buf.len() - self.pos < n * 8 {
            return Err(DecodeError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Message {
    pub fn type_tag(&self) -> u8 {
        match self {
            Message::Request(_) => MSG_REQ,
            Message::Partial(_) => MSG_PART,
            Message::Coefficients(_) => MSG_COEF,
            Message::Control(_) => MSG_CTRL,
        }
    }

    /// Complete frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64));
        w.u32(0);
        w.u8(self.type_tag());
        match self {
            Message::Request(r) => {
                w.u64(r.batch_id);
                w.u32(r.positives.len() as u32);
                for p in &r.positives {
                    w.u32(p.center as u32);
                    w.u32(p.context as u32);
                    w.f64(p.weight);
                    w.u8(p.label.to_wire());
                }
                w.u32(r.negative_count);
                w.u64(r.rng_seed);
            }
            Message::Partial(p) => {
                w.u64(p.batch_id);
                w.u32(p.shard_id);
                w.u32(p.partials.len() as u32);
                p.partials.iter().for_each(|&x| w.f64(x));
            }
            Message::Coefficients(c) => {
                w.u64(c.batch_id);
                w.u32(c.coefficients.len() as u32);
                c.coefficients.iter().for_each(|&x| w.f64(x));
            }
            Message::Control(c) => match c {
                Control::CounterAdd { amount } => {
                    w.u8(1);
                    w.u64(*amount);
                }
                Control::CounterValue { previous } => {
                    w.u8(2);
                    w.u64(*previous);
                }
                Control::Ack { batch_id } => {
                    w.u8(3);
                    w.u64(*batch_id);
                }
                Control::Error { batch_id, message } => {
                    w.u8(4);
                    w.u64(*batch_id);
                    w.u32(message.len() as u32);
                    w.0.extend_from_slice(message.as_bytes());
                }
                Control::Checkpoint { epoch } => {
                    w.u8(5);
                    w.u32(*epoch);
                }
                Control::CheckpointDone { epoch, ok } => {
                    w.u8(6);
                    w.u32(*epoch);
                    w.u8(u8::from(*ok));
                }
                Control::Shutdown => w.u8(7),
            },
        }
        let len = (w.0.len() - FRAME_HEADER) as u32;
        w.0[..FRAME_HEADER].copy_from_slice(&len.to_le_bytes());
        w.0
    }

    /// Decodes a complete frame (with length prefix).
    pub fn decode(frame: &[u8]) -> Result<Message, DecodeError> {
        if frame.len() < FRAME_HEADER + 1 {
            return Err(DecodeError::Truncated);
        }
        let declared = u32::from_le_bytes(frame[..FRAME_HEADER].try_into().unwrap()) as usize;
        if declared != frame.len() - FRAME_HEADER {
            return Err(DecodeError::Length {
                declared,
                actual: frame.len() - FRAME_HEADER,
            });
        }
        let mut c = Cursor {
            buf: frame,
            pos: FRAME_HEADER,
        };
        let msg = match c.u8()? {
            MSG_REQ => {
                let batch_id = c.u64()?;
                let n = c.u32()? as usize;
                if frame.len() - c.pos < n * 17 {
                    return Err(DecodeError::Truncated);
                }
                let mut positives = Vec::with_capacity(n);
                for _ in 0..n {
                    let center = c.u32()? as usize;
                    let context = c.u32()? as usize;
                    let weight = c.f64()?;
                    let tag = c.u8()?;
                    let label = Label::from_wire(tag).ok_or(DecodeError::UnknownLabel(tag))?;
                    positives.push(WeightedPair {
                        center,
                        context,
                        label,
                        weight,
                    });
                }
                Message::Request(MinibatchRequest {
                    batch_id,
                    positives,
                    negative_count: c.u32()?,
                    rng_seed: c.u64()?,
                })
            }
            MSG_PART => Message::Partial(PartialDotsResponse {
                batch_id: c.u64()?,
                shard_id: c.u32()?,
                partials: c.f64s()?,
            }),
            MSG_COEF => Message::Coefficients(CoefficientBroadcast {
                batch_id: c.u64()?,
                coefficients: c.f64s()?,
            }),
            MSG_CTRL => Message::Control(match c.u8()? {
                1 => Control::CounterAdd { amount: c.u64()? },
                2 => Control::CounterValue { previous: c.u64()? },
                3 => Control::Ack { batch_id: c.u64()? },
                4 => {
                    let batch_id = c.u64()?;
                    let n = c.u32()? as usize;
                    let message = std::str::from_utf8(c.take(n)?)
                        .map_err(|_| DecodeError::Utf8)?
                        .to_string();
                    Control::Error { batch_id, message }
                }
                5 => Control::Checkpoint { epoch: c.u32()? },
                6 => Control::CheckpointDone {
                    epoch: c.u32()?,
                    ok: c.u8()? != 0,
                },
                7 => Control::Shutdown,
                op => return Err(DecodeError::UnknownOp(op)),
            }),
            t => return Err(DecodeError::UnknownType(t)),
        };
        if c.pos != frame.len() {
            return Err(DecodeError::Length {
                declared,
                actual: c.pos - FRAME_HEADER,
            });
        }
        Ok(msg)
    }
}

/// Reads one frame; `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; FRAME_HEADER];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(header) as usize;
    let mut frame = vec![0u8; FRAME_HEADER + len];
    frame[..FRAME_HEADER].copy_from_slice(&header);
    reader.read_exact(&mut frame[FRAME_HEADER..])?;
    Ok(Some(frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label() -> impl Strategy<Value = Label> {
        prop_oneof![
            Just(Label::Positive),
            Just(Label::Negative),
            Just(Label::ImplicitNegative)
        ]
    }

    fn pair() -> impl Strategy<Value = WeightedPair> {
        (0u32..1000, 0u32..1000, 0.0f64..3.0, label()).prop_map(|(a, b, w, l)| WeightedPair {
            center: a as usize,
            context: b as usize,
            label: l,
            weight: w,
        })
    }

    fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u64>(), prop::collection::vec(pair(), 0..20), any::<u32>(), any::<u64>())
                .prop_map(|(batch_id, positives, negative_count, rng_seed)| {
                    Message::Request(MinibatchRequest {
                        batch_id,
                        positives,
                        negative_count,
                        rng_seed,
                    })
                }),
            (any::<u64>(), any::<u32>(), prop::collection::vec(-1e3f64..1e3, 0..40)).prop_map(
                |(batch_id, shard_id, partials)| Message::Partial(PartialDotsResponse {
                    batch_id,
                    shard_id,
                    partials
                })
            ),
            (any::<u64>(), prop::collection::vec(-1f64..1.0, 0..40)).prop_map(
                |(batch_id, coefficients)| Message::Coefficients(CoefficientBroadcast {
                    batch_id,
                    coefficients
                })
            ),
            any::<u64>().prop_map(|amount| Message::Control(Control::CounterAdd { amount })),
            (any::<u64>(), "[a-z ]{0,30}").prop_map(|(batch_id, message)| Message::Control(
                Control::Error { batch_id, message }
            )),
            (any::<u32>(), any::<bool>())
                .prop_map(|(epoch, ok)| Message::Control(Control::CheckpointDone { epoch, ok })),
            Just(Message::Control(Control::Shutdown)),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(msg in message()) {
            let frame = msg.encode();
            prop_assert_eq!(frame[4], msg.type_tag());
            prop_assert_eq!(Message::decode(&frame).unwrap(), msg);
            let mut reader = frame.as_slice();
            prop_assert_eq!(read_frame(&mut reader).unwrap().unwrap(), frame);
        }

        #[test]
        fn truncated_frames_are_rejected(msg in message(), cut in 1usize..8) {
            let frame = msg.encode();
            let cut = cut.min(frame.len() - 1);
            prop_assert!(Message::decode(&frame[..frame.len() - cut]).is_err());
        }
    }

    #[test]
    fn request_layout_is_fixed() {
        let msg = Message::Request(MinibatchRequest {
            batch_id: 7,
            positives: vec![WeightedPair::positive(1, 2, 0.5)],
            negative_count: 5,
            rng_seed: 9,
        });
        let frame = msg.encode();
        // 4 length + 1 type + 8 batch + 4 count + 17 pair + 4 n + 8 seed
        assert_eq!(frame.len(), 46);
        assert_eq!(&frame[..4], &42u32.to_le_bytes());
        assert_eq!(frame[4], MSG_REQ);
        assert_eq!(&frame[5..13], &7u64.to_le_bytes());
        assert_eq!(&frame[17..21], &1u32.to_le_bytes());
        assert_eq!(&frame[25..33], &0.5f64.to_le_bytes());
        assert_eq!(frame[33], 0);
    }

    #[test]
    fn unknown_type_rejected() {
        let frame = [1u8, 0, 0, 0, 9];
        assert!(matches!(
            Message::decode(&frame),
            Err(DecodeError::UnknownType(9))
        ));
    }
}
