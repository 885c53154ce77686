//! Control channel messages. Each frame is a 4-byte big-endian length
//! followed by that many bytes: one type byte and the message body.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::model::Phase;

pub const CONTROL_VERSION: u8 = 1;

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_LEN: usize = 1 << 20;

const HELLO: u8 = 1;
const HELLO_ACK: u8 = 2;
const TRAIN: u8 = 3;
const REPORT: u8 = 4;
const REREQUEST: u8 = 5;
const BYE: u8 = 6;
const BYE_ACK: u8 = 7;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control channel closed")]
    Closed,
    #[error("malformed control message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifies a train within a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainKey {
    pub phase: Phase,
    pub level_index: u16,
    pub train_index: u16,
}

/// Arrival timestamps of one train as seen by the receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainReport {
    pub session_id: u32,
    pub key: TrainKey,
    pub sent_count: u16,
    /// `(seq_in_train, arrival_ns)` sorted by sequence number.
    pub arrivals: Vec<(u16, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlMessage {
    Hello {
        version: u8,
        session_id: u32,
        /// IP datagram size of the probes.
        packet_size: u32,
        /// UDP payload length the receiver should expect.
        payload_len: u32,
    },
    HelloAck {
        version: u8,
        session_id: u32,
    },
    /// Announces the next train so the receiver knows its length.
    Train {
        key: TrainKey,
        count: u16,
    },
    Report(TrainReport),
    /// Asks for a train's report again.
    Rerequest {
        key: TrainKey,
    },
    Bye {
        packets_sent: u64,
        bytes_sent: u64,
    },
    ByeAck {
        packets_received: u64,
        malformed: u64,
    },
}

fn put_key(out: &mut Vec<u8>, key: &TrainKey) {
    out.push(key.phase.wire_code());
    out.extend_from_slice(&key.level_index.to_be_bytes());
    out.extend_from_slice(&key.train_index.to_be_bytes());
}

impl ControlMessage {
    /// Encodes the message as a complete frame, length prefix included.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(32);
        match self {
            ControlMessage::Hello {
                version,
                session_id,
                packet_size,
                payload_len,
            } => {
                body.push(HELLO);
                body.push(*version);
                body.extend_from_slice(&session_id.to_be_bytes());
                body.extend_from_slice(&packet_size.to_be_bytes());
                body.extend_from_slice(&payload_len.to_be_bytes());
            }
            ControlMessage::HelloAck {
                version,
                session_id,
            } => {
                body.push(HELLO_ACK);
                body.push(*version);
                body.extend_from_slice(&session_id.to_be_bytes());
            }
            ControlMessage::Train { key, count } => {
                body.push(TRAIN);
                put_key(&mut body, key);
                body.extend_from_slice(&count.to_be_bytes());
            }
            ControlMessage::Report(r) => {
                body.push(REPORT);
                body.extend_from_slice(&r.session_id.to_be_bytes());
                put_key(&mut body, &r.key);
                body.extend_from_slice(&r.sent_count.to_be_bytes());
                body.extend_from_slice(&(r.arrivals.len() as u32).to_be_bytes());
                for (seq, at) in &r.arrivals {
                    body.extend_from_slice(&seq.to_be_bytes());
                    body.extend_from_slice(&at.to_be_bytes());
                }
            }
            ControlMessage::Rerequest { key } => {
                body.push(REREQUEST);
                put_key(&mut body, key);
            }
            ControlMessage::Bye {
                packets_sent,
                bytes_sent,
            } => {
                body.push(BYE);
                body.extend_from_slice(&packets_sent.to_be_bytes());
                body.extend_from_slice(&bytes_sent.to_be_bytes());
            }
            ControlMessage::ByeAck {
                packets_received,
                malformed,
            } => {
                body.push(BYE_ACK);
                body.extend_from_slice(&packets_received.to_be_bytes());
                body.extend_from_slice(&malformed.to_be_bytes());
            }
        }
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Decodes a frame body (type byte onwards).
    pub fn decode_body(body: &[u8]) -> Result<ControlMessage, ControlError> {
        let mut r = Cursor { buf: body, at: 0 };
        let kind = r.u8()?;
        let msg = match kind {
            HELLO => ControlMessage::Hello {
                version: r.u8()?,
                session_id: r.u32()?,
                packet_size: r.u32()?,
                payload_len: r.u32()?,
            },
            HELLO_ACK => ControlMessage::HelloAck {
                version: r.u8()?,
                session_id: r.u32()?,
            },
            TRAIN => ControlMessage::Train {
                key: r.key()?,
                count: r.u16()?,
            },
            REPORT => {
                let session_id = r.u32()?;
                let key = r.key()?;
                let sent_count = r.u16()?;
                let n = r.u32()? as usize;
                if n > (body.len() - r.at) / 10 {
                    return Err(ControlError::Malformed(format!(
                        "report claims {n} arrivals"
                    )));
                }
                let mut arrivals = Vec::with_capacity(n);
                for _ in 0..n {
                    arrivals.push((r.u16()?, r.u64()?));
                }
                ControlMessage::Report(TrainReport {
                    session_id,
                    key,
                    sent_count,
                    arrivals,
                })
            }
            REREQUEST => ControlMessage::Rerequest { key: r.key()? },
            BYE => ControlMessage::Bye {
                packets_sent: r.u64()?,
                bytes_sent: r.u64()?,
            },
            BYE_ACK => ControlMessage::ByeAck {
                packets_received: r.u64()?,
                malformed: r.u64()?,
            },
            other => {
                return Err(ControlError::Malformed(format!(
                    "unknown message type {other}"
                )))
            }
        };
        if r.at != body.len() {
            return Err(ControlError::Malformed(format!(
                "{} trailing bytes",
                body.len() - r.at
            )));
        }
        Ok(msg)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ControlError> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// Reads one frame. A clean end of stream before the length prefix
    /// yields [`ControlError::Closed`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<ControlMessage, ControlError> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(ControlError::Closed),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len) as usize;
        if len == 0 || len > MAX_FRAME_LEN {
            return Err(ControlError::Malformed(format!("frame length {len}")));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                ControlError::Closed
            } else {
                e.into()
            }
        })?;
        ControlMessage::decode_body(&body)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ControlError> {
        let end = self.at + N;
        if end > self.buf.len() {
            return Err(ControlError::Malformed("truncated body".into()));
        }
        let out = self.buf[self.at..end].try_into().unwrap();
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ControlError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, ControlError> {
        Ok(u16::from_be_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, ControlError> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, ControlError> {
        Ok(u64::from_be_bytes(self.take()?))
    }

    fn key(&mut self) -> Result<TrainKey, ControlError> {
        let code = self.u8()?;
        let phase = Phase::from_wire_code(code)
            .ok_or_else(|| ControlError::Malformed(format!("phase {code}")))?;
        Ok(TrainKey {
            phase,
            level_index: self.u16()?,
            train_index: self.u16()?,
        })
    }
}
