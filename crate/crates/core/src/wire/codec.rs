//! Probe packet layout (all integers big-endian):
//!
//! ```text
//!  0..4   magic "DTPP"
//!  4      version
//!  5..9   session id
//!  9      phase (0 = proportional share, 1 = rate probe)
//! 10..12  level index
//! 12..14  train index
//! 14..16  sequence number within the train
//! 16..24  sender timestamp, ns
//! 24..    zero padding up to the UDP payload length
//! ```

use thiserror::Error;

use crate::model::{Phase, PROBE_HEADER_BYTES};

pub const MAGIC: [u8; 4] = *b"DTPP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = PROBE_HEADER_BYTES as usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported probe version {0}")]
    BadVersion(u8),
    #[error("unknown probe phase {0}")]
    BadPhase(u8),
    #[error("truncated probe: {0} bytes")]
    TruncatedPacket(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbePacket {
    pub session_id: u32,
    pub phase: Phase,
    pub level_index: u16,
    pub train_index: u16,
    pub seq_in_train: u16,
    pub send_timestamp: u64,
    /// Total UDP payload length, header included.
    pub payload_len: usize,
}

impl ProbePacket {
    /// Writes the packet into `buf`, which must be `payload_len` bytes long.
    /// Bytes past the header are zeroed.
    pub fn encode_into(&self, buf: &mut [u8]) {
        assert!(
            self.payload_len >= HEADER_LEN,
            "payload shorter than probe header"
        );
        assert_eq!(buf.len(), self.payload_len);
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4] = VERSION;
        buf[5..9].copy_from_slice(&self.session_id.to_be_bytes());
        buf[9] = self.phase.wire_code();
        buf[10..12].copy_from_slice(&self.level_index.to_be_bytes());
        buf[12..14].copy_from_slice(&self.train_index.to_be_bytes());
        buf[14..16].copy_from_slice(&self.seq_in_train.to_be_bytes());
        buf[16..24].copy_from_slice(&self.send_timestamp.to_be_bytes());
        buf[HEADER_LEN..].fill(0);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; self.payload_len];
        self.encode_into(&mut buf);
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<ProbePacket, CodecError> {
        if buf.len() < HEADER_LEN {
            return Err(CodecError::TruncatedPacket(buf.len()));
        }
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        if buf[4] != VERSION {
            return Err(CodecError::BadVersion(buf[4]));
        }
        let phase = Phase::from_wire_code(buf[9]).ok_or(CodecError::BadPhase(buf[9]))?;
        let be16 = |at: usize| u16::from_be_bytes([buf[at], buf[at + 1]]);
        Ok(ProbePacket {
            session_id: u32::from_be_bytes(buf[5..9].try_into().unwrap()),
            phase,
            level_index: be16(10),
            train_index: be16(12),
            seq_in_train: be16(14),
            send_timestamp: u64::from_be_bytes(buf[16..24].try_into().unwrap()),
            payload_len: buf.len(),
        })
    }
}

/// Stamps a new send time into an already encoded packet.
pub fn patch_send_timestamp(buf: &mut [u8], send_timestamp: u64) {
    buf[16..24].copy_from_slice(&send_timestamp.to_be_bytes());
}

/// Stamps a new sequence number into an already encoded packet.
pub fn patch_seq(buf: &mut [u8], seq: u16) {
    buf[14..16].copy_from_slice(&seq.to_be_bytes());
}
