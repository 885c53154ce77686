//! Domain types and the dispersion arithmetic shared by the estimator, the
//! simulator and the wire layer.
//!
//! Rates are `f64` bits per second everywhere. Timestamps are `u64`
//! nanoseconds on a monotonic clock; sender and receiver clocks are never
//! compared with each other, only spacings within one clock are used.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BITS_PER_BYTE: f64 = 8.0;

/// Inter-frame gap the testbed interfaces add between back-to-back frames,
/// expressed as extra bytes on the wire.
pub const ETHERNET_GAP_BYTES: u32 = 25;

/// IPv4 (20 B) plus UDP (8 B) header.
pub const IPV4_UDP_HEADER_BYTES: u32 = 28;

/// IPv6 (40 B) plus UDP (8 B) header.
pub const IPV6_UDP_HEADER_BYTES: u32 = 48;

/// Fixed part of the probe payload (see [`crate::wire::codec`]).
pub const PROBE_HEADER_BYTES: u32 = 24;

/// Smallest IP datagram that still carries a full probe header.
pub const MIN_PACKET_SIZE: u32 = IPV4_UDP_HEADER_BYTES + PROBE_HEADER_BYTES;

const NANOS_PER_SEC: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("incomplete train: {received} of {expected} packets received")]
    IncompleteTrain { received: usize, expected: usize },
    #[error("train has zero dispersion")]
    ZeroDispersion,
    #[error("send gap must be positive")]
    NonPositiveGap,
    #[error("rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("measured rate of level {level} is not positive")]
    ZeroMeasuredRate { level: u16 },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid probe configuration: {0}")]
pub struct ConfigError(pub String);

/// Tunable parameters of one measurement session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// IP datagram size in bytes (IP header + UDP header + payload).
    pub packet_size: u32,
    /// Packets per rate-probe train.
    pub train_length: usize,
    pub trains_per_level: usize,
    pub num_levels: usize,
    /// Sender link speed, used for the proportional-share trains.
    pub max_send_rate: f64,
    /// Upper end of the rate schedule as a multiple of the proportional share.
    pub z: f64,
    pub ps_trains: usize,
    pub ps_train_length: usize,
    pub corr_threshold: f64,
    pub level_cv_threshold: f64,
    pub max_iterations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            packet_size: 1500,
            train_length: 16,
            trains_per_level: 5,
            num_levels: 15,
            max_send_rate: 100e6,
            z: 1.5,
            ps_trains: 15,
            ps_train_length: 48,
            corr_threshold: 0.90,
            level_cv_threshold: 0.10,
            max_iterations: 3,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.packet_size < MIN_PACKET_SIZE || self.packet_size > 65_535 {
            return fail(format!(
                "packet_size {} outside [{MIN_PACKET_SIZE}, 65535]",
                self.packet_size
            ));
        }
        if self.train_length < 2 {
            return fail(format!("train_length {} < 2", self.train_length));
        }
        if self.ps_train_length < 2 {
            return fail(format!("ps_train_length {} < 2", self.ps_train_length));
        }
        if self.trains_per_level < 1 || self.ps_trains < 1 {
            return fail("trains_per_level and ps_trains must be at least 1".into());
        }
        if self.num_levels < 2 {
            return fail(format!("num_levels {} < 2", self.num_levels));
        }
        if !(self.z > 1.0 && self.z.is_finite()) {
            return fail(format!("z must be > 1, got {}", self.z));
        }
        if !(self.max_send_rate > 0.0 && self.max_send_rate.is_finite()) {
            return fail(format!(
                "max_send_rate must be > 0, got {}",
                self.max_send_rate
            ));
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return fail(format!(
                "corr_threshold {} outside (0, 1]",
                self.corr_threshold
            ));
        }
        if !(self.level_cv_threshold >= 0.0) {
            return fail(format!(
                "level_cv_threshold {} < 0",
                self.level_cv_threshold
            ));
        }
        if self.max_iterations < 1 {
            return fail("max_iterations must be at least 1".into());
        }
        // Wire fields for level, train and sequence numbers are 16 bits wide.
        let longest = self.train_length << (self.max_iterations - 1).min(16);
        if longest > u16::MAX as usize
            || self.ps_train_length > u16::MAX as usize
            || self.num_levels > u16::MAX as usize
            || self.trains_per_level > u16::MAX as usize
            || self.ps_trains > u16::MAX as usize
        {
            return fail("train or level counts exceed 65535".into());
        }
        Ok(())
    }
}

/// Which part of the session a train belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Trains sent at the maximum rate to estimate the proportional share.
    ProportionalShare,
    /// Trains sent at the scheduled rate levels.
    Rate,
}

impl Phase {
    pub fn wire_code(self) -> u8 {
        match self {
            Phase::ProportionalShare => 0,
            Phase::Rate => 1,
        }
    }

    pub fn from_wire_code(code: u8) -> Option<Phase> {
        match code {
            0 => Some(Phase::ProportionalShare),
            1 => Some(Phase::Rate),
            _ => None,
        }
    }
}

/// Send and arrival timestamps of one probe train.
///
/// `seqs`, `send_times` and `arrival_times` are parallel and cover only the
/// packets that reached the receiver, in sequence order. `train_length` is
/// the number of packets the sender emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainRecord {
    pub phase: Phase,
    pub level_index: u16,
    pub train_index: u16,
    pub packet_size: u32,
    pub train_length: usize,
    pub seqs: Vec<u16>,
    pub send_times: Vec<u64>,
    pub arrival_times: Vec<u64>,
}

impl TrainRecord {
    pub fn received_count(&self) -> usize {
        self.arrival_times.len()
    }

    pub fn is_complete(&self) -> bool {
        self.received_count() == self.train_length
    }

    fn packet_bits(&self) -> f64 {
        self.packet_size as f64 * BITS_PER_BYTE
    }

    fn require_complete(&self) -> Result<(), RateError> {
        if !self.is_complete() || self.train_length < 2 {
            return Err(RateError::IncompleteTrain {
                received: self.received_count(),
                expected: self.train_length,
            });
        }
        Ok(())
    }
}

fn rate_over_span(record: &TrainRecord, first: u64, last: u64) -> Result<f64, RateError> {
    if last <= first {
        return Err(RateError::ZeroDispersion);
    }
    let gaps = (record.train_length - 1) as f64;
    Ok(gaps * record.packet_bits() * NANOS_PER_SEC / (last - first) as f64)
}

/// Rate implied by the train's total arrival dispersion,
/// `(k - 1) * size_bits / (t_last - t_first)`.
pub fn measured_rate(train: &TrainRecord) -> Result<f64, RateError> {
    train.require_complete()?;
    let first = train.arrival_times[0];
    let last = train.arrival_times[train.arrival_times.len() - 1];
    rate_over_span(train, first, last)
}

/// Rate the sender actually realized, from its own send timestamps.
pub fn sent_rate(train: &TrainRecord) -> Result<f64, RateError> {
    train.require_complete()?;
    let first = train.send_times[0];
    let last = train.send_times[train.send_times.len() - 1];
    rate_over_span(train, first, last)
}

pub fn offered_rate(packet_size: u32, send_gap: Duration) -> Result<f64, RateError> {
    if send_gap.is_zero() {
        return Err(RateError::NonPositiveGap);
    }
    Ok(packet_size as f64 * BITS_PER_BYTE / send_gap.as_secs_f64())
}

/// Send gap that realizes `rate`, rounded to the nearest nanosecond.
pub fn gap_for_rate(packet_size: u32, rate: f64) -> Result<Duration, RateError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(RateError::NonPositiveRate(rate));
    }
    let nanos = (packet_size as f64 * BITS_PER_BYTE * NANOS_PER_SEC / rate).round();
    if nanos < 1.0 {
        return Err(RateError::NonPositiveGap);
    }
    Ok(Duration::from_nanos(nanos as u64))
}

/// Size a packet occupies at the bottleneck, including the inter-frame gap
/// when that is being modelled.
pub fn effective_packet_size(size: u32, ethernet_gap_enabled: bool) -> u32 {
    if ethernet_gap_enabled {
        size + ETHERNET_GAP_BYTES
    } else {
        size
    }
}

/// One rate level: offered rate and aggregated measured rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub level_index: u16,
    pub offered_rate: f64,
    pub measured_rate: f64,
    pub per_train_rates: Vec<f64>,
    /// Coefficient of variation of `per_train_rates`.
    pub cv: f64,
}

/// A point of the offered rate vs. `offered / measured` curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToppPoint {
    pub x: f64,
    pub y: f64,
}

pub fn topp_points(samples: &[LevelSample]) -> Result<Vec<ToppPoint>, RateError> {
    samples
        .iter()
        .map(|s| {
            if !(s.measured_rate > 0.0) {
                return Err(RateError::ZeroMeasuredRate {
                    level: s.level_index,
                });
            }
            Ok(ToppPoint {
                x: s.offered_rate,
                y: s.offered_rate / s.measured_rate,
            })
        })
        .collect()
}
