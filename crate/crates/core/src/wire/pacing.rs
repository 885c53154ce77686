//! Paced emission of probe trains.
//!
//! Gaps at 100 Mbit/s are around 120 µs, below what `thread::sleep` can hit
//! reliably, so waiting is a coarse sleep followed by a spin over the last
//! [`SPIN_WINDOW`].

use std::io;
use std::time::{Duration, Instant};

use super::codec::{patch_send_timestamp, patch_seq};
use crate::model::gap_for_rate;
use crate::transport::TransportError;

pub const SPIN_WINDOW: Duration = Duration::from_micros(200);

/// Largest accepted relative deviation of the achieved mean gap.
pub const PACING_TOLERANCE: f64 = 0.05;

pub const PACING_ATTEMPTS: usize = 3;

/// Monotonic nanosecond clock relative to a process-local epoch.
#[derive(Clone, Copy, Debug)]
pub struct MonotonicClock {
    epoch: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock {
            epoch: Instant::now(),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    pub fn instant_at(&self, ns: u64) -> Instant {
        self.epoch + Duration::from_nanos(ns)
    }
}

pub fn wait_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN_WINDOW {
            std::thread::sleep(left - SPIN_WINDOW);
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Whether the achieved mean gap is within [`PACING_TOLERANCE`] of the target.
pub fn pacing_acceptable(send_times: &[u64], target_gap_ns: u64) -> bool {
    if send_times.len() < 2 {
        return true;
    }
    let span = (send_times[send_times.len() - 1] - send_times[0]) as f64;
    let mean_gap = span / (send_times.len() - 1) as f64;
    ((mean_gap - target_gap_ns as f64) / target_gap_ns as f64).abs() <= PACING_TOLERANCE
}

/// Sends `k` copies of the encoded probe in `packet`, `gap_ns` apart, patching
/// in the sequence number and send timestamp of each. Returns the send
/// timestamps.
pub fn emit_train<F>(
    send: &mut F,
    clock: &MonotonicClock,
    packet: &mut [u8],
    k: usize,
    gap_ns: u64,
) -> io::Result<Vec<u64>>
where
    F: FnMut(&[u8]) -> io::Result<()>,
{
    let mut times = Vec::with_capacity(k);
    let start = clock.now_ns();
    for i in 0..k {
        wait_until(clock.instant_at(start + i as u64 * gap_ns));
        let now = clock.now_ns();
        patch_seq(packet, i as u16);
        patch_send_timestamp(packet, now);
        send(packet)?;
        times.push(now);
    }
    Ok(times)
}

/// Emits a train at `rate`, retrying up to [`PACING_ATTEMPTS`] times when the
/// achieved mean gap is off by more than [`PACING_TOLERANCE`]. `before_attempt`
/// runs ahead of every attempt (the sender announces the train there).
pub fn pace_train<F, A>(
    mut send: F,
    clock: &MonotonicClock,
    packet: &mut [u8],
    rate: f64,
    k: usize,
    packet_size: u32,
    mut before_attempt: A,
) -> Result<Vec<u64>, TransportError>
where
    F: FnMut(&[u8]) -> io::Result<()>,
    A: FnMut(usize) -> Result<(), TransportError>,
{
    let gap_ns = gap_for_rate(packet_size, rate)
        .map_err(|e| TransportError::Failure(e.to_string()))?
        .as_nanos() as u64;
    let mut achieved_ns = 0;
    for attempt in 0..PACING_ATTEMPTS {
        before_attempt(attempt)?;
        let times = emit_train(&mut send, clock, packet, k, gap_ns)?;
        if pacing_acceptable(&times, gap_ns) {
            return Ok(times);
        }
        achieved_ns = (times[k - 1] - times[0]) / (k as u64 - 1);
        log::debug!(
            "pacing attempt {attempt} missed: mean gap {achieved_ns} ns, target {gap_ns} ns"
        );
    }
    Err(TransportError::PacingUnattainable {
        rate,
        target_ns: gap_ns,
        achieved_ns,
    })
}
