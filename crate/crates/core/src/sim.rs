//! Single-bottleneck path models.
//!
//! [`fluid_train`] applies the proportional-share law exactly: a train that
//! together with the cross traffic exceeds the link capacity leaves with its
//! spacing stretched so that it gets `o * l / (o + x)` of the link.
//!
//! [`queue_simulate`] runs the same path as a FIFO single server fed by the
//! probe train and by Poisson cross traffic drawn from a packet-size mix.
//! Every run is seeded, so identical inputs give bit-identical outputs.

use std::time::Duration;

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{effective_packet_size, gap_for_rate, RateError, TrainRecord, BITS_PER_BYTE};
use crate::transport::{TrainRequest, Transport, TransportError};

const NANOS_PER_SEC: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid bottleneck model: {0}")]
    InvalidModel(String),
    #[error("simulation exceeded its horizon of {horizon_ns} ns")]
    HorizonExceeded { horizon_ns: u64 },
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// One FIFO bottleneck link and the cross traffic sharing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleneckModel {
    /// Link capacity in bits/s.
    pub capacity: f64,
    /// Mean cross-traffic rate in bits/s.
    pub cross_rate: f64,
    /// Cross packet sizes in bytes.
    pub cross_packet_sizes: Vec<u32>,
    pub cross_size_weights: Vec<f64>,
    /// Add the 25-byte inter-frame gap to every packet at the server.
    pub ethernet_gap: bool,
    pub seed: u64,
    /// Queue limit in bytes; `None` is an unbounded queue.
    pub buffer_bytes: Option<u64>,
    /// Cross traffic simulated ahead of each train, in seconds.
    pub warmup_secs: f64,
    /// Longest span a single run may cover, in seconds.
    pub horizon_secs: f64,
}

impl Default for BottleneckModel {
    fn default() -> Self {
        BottleneckModel {
            capacity: 10e6,
            cross_rate: 0.0,
            cross_packet_sizes: vec![60, 148, 500, 1500],
            cross_size_weights: vec![0.25; 4],
            ethernet_gap: false,
            seed: 0,
            buffer_bytes: None,
            warmup_secs: 1.0,
            horizon_secs: 120.0,
        }
    }
}

impl BottleneckModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidModel(m));
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return fail(format!("capacity must be > 0, got {}", self.capacity));
        }
        if !(self.cross_rate >= 0.0 && self.cross_rate < self.capacity) {
            return fail(format!(
                "cross rate {} outside [0, capacity {})",
                self.cross_rate, self.capacity
            ));
        }
        if self.cross_packet_sizes.is_empty()
            || self.cross_packet_sizes.len() != self.cross_size_weights.len()
        {
            return fail(
                "cross packet sizes and weights must be non-empty and of equal length".into(),
            );
        }
        if self.cross_packet_sizes.contains(&0) {
            return fail("cross packet sizes must be positive".into());
        }
        if self
            .cross_size_weights
            .iter()
            .any(|&w| !(w >= 0.0 && w.is_finite()))
        {
            return fail("cross size weights must be nonnegative".into());
        }
        let total: f64 = self.cross_size_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("cross size weights sum to {total}, not 1"));
        }
        if !(self.warmup_secs >= 0.0 && self.warmup_secs.is_finite()) {
            return fail("warmup_secs must be >= 0".into());
        }
        if !(self.horizon_secs > 0.0 && self.horizon_secs.is_finite()) {
            return fail("horizon_secs must be > 0".into());
        }
        Ok(())
    }

    /// Weighted mean cross packet size in bytes.
    pub fn mean_cross_size(&self, with_gap: bool) -> f64 {
        self.cross_packet_sizes
            .iter()
            .zip(&self.cross_size_weights)
            .map(|(&s, &w)| effective_packet_size(s, with_gap) as f64 * w)
            .sum()
    }

    /// Cross-traffic load at the server, including the inter-frame gap when
    /// it is modelled.
    fn effective_cross_rate(&self) -> f64 {
        if self.ethernet_gap && self.cross_rate > 0.0 {
            self.cross_rate * self.mean_cross_size(true) / self.mean_cross_size(false)
        } else {
            self.cross_rate
        }
    }

    fn service_ns(&self, size: u32) -> u64 {
        let bits = effective_packet_size(size, self.ethernet_gap) as f64 * BITS_PER_BYTE;
        ((bits * NANOS_PER_SEC / self.capacity).round() as u64).max(1)
    }

    fn warmup_ns(&self) -> u64 {
        (self.warmup_secs * NANOS_PER_SEC).round() as u64
    }

    fn horizon_ns(&self) -> u64 {
        (self.horizon_secs * NANOS_PER_SEC).round() as u64
    }
}

/// Available bandwidth of the modelled path, `l - x`.
pub fn theoretical_available_bw(model: &BottleneckModel) -> f64 {
    model.capacity - model.cross_rate
}

/// Passes a train through the fluid bottleneck.
///
/// The output span is `max(in_span, work / l)` where `work` is the probe bits
/// after the first packet plus the cross bits arriving during the input span.
/// The first packet leaves one transmission time after it was sent.
pub fn fluid_train(
    model: &BottleneckModel,
    request: &TrainRequest,
    send_times: &[u64],
) -> TrainRecord {
    let k = send_times.len();
    let probe_bits =
        effective_packet_size(request.packet_size, model.ethernet_gap) as f64 * BITS_PER_BYTE;
    let first = send_times[0] + model.service_ns(request.packet_size);
    let in_span_ns = (send_times[k - 1] - send_times[0]) as f64;
    let work_bits =
        (k - 1) as f64 * probe_bits + model.effective_cross_rate() * in_span_ns / NANOS_PER_SEC;
    let out_span_ns = in_span_ns.max(work_bits * NANOS_PER_SEC / model.capacity);
    let spacing = out_span_ns / (k - 1).max(1) as f64;
    let arrival_times = (0..k)
        .map(|i| first + (i as f64 * spacing).round() as u64)
        .collect();

    TrainRecord {
        phase: request.phase,
        level_index: request.level_index,
        train_index: request.train_index,
        packet_size: request.packet_size,
        train_length: k,
        seqs: (0..k as u16).collect(),
        send_times: send_times.to_vec(),
        arrival_times,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Probe,
    Cross,
}

/// Service record of one packet that went through the queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueEvent {
    pub arrival: u64,
    pub service_start: u64,
    pub departure: u64,
    pub size: u32,
    pub kind: PacketKind,
}

/// Result of one packet-level run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueTrace {
    /// Served packets in service order.
    pub events: Vec<QueueEvent>,
    /// Departure time of each probe, `None` when it was dropped.
    pub probe_departures: Vec<Option<u64>>,
    pub dropped_cross: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Cross-traffic arrivals `(time, size)` over `[start, end]`.
fn cross_arrivals(
    model: &BottleneckModel,
    start: u64,
    end: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<(u64, u32)> {
    if model.cross_rate <= 0.0 {
        return Vec::new();
    }
    let mean_bits = model.mean_cross_size(false) * BITS_PER_BYTE;
    let per_ns = model.cross_rate / mean_bits / NANOS_PER_SEC;
    let interarrival = Exp::new(per_ns).expect("positive arrival rate");
    let sizes = WeightedIndex::new(&model.cross_size_weights).expect("validated weights");
    let expected = ((end - start) as f64 * per_ns * 1.1) as usize + 16;
    let mut out = Vec::with_capacity(expected);
    let mut t = start as f64;
    loop {
        t += interarrival.sample(rng);
        if t > end as f64 {
            break;
        }
        let size = model.cross_packet_sizes[sizes.sample(rng)];
        out.push((t as u64, size));
    }
    out
}

/// Runs the probe packets `(arrival_ns, size_bytes)` through a FIFO server at
/// the model's capacity together with Poisson cross traffic. Cross traffic
/// starts `warmup_secs` before the first probe. `stream` selects an
/// independent random stream under the model's seed.
pub fn queue_simulate(
    model: &BottleneckModel,
    probes: &[(u64, u32)],
    stream: u64,
) -> Result<QueueTrace, SimError> {
    model.validate()?;
    let Some(&(first_probe, _)) = probes.first() else {
        return Ok(QueueTrace {
            events: Vec::new(),
            probe_departures: Vec::new(),
            dropped_cross: 0,
        });
    };
    let last_probe = probes[probes.len() - 1].0;
    let window_start = first_probe.saturating_sub(model.warmup_ns());

    let mut rng = rng_for(model.seed, stream);
    let cross = cross_arrivals(model, window_start, last_probe, &mut rng);
    let trace = run_fifo(model, &cross, probes);

    let busy_until = trace.events.last().map_or(last_probe, |e| e.departure);
    if busy_until - window_start > model.horizon_ns() {
        return Err(SimError::HorizonExceeded {
            horizon_ns: model.horizon_ns(),
        });
    }
    Ok(trace)
}

/// FIFO single server at the model's capacity fed by explicit cross and probe
/// arrivals, both sorted by time. On equal timestamps cross packets go first.
pub fn run_fifo(
    model: &BottleneckModel,
    cross: &[(u64, u32)],
    probes: &[(u64, u32)],
) -> QueueTrace {
    let mut events = Vec::with_capacity(cross.len() + probes.len());
    let mut probe_departures = vec![None; probes.len()];
    let mut dropped_cross = 0;
    let mut server_free_at = 0u64;
    let bytes_per_ns = model.capacity / BITS_PER_BYTE / NANOS_PER_SEC;

    let (mut ci, mut pi) = (0usize, 0usize);
    while ci < cross.len() || pi < probes.len() {
        let take_cross = match (cross.get(ci), probes.get(pi)) {
            (Some(c), Some(p)) => c.0 <= p.0,
            (Some(_), None) => true,
            _ => false,
        };
        let (arrival, size, kind) = if take_cross {
            ci += 1;
            (cross[ci - 1].0, cross[ci - 1].1, PacketKind::Cross)
        } else {
            pi += 1;
            (probes[pi - 1].0, probes[pi - 1].1, PacketKind::Probe)
        };

        if let Some(limit) = model.buffer_bytes {
            let backlog = server_free_at.saturating_sub(arrival) as f64 * bytes_per_ns;
            if backlog + effective_packet_size(size, model.ethernet_gap) as f64 > limit as f64 {
                if kind == PacketKind::Cross {
                    dropped_cross += 1;
                }
                continue;
            }
        }

        let service_start = arrival.max(server_free_at);
        let departure = service_start + model.service_ns(size);
        server_free_at = departure;
        events.push(QueueEvent {
            arrival,
            service_start,
            departure,
            size,
            kind,
        });
        if kind == PacketKind::Probe {
            probe_departures[pi - 1] = Some(departure);
        }
    }

    QueueTrace {
        events,
        probe_departures,
        dropped_cross,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Fluid,
    Packet,
}

/// Idle time between the end of one train and the start of the next, standing
/// in for the receiver's report turnaround.
const TRAIN_TURNAROUND_NS: u64 = 10_000_000;

/// A [`Transport`] backed by the simulator. Its clock is simulated time.
#[derive(Clone, Debug)]
pub struct SimTransport {
    model: BottleneckModel,
    mode: SimMode,
    start_ns: u64,
    clock_ns: u64,
    trains_sent: u64,
}

pub fn make_transport(model: BottleneckModel, mode: SimMode) -> Result<SimTransport, SimError> {
    model.validate()?;
    let start_ns = model.warmup_ns();
    Ok(SimTransport {
        model,
        mode,
        start_ns,
        clock_ns: start_ns,
        trains_sent: 0,
    })
}

impl SimTransport {
    pub fn model(&self) -> &BottleneckModel {
        &self.model
    }

    fn run(&mut self, request: &TrainRequest) -> Result<TrainRecord, SimError> {
        let gap = gap_for_rate(request.packet_size, request.rate)?.as_nanos() as u64;
        let send_times: Vec<u64> = (0..request.train_length as u64)
            .map(|i| self.clock_ns + i * gap)
            .collect();
        let stream = self.trains_sent;
        self.trains_sent += 1;

        let record = match self.mode {
            SimMode::Fluid => fluid_train(&self.model, request, &send_times),
            SimMode::Packet => {
                let probes: Vec<(u64, u32)> = send_times
                    .iter()
                    .map(|&t| (t, request.packet_size))
                    .collect();
                let trace = queue_simulate(&self.model, &probes, stream)?;
                let mut record = TrainRecord {
                    phase: request.phase,
                    level_index: request.level_index,
                    train_index: request.train_index,
                    packet_size: request.packet_size,
                    train_length: request.train_length,
                    seqs: Vec::with_capacity(probes.len()),
                    send_times: Vec::with_capacity(probes.len()),
                    arrival_times: Vec::with_capacity(probes.len()),
                };
                for (seq, departure) in trace.probe_departures.iter().enumerate() {
                    if let Some(d) = departure {
                        record.seqs.push(seq as u16);
                        record.send_times.push(send_times[seq]);
                        record.arrival_times.push(*d);
                    }
                }
                record
            }
        };

        let last_send = send_times.last().copied().unwrap_or(self.clock_ns);
        let last_arrival = record.arrival_times.last().copied().unwrap_or(last_send);
        self.clock_ns = last_send.max(last_arrival) + TRAIN_TURNAROUND_NS;
        Ok(record)
    }
}

impl Transport for SimTransport {
    fn send_train(&mut self, request: &TrainRequest) -> Result<TrainRecord, TransportError> {
        Ok(self.run(request)?)
    }

    fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.clock_ns - self.start_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{measured_rate, Phase};

    fn model(cross: f64) -> BottleneckModel {
        BottleneckModel {
            cross_rate: cross,
            ..Default::default()
        }
    }

    fn request(rate: f64, k: usize) -> TrainRequest {
        TrainRequest {
            phase: Phase::Rate,
            level_index: 0,
            train_index: 0,
            rate,
            train_length: k,
            packet_size: 1500,
        }
    }

    fn fluid_rate(m: &BottleneckModel, rate: f64) -> f64 {
        let mut t = make_transport(m.clone(), SimMode::Fluid).unwrap();
        measured_rate(&t.send_train(&request(rate, 16)).unwrap()).unwrap()
    }

    fn assert_rel(actual: f64, expected: f64, tol: f64) {
        let rel = ((actual - expected) / expected).abs();
        assert!(rel <= tol, "{actual} vs {expected} (rel {rel:e})");
    }

    #[test]
    fn fluid_examples() {
        let m = model(3.75e6);
        assert_rel(fluid_rate(&m, 5e6), 5e6, 1e-9);
        assert_rel(fluid_rate(&m, 10e6), 7.2727e6, 1e-5);
        assert_rel(fluid_rate(&m, 10e6), 100e6 / 13.75, 1e-9);
        assert_rel(fluid_rate(&m, 12e6), 7.6190e6, 1e-5);
        assert_rel(fluid_rate(&model(0.0), 10e6), 10e6, 1e-12);
    }

    #[test]
    fn lone_probe_takes_one_transmission_time() {
        let trace = queue_simulate(&model(0.0), &[(5_000_000, 1500)], 0).unwrap();
        assert_eq!(trace.probe_departures, vec![Some(6_200_000)]);
    }

    #[test]
    fn probe_waits_behind_cross_packet_in_service() {
        // hand-built FIFO: cross 1500 B at t=0, probe at 0.1 ms
        let m = model(0.0);
        let service = m.service_ns(1500);
        assert_eq!(service, 1_200_000);
        let cross_departure = service;
        let probe_departure = cross_departure.max(100_000) + service;
        assert_eq!(probe_departure, 2_400_000);

        let trace = run_fifo(&m, &[(0, 1500)], &[(100_000, 1500)]);
        assert_eq!(trace.probe_departures, vec![Some(2_400_000)]);
        assert_eq!(trace.events[0].kind, PacketKind::Cross);
        assert_eq!(trace.events[0].departure, 1_200_000);
        assert_eq!(trace.events[1].service_start, 1_200_000);
    }

    #[test]
    fn back_to_back_spacing_is_transmission_time() {
        let trace = queue_simulate(&model(0.0), &[(0, 1500), (1, 1500)], 0).unwrap();
        let d: Vec<u64> = trace.probe_departures.iter().map(|d| d.unwrap()).collect();
        assert_eq!(d[1] - d[0], 1_200_000);
    }

    #[test]
    fn theoretical_avb() {
        assert_eq!(theoretical_available_bw(&model(0.0)), 10e6);
        assert_rel(theoretical_available_bw(&model(3.75e6)), 6.25e6, 1e-12);
        assert_rel(theoretical_available_bw(&model(8.76e6)), 1.24e6, 1e-12);
    }

    #[test]
    fn model_validation() {
        assert!(model(10e6).validate().is_err());
        assert!(model(-1.0).validate().is_err());
        let m = BottleneckModel {
            cross_size_weights: vec![0.5, 0.5, 0.5, 0.5],
            ..Default::default()
        };
        assert!(m.validate().is_err());
        let m = BottleneckModel {
            cross_size_weights: vec![1.0],
            ..Default::default()
        };
        assert!(m.validate().is_err());
        assert!(make_transport(model(12e6), SimMode::Fluid).is_err());
    }

    #[test]
    fn bounded_buffer_drops_probes() {
        let m = BottleneckModel {
            buffer_bytes: Some(3000),
            ..Default::default()
        };
        let probes: Vec<(u64, u32)> = (0..10).map(|i| (i, 1500)).collect();
        let trace = queue_simulate(&m, &probes, 0).unwrap();
        let served = trace
            .probe_departures
            .iter()
            .filter(|d| d.is_some())
            .count();
        assert!((2..10).contains(&served), "served {served}");
    }

    #[test]
    fn horizon_exceeded() {
        let m = BottleneckModel {
            capacity: 1e3,
            horizon_secs: 1.0,
            warmup_secs: 0.0,
            ..Default::default()
        };
        let probes: Vec<(u64, u32)> = (0..10).map(|i| (i * 1000, 1500)).collect();
        assert!(matches!(
            queue_simulate(&m, &probes, 0),
            Err(SimError::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn packet_transport_is_deterministic() {
        let m = BottleneckModel {
            cross_rate: 3.75e6,
            seed: 42,
            ..Default::default()
        };
        let run = || {
            let mut t = make_transport(m.clone(), SimMode::Packet).unwrap();
            (0..5)
                .map(|_| t.send_train(&request(10e6, 16)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn simulated_clock_advances() {
        let mut t = make_transport(model(0.0), SimMode::Fluid).unwrap();
        assert_eq!(t.elapsed(), Duration::ZERO);
        t.send_train(&request(10e6, 16)).unwrap();
        // 15 gaps of 1.2 ms, one transmission time, then the turnaround
        assert_eq!(
            t.elapsed(),
            Duration::from_micros(15 * 1200 + 1200 + 10_000)
        );
    }
}
