//! Receiver side of a measurement session.
//!
//! A dedicated thread reads the probe socket and stamps each datagram the
//! moment it is returned by the kernel. Stamped probes and control messages
//! meet in one queue consumed by the session loop, which groups probes into
//! trains and writes reports back over the control connection. The stamping
//! thread never waits on the control connection.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::codec::ProbePacket;
use super::control::{ControlError, ControlMessage, TrainKey, TrainReport, CONTROL_VERSION};
use super::pacing::MonotonicClock;
use crate::model::BITS_PER_BYTE;

pub const DEFAULT_PROBE_PORT: u16 = 8642;
pub const DEFAULT_CONTROL_PORT: u16 = 8643;

/// Inter-packet silence after which a partially received train is reported.
pub const REPORT_SILENCE: Duration = Duration::from_millis(200);

const POLL: Duration = Duration::from_millis(50);

#[derive(Clone, Debug)]
pub struct ReceiverConfig {
    pub probe_bind: SocketAddr,
    pub control_bind: SocketAddr,
    /// Passes arrivals through an emulated FIFO link of this rate (bits/s)
    /// before reporting them. Lets a loopback setup show a bottleneck.
    pub shape_rate: Option<f64>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            probe_bind: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PROBE_PORT)),
            control_bind: SocketAddr::from(([0, 0, 0, 0], DEFAULT_CONTROL_PORT)),
            shape_rate: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub session_id: u32,
    pub probes_received: u64,
    pub malformed: u64,
    pub stale: u64,
    pub reports_sent: u64,
    /// Whether the sender closed the session with BYE.
    pub clean_close: bool,
}

enum Event {
    Probe { at: u64, packet: ProbePacket },
    Malformed,
    Control(ControlMessage),
    ControlLost(String),
}

pub struct Receiver {
    udp: UdpSocket,
    listener: TcpListener,
    clock: MonotonicClock,
    shape_rate: Option<f64>,
}

struct ActiveTrain {
    key: TrainKey,
    count: u16,
    arrivals: BTreeMap<u16, u64>,
    last_activity: Instant,
}

/// Departure times of packets arriving at `arrivals` (in arrival order) from a
/// FIFO link of `rate` bits/s.
pub fn shape_arrivals(arrivals: &[u64], packet_size: u32, rate: f64) -> Vec<u64> {
    let service = (packet_size as f64 * BITS_PER_BYTE * 1e9 / rate).round() as u64;
    let mut free_at = 0u64;
    arrivals
        .iter()
        .map(|&a| {
            free_at = a.max(free_at) + service;
            free_at
        })
        .collect()
}

impl Receiver {
    pub fn bind(cfg: &ReceiverConfig) -> io::Result<Receiver> {
        let udp = UdpSocket::bind(cfg.probe_bind)?;
        udp.set_read_timeout(Some(POLL))?;
        let listener = TcpListener::bind(cfg.control_bind)?;
        Ok(Receiver {
            udp,
            listener,
            clock: MonotonicClock::new(),
            shape_rate: cfg.shape_rate,
        })
    }

    pub fn probe_addr(&self) -> io::Result<SocketAddr> {
        self.udp.local_addr()
    }

    pub fn control_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves sessions one after another; stops after `max_sessions` when set.
    pub fn serve(&self, max_sessions: Option<usize>) -> io::Result<Vec<SessionStats>> {
        let mut all = Vec::new();
        for conn in self.listener.incoming() {
            let stream = conn?;
            let peer = stream.peer_addr().ok();
            match self.serve_session(stream) {
                Ok(stats) => {
                    log::info!(
                        "session {:08x} from {peer:?} done: {} probes, {} reports",
                        stats.session_id,
                        stats.probes_received,
                        stats.reports_sent
                    );
                    all.push(stats);
                }
                Err(e) => log::warn!("session from {peer:?} ended: {e}"),
            }
            if max_sessions.is_some_and(|n| all.len() >= n) {
                break;
            }
        }
        Ok(all)
    }

    pub fn serve_session(&self, stream: TcpStream) -> Result<SessionStats, ControlError> {
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        let (tx, rx) = mpsc::channel::<Event>();
        let stop = Arc::new(AtomicBool::new(false));

        let probe_thread = {
            let udp = self.udp.try_clone()?;
            let tx = tx.clone();
            let stop = stop.clone();
            let clock = self.clock;
            thread::spawn(move || {
                let mut buf = vec![0u8; 65_536];
                while !stop.load(Ordering::Relaxed) {
                    match udp.recv_from(&mut buf) {
                        Ok((n, _)) => {
                            let at = clock.now_ns();
                            let ev = match ProbePacket::decode(&buf[..n]) {
                                Ok(packet) => Event::Probe { at, packet },
                                Err(_) => Event::Malformed,
                            };
                            if tx.send(ev).is_err() {
                                break;
                            }
                        }
                        Err(e)
                            if matches!(
                                e.kind(),
                                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                            ) => {}
                        Err(e) => {
                            log::warn!("probe socket error: {e}");
                            thread::sleep(POLL);
                        }
                    }
                }
            })
        };

        {
            let mut reader = stream;
            let tx = tx.clone();
            thread::spawn(move || loop {
                match ControlMessage::read_from(&mut reader) {
                    Ok(msg) => {
                        if tx.send(Event::Control(msg)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Event::ControlLost(e.to_string()));
                        break;
                    }
                }
            });
        }
        drop(tx);

        let result = self.session_loop(&rx, &mut writer);
        stop.store(true, Ordering::Relaxed);
        let _ = writer.shutdown(std::net::Shutdown::Both);
        let _ = probe_thread.join();
        result
    }

    fn session_loop(
        &self,
        rx: &mpsc::Receiver<Event>,
        writer: &mut TcpStream,
    ) -> Result<SessionStats, ControlError> {
        let mut stats = SessionStats::default();
        let mut session: Option<(u32, u32)> = None;
        let mut active: Option<ActiveTrain> = None;
        let mut pending: HashMap<TrainKey, BTreeMap<u16, u64>> = HashMap::new();
        let mut reports: HashMap<TrainKey, TrainReport> = HashMap::new();

        loop {
            let wait = match &active {
                Some(a) => {
                    (a.last_activity + REPORT_SILENCE).saturating_duration_since(Instant::now())
                }
                None => POLL,
            };
            let event = match rx.recv_timeout(wait) {
                Ok(ev) => Some(ev),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Err(ControlError::Closed),
            };

            match event {
                None => {}
                Some(Event::Malformed) => stats.malformed += 1,
                Some(Event::ControlLost(reason)) => {
                    log::debug!("control connection lost: {reason}");
                    return Err(ControlError::Closed);
                }
                Some(Event::Probe { at, packet }) => {
                    let Some((id, _)) = session else {
                        stats.stale += 1;
                        continue;
                    };
                    if packet.session_id != id {
                        stats.stale += 1;
                        continue;
                    }
                    stats.probes_received += 1;
                    let key = TrainKey {
                        phase: packet.phase,
                        level_index: packet.level_index,
                        train_index: packet.train_index,
                    };
                    match active.as_mut() {
                        Some(a) if a.key == key => {
                            if packet.seq_in_train < a.count {
                                a.arrivals.entry(packet.seq_in_train).or_insert(at);
                                a.last_activity = Instant::now();
                            }
                        }
                        // probes can overtake their announcement
                        _ if !reports.contains_key(&key) => {
                            pending
                                .entry(key)
                                .or_default()
                                .entry(packet.seq_in_train)
                                .or_insert(at);
                        }
                        _ => stats.stale += 1,
                    }
                }
                Some(Event::Control(msg)) => match msg {
                    ControlMessage::Hello {
                        version,
                        session_id,
                        packet_size,
                        ..
                    } => {
                        if version != CONTROL_VERSION {
                            return Err(ControlError::Malformed(format!(
                                "unsupported control version {version}"
                            )));
                        }
                        session = Some((session_id, packet_size));
                        stats.session_id = session_id;
                        ControlMessage::HelloAck {
                            version: CONTROL_VERSION,
                            session_id,
                        }
                        .write_to(writer)?;
                    }
                    ControlMessage::Train { key, count } => {
                        if let Some(prev) = active.take() {
                            self.finish_train(prev, session, &mut reports, writer, &mut stats)?;
                        }
                        // a re-announced train starts over
                        reports.remove(&key);
                        let arrivals = pending.remove(&key).unwrap_or_default();
                        pending.clear();
                        let mut train = ActiveTrain {
                            key,
                            count,
                            arrivals,
                            last_activity: Instant::now(),
                        };
                        train.arrivals.retain(|&seq, _| seq < count);
                        active = Some(train);
                    }
                    ControlMessage::Rerequest { key } => {
                        if active.as_ref().is_some_and(|a| a.key == key) {
                            let a = active.take().unwrap();
                            self.finish_train(a, session, &mut reports, writer, &mut stats)?;
                        } else if let Some(r) = reports.get(&key) {
                            ControlMessage::Report(r.clone()).write_to(writer)?;
                            stats.reports_sent += 1;
                        }
                    }
                    ControlMessage::Bye { .. } => {
                        if let Some(prev) = active.take() {
                            self.finish_train(prev, session, &mut reports, writer, &mut stats)?;
                        }
                        ControlMessage::ByeAck {
                            packets_received: stats.probes_received,
                            malformed: stats.malformed,
                        }
                        .write_to(writer)?;
                        stats.clean_close = true;
                        return Ok(stats);
                    }
                    other => {
                        return Err(ControlError::Malformed(format!(
                            "unexpected message {other:?}"
                        )));
                    }
                },
            }

            let done = active.as_ref().is_some_and(|a| {
                a.arrivals.len() == a.count as usize || a.last_activity.elapsed() >= REPORT_SILENCE
            });
            if done {
                let a = active.take().unwrap();
                self.finish_train(a, session, &mut reports, writer, &mut stats)?;
            }
        }
    }

    fn finish_train(
        &self,
        train: ActiveTrain,
        session: Option<(u32, u32)>,
        reports: &mut HashMap<TrainKey, TrainReport>,
        writer: &mut TcpStream,
        stats: &mut SessionStats,
    ) -> Result<(), ControlError> {
        let (session_id, packet_size) = session.unwrap_or((0, 0));
        let mut arrivals: Vec<(u16, u64)> = train.arrivals.into_iter().collect();
        if let Some(rate) = self.shape_rate {
            let mut order: Vec<usize> = (0..arrivals.len()).collect();
            order.sort_by_key(|&i| (arrivals[i].1, arrivals[i].0));
            let times: Vec<u64> = order.iter().map(|&i| arrivals[i].1).collect();
            let shaped = shape_arrivals(&times, packet_size, rate);
            for (&i, t) in order.iter().zip(shaped) {
                arrivals[i].1 = t;
            }
        }
        let report = TrainReport {
            session_id,
            key: train.key,
            sent_count: train.count,
            arrivals,
        };
        ControlMessage::Report(report.clone()).write_to(writer)?;
        stats.reports_sent += 1;
        reports.insert(train.key, report);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shaping_is_a_fifo() {
        // back-to-back arrivals leave one transmission time apart
        assert_eq!(
            shape_arrivals(&[0, 10, 20], 1500, 10e6),
            vec![1_200_000, 2_400_000, 3_600_000]
        );
        // sparse arrivals pass with a constant delay
        assert_eq!(
            shape_arrivals(&[0, 5_000_000], 1500, 10e6),
            vec![1_200_000, 6_200_000]
        );
    }
}
