//! Sender side: a [`Transport`] that probes a real path through a running
//! [`super::receiver::Receiver`].

use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::ProbePacket;
use super::control::{ControlError, ControlMessage, TrainKey, TrainReport, CONTROL_VERSION};
use super::pacing::{pace_train, MonotonicClock};
use super::receiver::REPORT_SILENCE;
use crate::model::{TrainRecord, IPV4_UDP_HEADER_BYTES, IPV6_UDP_HEADER_BYTES, PROBE_HEADER_BYTES};
use crate::transport::{TrainRequest, Transport, TransportError};

#[derive(Clone, Debug)]
pub struct NetworkConfig {
    pub control_addr: SocketAddr,
    pub probe_addr: SocketAddr,
    pub connect_timeout: Duration,
    /// How long to wait for a report beyond the train's own duration.
    pub report_timeout: Duration,
}

impl NetworkConfig {
    pub fn new(control_addr: SocketAddr, probe_addr: SocketAddr) -> Self {
        NetworkConfig {
            control_addr,
            probe_addr,
            connect_timeout: Duration::from_secs(2),
            report_timeout: Duration::from_secs(1),
        }
    }
}

/// Counters returned when a session is closed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CloseStats {
    pub packets_emitted: u64,
    pub packets_received: u64,
    pub malformed: u64,
}

pub struct NetworkTransport {
    control: TcpStream,
    inbox: mpsc::Receiver<Result<ControlMessage, ControlError>>,
    udp: UdpSocket,
    clock: MonotonicClock,
    session_id: u32,
    payload_len: usize,
    report_timeout: Duration,
    started: Instant,
    packets_emitted: u64,
}

/// UDP payload length of a probe of `packet_size` bytes at the IP layer.
pub fn payload_len_for(packet_size: u32, ipv6: bool) -> Result<usize, TransportError> {
    let header = if ipv6 {
        IPV6_UDP_HEADER_BYTES
    } else {
        IPV4_UDP_HEADER_BYTES
    };
    if packet_size < header + PROBE_HEADER_BYTES {
        return Err(TransportError::Failure(format!(
            "packet size {packet_size} too small for the probe header"
        )));
    }
    Ok((packet_size - header) as usize)
}

fn failure(e: impl std::fmt::Display) -> TransportError {
    TransportError::Failure(e.to_string())
}

/// Connects to a receiver and negotiates a session.
pub fn network_transport(
    cfg: &NetworkConfig,
    packet_size: u32,
) -> Result<NetworkTransport, TransportError> {
    let handshake =
        |e: &dyn std::fmt::Display| TransportError::Handshake(format!("{}: {e}", cfg.control_addr));
    let payload_len = payload_len_for(packet_size, cfg.probe_addr.is_ipv6())?;

    let control = TcpStream::connect_timeout(&cfg.control_addr, cfg.connect_timeout)
        .map_err(|e| handshake(&e))?;
    control.set_nodelay(true)?;
    let mut reader = control.try_clone()?;
    let (tx, inbox) = mpsc::channel();
    thread::spawn(move || loop {
        let msg = ControlMessage::read_from(&mut reader);
        let stop = msg.is_err();
        if tx.send(msg).is_err() || stop {
            break;
        }
    });

    let bind: SocketAddr = if cfg.probe_addr.is_ipv6() {
        "[::]:0".parse().unwrap()
    } else {
        "0.0.0.0:0".parse().unwrap()
    };
    let udp = UdpSocket::bind(bind)?;
    udp.connect(cfg.probe_addr)?;

    let session_id = loop {
        let id: u32 = rand::random();
        if id != 0 {
            break id;
        }
    };
    let mut transport = NetworkTransport {
        control,
        inbox,
        udp,
        clock: MonotonicClock::new(),
        session_id,
        payload_len,
        report_timeout: cfg.report_timeout,
        started: Instant::now(),
        packets_emitted: 0,
    };
    ControlMessage::Hello {
        version: CONTROL_VERSION,
        session_id,
        packet_size,
        payload_len: payload_len as u32,
    }
    .write_to(&mut transport.control)
    .map_err(|e| handshake(&e))?;

    let deadline = Instant::now() + cfg.connect_timeout;
    loop {
        match transport.next_message(deadline) {
            Ok(Some(ControlMessage::HelloAck {
                version,
                session_id,
            })) if session_id == transport.session_id => {
                if version != CONTROL_VERSION {
                    return Err(handshake(&format!(
                        "receiver speaks control version {version}"
                    )));
                }
                break;
            }
            Ok(Some(_)) => continue,
            Ok(None) => return Err(handshake(&"no HELLO acknowledgement")),
            Err(e) => return Err(handshake(&e)),
        }
    }
    log::debug!(
        "session {session_id:08x} established with {}",
        cfg.control_addr
    );
    transport.started = Instant::now();
    Ok(transport)
}

impl NetworkTransport {
    pub fn session_id(&self) -> u32 {
        self.session_id
    }

    /// Packets put on the wire, pacing retries included.
    pub fn packets_emitted(&self) -> u64 {
        self.packets_emitted
    }

    /// `Ok(None)` on timeout.
    fn next_message(&self, deadline: Instant) -> Result<Option<ControlMessage>, TransportError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.inbox.recv_timeout(wait) {
            Ok(Ok(msg)) => Ok(Some(msg)),
            Ok(Err(e)) => Err(failure(format!("control channel: {e}"))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(failure("control channel closed")),
        }
    }

    fn await_report(
        &self,
        key: TrainKey,
        deadline: Instant,
    ) -> Result<Option<TrainReport>, TransportError> {
        loop {
            match self.next_message(deadline)? {
                Some(ControlMessage::Report(r))
                    if r.key == key && r.session_id == self.session_id =>
                {
                    return Ok(Some(r))
                }
                Some(other) => log::trace!("ignoring {other:?}"),
                None => return Ok(None),
            }
        }
    }

    fn send_control(&mut self, msg: &ControlMessage) -> Result<(), TransportError> {
        msg.write_to(&mut self.control)
            .map_err(|e| failure(format!("control channel: {e}")))
    }

    /// Ends the session with BYE and waits for the receiver's counters.
    pub fn finish(
        mut self,
        packets_sent: u64,
        bytes_sent: u64,
    ) -> Result<CloseStats, TransportError> {
        self.send_control(&ControlMessage::Bye {
            packets_sent,
            bytes_sent,
        })?;
        let deadline = Instant::now() + self.report_timeout;
        loop {
            match self.next_message(deadline)? {
                Some(ControlMessage::ByeAck {
                    packets_received,
                    malformed,
                }) => {
                    return Ok(CloseStats {
                        packets_emitted: self.packets_emitted,
                        packets_received,
                        malformed,
                    })
                }
                Some(_) => continue,
                None => return Err(failure("no BYE acknowledgement")),
            }
        }
    }
}

/// Builds a [`TrainRecord`] from the receiver's report and the local send
/// times. Arrival timestamps are copied unchanged.
pub fn assemble_record(
    request: &TrainRequest,
    send_times: &[u64],
    report: Option<&TrainReport>,
) -> TrainRecord {
    let mut record = TrainRecord {
        phase: request.phase,
        level_index: request.level_index,
        train_index: request.train_index,
        packet_size: request.packet_size,
        train_length: request.train_length,
        seqs: Vec::new(),
        send_times: Vec::new(),
        arrival_times: Vec::new(),
    };
    if let Some(report) = report {
        let mut arrivals = report.arrivals.clone();
        arrivals.sort_by_key(|&(seq, _)| seq);
        arrivals.dedup_by_key(|&mut (seq, _)| seq);
        for (seq, at) in arrivals {
            if let Some(&sent) = send_times.get(seq as usize) {
                record.seqs.push(seq);
                record.send_times.push(sent);
                record.arrival_times.push(at);
            }
        }
    }
    record
}

impl Transport for NetworkTransport {
    fn send_train(&mut self, request: &TrainRequest) -> Result<TrainRecord, TransportError> {
        let key = TrainKey {
            phase: request.phase,
            level_index: request.level_index,
            train_index: request.train_index,
        };
        let count = u16::try_from(request.train_length)
            .map_err(|_| failure(format!("train length {} too long", request.train_length)))?;
        let mut packet = ProbePacket {
            session_id: self.session_id,
            phase: request.phase,
            level_index: request.level_index,
            train_index: request.train_index,
            seq_in_train: 0,
            send_timestamp: 0,
            payload_len: self.payload_len,
        }
        .encode();

        let udp = self.udp.try_clone()?;
        let mut control = self.control.try_clone()?;
        let clock = self.clock;
        let mut emitted = 0u64;
        let send_times = pace_train(
            |b: &[u8]| {
                emitted += 1;
                udp.send(b).map(|_| ())
            },
            &clock,
            &mut packet,
            request.rate,
            request.train_length,
            request.packet_size,
            |_| {
                ControlMessage::Train { key, count }
                    .write_to(&mut control)
                    .map_err(|e| failure(format!("control channel: {e}")))
            },
        );
        self.packets_emitted += emitted;
        let send_times = send_times?;

        let deadline = Instant::now() + REPORT_SILENCE + self.report_timeout;
        let mut report = self.await_report(key, deadline)?;
        if report.is_none() {
            log::debug!("no report for {key:?}, asking again");
            self.send_control(&ControlMessage::Rerequest { key })?;
            report = self.await_report(key, Instant::now() + self.report_timeout)?;
        }
        if report.is_none() {
            log::warn!("train {key:?} unreported, counting it as lost");
        }
        Ok(assemble_record(request, &send_times, report.as_ref()))
    }

    fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Phase;

    #[test]
    fn payload_lengths() {
        assert_eq!(payload_len_for(1500, false).unwrap(), 1472);
        assert_eq!(payload_len_for(1500, true).unwrap(), 1452);
        assert!(payload_len_for(40, false).is_err());
    }

    #[test]
    fn record_keeps_reported_arrivals_verbatim() {
        let request = TrainRequest {
            phase: Phase::Rate,
            level_index: 1,
            train_index: 2,
            rate: 10e6,
            train_length: 4,
            packet_size: 1500,
        };
        let report = TrainReport {
            session_id: 1,
            key: TrainKey {
                phase: Phase::Rate,
                level_index: 1,
                train_index: 2,
            },
            sent_count: 4,
            arrivals: vec![(3, 3_999), (0, 17), (1, 1_234)],
        };
        let r = assemble_record(&request, &[100, 200, 300, 400], Some(&report));
        assert_eq!(r.seqs, vec![0, 1, 3]);
        assert_eq!(r.send_times, vec![100, 200, 400]);
        assert_eq!(r.arrival_times, vec![17, 1_234, 3_999]);
        assert!(!r.is_complete());

        let lost = assemble_record(&request, &[100, 200, 300, 400], None);
        assert_eq!(lost.received_count(), 0);
    }
}
