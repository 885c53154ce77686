use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    aggregate_level, build_schedule, check_convergence, estimate_ps, extract_estimate,
    linear_regression, AnalysisError, ConvergenceReport, RateSchedule, ToppRegression, MIN_LEVELS,
};
use crate::model::{sent_rate, topp_points, LevelSample, Phase, ProbeConfig, TrainRecord};
use crate::transport::{TrainRequest, Transport, TransportError};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// What one probe-and-analyze round produced.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationResult {
    pub ps: f64,
    pub samples: Vec<LevelSample>,
    pub regression: ToppRegression,
    pub link_capacity: f64,
    pub available_bandwidth: f64,
    pub convergence: ConvergenceReport,
}

/// Raw trains of one round together with their analysis.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub train_length: usize,
    pub ps_trains: Vec<TrainRecord>,
    /// Rate-probe trains grouped by level, in schedule order.
    pub level_trains: Vec<Vec<TrainRecord>>,
    pub schedule: Option<RateSchedule>,
    pub result: Result<IterationResult, AnalysisError>,
}

/// Everything a measurement session did.
#[derive(Clone, Debug)]
pub struct Session {
    pub iterations: Vec<IterationRecord>,
    /// Index of the iteration whose estimate is reported.
    pub best: Option<usize>,
    pub probe_packets_sent: u64,
    pub probe_bytes_sent: u64,
    pub wall_duration: Duration,
}

/// Final result of a measurement session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub available_bandwidth: f64,
    pub link_capacity: f64,
    pub ps: f64,
    pub regression: ToppRegression,
    pub samples: Vec<LevelSample>,
    pub iterations_used: usize,
    pub converged: bool,
    pub probe_packets_sent: u64,
    pub probe_bytes_sent: u64,
    /// Seconds.
    pub wall_duration: f64,
}

impl Session {
    pub fn best_iteration(&self) -> Option<&IterationRecord> {
        self.best.map(|i| &self.iterations[i])
    }

    /// The reported estimate, or the last round's error when no round
    /// produced one.
    pub fn estimate(&self) -> Result<Estimate, AnalysisError> {
        let Some(best) = self.best_iteration() else {
            return match self.iterations.last() {
                Some(it) => Err(it.result.clone().unwrap_err()),
                None => Err(AnalysisError::NoCompleteTrains),
            };
        };
        let r = best.result.as_ref().expect("best iteration has a result");
        Ok(Estimate {
            available_bandwidth: r.available_bandwidth,
            link_capacity: r.link_capacity,
            ps: r.ps,
            regression: r.regression,
            samples: r.samples.clone(),
            iterations_used: self.iterations.len(),
            converged: r.convergence.converged,
            probe_packets_sent: self.probe_packets_sent,
            probe_bytes_sent: self.probe_bytes_sent,
            wall_duration: self.wall_duration.as_secs_f64(),
        })
    }
}

/// Offered rate of a level as realized by the sender: mean send-side rate of
/// its complete trains.
fn realized_offered_rate(trains: &[TrainRecord]) -> Option<f64> {
    let rates: Vec<f64> = trains
        .iter()
        .filter(|t| t.is_complete())
        .filter_map(|t| sent_rate(t).ok())
        .collect();
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// Per-level samples of a round. Levels without complete trains, or with
/// fewer than half of their trains complete, are dropped.
pub fn level_samples(level_trains: &[Vec<TrainRecord>]) -> Result<Vec<LevelSample>, AnalysisError> {
    let mut samples = Vec::with_capacity(level_trains.len());
    for trains in level_trains {
        let Some(offered) = realized_offered_rate(trains) else {
            log::debug!("level without complete trains dropped");
            continue;
        };
        match aggregate_level(trains, offered) {
            Ok(sample) => samples.push(sample),
            Err(AnalysisError::LevelDiscarded {
                level,
                complete,
                total,
            }) => {
                log::debug!("level {level} discarded ({complete}/{total} complete)");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(samples)
}

/// Analyzes one round from its raw trains only. Live sessions and offline
/// replays go through this same function, so a replay of recorded samples
/// reproduces the live estimate exactly.
pub fn analyze_iteration(
    ps_trains: &[TrainRecord],
    level_trains: &[Vec<TrainRecord>],
    cfg: &ProbeConfig,
) -> Result<IterationResult, AnalysisError> {
    let ps = estimate_ps(ps_trains)?;
    let samples = level_samples(level_trains)?;
    if samples.len() < MIN_LEVELS {
        return Err(AnalysisError::TooFewLevels {
            surviving: samples.len(),
            required: MIN_LEVELS,
        });
    }

    let points = topp_points(&samples)?;
    let regression = linear_regression(&points)?;
    let (link_capacity, available_bandwidth) = extract_estimate(&regression, ps)?;
    let convergence = check_convergence(&regression, &samples, cfg)?;

    Ok(IterationResult {
        ps,
        samples,
        regression,
        link_capacity,
        available_bandwidth,
        convergence,
    })
}

struct Probe<'a, T> {
    transport: T,
    cfg: &'a ProbeConfig,
    packets: u64,
}

impl<T: Transport> Probe<'_, T> {
    fn send(
        &mut self,
        phase: Phase,
        level_index: u16,
        train_index: u16,
        rate: f64,
        train_length: usize,
    ) -> Result<TrainRecord, TransportError> {
        let request = TrainRequest {
            phase,
            level_index,
            train_index,
            rate,
            train_length,
            packet_size: self.cfg.packet_size,
        };
        let record = self.transport.send_train(&request)?;
        self.packets += train_length as u64;
        Ok(record)
    }
}

/// Runs the full measurement loop over `transport`:
///
/// 1. send `ps_trains` trains at `max_send_rate` and estimate the
///    proportional share from their dispersion;
/// 2. probe every rate of `[ps, z * ps]` with `trains_per_level` trains;
/// 3. regress and extract capacity and available bandwidth;
/// 4. stop if the fit converged, otherwise double the train length and start
///    over, at most `max_iterations` times.
///
/// Transport errors abort the session. Estimator errors only fail the round
/// they happened in.
pub fn run_session<T: Transport>(
    transport: T,
    cfg: &ProbeConfig,
) -> Result<Session, EstimationError> {
    cfg.validate().map_err(AnalysisError::from)?;
    let started = transport.elapsed();
    let mut probe = Probe {
        transport,
        cfg,
        packets: 0,
    };
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut train_length = cfg.train_length;

    for round in 0..cfg.max_iterations {
        let mut ps_trains = Vec::with_capacity(cfg.ps_trains);
        for t in 0..cfg.ps_trains {
            ps_trains.push(probe.send(
                Phase::ProportionalShare,
                0,
                t as u16,
                cfg.max_send_rate,
                cfg.ps_train_length,
            )?);
        }

        let mut record = IterationRecord {
            train_length,
            ps_trains,
            level_trains: Vec::new(),
            schedule: None,
            result: Err(AnalysisError::NoCompleteTrains),
        };

        match estimate_ps(&record.ps_trains).and_then(|ps| build_schedule(ps, cfg)) {
            Ok(schedule) => {
                for (level, &rate) in schedule.rates.iter().enumerate() {
                    let mut trains = Vec::with_capacity(cfg.trains_per_level);
                    for t in 0..cfg.trains_per_level {
                        trains.push(probe.send(
                            Phase::Rate,
                            level as u16,
                            t as u16,
                            rate,
                            train_length,
                        )?);
                    }
                    record.level_trains.push(trains);
                }
                record.schedule = Some(schedule);
                record.result = analyze_iteration(&record.ps_trains, &record.level_trains, cfg);
            }
            Err(e) => record.result = Err(e),
        }

        let converged = match &record.result {
            Ok(r) => {
                log::info!(
                    "round {}: k={} ps={:.0} capacity={:.0} avb={:.0} r={:.4} converged={}",
                    round + 1,
                    train_length,
                    r.ps,
                    r.link_capacity,
                    r.available_bandwidth,
                    r.regression.correlation,
                    r.convergence.converged
                );
                r.convergence.converged
            }
            Err(e) => {
                log::info!("round {}: k={} failed: {e}", round + 1, train_length);
                false
            }
        };
        iterations.push(record);
        if converged {
            break;
        }
        train_length *= 2;
    }

    let best = iterations
        .iter()
        .enumerate()
        .filter_map(|(i, it)| it.result.as_ref().ok().map(|r| (i, r)))
        .max_by(|(_, a), (_, b)| {
            (a.convergence.converged, a.regression.correlation)
                .partial_cmp(&(b.convergence.converged, b.regression.correlation))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i);

    let probe_packets_sent = probe.packets;
    Ok(Session {
        iterations,
        best,
        probe_packets_sent,
        probe_bytes_sent: probe_packets_sent * cfg.packet_size as u64,
        wall_duration: probe.transport.elapsed().saturating_sub(started),
    })
}

pub fn run_estimation<T: Transport>(
    transport: T,
    cfg: &ProbeConfig,
) -> Result<Estimate, EstimationError> {
    Ok(run_session(transport, cfg)?.estimate()?)
}
