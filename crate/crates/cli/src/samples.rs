//! Raw per-packet samples: one CSV row per received probe.
//!
//! Rows of the proportional-share trains carry level `-1`. Trains that lost
//! every packet leave no rows; the replay rebuilds the full train grid from
//! the probe configuration so lossy levels are judged the same way.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use diettopp::{IterationRecord, Phase, ProbeConfig, TrainRecord};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SAMPLES_HEADER: &str = "level,train,seq,send_ns,recv_ns,offered_bps,size_bytes";

/// Level value of proportional-share rows.
pub const PS_LEVEL: i32 = -1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub level: i32,
    pub train: u16,
    pub seq: u16,
    pub send_ns: u64,
    pub recv_ns: u64,
    /// Requested rate of the train, bit/s.
    pub offered_bps: f64,
    pub size_bytes: u32,
}

/// Trains of one round as read back from a samples file.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedRound {
    pub train_length: usize,
    pub ps_trains: Vec<TrainRecord>,
    pub level_trains: Vec<Vec<TrainRecord>>,
}

impl RecordedRound {
    /// Probe packets the round sent, lost ones included.
    pub fn packets_sent(&self) -> u64 {
        let ps: usize = self.ps_trains.iter().map(|t| t.train_length).sum();
        let rate: usize = self
            .level_trains
            .iter()
            .flatten()
            .map(|t| t.train_length)
            .sum();
        (ps + rate) as u64
    }

    /// Span from the first to the last recorded send, in seconds.
    pub fn send_span_secs(&self) -> f64 {
        let times = self
            .ps_trains
            .iter()
            .chain(self.level_trains.iter().flatten())
            .flat_map(|t| t.send_times.iter().copied());
        let (lo, hi) = times.fold((u64::MAX, 0), |(lo, hi), t| (lo.min(t), hi.max(t)));
        if hi > lo {
            (hi - lo) as f64 / 1e9
        } else {
            0.0
        }
    }
}

fn rows_of(train: &TrainRecord, level: i32, offered: f64) -> impl Iterator<Item = SampleRow> + '_ {
    (0..train.seqs.len()).map(move |i| SampleRow {
        level,
        train: train.train_index,
        seq: train.seqs[i],
        send_ns: train.send_times[i],
        recv_ns: train.arrival_times[i],
        offered_bps: offered,
        size_bytes: train.packet_size,
    })
}

/// Flattens one round into sample rows, proportional-share trains first.
pub fn round_rows(round: &IterationRecord, cfg: &ProbeConfig) -> Vec<SampleRow> {
    let mut rows = Vec::new();
    for t in &round.ps_trains {
        rows.extend(rows_of(t, PS_LEVEL, cfg.max_send_rate));
    }
    for (level, trains) in round.level_trains.iter().enumerate() {
        let offered = round
            .schedule
            .as_ref()
            .and_then(|s| s.rates.get(level).copied())
            .unwrap_or(f64::NAN);
        for t in trains {
            rows.extend(rows_of(t, level as i32, offered));
        }
    }
    rows
}

pub fn write_samples<W: Write>(w: W, rows: &[SampleRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    if rows.is_empty() {
        out.write_record(SAMPLES_HEADER.split(','))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a samples file. Anything that is not exactly what
/// [`write_samples`] produces, a file cut short included, is an error.
pub fn read_rows<R: Read>(mut r: R) -> Result<Vec<SampleRow>, CliError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    if !text.ends_with('\n') {
        return Err(CliError::Parse(
            "samples file does not end with a newline (truncated?)".into(),
        ));
    }
    let header = text.lines().next().unwrap_or_default();
    if header != SAMPLES_HEADER {
        return Err(CliError::Parse(format!(
            "unexpected samples header {header:?}"
        )));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<SampleRow>().enumerate() {
        rows.push(row.map_err(|e| CliError::Parse(format!("samples row {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

/// Rebuilds the trains of a round. Rate trains are `train_length` packets
/// long, or as long as the highest recorded sequence number implies when no
/// length is given.
pub fn rebuild_round(
    rows: &[SampleRow],
    cfg: &ProbeConfig,
    train_length: Option<usize>,
) -> Result<RecordedRound, CliError> {
    let parse = |m: String| Err(CliError::Parse(m));
    let Some(first) = rows.first() else {
        return parse("samples file has no rows".into());
    };
    let size = first.size_bytes;
    if let Some(bad) = rows.iter().find(|r| r.size_bytes != size) {
        return parse(format!("mixed packet sizes {size} and {}", bad.size_bytes));
    }

    let k = match train_length {
        Some(k) => k,
        None => rows
            .iter()
            .filter(|r| r.level != PS_LEVEL)
            .map(|r| r.seq as usize + 1)
            .max()
            .unwrap_or(cfg.train_length),
    };

    let mut grouped: BTreeMap<(i32, u16), Vec<&SampleRow>> = BTreeMap::new();
    for row in rows {
        let (levels, trains, len) = if row.level == PS_LEVEL {
            (1, cfg.ps_trains, cfg.ps_train_length)
        } else {
            (cfg.num_levels, cfg.trains_per_level, k)
        };
        if row.level < PS_LEVEL
            || (row.level != PS_LEVEL && row.level as usize >= levels)
            || row.train as usize >= trains
            || row.seq as usize >= len
        {
            return parse(format!(
                "row level {} train {} seq {} outside the configured train grid",
                row.level, row.train, row.seq
            ));
        }
        grouped.entry((row.level, row.train)).or_default().push(row);
    }

    let build = |level: i32, train: u16, len: usize| -> Result<TrainRecord, CliError> {
        let mut record = TrainRecord {
            phase: if level == PS_LEVEL {
                Phase::ProportionalShare
            } else {
                Phase::Rate
            },
            level_index: level.max(0) as u16,
            train_index: train,
            packet_size: size,
            train_length: len,
            seqs: Vec::new(),
            send_times: Vec::new(),
            arrival_times: Vec::new(),
        };
        let mut packets = grouped.get(&(level, train)).cloned().unwrap_or_default();
        packets.sort_by_key(|r| r.seq);
        for pair in packets.windows(2) {
            if pair[0].seq == pair[1].seq {
                return Err(CliError::Parse(format!(
                    "duplicate seq {} in level {level} train {train}",
                    pair[0].seq
                )));
            }
        }
        for p in packets {
            record.seqs.push(p.seq);
            record.send_times.push(p.send_ns);
            record.arrival_times.push(p.recv_ns);
        }
        Ok(record)
    };

    let ps_trains = (0..cfg.ps_trains)
        .map(|t| build(PS_LEVEL, t as u16, cfg.ps_train_length))
        .collect::<Result<Vec<_>, _>>()?;
    let level_trains = (0..cfg.num_levels)
        .map(|level| {
            (0..cfg.trains_per_level)
                .map(|t| build(level as i32, t as u16, k))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RecordedRound {
        train_length: k,
        ps_trains,
        level_trains,
    })
}
