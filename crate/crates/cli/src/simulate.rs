//! Simulator experiments: one estimation per (cross rate, repetition), fanned
//! out over a thread pool, reported per run and aggregated per cross rate.

use std::io::Write;

use diettopp::sim::theoretical_available_bw;
use diettopp::{
    make_transport, run_session, BottleneckModel, EstimationError, ProbeConfig, SimMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{Format, SimulateArgs};
use crate::output::SCHEMA_VERSION;
use crate::CliError;

/// A simulation experiment. The JSON form is what `--scenario` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mode: SimMode,
    /// Cross-traffic rates to sweep, bit/s. Each overrides `model.cross_rate`.
    pub cross_rates: Vec<f64>,
    pub repetitions: usize,
    pub probe: ProbeConfig,
    /// Repetition r runs with seed `model.seed + r`.
    pub model: BottleneckModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            mode: SimMode::Packet,
            cross_rates: vec![0.0, 3.75e6, 6.26e6, 8.76e6],
            repetitions: 1,
            probe: ProbeConfig::default(),
            model: BottleneckModel::default(),
        }
    }
}

impl Scenario {
    pub fn from_args(args: &SimulateArgs) -> Scenario {
        Scenario {
            mode: args.mode.into(),
            cross_rates: args.cross_rates.clone(),
            repetitions: args.repetitions,
            probe: args.probe.config(),
            model: BottleneckModel {
                capacity: args.capacity,
                ethernet_gap: args.ethernet_gap,
                seed: args.seed,
                buffer_bytes: args.buffer_bytes,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::InvalidScenario(m));
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        if self.cross_rates.is_empty() {
            return bad("no cross rates given".into());
        }
        self.probe
            .validate()
            .map_err(|e| CliError::InvalidScenario(e.to_string()))?;
        for &x in &self.cross_rates {
            let model = BottleneckModel {
                cross_rate: x,
                ..self.model.clone()
            };
            model
                .validate()
                .map_err(|e| CliError::InvalidScenario(e.to_string()))?;
        }
        Ok(())
    }
}

/// Outcome of one estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cross_rate_bps: f64,
    pub repetition: usize,
    pub seed: u64,
    pub available_bandwidth_bps: Option<f64>,
    pub link_capacity_bps: Option<f64>,
    pub theoretical_avb_bps: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Simulated seconds.
    pub duration_s: f64,
    pub probe_packets_sent: u64,
    pub probe_bytes_sent: u64,
    /// Estimator failure, if the run produced no estimate.
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the runs of one cross rate that
/// produced an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cross_rate_bps: f64,
    pub runs: usize,
    pub theoretical_avb_bps: f64,
    pub avb_mean_bps: Option<f64>,
    pub avb_std_bps: Option<f64>,
    pub capacity_mean_bps: Option<f64>,
    pub capacity_std_bps: Option<f64>,
    pub duration_mean_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTable {
    pub diettopp_schema: u32,
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

impl SimulationTable {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }
}

fn run_one(scenario: &Scenario, cross_rate: f64, repetition: usize) -> Result<RunRow, CliError> {
    let model = BottleneckModel {
        cross_rate,
        seed: scenario.model.seed.wrapping_add(repetition as u64),
        ..scenario.model.clone()
    };
    let mut row = RunRow {
        cross_rate_bps: cross_rate,
        repetition,
        seed: model.seed,
        available_bandwidth_bps: None,
        link_capacity_bps: None,
        theoretical_avb_bps: theoretical_available_bw(&model),
        converged: false,
        iterations_used: 0,
        duration_s: 0.0,
        probe_packets_sent: 0,
        probe_bytes_sent: 0,
        error: None,
    };
    let transport = make_transport(model, scenario.mode)
        .map_err(|e| CliError::InvalidScenario(e.to_string()))?;
    let session = match run_session(transport, &scenario.probe) {
        Ok(s) => s,
        Err(EstimationError::Transport(e)) => return Err(e.into()),
        Err(EstimationError::Analysis(e)) => return Err(e.into()),
    };
    row.iterations_used = session.iterations.len();
    row.duration_s = session.wall_duration.as_secs_f64();
    row.probe_packets_sent = session.probe_packets_sent;
    row.probe_bytes_sent = session.probe_bytes_sent;
    match session.estimate() {
        Ok(e) => {
            row.available_bandwidth_bps = Some(e.available_bandwidth);
            row.link_capacity_bps = Some(e.link_capacity);
            row.converged = e.converged;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    Ok(row)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

pub fn summarize(runs: &[RunRow]) -> Vec<SummaryRow> {
    let mut rates: Vec<f64> = Vec::new();
    for r in runs {
        if !rates.contains(&r.cross_rate_bps) {
            rates.push(r.cross_rate_bps);
        }
    }
    rates
        .into_iter()
        .map(|x| {
            let ok: Vec<&RunRow> = runs
                .iter()
                .filter(|r| r.cross_rate_bps == x && r.available_bandwidth_bps.is_some())
                .collect();
            let avb: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.available_bandwidth_bps)
                .collect();
            let cap: Vec<f64> = ok.iter().filter_map(|r| r.link_capacity_bps).collect();
            let dur: Vec<f64> = ok.iter().map(|r| r.duration_s).collect();
            let (avb_mean, avb_std) = mean_std(&avb);
            let (cap_mean, cap_std) = mean_std(&cap);
            SummaryRow {
                cross_rate_bps: x,
                runs: ok.len(),
                theoretical_avb_bps: runs
                    .iter()
                    .find(|r| r.cross_rate_bps == x)
                    .map_or(f64::NAN, |r| r.theoretical_avb_bps),
                avb_mean_bps: avb_mean,
                avb_std_bps: avb_std,
                capacity_mean_bps: cap_mean,
                capacity_std_bps: cap_std,
                duration_mean_s: mean_std(&dur).0,
            }
        })
        .collect()
}

/// Runs every (cross rate, repetition) pair. Rows come back ordered by cross
/// rate, then repetition, however the pool scheduled them.
pub fn simulate(scenario: &Scenario) -> Result<SimulationTable, CliError> {
    scenario.validate()?;
    let jobs: Vec<(f64, usize)> = scenario
        .cross_rates
        .iter()
        .flat_map(|&x| (0..scenario.repetitions).map(move |r| (x, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(x, r)| run_one(scenario, x, r))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&runs);
    Ok(SimulationTable {
        diettopp_schema: SCHEMA_VERSION,
        runs,
        summary,
    })
}

/// One CSV line; `kind` is `run`, `mean` or `std`.
#[derive(Serialize)]
struct CsvLine<'a> {
    kind: &'a str,
    cross_rate_bps: f64,
    repetition: Option<usize>,
    seed: Option<u64>,
    available_bandwidth_bps: Option<f64>,
    link_capacity_bps: Option<f64>,
    theoretical_avb_bps: f64,
    converged: Option<bool>,
    iterations_used: Option<usize>,
    duration_s: Option<f64>,
    probe_packets_sent: Option<u64>,
    probe_bytes_sent: Option<u64>,
    error: Option<&'a str>,
}

pub fn write_table<W: Write>(
    mut w: W,
    table: &SimulationTable,
    format: Format,
) -> Result<(), CliError> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, table)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut out = csv::Writer::from_writer(w);
            for r in &table.runs {
                out.serialize(CsvLine {
                    kind: "run",
                    cross_rate_bps: r.cross_rate_bps,
                    repetition: Some(r.repetition),
                    seed: Some(r.seed),
                    available_bandwidth_bps: r.available_bandwidth_bps,
                    link_capacity_bps: r.link_capacity_bps,
                    theoretical_avb_bps: r.theoretical_avb_bps,
                    converged: Some(r.converged),
                    iterations_used: Some(r.iterations_used),
                    duration_s: Some(r.duration_s),
                    probe_packets_sent: Some(r.probe_packets_sent),
                    probe_bytes_sent: Some(r.probe_bytes_sent),
                    error: r.error.as_deref(),
                })?;
            }
            for s in &table.summary {
                for (kind, avb, cap, dur) in [
                    (
                        "mean",
                        s.avb_mean_bps,
                        s.capacity_mean_bps,
                        s.duration_mean_s,
                    ),
                    ("std", s.avb_std_bps, s.capacity_std_bps, None),
                ] {
                    out.serialize(CsvLine {
                        kind,
                        cross_rate_bps: s.cross_rate_bps,
                        repetition: None,
                        seed: None,
                        available_bandwidth_bps: avb,
                        link_capacity_bps: cap,
                        theoretical_avb_bps: s.theoretical_avb_bps,
                        converged: None,
                        iterations_used: None,
                        duration_s: dur,
                        probe_packets_sent: None,
                        probe_bytes_sent: None,
                        error: None,
                    })?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_uses_defaults_for_missing_fields() {
        let s: Scenario =
            serde_json::from_str(r#"{"mode": "fluid", "cross_rates": [3.75e6]}"#).unwrap();
        assert_eq!(s.mode, SimMode::Fluid);
        assert_eq!(s.repetitions, 1);
        assert_eq!(s.probe, ProbeConfig::default());
        assert!(serde_json::from_str::<Scenario>(r#"{"repetition": 2}"#).is_err());
    }

    #[test]
    fn invalid_scenarios() {
        let s = Scenario {
            repetitions: 0,
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(CliError::InvalidScenario(_))));
        let s = Scenario {
            cross_rates: vec![10e6],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn summary_uses_sample_std() {
        let mk = |x: f64, avb: f64| RunRow {
            cross_rate_bps: x,
            repetition: 0,
            seed: 0,
            available_bandwidth_bps: Some(avb),
            link_capacity_bps: Some(10e6),
            theoretical_avb_bps: 10e6 - x,
            converged: true,
            iterations_used: 1,
            duration_s: 1.0,
            probe_packets_sent: 1920,
            probe_bytes_sent: 2_880_000,
            error: None,
        };
        let runs = vec![mk(1e6, 8e6), mk(1e6, 10e6), mk(2e6, 7e6)];
        let s = summarize(&runs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].runs, 2);
        assert_eq!(s[0].avb_mean_bps, Some(9e6));
        assert!((s[0].avb_std_bps.unwrap() - 2f64.sqrt() * 1e6).abs() < 1e-6);
        assert_eq!(s[0].capacity_std_bps, Some(0.0));
        assert_eq!(s[1].avb_std_bps, None);
    }

    #[test]
    fn fluid_rows_are_exact_and_ordered() {
        let table = simulate(&Scenario {
            mode: SimMode::Fluid,
            repetitions: 2,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(table.runs.len(), 8);
        for (i, r) in table.runs.iter().enumerate() {
            assert_eq!(r.repetition, i % 2);
            let avb = r.available_bandwidth_bps.unwrap();
            assert!((avb - r.theoretical_avb_bps).abs() / r.theoretical_avb_bps < 1e-6);
        }
        let mut csv = Vec::new();
        write_table(&mut csv, &table, Format::Csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 8 + 8);
        assert!(text.starts_with("kind,cross_rate_bps,"));
    }
}
