use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diettopp::wire::{DEFAULT_CONTROL_PORT, DEFAULT_PROBE_PORT};
use diettopp::{ProbeConfig, SimMode};

#[derive(Debug, Parser)]
#[command(
    name = "diettopp",
    version,
    about = "Available bandwidth and capacity estimation with stepped-rate probe trains"
)]
pub struct Cli {
    /// Debug logging (otherwise taken from DIETTOPP_LOG).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the path to a running receiver.
    Measure(MeasureArgs),
    /// Run the receiver daemon.
    Receive(ReceiveArgs),
    /// Run estimations against the simulated bottleneck.
    Simulate(SimulateArgs),
    /// Recompute an estimate from a samples CSV.
    Analyze(AnalyzeArgs),
    /// Emit the (offered rate, ratio) points and the fitted line as CSV.
    Report(ReportArgs),
}

/// Probe parameters. Unset flags keep their defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct ProbeArgs {
    /// Packets per rate-probe train [default: 16].
    #[arg(long)]
    pub train_length: Option<usize>,
    /// Trains per rate level [default: 5].
    #[arg(long)]
    pub trains_per_level: Option<usize>,
    /// Number of rate levels [default: 15].
    #[arg(long)]
    pub levels: Option<usize>,
    /// Top of the rate schedule as a multiple of the proportional share [default: 1.5].
    #[arg(long)]
    pub z: Option<f64>,
    /// IP datagram size in bytes [default: 1500].
    #[arg(long)]
    pub packet_size: Option<u32>,
    /// Sender link rate in bit/s [default: 100e6].
    #[arg(long)]
    pub max_rate: Option<f64>,
    /// Minimum correlation for convergence [default: 0.90].
    #[arg(long)]
    pub corr_threshold: Option<f64>,
    /// Maximum per-level coefficient of variation for convergence [default: 0.10].
    #[arg(long)]
    pub cv_threshold: Option<f64>,
    /// Rounds before giving up [default: 3].
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

impl ProbeArgs {
    pub fn apply(&self, mut cfg: ProbeConfig) -> ProbeConfig {
        if let Some(v) = self.train_length {
            cfg.train_length = v;
        }
        if let Some(v) = self.trains_per_level {
            cfg.trains_per_level = v;
        }
        if let Some(v) = self.levels {
            cfg.num_levels = v;
        }
        if let Some(v) = self.z {
            cfg.z = v;
        }
        if let Some(v) = self.packet_size {
            cfg.packet_size = v;
        }
        if let Some(v) = self.max_rate {
            cfg.max_send_rate = v;
        }
        if let Some(v) = self.corr_threshold {
            cfg.corr_threshold = v;
        }
        if let Some(v) = self.cv_threshold {
            cfg.level_cv_threshold = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        cfg
    }

    pub fn config(&self) -> ProbeConfig {
        self.apply(ProbeConfig::default())
    }
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Receiver host name or address.
    #[arg(long)]
    pub peer: String,
    #[arg(long, default_value_t = DEFAULT_PROBE_PORT)]
    pub probe_port: u16,
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    pub control_port: u16,
    /// Write the estimate as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the raw per-packet samples as CSV here.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Debug, Args)]
pub struct ReceiveArgs {
    #[arg(long, default_value = "0.0.0.0")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PROBE_PORT)]
    pub probe_port: u16,
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    pub control_port: u16,
    /// Emulate a FIFO bottleneck of this rate (bit/s) on the arrivals.
    #[arg(long)]
    pub shape_rate: Option<f64>,
    /// Exit after one session.
    #[arg(long)]
    pub once: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fluid,
    Packet,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fluid => SimMode::Fluid,
            ModeArg::Packet => SimMode::Packet,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file; replaces every scenario flag below.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Packet)]
    pub mode: ModeArg,
    /// Bottleneck capacity in bit/s.
    #[arg(long, default_value_t = 10e6)]
    pub capacity: f64,
    /// Comma-separated cross-traffic rates in bit/s.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 3.75e6, 6.26e6, 8.76e6])]
    pub cross_rates: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    /// Seed of the first repetition; repetition r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Count the 25-byte inter-frame gap at the bottleneck.
    #[arg(long)]
    pub ethernet_gap: bool,
    /// Bottleneck queue limit in bytes (unbounded if unset).
    #[arg(long)]
    pub buffer_bytes: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file (stdout if unset).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Samples CSV written by `measure`.
    pub samples: PathBuf,
    /// Output file for the estimate JSON (stdout if unset).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Probe parameters of the recorded run. The train length is inferred
    /// from the samples unless given.
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Samples CSV written by `measure`.
    pub samples: PathBuf,
    /// Output file (stdout if unset).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}
