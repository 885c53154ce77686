//! Subcommand implementations. Each returns the process exit code.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;

use diettopp::analysis::analyze_iteration;
use diettopp::wire::{network_transport, NetworkConfig, Receiver, ReceiverConfig};
use diettopp::{run_session, AnalysisError};

use crate::args::{AnalyzeArgs, Cli, Command, MeasureArgs, ReceiveArgs, ReportArgs, SimulateArgs};
use crate::output::{EstimateJson, EstimatorFields};
use crate::report::{build_report, write_report};
use crate::samples::{read_rows, rebuild_round, round_rows, write_samples, RecordedRound};
use crate::simulate::{simulate, write_table, Scenario};
use crate::{CliError, EXIT_CONVERGED, EXIT_SOFT_FAILURE};

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Measure(a) => cmd_measure(&a),
        Command::Receive(a) => cmd_receive(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("diettopp: {e}");
            e.exit_code()
        }
    }
}

fn converged_code(converged: bool) -> i32 {
    if converged {
        EXIT_CONVERGED
    } else {
        EXIT_SOFT_FAILURE
    }
}

/// Writes through `f` to `path`, or to stdout when no path is given.
fn with_output<F>(path: Option<&Path>, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn resolve(host: &str, port: u16) -> Result<SocketAddr, CliError> {
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| CliError::Parse(format!("cannot resolve {host}")))
}

pub fn cmd_measure(args: &MeasureArgs) -> Result<i32, CliError> {
    let cfg = args.probe.config();
    cfg.validate().map_err(AnalysisError::from)?;
    let net = NetworkConfig::new(
        resolve(&args.peer, args.control_port)?,
        resolve(&args.peer, args.probe_port)?,
    );
    let mut transport = network_transport(&net, cfg.packet_size)?;
    let session = run_session(&mut transport, &cfg)?;
    match transport.finish(session.probe_packets_sent, session.probe_bytes_sent) {
        Ok(stats) => log::info!(
            "receiver saw {} probes, {} malformed",
            stats.packets_received,
            stats.malformed
        ),
        Err(e) => log::warn!("closing the session failed: {e}"),
    }

    let round = session.best_iteration().or(session.iterations.last());
    if let (Some(path), Some(round)) = (&args.samples, round) {
        write_samples(
            BufWriter::new(File::create(path)?),
            &round_rows(round, &cfg),
        )?;
    }

    let estimate = session.estimate()?;
    let best = session
        .best_iteration()
        .expect("an estimate implies a best round");
    let fields = EstimatorFields::from_result(
        best.result.as_ref().expect("best round succeeded"),
        best.train_length,
    );
    let json = EstimateJson::new(
        fields,
        estimate.iterations_used,
        estimate.probe_packets_sent,
        estimate.probe_bytes_sent,
        estimate.wall_duration,
    );
    if let Some(path) = &args.json {
        std::fs::write(path, json.to_json_pretty())?;
    }
    println!(
        "available bandwidth {:.3} Mbit/s, capacity {:.3} Mbit/s, {:.2} s, {} bytes sent{}",
        estimate.available_bandwidth / 1e6,
        estimate.link_capacity / 1e6,
        estimate.wall_duration,
        estimate.probe_bytes_sent,
        if estimate.converged {
            ""
        } else {
            " (not converged)"
        }
    );
    Ok(converged_code(estimate.converged))
}

pub fn cmd_receive(args: &ReceiveArgs) -> Result<i32, CliError> {
    let receiver = Receiver::bind(&ReceiverConfig {
        probe_bind: SocketAddr::new(args.bind, args.probe_port),
        control_bind: SocketAddr::new(args.bind, args.control_port),
        shape_rate: args.shape_rate,
    })?;
    log::info!(
        "listening on {} (control) and {} (probes)",
        receiver.control_addr()?,
        receiver.probe_addr()?
    );
    let sessions = receiver.serve(args.once.then_some(1))?;
    for s in &sessions {
        println!(
            "session {:08x}: {} probes, {} malformed, {} reports",
            s.session_id, s.probes_received, s.malformed, s.reports_sent
        );
    }
    Ok(EXIT_CONVERGED)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let scenario = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<Scenario>(&text)
                .map_err(|e| CliError::InvalidScenario(e.to_string()))?
        }
        None => Scenario::from_args(args),
    };
    let table = simulate(&scenario)?;
    with_output(args.output.as_deref(), |w| {
        write_table(w, &table, args.format)
    })?;
    Ok(converged_code(table.all_converged()))
}

/// Reads a samples file and rebuilds its round with the given probe flags.
pub fn load_round(
    path: &Path,
    probe: &crate::args::ProbeArgs,
) -> Result<(RecordedRound, diettopp::ProbeConfig), CliError> {
    let rows = read_rows(File::open(path)?)?;
    let mut cfg = probe.config();
    let round = rebuild_round(&rows, &cfg, probe.train_length)?;
    cfg.train_length = round.train_length;
    Ok((round, cfg))
}

/// Estimate of a recorded round, computed exactly as the live session did.
pub fn analyze_round(
    round: &RecordedRound,
    cfg: &diettopp::ProbeConfig,
) -> Result<EstimateJson, CliError> {
    let result = analyze_iteration(&round.ps_trains, &round.level_trains, cfg)?;
    let packets = round.packets_sent();
    Ok(EstimateJson::new(
        EstimatorFields::from_result(&result, round.train_length),
        1,
        packets,
        packets * cfg.packet_size as u64,
        round.send_span_secs(),
    ))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32, CliError> {
    let (round, cfg) = load_round(&args.samples, &args.probe)?;
    let json = analyze_round(&round, &cfg)?;
    with_output(args.output.as_deref(), |w| {
        w.write_all(json.to_json_pretty().as_bytes())?;
        Ok(())
    })?;
    Ok(converged_code(json.estimator.converged))
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32, CliError> {
    let (round, _) = load_round(&args.samples, &args.probe)?;
    let report = build_report(&round)?;
    with_output(args.output.as_deref(), |w| write_report(w, &report))?;
    Ok(EXIT_CONVERGED)
}
