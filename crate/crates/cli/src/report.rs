//! Plot-ready table of (offered rate, offered / measured) points followed by
//! the fitted line as `slope`, `intercept` and `r` rows.

use std::io::Write;

use diettopp::analysis::{level_samples, linear_regression};
use diettopp::model::topp_points;
use diettopp::{ToppPoint, ToppRegression};

use crate::samples::RecordedRound;
use crate::CliError;

pub const REPORT_HEADER: &str = "offered_bps,ratio";

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub points: Vec<ToppPoint>,
    pub regression: ToppRegression,
}

/// Aggregates the rate levels the same way the estimator does and fits them.
pub fn build_report(round: &RecordedRound) -> Result<Report, CliError> {
    let samples = level_samples(&round.level_trains)?;
    let points = topp_points(&samples).map_err(diettopp::AnalysisError::from)?;
    let regression = linear_regression(&points)?;
    Ok(Report { points, regression })
}

pub fn write_report<W: Write>(w: W, report: &Report) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER.split(','))?;
    for p in &report.points {
        out.write_record([p.x.to_string(), p.y.to_string()])?;
    }
    let reg = &report.regression;
    for (name, value) in [
        ("slope", reg.slope),
        ("intercept", reg.intercept),
        ("r", reg.correlation),
    ] {
        out.write_record([name.to_string(), value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
