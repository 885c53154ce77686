//! The estimator: proportional share, rate schedule, per-level aggregation,
//! regression over (offered, offered / measured) points and extraction of
//! capacity and available bandwidth.
//!
//! On a path with a single congested link of capacity `l` carrying cross
//! traffic `x`, a train offered at `o > l - x` leaves the link at
//! `m = o * l / (o + x)`, so `o / m = o / l + x / l`. The fitted slope is
//! `1 / l` and the line meets `y = 1` at `o = l - x`.

mod regression;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{measured_rate, ConfigError, LevelSample, ProbeConfig, RateError, TrainRecord};

pub use regression::{linear_regression, ToppRegression};
pub use session::{
    analyze_iteration, level_samples, run_estimation, run_session, Estimate, EstimationError,
    IterationRecord, IterationResult, Session,
};

/// Fewest surviving rate levels a regression is trusted on.
pub const MIN_LEVELS: usize = 5;

/// Smallest rise of the fitted line, in units of y, across a span of one
/// proportional share. Flatter lines mean the schedule never crossed the
/// available bandwidth.
pub const MIN_SLOPE_RISE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no complete proportional-share trains")]
    NoCompleteTrains,
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error("level {level} discarded: {complete} of {total} trains complete")]
    LevelDiscarded {
        level: u16,
        complete: usize,
        total: usize,
    },
    #[error("regression needs at least two distinct offered rates")]
    DegenerateX,
    #[error("regression needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("no congestion detected (slope {slope:e} per bit/s)")]
    NoCongestionDetected { slope: f64 },
    #[error("only {surviving} usable rate levels, need {required}")]
    TooFewLevels { surviving: usize, required: usize },
    #[error(transparent)]
    Rate(#[from] RateError),
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean measured rate of the complete trains sent at the maximum rate. This
/// is the asymptotic dispersion rate, `o_max * l / (x + o_max)`, which is at
/// least the available bandwidth.
pub fn estimate_ps(ps_trains: &[TrainRecord]) -> Result<f64, AnalysisError> {
    let rates = ps_trains
        .iter()
        .filter(|t| t.is_complete())
        .map(measured_rate)
        .collect::<Result<Vec<_>, _>>()?;
    if rates.is_empty() {
        return Err(AnalysisError::NoCompleteTrains);
    }
    Ok(mean(&rates))
}

/// Offered rates for the rate-probe phase: `num_levels` evenly spaced rates
/// from `ps` to `z * ps` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub ps: f64,
    pub rates: Vec<f64>,
    pub step: f64,
}

pub fn build_schedule(ps: f64, cfg: &ProbeConfig) -> Result<RateSchedule, AnalysisError> {
    if cfg.num_levels < 2 {
        return Err(ConfigError(format!("num_levels {} < 2", cfg.num_levels)).into());
    }
    if !(cfg.z > 1.0 && cfg.z.is_finite()) {
        return Err(ConfigError(format!("z must be > 1, got {}", cfg.z)).into());
    }
    if !(ps > 0.0 && ps.is_finite()) {
        return Err(RateError::NonPositiveRate(ps).into());
    }
    let last = cfg.z * ps;
    let step = (last - ps) / (cfg.num_levels - 1) as f64;
    let mut rates: Vec<f64> = (0..cfg.num_levels).map(|i| ps + i as f64 * step).collect();
    rates[cfg.num_levels - 1] = last;
    Ok(RateSchedule { ps, rates, step })
}

/// Collapses the trains of one rate level into a [`LevelSample`]. Lossy
/// trains are left out; the level is discarded when fewer than half of its
/// trains are complete.
pub fn aggregate_level(trains: &[TrainRecord], offered: f64) -> Result<LevelSample, AnalysisError> {
    let level = trains.first().map_or(0, |t| t.level_index);
    let complete: Vec<&TrainRecord> = trains.iter().filter(|t| t.is_complete()).collect();
    if complete.is_empty() || complete.len() * 2 < trains.len() {
        return Err(AnalysisError::LevelDiscarded {
            level,
            complete: complete.len(),
            total: trains.len(),
        });
    }
    let rates = complete
        .iter()
        .map(|t| measured_rate(t))
        .collect::<Result<Vec<_>, _>>()?;
    let m = mean(&rates);
    let cv = if rates.len() > 1 {
        let var = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rates.len() - 1) as f64;
        var.sqrt() / m
    } else {
        0.0
    };
    Ok(LevelSample {
        level_index: level,
        offered_rate: offered,
        measured_rate: m,
        per_train_rates: rates,
        cv,
    })
}

/// Capacity `1 / slope` and available bandwidth `(1 - intercept) / slope`.
///
/// `reference_rate` is the proportional share the schedule started from; a
/// line rising less than [`MIN_SLOPE_RISE`] over that span is treated as flat.
/// A non-positive intercept clamps the available bandwidth to the capacity and
/// an intercept of one or more clamps it to zero.
pub fn extract_estimate(
    reg: &ToppRegression,
    reference_rate: f64,
) -> Result<(f64, f64), AnalysisError> {
    if !(reg.slope > 0.0) || reg.slope * reference_rate < MIN_SLOPE_RISE {
        return Err(AnalysisError::NoCongestionDetected { slope: reg.slope });
    }
    let capacity = 1.0 / reg.slope;
    let available = if reg.intercept <= 0.0 {
        capacity
    } else if reg.intercept >= 1.0 {
        log::warn!(
            "intercept {} >= 1, clamping available bandwidth to zero",
            reg.intercept
        );
        0.0
    } else {
        (1.0 - reg.intercept) / reg.slope
    };
    Ok((capacity, available))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub correlation_ok: bool,
    pub level_cv_ok: bool,
    pub converged: bool,
}

pub fn check_convergence(
    reg: &ToppRegression,
    samples: &[LevelSample],
    cfg: &ProbeConfig,
) -> Result<ConvergenceReport, AnalysisError> {
    if samples.len() < MIN_LEVELS {
        return Err(AnalysisError::TooFewLevels {
            surviving: samples.len(),
            required: MIN_LEVELS,
        });
    }
    let correlation_ok = reg.correlation >= cfg.corr_threshold;
    let worst_cv = samples.iter().map(|s| s.cv).fold(0.0, f64::max);
    let level_cv_ok = worst_cv <= cfg.level_cv_threshold;
    Ok(ConvergenceReport {
        correlation_ok,
        level_cv_ok,
        converged: correlation_ok && level_cv_ok,
    })
}
