//! Estimate JSON: a flat object, rates in bit/s, durations in seconds.

use diettopp::IterationResult;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Fields computed by the estimator from the recorded samples alone. A replay
/// of a run's samples reproduces these byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFields {
    pub available_bandwidth_bps: f64,
    pub link_capacity_bps: f64,
    pub proportional_share_bps: f64,
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
    pub residual_std: f64,
    pub levels_used: usize,
    pub train_length: usize,
    pub converged: bool,
}

impl EstimatorFields {
    pub fn from_result(r: &IterationResult, train_length: usize) -> Self {
        EstimatorFields {
            available_bandwidth_bps: r.available_bandwidth,
            link_capacity_bps: r.link_capacity,
            proportional_share_bps: r.ps,
            slope: r.regression.slope,
            intercept: r.regression.intercept,
            correlation: r.regression.correlation,
            residual_std: r.regression.residual_std,
            levels_used: r.samples.len(),
            train_length,
            converged: r.convergence.converged,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub diettopp_schema: u32,
    #[serde(flatten)]
    pub estimator: EstimatorFields,
    pub iterations_used: usize,
    pub probe_packets_sent: u64,
    pub probe_bytes_sent: u64,
    pub duration_s: f64,
}

impl EstimateJson {
    pub fn new(
        estimator: EstimatorFields,
        iterations_used: usize,
        packets: u64,
        bytes: u64,
        duration_s: f64,
    ) -> Self {
        EstimateJson {
            diettopp_schema: SCHEMA_VERSION,
            estimator,
            iterations_used,
            probe_packets_sent: packets,
            probe_bytes_sent: bytes,
            duration_s,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain numbers serialize");
        s.push('\n');
        s
    }
}
