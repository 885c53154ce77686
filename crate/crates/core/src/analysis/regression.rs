use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::ToppPoint;

/// Least-squares line `y = slope * x + intercept` through TOPP points.
///
/// With `x` in bits/s the slope is in 1/(bits/s); on the congested segment it
/// is the inverse of the bottleneck capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToppRegression {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of x and y. Zero when y has no variance.
    pub correlation: f64,
    /// Sample standard deviation (n - 1) of the fit residuals.
    pub residual_std: f64,
    pub n_points: usize,
}

pub fn linear_regression(points: &[ToppPoint]) -> Result<ToppRegression, AnalysisError> {
    let n = points.len();
    if n < 2 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / nf;

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p.x - mean_x;
        let dy = p.y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(AnalysisError::DegenerateX);
    }

    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let correlation = if syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    };
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.y - (slope * p.x + intercept);
            e * e
        })
        .sum();
    let residual_std = (ss_res / (nf - 1.0)).sqrt();

    Ok(ToppRegression {
        slope,
        intercept,
        correlation,
        residual_std,
        n_points: n,
    })
}
