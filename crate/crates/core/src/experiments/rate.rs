//! Log-log least-squares rate fits.

use serde::{Deserialize, Serialize};

use super::sweep::SweepResult;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of `(n, value)` pairs that entered the fit.
    pub points: usize,
}

/// Ordinary least squares of `ln value` on `ln n` over the pairs where both
/// are finite and positive. Needs at least three distinct `n`.
pub fn fit_power_law(ns: &[f64], values: &[f64]) -> Result<RateFit> {
    if ns.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "sample sizes vs values",
            expected: ns.len(),
            got: values.len(),
        });
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(values)
        .filter(|(&n, &v)| n > 0.0 && v > 0.0 && n.is_finite() && v.is_finite())
        .map(|(&n, &v)| (n.ln(), v.ln()))
        .collect();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 distinct sample sizes with positive values, got {}",
            distinct.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("degenerate design in rate fit"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: pts.len(),
    })
}

/// Fit of the per-`n` mean loss of a sweep.
pub fn fit_rate(sweep: &SweepResult) -> Result<RateFit> {
    let ns: Vec<f64> = sweep.summary.iter().map(|s| s.n as f64).collect();
    let means: Vec<f64> = sweep.summary.iter().map(|s| s.mean_loss).collect();
    fit_power_law(&ns, &means)
}

/// `rate.json`: the fit plus the bookkeeping needed to read it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub model: String,
    pub k: usize,
    pub loss_name: String,
    pub rows: usize,
    pub excluded_unsupported_order: usize,
    pub excluded_degenerate_fit: usize,
    pub nonconverged: usize,
}

impl RateReport {
    pub fn new(sweep: &SweepResult, fit: &RateFit) -> Self {
        Self {
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            points: fit.points,
            model: sweep.config.model.label(),
            k: sweep.config.k,
            loss_name: sweep.loss_name().to_string(),
            rows: sweep.rows.len(),
            excluded_unsupported_order: sweep.excluded_unsupported,
            excluded_degenerate_fit: sweep.excluded_degenerate,
            nonconverged: sweep.nonconverged,
        }
    }
}
