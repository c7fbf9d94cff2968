//! Fairness and accuracy statistics over per-agent regrets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variance: f64,
    pub mean: f64,
    pub c95_minus_c5: f64,
    pub mse: f64,
    pub entropy: f64,
}

fn non_empty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidValue(format!("{what} of an empty vector")));
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> Result<f64> {
    non_empty(values, "mean")?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population variance (divides by `M`).
pub fn variance(values: &[f64]) -> Result<f64> {
    let mu = mean(values)?;
    Ok(values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64)
}

/// Linear-interpolation percentile at rank `(M-1) * p` of the sorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    non_empty(values, "percentile")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidValue(format!("percentile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// `percentile(hi) - percentile(lo)`; the defaults used in reports are 0.05 and 0.95.
pub fn percentile_gap(values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    Ok(percentile(values, hi)? - percentile(values, lo)?)
}

/// Entropy of `v^exponent / sum(v^exponent)`, with `0 log 0 = 0`.
///
/// An all-zero vector is treated as perfectly uniform and yields `ln M`.
pub fn norm_entropy(values: &[f64], exponent: f64) -> Result<f64> {
    non_empty(values, "entropy")?;
    if !(exponent > 0.0) {
        return Err(Error::InvalidValue(format!("entropy exponent must be positive, got {exponent}")));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidValue(format!("entropy of a negative entry {v}")));
    }
    let powered: Vec<f64> = values.iter().map(|v| v.powf(exponent)).collect();
    let total: f64 = powered.iter().sum();
    if total == 0.0 {
        return Ok((values.len() as f64).ln());
    }
    let h = -powered
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// `sum_m 1/N_m sum_i ||y - y_hat||^2`. Outer index: agent; middle: sample; inner: output.
pub fn mse(preds: &[Vec<Vec<f64>>], targets: &[Vec<Vec<f64>>]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::dim("mse agents", targets.len(), preds.len()));
    }
    let mut total = 0.0;
    for (p_agent, t_agent) in preds.iter().zip(targets) {
        if p_agent.len() != t_agent.len() {
            return Err(Error::dim("mse samples", t_agent.len(), p_agent.len()));
        }
        if p_agent.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for (p, t) in p_agent.iter().zip(t_agent) {
            if p.len() != t.len() {
                return Err(Error::dim("mse outputs", t.len(), p.len()));
            }
            sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total += sum / p_agent.len() as f64;
    }
    Ok(total)
}

/// All statistics of a regret vector; `mse` is passed through.
pub fn report(mean_regrets: &[f64], mse: f64, entropy_exponent: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        variance: variance(mean_regrets)?,
        mean: mean(mean_regrets)?,
        c95_minus_c5: percentile_gap(mean_regrets, 0.05, 0.95)?,
        mse,
        entropy: norm_entropy(mean_regrets, entropy_exponent)?,
    })
}
