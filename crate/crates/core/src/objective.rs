//! The equitable objective `sum_m (mean regret_m)^(q+1)`, its blend with the
//! prediction MSE, and the two gradient routes used by the trainers.

use serde::{Deserialize, Serialize};

use crate::agents::REGRET_TOLERANCE;
use crate::error::{Error, Result};
use crate::predictor::{vjp_accumulate, FeatureWindow, ParamVector};

/// Loss values for one evaluation of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub mean_regrets: Vec<f64>,
    pub q: f64,
    pub beta: f64,
    pub equitable: f64,
    pub mse: f64,
    pub combined: f64,
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::InvalidValue(format!("q must be a finite nonnegative number, got {q}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidValue(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

fn clamped(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(m, &r)| {
            if !r.is_finite() || r < -REGRET_TOLERANCE {
                Err(Error::InvalidValue(format!("agent {m}: mean regret {r} is negative or not finite")))
            } else {
                Ok(r.max(0.0))
            }
        })
        .collect()
}

/// `sum_m r_m^(q+1)` over per-agent mean regrets.
pub fn equitable_loss(mean_regrets: &[f64], q: f64) -> Result<f64> {
    check_q(q)?;
    if mean_regrets.is_empty() {
        return Err(Error::InvalidValue("equitable loss needs at least one agent".into()));
    }
    Ok(clamped(mean_regrets)?.iter().map(|r| r.powf(q + 1.0)).sum())
}

/// `(1 - beta) * equitable + beta * mse`, where `mse` sums the per-agent mean squared errors.
pub fn combined_loss(mean_regrets: &[f64], agent_mse: &[f64], q: f64, beta: f64) -> Result<BatchLoss> {
    check_beta(beta)?;
    if agent_mse.len() != mean_regrets.len() {
        return Err(Error::dim("per-agent mse", mean_regrets.len(), agent_mse.len()));
    }
    if agent_mse.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidValue(format!("per-agent mse must be nonnegative: {agent_mse:?}")));
    }
    let equitable = equitable_loss(mean_regrets, q)?;
    let mse: f64 = agent_mse.iter().sum();
    Ok(BatchLoss {
        mean_regrets: clamped(mean_regrets)?,
        q,
        beta,
        equitable,
        mse,
        combined: (1.0 - beta) * equitable + beta * mse,
    })
}

/// `(sum_m r_m^(q+1))^(1/(q+1))`: the `l_{q+1}` norm of the regret vector.
pub fn dual_norm_value(mean_regrets: &[f64], q: f64) -> Result<f64> {
    Ok(equitable_loss(mean_regrets, q)?.powf(1.0 / (q + 1.0)))
}

/// The maximizer `v` of `sum_m v_m r_m` over the unit `l_p` ball, `1/p + 1/(q+1) = 1`.
///
/// `v_m` is proportional to `r_m^q`, rescaled to unit `p`-norm; for `q = 0` the
/// ball is the `l_inf` ball and `v = 1`.
pub fn holder_maximizer(mean_regrets: &[f64], q: f64) -> Result<Vec<f64>> {
    check_q(q)?;
    let r = clamped(mean_regrets)?;
    if q == 0.0 {
        return Ok(vec![1.0; r.len()]);
    }
    let p = (q + 1.0) / q;
    let raw: Vec<f64> = r.iter().map(|x| x.powf(q)).collect();
    let norm = raw.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p);
    if norm == 0.0 {
        return Ok(raw);
    }
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

/// Per-sample quantities needed for the exact (chain-rule) gradient.
#[derive(Debug, Clone)]
pub struct ChainRecord<'a> {
    pub agent: usize,
    pub window: &'a FeatureWindow,
    /// Regret of this sample.
    pub regret: f64,
    /// `dC/d y_hat`: the product of `dC/d a_hat` and `d a_hat / d y_hat`.
    pub regret_grad: Vec<f64>,
    /// `y_hat - y`.
    pub residual: Vec<f64>,
}

/// Per-agent sample counts and mean regrets of a record set.
pub fn agent_means(records: impl Iterator<Item = (usize, f64)>, num_agents: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut counts = vec![0usize; num_agents];
    let mut sums = vec![0.0; num_agents];
    for (agent, value) in records {
        if agent >= num_agents {
            return Err(Error::dim("agent index", num_agents, agent + 1));
        }
        counts[agent] += 1;
        sums[agent] += value;
    }
    if let Some(m) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidValue(format!("agent {m} has no samples in the batch")));
    }
    let means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok((counts, means))
}

/// Exact gradient of `(1-beta) * L^q + beta * L_f` over a set of records.
///
/// Each sample contributes
/// `(1-beta) * (q+1) * Cbar_m^q / N_m * dC/dy_hat + beta * 2/N_m * (y_hat - y)`
/// as the cotangent of one vector-Jacobian product through the predictor.
pub fn chain_grad(
    params: &ParamVector,
    records: &[ChainRecord<'_>],
    num_agents: usize,
    q: f64,
    beta: f64,
) -> Result<ParamVector> {
    check_q(q)?;
    check_beta(beta)?;
    let (counts, means) = agent_means(records.iter().map(|r| (r.agent, r.regret)), num_agents)?;
    let means = clamped(&means)?;
    let out_dim = params.layout().output_dim();
    let mut grad = params.zeros_like();
    let mut cot = vec![0.0; out_dim];
    for rec in records {
        if rec.regret_grad.len() != out_dim || rec.residual.len() != out_dim {
            return Err(Error::dim("chain record", out_dim, rec.regret_grad.len().min(rec.residual.len())));
        }
        let n = counts[rec.agent] as f64;
        let weight = (1.0 - beta) * (q + 1.0) * means[rec.agent].powf(q) / n;
        for (j, c) in cot.iter_mut().enumerate() {
            *c = weight * rec.regret_grad[j] + beta * 2.0 / n * rec.residual[j];
        }
        if cot.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "agent {}: non-finite downstream gradient factor",
                rec.agent
            )));
        }
        if cot.iter().all(|&c| c == 0.0) {
            continue;
        }
        vjp_accumulate(params, rec.window, &cot, 1.0, &mut grad)?;
    }
    Ok(grad)
}

/// How the MSE part of the combined objective enters the policy-gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MseRoute {
    /// Differentiate the MSE of the mean prediction directly.
    #[default]
    Pathwise,
    /// Multiply the score sum by the sampled-prediction MSE together with the regret term.
    Score,
}

/// Per-sample quantities for one policy-gradient batch.
#[derive(Debug, Clone)]
pub struct PgRecord {
    pub agent: usize,
    /// `grad_theta log sigma_theta(y_hat | x)` at the sampled `y_hat`.
    pub score: ParamVector,
    /// Regret of the sampled prediction.
    pub regret: f64,
    /// `||y - y_hat||^2`: of the sample on the score route, of the mean on the pathwise route.
    pub sq_error: f64,
    /// `grad_theta ||y - f(x; theta)||^2`, required on the pathwise route when `beta > 0`.
    pub sq_error_grad: Option<ParamVector>,
    /// Per-record baseline; overrides [`PgOptions::baseline`] for this record's score.
    /// Must not depend on this record's own policy sample.
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgOptions {
    pub q: f64,
    pub beta: f64,
    pub mse_route: MseRoute,
    /// Subtracted from the batch loss before it multiplies the score sum.
    pub baseline: Option<f64>,
}

/// Result of [`pg_batch_grad`]: the gradient and the loss that multiplied the scores.
#[derive(Debug, Clone)]
pub struct PgBatch {
    pub grad: ParamVector,
    pub loss: BatchLoss,
    /// The factor the score sum was multiplied with.
    pub score_weight: f64,
}

/// Score-function gradient of the batch objective:
/// `[sum_{m,i} score_{m,i}] * [(1-beta) sum_m (mean regret_m)^(q+1) + beta sum_m mean sq_error_m]`.
///
/// On the pathwise route the `beta` term is instead differentiated directly,
/// `beta * sum_m 1/B_m sum_i sq_error_grad_{m,i}`.
pub fn pg_batch_grad(records: &[PgRecord], num_agents: usize, opts: &PgOptions) -> Result<PgBatch> {
    check_q(opts.q)?;
    check_beta(opts.beta)?;
    if records.is_empty() {
        return Err(Error::InvalidValue("policy-gradient batch is empty".into()));
    }
    let (counts, mean_regrets) = agent_means(records.iter().map(|r| (r.agent, r.regret)), num_agents)?;
    let (_, agent_mse) = agent_means(records.iter().map(|r| (r.agent, r.sq_error)), num_agents)?;
    let loss = combined_loss(&mean_regrets, &agent_mse, opts.q, opts.beta)?;

    let mut score_weight = match opts.mse_route {
        MseRoute::Score => loss.combined,
        MseRoute::Pathwise => (1.0 - opts.beta) * loss.equitable,
    };
    if let Some(b) = opts.baseline {
        score_weight -= b;
    }

    let mut grad = records[0].score.zeros_like();
    for rec in records {
        let w = match rec.baseline {
            Some(b) => score_weight + opts.baseline.unwrap_or(0.0) - b,
            None => score_weight,
        };
        if w != 0.0 {
            grad.axpy(w, &rec.score);
        }
    }
    if opts.mse_route == MseRoute::Pathwise && opts.beta > 0.0 {
        for rec in records {
            let g = rec.sq_error_grad.as_ref().ok_or_else(|| {
                Error::Config("pathwise MSE route needs per-sample squared-error gradients".into())
            })?;
            grad.axpy(opts.beta / counts[rec.agent] as f64, g);
        }
    }
    Ok(PgBatch {
        grad,
        loss,
        score_weight,
    })
}
