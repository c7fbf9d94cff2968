//! Downstream agents: their decision policies, exact optimal actions and the
//! per-sample decision regret.
//!
//! Two families are supported:
//!
//! * data centers choosing a compute allocation `p > w` that trades carbon
//!   (`p * c`) against queueing latency (`lambda * w / (p - w)`);
//! * charging agents (electric vehicles, or any device with a uniform charging
//!   rate) picking `k` binary slots out of a horizon of `T` to minimize
//!   `sum_t rate * x_t * E_t`.
//!
//! Agents act on the public model's forecast `y_hat`; regret is the cost of
//! that action under the realized `y` minus the cost of the best action
//! computed from `y` itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to a carbon forecast before the data-center policy uses it.
pub const CARBON_FLOOR: f64 = 1e-6;
/// Regrets down to this negative value are treated as rounding noise and clamped.
pub const REGRET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataCenterContext {
    pub workload: f64,
    pub lambda: f64,
}

impl DataCenterContext {
    pub fn new(workload: f64, lambda: f64) -> Result<Self> {
        let ctx = Self { workload, lambda };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.workload > 0.0 && self.workload.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "workload must be positive, got {}",
                self.workload
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// A charging job: bring the charge from `initial` to at least `demand` in
/// `horizon` slots at a uniform `rate` per active slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingContext {
    pub initial: f64,
    pub demand: f64,
    pub rate: f64,
    pub horizon: usize,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub eta: f64,
}

impl ChargingContext {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.initial, self.demand, self.rate, self.gamma, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidValue(format!("non-finite charging context {self:?}")));
        }
        if self.initial < 0.0 || self.gamma < 0.0 || self.eta < 0.0 {
            return Err(Error::InvalidValue(format!(
                "initial charge and weights must be nonnegative: {self:?}"
            )));
        }
        if self.demand <= self.initial {
            return Err(Error::InvalidValue(format!(
                "demand {} must exceed initial charge {}",
                self.demand, self.initial
            )));
        }
        if self.rate <= 0.0 {
            return Err(Error::InvalidValue(format!("rate must be positive, got {}", self.rate)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidValue("horizon must be at least 1".into()));
        }
        let k = self.slots_needed();
        if k > self.horizon {
            return Err(Error::Infeasible(format!(
                "{k} slots needed but the horizon has {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Smallest number of active slots whose energy covers `demand - initial`.
    pub fn slots_needed(&self) -> usize {
        let exact = (self.demand - self.initial) / self.rate;
        // Absorb representation error so that e.g. 0.3 / 0.1 counts as 3 slots.
        (exact - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Allocation(f64),
    Schedule(Vec<u8>),
}

impl Action {
    pub fn allocation(&self) -> Option<f64> {
        match self {
            Action::Allocation(p) => Some(*p),
            Action::Schedule(_) => None,
        }
    }

    pub fn schedule(&self) -> Option<&[u8]> {
        match self {
            Action::Schedule(x) => Some(x),
            Action::Allocation(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub agent: usize,
    pub value: f64,
}

/// Static description of an agent; the data-center workload arrives per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum AgentKind {
    #[serde(rename = "datacenter")]
    DataCenter { lambda: f64 },
    Charging(ChargingContext),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn is_differentiable(&self) -> bool {
        matches!(self.kind, AgentKind::DataCenter { .. })
    }

    /// The full decision context for one sample. `workload` is required for data centers.
    pub fn context(&self, workload: Option<f64>) -> Result<AgentContext> {
        match &self.kind {
            AgentKind::DataCenter { lambda } => {
                let w = workload.ok_or_else(|| {
                    Error::InvalidValue(format!("data-center agent {} needs a workload", self.id))
                })?;
                Ok(AgentContext::DataCenter(DataCenterContext::new(w, *lambda)?))
            }
            AgentKind::Charging(ctx) => {
                ctx.validate()?;
                Ok(AgentContext::Charging(*ctx))
            }
        }
    }
}

/// Per-sample decision context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentContext {
    DataCenter(DataCenterContext),
    Charging(ChargingContext),
}

/// Carbon-weighted allocation cost plus latency penalty.
pub fn dc_cost(ctx: &DataCenterContext, p: f64, c: f64) -> Result<f64> {
    if !(p > ctx.workload) {
        return Err(Error::Infeasible(format!(
            "allocation {p} must exceed workload {}",
            ctx.workload
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidValue(format!("carbon intensity must be positive, got {c}")));
    }
    Ok(p * c + ctx.lambda * ctx.workload / (p - ctx.workload))
}

/// The allocation a data center picks when it believes the carbon intensity is `c_hat`.
pub fn dc_act(ctx: &DataCenterContext, c_hat: f64) -> Action {
    let c = c_hat.max(CARBON_FLOOR);
    Action::Allocation(ctx.workload + (ctx.lambda * ctx.workload / c).sqrt())
}

/// Derivative of the [`dc_act`] allocation with respect to `c_hat`.
pub fn dc_act_jacobian(ctx: &DataCenterContext, c_hat: f64) -> f64 {
    if c_hat <= CARBON_FLOOR {
        return 0.0;
    }
    -0.5 * (ctx.lambda * ctx.workload).sqrt() * c_hat.powf(-1.5)
}

/// Cost-minimizing allocation under the true intensity `c`, and its cost.
pub fn dc_optimal(ctx: &DataCenterContext, c: f64) -> Result<(Action, f64)> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidValue(format!("carbon intensity must be positive, got {c}")));
    }
    let lw = ctx.lambda * ctx.workload;
    let p = ctx.workload + (lw / c).sqrt();
    Ok((Action::Allocation(p), ctx.workload * c + 2.0 * (lw * c).sqrt()))
}

/// Energy-weighted schedule cost `sum_t rate * x_t * E_t`.
pub fn ev_cost(ctx: &ChargingContext, x: &[u8], signal: &[f64]) -> Result<f64> {
    if x.len() != ctx.horizon {
        return Err(Error::dim("charging schedule", ctx.horizon, x.len()));
    }
    if signal.len() != ctx.horizon {
        return Err(Error::dim("charging signal", ctx.horizon, signal.len()));
    }
    Ok(x.iter()
        .zip(signal)
        .filter(|(&on, _)| on != 0)
        .map(|(_, e)| ctx.rate * e)
        .sum())
}

/// Charge in the `k` slots with the lowest forecast, earliest slot first on ties.
pub fn ev_act(ctx: &ChargingContext, forecast: &[f64]) -> Result<Action> {
    ctx.validate()?;
    if forecast.len() != ctx.horizon {
        return Err(Error::dim("charging forecast", ctx.horizon, forecast.len()));
    }
    let k = ctx.slots_needed();
    let mut order: Vec<usize> = (0..forecast.len()).collect();
    // Stable sort keeps the earlier index first among equal values.
    order.sort_by(|&a, &b| forecast[a].total_cmp(&forecast[b]));
    let mut schedule = vec![0u8; ctx.horizon];
    for &slot in &order[..k] {
        schedule[slot] = 1;
    }
    Ok(Action::Schedule(schedule))
}

/// Optimal schedule under the true signal and its cost.
pub fn ev_optimal(ctx: &ChargingContext, signal: &[f64]) -> Result<(Action, f64)> {
    let action = ev_act(ctx, signal)?;
    let cost = ev_cost(ctx, action.schedule().expect("schedule"), signal)?;
    Ok((action, cost))
}

/// The scalar a data center acts on: the forecast itself, or the mean of a window forecast.
fn dc_signal(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::dim("data-center forecast", 1, 0));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn clamp_regret(agent: usize, raw: f64) -> Result<RegretRecord> {
    if !raw.is_finite() || raw < -REGRET_TOLERANCE {
        return Err(Error::InvalidValue(format!(
            "agent {agent}: regret {raw} is negative beyond tolerance; the optimal-action oracle is wrong"
        )));
    }
    Ok(RegretRecord {
        agent,
        value: raw.max(0.0),
    })
}

/// Decision regret of acting on `forecast` when `truth` is realized.
pub fn regret(agent: usize, ctx: &AgentContext, forecast: &[f64], truth: &[f64]) -> Result<RegretRecord> {
    if forecast.len() != truth.len() {
        return Err(Error::dim("regret forecast", truth.len(), forecast.len()));
    }
    let raw = match ctx {
        AgentContext::DataCenter(dc) => {
            let c_hat = dc_signal(forecast)?;
            let c = dc_signal(truth)?;
            let p_hat = dc_act(dc, c_hat).allocation().expect("allocation");
            let p_star = dc_optimal(dc, c)?.0.allocation().expect("allocation");
            // Same cost routine on both sides: a perfect forecast gives exactly 0.
            dc_cost(dc, p_hat, c)? - dc_cost(dc, p_star, c)?
        }
        AgentContext::Charging(ev) => {
            let action = ev_act(ev, forecast)?;
            ev_cost(ev, action.schedule().expect("schedule"), truth)? - ev_optimal(ev, truth)?.1
        }
    };
    clamp_regret(agent, raw)
}

/// Regret and its gradient with respect to the forecast vector.
///
/// Only data centers have a differentiable policy; charging agents return an error.
pub fn regret_with_grad(
    agent: usize,
    ctx: &AgentContext,
    forecast: &[f64],
    truth: &[f64],
) -> Result<(RegretRecord, Vec<f64>)> {
    let AgentContext::DataCenter(dc) = ctx else {
        return Err(Error::Config(format!(
            "agent {agent} has a discrete charging policy; use the policy-gradient trainer"
        )));
    };
    let record = regret(agent, ctx, forecast, truth)?;
    let c_hat = dc_signal(forecast)?;
    let c = dc_signal(truth)?;
    let p_hat = dc_act(dc, c_hat).allocation().expect("allocation");
    // d cost / d p at p_hat: c - lambda*w/(p_hat - w)^2.
    let gap = p_hat - dc.workload;
    let d_cost_d_action = c - dc.lambda * dc.workload / (gap * gap);
    let d_action_d_signal = dc_act_jacobian(dc, c_hat);
    let per_output = d_cost_d_action * d_action_d_signal / forecast.len() as f64;
    Ok((record, vec![per_output; forecast.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dc(w: f64, lambda: f64) -> DataCenterContext {
        DataCenterContext::new(w, lambda).unwrap()
    }

    fn ev(initial: f64, demand: f64, rate: f64, horizon: usize) -> ChargingContext {
        ChargingContext {
            initial,
            demand,
            rate,
            horizon,
            gamma: 1.0,
            eta: 1.0,
        }
    }

    /// Brute-force minimizer of dc_cost over (w, w + 10] on a 1e-4 grid.
    fn dc_grid_oracle(ctx: &DataCenterContext, c: f64) -> (f64, f64) {
        let mut best = (f64::NAN, f64::INFINITY);
        for i in 1..=100_000 {
            let p = ctx.workload + i as f64 * 1e-4;
            let cost = dc_cost(ctx, p, c).unwrap();
            if cost < best.1 {
                best = (p, cost);
            }
        }
        best
    }

    #[test]
    fn dc_cost_examples() {
        assert_eq!(dc_cost(&dc(1.0, 1.0), 2.0, 1.0).unwrap(), 3.0);
        assert_eq!(dc_cost(&dc(4.0, 1.0), 6.0, 1.0).unwrap(), 8.0);
        assert!(matches!(dc_cost(&dc(1.0, 1.0), 1.0, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn dc_act_matches_grid_oracle() {
        for (w, c_hat) in [(1.0, 1.0), (4.0, 1.0)] {
            let ctx = dc(w, 1.0);
            let (p_grid, _) = dc_grid_oracle(&ctx, c_hat);
            let p = dc_act(&ctx, c_hat).allocation().unwrap();
            assert!((p - p_grid).abs() <= 1e-4, "{p} vs {p_grid}");
        }
        assert_eq!(dc_act(&dc(1.0, 1.0), 1.0).allocation(), Some(2.0));
        assert_eq!(dc_act(&dc(4.0, 1.0), 1.0).allocation(), Some(6.0));
    }

    #[test]
    fn dc_act_clamps_nonpositive_forecast() {
        let p = dc_act(&dc(1.0, 1.0), -5.0).allocation().unwrap();
        assert!(p.is_finite());
        assert_eq!(p, 1.0 + (1.0 / CARBON_FLOOR).sqrt());
    }

    #[test]
    fn dc_jacobian() {
        assert_eq!(dc_act_jacobian(&dc(1.0, 1.0), 1.0), -0.5);
        assert_eq!(dc_act_jacobian(&dc(1.0, 1.0), CARBON_FLOOR), 0.0);
        assert_eq!(dc_act_jacobian(&dc(1.0, 1.0), -3.0), 0.0);
        let ctx = dc(4.0, 1.0);
        let h = 1e-6;
        let p = |c: f64| dc_act(&ctx, c).allocation().unwrap();
        let fd = (p(1.0 + h) - p(1.0 - h)) / (2.0 * h);
        let exact = dc_act_jacobian(&ctx, 1.0);
        assert!(((fd - exact) / exact).abs() < 1e-6, "{fd} vs {exact}");
    }

    #[test]
    fn dc_optimal_examples() {
        let (a, cost) = dc_optimal(&dc(1.0, 1.0), 1.0).unwrap();
        assert_eq!((a.allocation().unwrap(), cost), (2.0, 3.0));
        let (a, cost) = dc_optimal(&dc(4.0, 1.0), 1.0).unwrap();
        assert_eq!((a.allocation().unwrap(), cost), (6.0, 8.0));
        for (w, c) in [(1.0, 1.0), (4.0, 1.0)] {
            let (_, grid_cost) = dc_grid_oracle(&dc(w, 1.0), c);
            let (_, cost) = dc_optimal(&dc(w, 1.0), c).unwrap();
            assert!(cost <= grid_cost + 1e-12 && grid_cost - cost < 1e-6);
        }
        assert!(dc_optimal(&dc(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn dc_optimal_is_locally_optimal() {
        for &(w, l, c) in &[(0.5, 2.0, 0.3), (3.0, 40.0, 1.7), (10.0, 100.0, 0.05)] {
            let ctx = dc(w, l);
            let (a, cost) = dc_optimal(&ctx, c).unwrap();
            let p = a.allocation().unwrap();
            assert!((dc_cost(&ctx, p, c).unwrap() - cost).abs() < 1e-9 * cost);
            assert!(cost <= dc_cost(&ctx, p + 0.01, c).unwrap());
            assert!(cost <= dc_cost(&ctx, p - 0.01, c).unwrap());
        }
    }

    #[test]
    fn ev_cost_examples() {
        let c = ev(0.0, 2.0, 2.0, 3);
        assert_eq!(ev_cost(&c, &[1, 0, 1], &[3.0, 1.0, 2.0]).unwrap(), 10.0);
        assert_eq!(ev_cost(&c, &[0, 0, 0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        let c1 = ev(0.0, 2.0, 1.0, 3);
        assert_eq!(ev_cost(&c1, &[0, 1, 1], &[3.0, 1.0, 2.0]).unwrap(), 3.0);
        assert!(ev_cost(&c1, &[0, 1], &[3.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn ev_act_examples() {
        let c = ev(0.0, 2.0, 1.0, 3);
        assert_eq!(ev_act(&c, &[3.0, 1.0, 2.0]).unwrap(), Action::Schedule(vec![0, 1, 1]));
        assert_eq!(ev_act(&c, &[1.0, 1.0, 1.0]).unwrap(), Action::Schedule(vec![1, 1, 0]));
        let full = ev(0.0, 3.0, 1.0, 3);
        assert_eq!(ev_act(&full, &[5.0, -1.0, 2.0]).unwrap(), Action::Schedule(vec![1, 1, 1]));
        let over = ev(0.0, 4.0, 1.0, 3);
        assert!(matches!(ev_act(&over, &[0.0; 3]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn ev_optimal_examples() {
        let c = ev(0.0, 2.0, 1.0, 3);
        let (a, cost) = ev_optimal(&c, &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(a, Action::Schedule(vec![0, 1, 1]));
        assert_eq!(cost, 3.0);
        let c = ev(0.0, 5.0, 1.0, 8);
        let (_, cost) = ev_optimal(&c, &[0.7; 8]).unwrap();
        assert!((cost - 5.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn slots_needed_rounds_up() {
        assert_eq!(ev(0.0, 2.5, 1.0, 12).slots_needed(), 3);
        assert_eq!(ev(0.1, 0.4, 0.1, 12).slots_needed(), 3);
        assert_eq!(ev(0.0, 0.01, 1.0, 12).slots_needed(), 1);
    }

    #[test]
    fn regret_examples() {
        let d = AgentContext::DataCenter(dc(1.0, 1.0));
        assert_eq!(regret(0, &d, &[1.0], &[1.0]).unwrap().value, 0.0);
        // p_hat = 1 + sqrt(1/4) = 1.5; cost = 1.5 + 1/0.5 = 3.5; optimum 3.
        let r = regret(0, &d, &[4.0], &[1.0]).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);

        let e = AgentContext::Charging(ChargingContext {
            initial: 0.0,
            demand: 1.0,
            rate: 1.0,
            horizon: 2,
            gamma: 0.0,
            eta: 0.0,
        });
        assert_eq!(regret(3, &e, &[2.0, 1.0], &[1.0, 2.0]).unwrap().value, 1.0);
        assert_eq!(regret(3, &e, &[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
    }

    #[test]
    fn regret_gradient_matches_finite_differences() {
        let ctx = AgentContext::DataCenter(dc(2.5, 30.0));
        for &(c_hat, c) in &[(0.8, 1.1), (1.4, 0.6), (0.3, 0.3)] {
            let (_, g) = regret_with_grad(0, &ctx, &[c_hat], &[c]).unwrap();
            let h = 1e-6;
            let f = |x: f64| regret(0, &ctx, &[x], &[c]).unwrap().value;
            let fd = (f(c_hat + h) - f(c_hat - h)) / (2.0 * h);
            assert!((g[0] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {fd}", g[0]);
        }
        let e = AgentContext::Charging(ev(0.0, 1.0, 1.0, 2));
        assert!(regret_with_grad(0, &e, &[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn infeasible_charging_context_is_rejected() {
        assert!(ev(2.0, 1.0, 1.0, 4).validate().is_err());
        assert!(ev(0.0, 5.0, 1.0, 4).validate().is_err());
        assert!(ev(0.0, 4.0, 1.0, 4).validate().is_ok());
    }

    #[test]
    fn agent_spec_serializes_with_family_tag() {
        let spec = AgentSpec {
            id: 2,
            kind: AgentKind::DataCenter { lambda: 4.0 },
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"id":2,"family":"datacenter","lambda":4.0}"#);
        let back: AgentSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
