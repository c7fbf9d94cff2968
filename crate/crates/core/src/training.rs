//! Trainers (plain MSE, exact chain rule, policy gradient), evaluation, and
//! the scalar toy checks of the equity results.

use serde::{Deserialize, Serialize};

use crate::agents::{regret, regret_with_grad, AgentSpec};
use crate::data::{epoch_batches, AgentData, Sample, Standardizer, WindowedData};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::objective::{chain_grad, combined_loss, pg_batch_grad, ChainRecord, MseRoute, PgOptions, PgRecord};
use crate::predictor::{forward, init_params, sample_prediction, score_grad, vjp, FeatureWindow, ParamVector};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Minimize the prediction MSE only.
    #[default]
    Plain,
    /// Exact gradient of the combined objective; data-center agents only.
    Chain,
    /// Score-function gradient with a Gaussian policy; any agent.
    Pg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Momentum,
    Adam,
}

/// Control variate subtracted from the batch loss in pg mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    None,
    /// Batch loss evaluated at the policy mean on the same batch.
    MeanPrediction,
    /// Exponential moving average of past batch losses.
    Running,
    /// Per sample: the batch loss with only that sample replaced by the policy mean.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub q: f64,
    pub beta: f64,
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    /// Per-agent batch size used when `batch_sizes` is absent.
    pub batch_size: usize,
    pub batch_sizes: Option<Vec<usize>>,
    /// Policy std in normalized target units.
    pub std: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
    pub baseline: BaselineKind,
    pub mse_route: MseRoute,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Plain,
            q: 0.0,
            beta: 0.0,
            lr: 0.01,
            lr_step: 50,
            lr_decay: 0.5,
            epochs: 100,
            batch_size: 32,
            batch_sizes: None,
            std: 0.1,
            seed: 0,
            hidden: vec![32],
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            baseline: BaselineKind::None,
            mse_route: MseRoute::Pathwise,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad(format!("q must be finite and nonnegative, got {}", self.q));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and nonnegative, got {}", self.lr));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 || self.batch_sizes.as_ref().is_some_and(|b| b.contains(&0)) {
            return bad("batch sizes must be positive".into());
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return bad(format!("policy std must be positive, got {}", self.std));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("optimizer coefficients out of range".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    /// `lr * lr_decay^floor(epoch / lr_step)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }

    fn batch_sizes_for(&self, num_agents: usize) -> Result<Vec<usize>> {
        match &self.batch_sizes {
            Some(b) if b.len() != num_agents => Err(Error::dim("batch_sizes", num_agents, b.len())),
            Some(b) => Ok(b.clone()),
            None => Ok(vec![self.batch_size; num_agents]),
        }
    }
}

/// Network parameters together with the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub params: ParamVector,
    pub standardizer: Standardizer,
    /// Policy std in normalized units.
    pub std: f64,
    pub lookback: usize,
}

impl Forecaster {
    /// Fresh network `[lookback, hidden..., horizon]`.
    pub fn init(data: &WindowedData, hidden: &[usize], std: f64, seed: u64) -> Result<Self> {
        let mut arch = vec![data.lookback];
        arch.extend_from_slice(hidden);
        arch.push(data.horizon);
        Ok(Self {
            params: init_params(&arch, seed)?,
            standardizer: data.standardizer,
            std,
            lookback: data.lookback,
        })
    }

    pub fn horizon(&self) -> usize {
        self.params.layout().output_dim()
    }

    fn denormalize(&self, net: &[f64]) -> Vec<f64> {
        net.iter().map(|&v| self.standardizer.denormalize_target(v)).collect()
    }

    /// Deterministic forecast in raw units for a normalized window.
    pub fn predict(&self, window: &FeatureWindow) -> Result<Vec<f64>> {
        Ok(self.denormalize(&forward(&self.params, window)?.values))
    }

    /// Forecast from raw (unnormalized) signal values.
    pub fn predict_raw(&self, raw_window: &[f64], agent: usize) -> Result<Vec<f64>> {
        let window = FeatureWindow::new(
            raw_window.iter().map(|&v| self.standardizer.normalize_feature(v)).collect(),
            agent,
        );
        self.predict(&window)
    }
}

/// One row of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub equitable: f64,
    pub mse: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Forecaster,
    pub steps: Vec<StepRecord>,
}

struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, len: usize) -> Self {
        Self {
            kind: cfg.optimizer,
            momentum: cfg.momentum,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            first: vec![0.0; len],
            second: vec![0.0; len],
            t: 0,
        }
    }

    fn apply(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) {
        self.t += 1;
        let values = params.values_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in values.iter_mut().zip(grad.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum => {
                for ((p, g), v) in values.iter_mut().zip(grad.values()).zip(&mut self.first) {
                    *v = self.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for (((p, g), m), v) in values
                    .iter_mut()
                    .zip(grad.values())
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

struct BatchResult {
    grad: ParamVector,
    loss: f64,
    equitable: f64,
    mse: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn divergence(step: usize, agent: Option<usize>, detail: impl Into<String>) -> Error {
    Error::Divergence {
        step,
        agent,
        detail: detail.into(),
    }
}

/// Attach step and agent to errors raised while scoring a sample. A policy only
/// turns infeasible once forecasts overflow its arithmetic.
fn at_step<T>(step: usize, agent: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidValue(detail) | Error::Infeasible(detail) => divergence(step, Some(agent), detail),
        other => other,
    })
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a WindowedData,
    running: Option<f64>,
}

impl Trainer<'_> {
    fn sample(&self, agent: usize, idx: usize) -> (&AgentData, &Sample) {
        let a = &self.data.agents[agent];
        (a, &a.train[idx])
    }

    /// Gradient and losses of the MSE-and-regret objective on exact (mean) predictions.
    fn chain_batch(&self, model: &Forecaster, batch: &[(usize, usize)], step: usize, plain: bool) -> Result<BatchResult> {
        let s = model.standardizer.target_std;
        let m = self.data.num_agents();
        let mut records = Vec::with_capacity(batch.len());
        let mut sq = Vec::with_capacity(batch.len());
        for &(agent, idx) in batch {
            let (a, sample) = self.sample(agent, idx);
            let pred = model.predict(&sample.window)?;
            let residual: Vec<f64> = pred.iter().zip(&sample.target).map(|(p, y)| s * (p - y)).collect();
            sq.push((agent, sq_dist(&pred, &sample.target)));
            let (regret, regret_grad) = if plain {
                (0.0, vec![0.0; pred.len()])
            } else {
                let ctx = a.spec.context(sample.workload)?;
                let (rec, g) = at_step(step, agent, regret_with_grad(agent, &ctx, &pred, &sample.target))?;
                (rec.value, g.into_iter().map(|v| v * s).collect())
            };
            records.push(ChainRecord {
                agent,
                window: &sample.window,
                regret,
                regret_grad,
                residual,
            });
        }
        let (q, beta) = if plain { (0.0, 1.0) } else { (self.cfg.q, self.cfg.beta) };
        let grad = chain_grad(&model.params, &records, m, q, beta)?;
        let (_, regrets) = crate::objective::agent_means(records.iter().map(|r| (r.agent, r.regret)), m)?;
        let (_, agent_mse) = crate::objective::agent_means(sq.into_iter(), m)?;
        let loss = combined_loss(&regrets, &agent_mse, q, beta)?;
        Ok(BatchResult {
            grad,
            loss: loss.combined,
            equitable: loss.equitable,
            mse: loss.mse,
        })
    }

    /// For each record, the batch loss with that record's sample swapped for the policy mean.
    fn per_sample_baselines(&self, records: &mut [PgRecord], at_mean: &[(usize, f64, f64)]) -> Result<()> {
        let cfg = self.cfg;
        let m = self.data.num_agents();
        let (counts, regrets) = crate::objective::agent_means(records.iter().map(|r| (r.agent, r.regret)), m)?;
        let (_, errors) = crate::objective::agent_means(records.iter().map(|r| (r.agent, r.sq_error)), m)?;
        let loss = combined_loss(&regrets, &errors, cfg.q, cfg.beta)?;
        let p = cfg.q + 1.0;
        for (rec, &(_, mean_regret, mean_sq)) in records.iter_mut().zip(at_mean) {
            let a = rec.agent;
            let n = counts[a] as f64;
            let swapped = (regrets[a] + (mean_regret - rec.regret) / n).max(0.0);
            let mut b = (1.0 - cfg.beta) * (loss.equitable - regrets[a].max(0.0).powf(p) + swapped.powf(p));
            if cfg.mse_route == MseRoute::Score {
                b += cfg.beta * (loss.mse + (mean_sq - rec.sq_error) / n);
            }
            rec.baseline = Some(b);
        }
        Ok(())
    }

    fn pg_batch(
        &mut self,
        model: &Forecaster,
        batch: &[(usize, usize)],
        step: usize,
        rng: &mut crate::rng::Rng64,
    ) -> Result<BatchResult> {
        let cfg = self.cfg;
        let s = model.standardizer.target_std;
        let m = self.data.num_agents();
        let need_sq_grad = cfg.mse_route == MseRoute::Pathwise && cfg.beta > 0.0;
        let mut records = Vec::with_capacity(batch.len());
        let mut at_mean = Vec::with_capacity(batch.len());
        for &(agent, idx) in batch {
            let (a, sample) = self.sample(agent, idx);
            let ctx = a.spec.context(sample.workload)?;
            let policy = sample_prediction(&model.params, &sample.window, model.std, rng)?;
            let sampled = model.denormalize(&policy.sample);
            let mean = model.denormalize(&policy.mean);
            let reg = at_step(step, agent, regret(agent, &ctx, &sampled, &sample.target))?.value;
            let score = score_grad(&model.params, &sample.window, &policy)?;
            let (sq_error, sq_error_grad) = match cfg.mse_route {
                MseRoute::Score => (sq_dist(&sampled, &sample.target), None),
                MseRoute::Pathwise => {
                    let grad = if need_sq_grad {
                        let cot: Vec<f64> = mean.iter().zip(&sample.target).map(|(p, y)| 2.0 * s * (p - y)).collect();
                        Some(vjp(&model.params, &sample.window, &cot)?)
                    } else {
                        None
                    };
                    (sq_dist(&mean, &sample.target), grad)
                }
            };
            if matches!(cfg.baseline, BaselineKind::MeanPrediction | BaselineKind::PerSample) {
                let r = at_step(step, agent, regret(agent, &ctx, &mean, &sample.target))?.value;
                at_mean.push((agent, r, sq_dist(&mean, &sample.target)));
            }
            records.push(PgRecord {
                agent,
                score,
                regret: reg,
                sq_error,
                sq_error_grad,
                baseline: None,
            });
        }
        if cfg.baseline == BaselineKind::PerSample {
            self.per_sample_baselines(&mut records, &at_mean)?;
        }
        let baseline = match cfg.baseline {
            BaselineKind::None | BaselineKind::PerSample => None,
            BaselineKind::Running => Some(self.running.unwrap_or(0.0)),
            BaselineKind::MeanPrediction => {
                let (_, r) = crate::objective::agent_means(at_mean.iter().map(|x| (x.0, x.1)), m)?;
                let (_, e) = crate::objective::agent_means(at_mean.iter().map(|x| (x.0, x.2)), m)?;
                let l = combined_loss(&r, &e, cfg.q, cfg.beta)?;
                Some(match cfg.mse_route {
                    MseRoute::Score => l.combined,
                    MseRoute::Pathwise => (1.0 - cfg.beta) * l.equitable,
                })
            }
        };
        let opts = PgOptions {
            q: cfg.q,
            beta: cfg.beta,
            mse_route: cfg.mse_route,
            baseline,
        };
        let out = pg_batch_grad(&records, m, &opts)?;
        if cfg.baseline == BaselineKind::Running {
            let raw = out.score_weight + baseline.unwrap_or(0.0);
            self.running = Some(match self.running {
                None => raw,
                Some(b) => 0.9 * b + 0.1 * raw,
            });
        }
        Ok(BatchResult {
            grad: out.grad,
            loss: out.loss.combined,
            equitable: out.loss.equitable,
            mse: out.loss.mse,
        })
    }
}

/// Gradient and batch loss of one training step, exposed for diagnostics.
///
/// `batch` indexes training samples as `(agent, sample)`.
pub fn batch_gradient(
    cfg: &TrainConfig,
    model: &Forecaster,
    data: &WindowedData,
    batch: &[(usize, usize)],
    rng: &mut crate::rng::Rng64,
) -> Result<(ParamVector, f64)> {
    let mut trainer = Trainer {
        cfg,
        data,
        running: None,
    };
    let res = match cfg.mode {
        TrainMode::Plain => trainer.chain_batch(model, batch, 0, true)?,
        TrainMode::Chain => trainer.chain_batch(model, batch, 0, false)?,
        TrainMode::Pg => trainer.pg_batch(model, batch, 0, rng)?,
    };
    Ok((res.grad, res.loss))
}

/// Train `model` in place on the training split of `data`.
///
/// Deterministic given `cfg.seed`: batch order and policy noise are drawn from
/// seeded streams and every reduction runs in a fixed order.
pub fn train(cfg: &TrainConfig, model: &Forecaster, data: &WindowedData) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.agents.is_empty() {
        return Err(Error::Config("no agents to train on".into()));
    }
    if let Some(a) = data.agents.iter().find(|a| a.train.is_empty()) {
        return Err(Error::Config(format!("agent {} has an empty training split", a.spec.id)));
    }
    if model.params.layout().input_dim() != data.lookback || model.horizon() != data.horizon {
        return Err(Error::dim("model shape", data.lookback, model.params.layout().input_dim()));
    }
    if cfg.mode == TrainMode::Chain {
        if let Some(a) = data.agents.iter().find(|a| !a.spec.is_differentiable()) {
            return Err(Error::Config(format!(
                "chain mode needs differentiable agents; agent {} is not",
                a.spec.id
            )));
        }
    }
    let batch_sizes = cfg.batch_sizes_for(data.num_agents())?;
    let mut model = model.clone();
    model.std = cfg.std;
    let mut optimizer = Optimizer::new(cfg, model.params.len());
    let mut batch_rng = seeded(derive_seed(cfg.seed, 0xBA7C));
    let mut policy_rng = seeded(derive_seed(cfg.seed, 0x9011));
    let mut trainer = Trainer {
        cfg,
        data,
        running: None,
    };
    let mut steps = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for batch in epoch_batches(data, &batch_sizes, &mut batch_rng)? {
            let mut res = match cfg.mode {
                TrainMode::Plain => trainer.chain_batch(&model, &batch, step, true)?,
                TrainMode::Chain => trainer.chain_batch(&model, &batch, step, false)?,
                TrainMode::Pg => trainer.pg_batch(&model, &batch, step, &mut policy_rng)?,
            };
            if !res.loss.is_finite() {
                return Err(divergence(step, None, format!("non-finite loss {}", res.loss)));
            }
            let mut grad_norm = res.grad.norm();
            if !grad_norm.is_finite() {
                return Err(divergence(step, None, format!("non-finite gradient (loss {})", res.loss)));
            }
            if let Some(clip) = cfg.grad_clip {
                if grad_norm > clip {
                    res.grad.scale(clip / grad_norm);
                    grad_norm = clip;
                }
            }
            optimizer.apply(&mut model.params, &res.grad, lr);
            if !model.params.is_finite() {
                return Err(divergence(step, None, "parameters became non-finite"));
            }
            steps.push(StepRecord {
                step,
                epoch,
                lr,
                loss: res.loss,
                equitable: res.equitable,
                mse: res.mse,
                grad_norm,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { model, steps })
}

/// Evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean_regrets: Vec<f64>,
    pub variance: f64,
    pub mean: f64,
    pub c95_minus_c5: f64,
    pub mse: f64,
    pub entropy: f64,
    pub q: f64,
    pub beta: f64,
    pub seed: u64,
}

impl RunSummary {
    pub fn metrics(&self) -> MetricReport {
        MetricReport {
            variance: self.variance,
            mean: self.mean,
            c95_minus_c5: self.c95_minus_c5,
            mse: self.mse,
            entropy: self.entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Test,
}

/// Mean-prediction regrets and metrics on a split.
///
/// `entropy_exponent` is applied to the regret vector before normalizing.
pub fn evaluate(model: &Forecaster, data: &WindowedData, split: Split, entropy_exponent: f64, cfg: &TrainConfig) -> Result<RunSummary> {
    let mut mean_regrets = Vec::with_capacity(data.num_agents());
    let mut preds = Vec::with_capacity(data.num_agents());
    let mut targets = Vec::with_capacity(data.num_agents());
    for a in &data.agents {
        let samples = match split {
            Split::Train => &a.train,
            Split::Test => &a.test,
        };
        if samples.is_empty() {
            return Err(Error::Config(format!("agent {} has an empty evaluation split", a.spec.id)));
        }
        let (agent_regret, agent_preds) = evaluate_agent(model, &a.spec, samples)?;
        mean_regrets.push(agent_regret);
        preds.push(agent_preds);
        targets.push(samples.iter().map(|s| s.target.clone()).collect::<Vec<_>>());
    }
    let mse = metrics::mse(&preds, &targets)?;
    let r = metrics::report(&mean_regrets, mse, entropy_exponent)?;
    Ok(RunSummary {
        mean_regrets,
        variance: r.variance,
        mean: r.mean,
        c95_minus_c5: r.c95_minus_c5,
        mse: r.mse,
        entropy: r.entropy,
        q: cfg.q,
        beta: cfg.beta,
        seed: cfg.seed,
    })
}

fn evaluate_agent(model: &Forecaster, spec: &AgentSpec, samples: &[Sample]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = model.predict(&s.window)?;
        let ctx = spec.context(s.workload)?;
        total += regret(spec.id, &ctx, &pred, &s.target)?.value;
        preds.push(pred);
    }
    Ok((total / samples.len() as f64, preds))
}

// ---------------------------------------------------------------------------
// Scalar toy checks

/// `C(theta) = curvature * (theta - target)^2 + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyAgent {
    pub target: f64,
    pub offset: f64,
    pub curvature: f64,
}

impl ToyAgent {
    pub fn new(target: f64, offset: f64) -> Self {
        Self {
            target,
            offset,
            curvature: 1.0,
        }
    }

    pub fn regret(&self, theta: f64) -> f64 {
        self.curvature * (theta - self.target).powi(2) + self.offset
    }
}

/// Minimize a unimodal `f` on `[lo, hi]` until the bracket is narrower than `tol`.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::InvalidValue(format!("bad bracket [{lo}, {hi}] or tolerance {tol}")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..500 {
        if (b - a).abs() <= tol {
            return Ok(0.5 * (a + b));
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Err(Error::NonConvergence(format!("golden-section search on [{lo}, {hi}] did not reach {tol}")))
}

fn toy_check(toys: &[ToyAgent]) -> Result<()> {
    if toys.len() < 2 {
        return Err(Error::InvalidValue("toy checks need at least two agents".into()));
    }
    if toys.iter().any(|t| !(t.curvature > 0.0 && t.offset >= 0.0 && t.target.is_finite())) {
        return Err(Error::InvalidValue("toy agents must be strictly convex with nonnegative offsets".into()));
    }
    Ok(())
}

/// `argmin_theta sum_m C_m(theta)^(q+1)`, found within `1e-10`.
pub fn toy_optimum(toys: &[ToyAgent], q: f64) -> Result<f64> {
    toy_check(toys)?;
    let lo = toys.iter().map(|t| t.target).fold(f64::INFINITY, f64::min);
    let hi = toys.iter().map(|t| t.target).fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(lo);
    }
    golden_section(
        |theta| toys.iter().map(|t| t.regret(theta).powf(q + 1.0)).sum(),
        lo,
        hi,
        1e-10,
    )
}

fn toy_regrets(toys: &[ToyAgent], theta: f64) -> Vec<f64> {
    toys.iter().map(|t| t.regret(theta)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub var_q0: f64,
    pub var_q1: f64,
    pub theta_q0: f64,
    pub theta_q1: f64,
}

impl VarianceCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.var_q1 <= self.var_q0 + tol
    }
}

/// Signature of [`toy_optimum`]; the checks accept a replacement for testing.
pub type ToyOptimum = fn(&[ToyAgent], f64) -> Result<f64>;

/// Regret variance at the `q = 0` and `q = 1` optima.
pub fn theorem_check_variance(toys: &[ToyAgent]) -> Result<VarianceCheck> {
    theorem_check_variance_with(toys, toy_optimum)
}

pub fn theorem_check_variance_with(toys: &[ToyAgent], optimum: ToyOptimum) -> Result<VarianceCheck> {
    toy_check(toys)?;
    let theta_q0 = optimum(toys, 0.0)?;
    let theta_q1 = optimum(toys, 1.0)?;
    Ok(VarianceCheck {
        var_q0: metrics::variance(&toy_regrets(toys, theta_q0))?,
        var_q1: metrics::variance(&toy_regrets(toys, theta_q1))?,
        theta_q0,
        theta_q1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyDerivative {
    pub q: f64,
    pub derivative: f64,
}

/// Central difference in `p` of `H_norm(C(theta*_p)^(q+1))` at `p = q`, step `h`.
///
/// Only the optimum moves with `p`; the entropy exponent stays at `q + 1`.
pub fn theorem_check_entropy(toys: &[ToyAgent], q_grid: &[f64], h: f64) -> Result<Vec<EntropyDerivative>> {
    theorem_check_entropy_with(toys, q_grid, h, toy_optimum)
}

pub fn theorem_check_entropy_with(
    toys: &[ToyAgent],
    q_grid: &[f64],
    h: f64,
    optimum: ToyOptimum,
) -> Result<Vec<EntropyDerivative>> {
    toy_check(toys)?;
    if !(h > 0.0) {
        return Err(Error::InvalidValue(format!("finite-difference step must be positive, got {h}")));
    }
    q_grid
        .iter()
        .map(|&q| {
            let entropy_at = |p: f64| -> Result<f64> {
                let theta = optimum(toys, p.max(0.0))?;
                metrics::norm_entropy(&toy_regrets(toys, theta), q + 1.0)
            };
            let derivative = if q >= h {
                (entropy_at(q + h)? - entropy_at(q - h)?) / (2.0 * h)
            } else {
                // One-sided at the boundary of the admissible range.
                (entropy_at(q + h)? - entropy_at(q)?) / h
            };
            Ok(EntropyDerivative { q, derivative })
        })
        .collect()
}
