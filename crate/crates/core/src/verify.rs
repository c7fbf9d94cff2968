//! Self-checks run by `eqpm verify`: the exact decision oracles against brute
//! force, the chain-rule gradient against finite differences, unbiasedness of
//! the score-function estimator, the two scalar equity results on toys, and
//! the l_{q+1} dual-norm identity.
//!
//! The functions under test are passed in through [`Oracles`], so a broken
//! replacement can be shown to fail its suite.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    dc_optimal, ev_optimal, regret_with_grad, Action, AgentContext, ChargingContext, DataCenterContext,
};
use crate::error::Result;
use crate::objective::{
    chain_grad, combined_loss, equitable_loss, holder_maximizer, pg_batch_grad, ChainRecord, MseRoute, PgBatch,
    PgOptions, PgRecord,
};
use crate::predictor::{forward, init_params, sample_prediction, score_grad, FeatureWindow, Layout, ParamVector};
use crate::rng::{derive_seed, seeded, Rng64};
use crate::training::{theorem_check_entropy_with, theorem_check_variance_with, toy_optimum, ToyAgent, ToyOptimum};

pub type ChainGradFn = for<'a> fn(&ParamVector, &[ChainRecord<'a>], usize, f64, f64) -> Result<ParamVector>;
pub type DcOptimalFn = fn(&DataCenterContext, f64) -> Result<(Action, f64)>;
pub type EvOptimalFn = fn(&ChargingContext, &[f64]) -> Result<(Action, f64)>;
pub type PgGradFn = fn(&[PgRecord], usize, &PgOptions) -> Result<PgBatch>;

/// The implementations each suite checks.
#[derive(Clone, Copy)]
pub struct Oracles {
    pub dc_optimal: DcOptimalFn,
    pub ev_optimal: EvOptimalFn,
    pub chain_grad: ChainGradFn,
    pub pg_batch_grad: PgGradFn,
    pub toy_optimum: ToyOptimum,
    pub equitable_loss: fn(&[f64], f64) -> Result<f64>,
    pub holder_maximizer: fn(&[f64], f64) -> Result<Vec<f64>>,
}

impl Default for Oracles {
    fn default() -> Self {
        Self {
            dc_optimal,
            ev_optimal,
            chain_grad,
            pg_batch_grad,
            toy_optimum,
            equitable_loss,
            holder_maximizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    /// Worst case of the checked quantity.
    pub measured: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub seconds: f64,
    pub detail: String,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "{:<20} {}  measured {:.3e}  tolerance {:.1e}  cases {}  {:.2}s  {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.measured,
            self.tolerance,
            self.cases,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// Outcome of a suite body before timing is attached.
struct Check {
    passed: bool,
    measured: f64,
    tolerance: f64,
    cases: usize,
    detail: String,
}

fn timed(name: &str, body: impl FnOnce() -> Result<Check>) -> SuiteReport {
    let start = Instant::now();
    let outcome = body();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(c) => SuiteReport {
            name: name.into(),
            passed: c.passed,
            measured: c.measured,
            tolerance: c.tolerance,
            cases: c.cases,
            seconds,
            detail: c.detail,
        },
        Err(e) => SuiteReport {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            cases: 0,
            seconds,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all(oracles: &Oracles, seed: u64) -> VerifyReport {
    VerifyReport {
        seed,
        suites: vec![
            dc_oracle_suite(oracles, seed),
            ev_oracle_suite(oracles, seed),
            gradient_suite(oracles, seed),
            pg_suite(oracles, seed),
            variance_suite(oracles, seed),
            entropy_suite(oracles, seed),
            dual_norm_suite(oracles, seed),
        ],
    }
}

/// Grid step of the brute-force allocation search.
pub const DC_GRID_STEP: f64 = 1e-4;

/// `dc_optimal` against a grid over `p - w` in `(0, 100]` with step 1e-4, 100 random instances.
///
/// The oracle's reported cost must equal the cost of its allocation, must not
/// be beaten by any grid point, and must be within one grid step of the grid minimum.
pub fn dc_oracle_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("dc_oracle", || {
        let mut rng = seeded(derive_seed(seed, 0xD0C));
        let steps = (100.0 / DC_GRID_STEP) as usize;
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for _ in 0..100 {
            let w = rng.random_range(0.5..2.0);
            let lambda = rng.random_range(2.0..100.0);
            let c = rng.random_range(0.1..1.0);
            let ctx = DataCenterContext::new(w, lambda)?;
            let cost = |p: f64| p * c + lambda * w / (p - w);
            let grid_min = (1..=steps)
                .map(|k| cost(w + k as f64 * DC_GRID_STEP))
                .fold(f64::INFINITY, f64::min);
            let (action, reported) = (o.dc_optimal)(&ctx, c)?;
            let p = action.allocation().unwrap_or(f64::NAN);
            let achieved = if p > w { cost(p) } else { f64::INFINITY };
            let consistent = (achieved - reported).abs() <= 1e-9 * achieved.abs().max(1.0);
            let not_beaten = achieved <= grid_min + 1e-12 * grid_min.abs();
            let err = (grid_min - achieved).abs();
            worst = worst.max(if consistent && not_beaten { err } else { f64::INFINITY });
            if !(consistent && not_beaten && err <= DC_GRID_STEP) {
                failures += 1;
            }
        }
        Ok(Check {
            passed: failures == 0,
            measured: worst,
            tolerance: DC_GRID_STEP,
            cases: 100,
            detail: format!("{failures} instances off"),
        })
    })
}

/// `ev_optimal` against exhaustive enumeration of all schedules, T = 12,
/// every k in 1..=12, 100 random signals. Schedules must match exactly.
pub fn ev_oracle_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("ev_oracle", || {
        const T: usize = 12;
        let mut rng = seeded(derive_seed(seed, 0xE7));
        let mut mismatches = 0;
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for _ in 0..100 {
            let e: Vec<f64> = (0..T).map(|_| rng.random_range(0.0..1.0)).collect();
            // Best mask and cost for every popcount.
            let mut best = [(f64::INFINITY, 0u32); T + 1];
            for mask in 0u32..(1 << T) {
                let k = mask.count_ones() as usize;
                let cost: f64 = (0..T).filter(|t| mask >> t & 1 == 1).map(|t| e[t]).sum();
                if cost < best[k].0 {
                    best[k] = (cost, mask);
                }
            }
            for (k, &(cost, mask)) in best.iter().enumerate().skip(1) {
                let ctx = ChargingContext {
                    initial: 0.0,
                    demand: k as f64,
                    rate: 1.0,
                    horizon: T,
                    gamma: 0.0,
                    eta: 0.0,
                };
                let (action, reported) = (o.ev_optimal)(&ctx, &e)?;
                let got: u32 = action
                    .schedule()
                    .unwrap_or(&[])
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0)
                    .map(|(t, _)| 1u32 << t)
                    .sum();
                worst = worst.max((reported - cost).abs());
                if got != mask || (reported - cost).abs() > 1e-12 {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
        Ok(Check {
            passed: mismatches == 0,
            measured: worst,
            tolerance: 1e-12,
            cases,
            detail: format!("{mismatches} schedule mismatches"),
        })
    })
}

/// Samples of a small data-center pipeline for the gradient check.
struct GradFixture {
    windows: Vec<FeatureWindow>,
    contexts: Vec<AgentContext>,
    truths: Vec<f64>,
    agents: usize,
}

/// Forecasts are `0.5 + 0.1 * net`, as a standardizer with mean 0.5 and std 0.1 would produce.
const FIX_MEAN: f64 = 0.5;
const FIX_STD: f64 = 0.1;

impl GradFixture {
    fn new(rng: &mut Rng64, lookback: usize) -> Result<Self> {
        let lambdas = [2.0, 20.0, 60.0];
        let mut f = GradFixture {
            windows: Vec::new(),
            contexts: Vec::new(),
            truths: Vec::new(),
            agents: lambdas.len(),
        };
        for (m, &lambda) in lambdas.iter().enumerate() {
            for _ in 0..4 {
                f.windows
                    .push(FeatureWindow::new((0..lookback).map(|_| rng.random_range(-1.5..1.5)).collect(), m));
                f.contexts
                    .push(AgentContext::DataCenter(DataCenterContext::new(rng.random_range(0.5..2.0), lambda)?));
                f.truths.push(rng.random_range(0.3..0.8));
            }
        }
        Ok(f)
    }

    fn forecast(&self, params: &ParamVector, i: usize) -> Result<f64> {
        Ok(FIX_MEAN + FIX_STD * forward(params, &self.windows[i])?.values[0])
    }

    fn loss(&self, params: &ParamVector, q: f64, beta: f64) -> Result<f64> {
        let mut regrets = vec![0.0; self.agents];
        let mut sq = vec![0.0; self.agents];
        let mut counts = vec![0.0; self.agents];
        for i in 0..self.windows.len() {
            let m = self.windows[i].agent;
            let y_hat = self.forecast(params, i)?;
            let (r, _) = regret_with_grad(m, &self.contexts[i], &[y_hat], &[self.truths[i]])?;
            regrets[m] += r.value;
            sq[m] += (y_hat - self.truths[i]).powi(2);
            counts[m] += 1.0;
        }
        for m in 0..self.agents {
            regrets[m] /= counts[m];
            sq[m] /= counts[m];
        }
        Ok(combined_loss(&regrets, &sq, q, beta)?.combined)
    }

    fn records(&self, params: &ParamVector) -> Result<Vec<ChainRecord<'_>>> {
        (0..self.windows.len())
            .map(|i| {
                let m = self.windows[i].agent;
                let y_hat = self.forecast(params, i)?;
                let (r, g) = regret_with_grad(m, &self.contexts[i], &[y_hat], &[self.truths[i]])?;
                Ok(ChainRecord {
                    agent: m,
                    window: &self.windows[i],
                    regret: r.value,
                    regret_grad: vec![FIX_STD * g[0]],
                    residual: vec![FIX_STD * (y_hat - self.truths[i])],
                })
            })
            .collect()
    }
}

/// `chain_grad` against central differences (step 1e-6) of the combined loss
/// of a `[4, 6, 1]` tanh network feeding three data centers, over
/// q in {0, 1, 2} and beta in {0, 0.5, 1}.
pub fn gradient_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("chain_gradient", || {
        let mut rng = seeded(derive_seed(seed, 0x62AD));
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for rep in 0..2u64 {
            let params = init_params(&[4, 6, 1], derive_seed(seed, rep))?;
            let fix = GradFixture::new(&mut rng, 4)?;
            for q in [0.0, 1.0, 2.0] {
                for beta in [0.0, 0.5, 1.0] {
                    let records = fix.records(&params)?;
                    let g = (o.chain_grad)(&params, &records, fix.agents, q, beta)?;
                    let h = 1e-6;
                    for j in 0..params.len() {
                        let mut plus = params.clone();
                        plus.values_mut()[j] += h;
                        let mut minus = params.clone();
                        minus.values_mut()[j] -= h;
                        let fd = (fix.loss(&plus, q, beta)? - fix.loss(&minus, q, beta)?) / (2.0 * h);
                        let an = g.values()[j];
                        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                        worst = worst.max(rel);
                    }
                    cases += 1;
                }
            }
        }
        Ok(Check {
            passed: worst < 1e-3,
            measured: worst,
            tolerance: 1e-3,
            cases,
            detail: "max relative error per coordinate".into(),
        })
    })
}

/// Single-sample score-function estimates on `C(y_hat) = (y_hat - 1)^2`,
/// `y_hat ~ N(theta, 0.3^2)`: the mean of 2e5 draws must lie within 5
/// standard errors of `2 (theta - 1)` at theta in {0, 0.5, 2}.
pub fn pg_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("pg_unbiased", || {
        const DRAWS: usize = 200_000;
        let mut rng = seeded(derive_seed(seed, 0x96));
        let x = FeatureWindow::new(vec![0.0], 0);
        let opts = PgOptions {
            q: 0.0,
            beta: 0.0,
            mse_route: MseRoute::Pathwise,
            baseline: None,
        };
        let mut worst: f64 = 0.0;
        for theta in [0.0, 0.5, 2.0] {
            // Weight 0, bias theta: the network output is theta for the zero input.
            let params = ParamVector::from_values(Layout::new(&[1, 1])?, vec![0.0, theta])?;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..DRAWS {
                let sample = sample_prediction(&params, &x, 0.3, &mut rng)?;
                let rec = PgRecord {
                    agent: 0,
                    score: score_grad(&params, &x, &sample)?,
                    regret: (sample.sample[0] - 1.0).powi(2),
                    sq_error: 0.0,
                    sq_error_grad: None,
                    baseline: None,
                };
                let g = (o.pg_batch_grad)(&[rec], 1, &opts)?.grad.bias(0)[0];
                sum += g;
                sum_sq += g * g;
            }
            let n = DRAWS as f64;
            let mean = sum / n;
            let se = ((sum_sq / n - mean * mean) / n).sqrt();
            worst = worst.max((mean - 2.0 * (theta - 1.0)).abs() / se);
        }
        Ok(Check {
            passed: worst <= 5.0,
            measured: worst,
            tolerance: 5.0,
            cases: 3,
            detail: "largest |mean - analytic| in standard errors".into(),
        })
    })
}

fn random_toys(rng: &mut Rng64) -> Vec<ToyAgent> {
    let t0: f64 = rng.random_range(-2.0..2.0);
    let mut t1 = rng.random_range(-2.0..2.0);
    while (t1 - t0).abs() < 0.05 {
        t1 = rng.random_range(-2.0..2.0);
    }
    vec![
        ToyAgent::new(t0, rng.random_range(0.0..1.0)),
        ToyAgent::new(t1, rng.random_range(0.0..1.0)),
    ]
}

/// Regret variance at the q = 1 optimum never exceeds that at q = 0 (+1e-9),
/// 50 random two-agent toys.
pub fn variance_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("equity_variance", || {
        let mut rng = seeded(derive_seed(seed, 0x7A2));
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..50 {
            let c = theorem_check_variance_with(&random_toys(&mut rng), o.toy_optimum)?;
            worst = worst.max(c.var_q1 - c.var_q0);
        }
        Ok(Check {
            passed: worst <= 1e-9,
            measured: worst,
            tolerance: 1e-9,
            cases: 50,
            detail: "largest var(q=1) - var(q=0)".into(),
        })
    })
}

/// The derivative in p of the normalized entropy of `C^(q+1)` at the p-optimum
/// is at least -1e-6 at q in {0, 0.5, 1, 2}, 20 random two-agent toys.
pub fn entropy_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("equity_entropy", || {
        let mut rng = seeded(derive_seed(seed, 0xE27));
        let mut worst = f64::INFINITY;
        for _ in 0..20 {
            let toys = random_toys(&mut rng);
            for d in theorem_check_entropy_with(&toys, &[0.0, 0.5, 1.0, 2.0], 1e-3, o.toy_optimum)? {
                worst = worst.min(d.derivative);
            }
        }
        Ok(Check {
            passed: worst >= -1e-6,
            measured: worst,
            tolerance: -1e-6,
            cases: 80,
            detail: "smallest entropy derivative".into(),
        })
    })
}

/// `equitable_loss^(1/(q+1))` equals `<v, r>` for the Hölder maximizer `v`
/// within 1e-10, `v` lies in the unit dual ball, and no random point of the
/// ball does better. 100 random vectors, q in {0, 0.5, 2, 9}.
pub fn dual_norm_suite(o: &Oracles, seed: u64) -> SuiteReport {
    timed("dual_norm", || {
        let mut rng = seeded(derive_seed(seed, 0xD7A1));
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for _ in 0..100 {
            let m = rng.random_range(1..=20);
            let r: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            for q in [0.0, 0.5, 2.0, 9.0] {
                let lhs = (o.equitable_loss)(&r, q)?.powf(1.0 / (q + 1.0));
                let v = (o.holder_maximizer)(&r, q)?;
                let rhs: f64 = v.iter().zip(&r).map(|(a, b)| a * b).sum();
                let norm = dual_ball_norm(&v, q);
                let mut beaten = false;
                for _ in 0..20 {
                    let u: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                    let scale = dual_ball_norm(&u, q);
                    let value: f64 = u.iter().zip(&r).map(|(a, b)| a * b / scale).sum();
                    beaten |= value > rhs + 1e-10;
                }
                let err = (lhs - rhs).abs();
                worst = worst.max(err);
                if err > 1e-10 || norm > 1.0 + 1e-12 || v.iter().any(|x| *x < 0.0) || beaten {
                    failures += 1;
                }
            }
        }
        Ok(Check {
            passed: failures == 0,
            measured: worst,
            tolerance: 1e-10,
            cases: 400,
            detail: format!("{failures} cases off"),
        })
    })
}

/// Norm of the ball the maximizer ranges over: `l_p` with `1/p + 1/(q+1) = 1`.
fn dual_ball_norm(v: &[f64], q: f64) -> f64 {
    if q == 0.0 {
        return v.iter().fold(0.0, |a, x| a.max(x.abs()));
    }
    let p = (q + 1.0) / q;
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}
