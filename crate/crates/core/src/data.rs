//! Datasets: synthetic agent pools, CSV ingestion, windowing, normalization,
//! train/test splitting and per-agent batch planning.
//!
//! A [`SeriesDataset`] holds the public feature series the model reads, plus,
//! for every agent, the series its decisions are scored against. For the data
//! center application that target is the agent's local grid intensity; for
//! charging it is the agent's own weighted combination of carbon, water and
//! price signals. The public model never sees which agent it serves, so
//! agents whose targets differ compete for the same forecast.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, AgentSpec, ChargingContext};
use crate::error::{Error, Result};
use crate::predictor::FeatureWindow;
use crate::rng::{derive_seed, seeded, Rng64};

/// Hours in the daily cycle of every synthetic signal.
pub const DAY: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heterogeneity {
    #[default]
    Similar,
    Different,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaScheme {
    #[default]
    Same,
    Grid,
}

/// One agent's slice of a [`SeriesDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSeries {
    pub spec: AgentSpec,
    /// Series the agent's decisions are scored against; aligned with the public signal.
    pub target: Vec<f64>,
    /// Per-step workloads (data centers only).
    pub workload: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub timestamps: Vec<i64>,
    /// Public feature series.
    pub signal: Vec<f64>,
    pub agents: Vec<AgentSeries>,
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.signal.len();
        if self.timestamps.len() != n {
            return Err(Error::dim("dataset timestamps", n, self.timestamps.len()));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidValue("timestamps must be strictly increasing".into()));
        }
        if self.signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("public signal contains non-finite values".into()));
        }
        for (m, a) in self.agents.iter().enumerate() {
            if a.spec.id != m {
                return Err(Error::InvalidValue(format!(
                    "agent ids must be 0..M in order; position {m} holds id {}",
                    a.spec.id
                )));
            }
            if a.target.len() != n {
                return Err(Error::dim("agent target series", n, a.target.len()));
            }
            if a.target.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("agent {m}: non-finite target")));
            }
            match (&a.spec.kind, &a.workload) {
                (AgentKind::DataCenter { lambda }, Some(w)) => {
                    if w.len() != n {
                        return Err(Error::dim("agent workload series", n, w.len()));
                    }
                    if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                        return Err(Error::InvalidValue(format!("agent {m}: workloads must be positive")));
                    }
                    if a.target.iter().any(|&c| c <= 0.0) {
                        return Err(Error::InvalidValue(format!(
                            "agent {m}: carbon intensity must be positive"
                        )));
                    }
                    if !(*lambda > 0.0) {
                        return Err(Error::InvalidValue(format!("agent {m}: lambda must be positive")));
                    }
                }
                (AgentKind::DataCenter { .. }, None) => {
                    return Err(Error::InvalidValue(format!("data-center agent {m} has no workloads")));
                }
                (AgentKind::Charging(ctx), _) => ctx.validate()?,
            }
        }
        Ok(())
    }
}

/// A periodic component `amplitude * sin(2 pi (t + phase) / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A positive periodic series with optional AR(1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesShape {
    pub base: f64,
    pub harmonics: Vec<Harmonic>,
    pub noise_std: f64,
    /// AR(1) coefficient of the noise; 0 gives white noise.
    #[serde(default)]
    pub persistence: f64,
}

impl SeriesShape {
    pub fn daily(base: f64, amplitude: f64, noise_std: f64) -> Self {
        Self {
            base,
            harmonics: vec![Harmonic {
                period: DAY as f64,
                amplitude,
                phase: 0.0,
            }],
            noise_std,
            persistence: 0.0,
        }
    }
}

/// Generate a series following `shape`, floored at `0.05 * base`.
pub fn synth_series(length: usize, seed: u64, shape: &SeriesShape) -> Result<Vec<f64>> {
    if !(shape.base > 0.0 && shape.base.is_finite()) {
        return Err(Error::InvalidValue(format!("series base must be positive, got {}", shape.base)));
    }
    if !(shape.noise_std >= 0.0) || !(shape.persistence.abs() < 1.0) {
        return Err(Error::InvalidValue(format!(
            "noise std must be nonnegative and |persistence| < 1: {shape:?}"
        )));
    }
    let mut rng = seeded(seed);
    let floor = 0.05 * shape.base;
    // Innovation scale keeps the stationary noise std at `noise_std`.
    let innovation = shape.noise_std * (1.0 - shape.persistence * shape.persistence).sqrt();
    let mut noise = if shape.noise_std > 0.0 {
        let z: f64 = StandardNormal.sample(&mut rng);
        shape.noise_std * z
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        let periodic: f64 = shape
            .harmonics
            .iter()
            .map(|h| h.amplitude * (2.0 * PI * (t as f64 + h.phase) / h.period).sin())
            .sum();
        if t > 0 && shape.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise = shape.persistence * noise + innovation * z;
        }
        out.push((shape.base + periodic + noise).max(floor));
    }
    Ok(out)
}

/// Daily sinusoid around `base` plus Gaussian noise, floored at `0.05 * base`.
pub fn synth_carbon(length: usize, seed: u64, base: f64, amplitude: f64, noise_std: f64) -> Result<Vec<f64>> {
    synth_series(length, seed, &SeriesShape::daily(base, amplitude, noise_std))
}

/// Evenly spaced latency weights: all 2 for `Same`, spanning [2, 100] for `Grid`.
pub fn lambda_values(num_agents: usize, scheme: LambdaScheme) -> Vec<f64> {
    match scheme {
        LambdaScheme::Same => vec![2.0; num_agents],
        LambdaScheme::Grid if num_agents == 1 => vec![2.0],
        LambdaScheme::Grid => (0..num_agents)
            .map(|m| 2.0 + 98.0 * m as f64 / (num_agents - 1) as f64)
            .collect(),
    }
}

/// Knobs for the synthetic data-center pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataCenterSynth {
    pub agents: usize,
    pub heterogeneity: Heterogeneity,
    pub lambda_scheme: LambdaScheme,
    pub length: usize,
    pub carbon: SeriesShape,
    /// Mean workload of an agent.
    pub workload_base: f64,
    /// Half-width of the uniform spread of local grid offsets (similar agents).
    pub local_spread: f64,
    /// Largest relative amplitude of an agent's own daily grid profile (similar agents).
    pub local_amplitude: f64,
    /// Offset half-width used for agents selected as "different".
    pub local_spread_different: f64,
    /// Amplitude bound used for agents selected as "different".
    pub local_amplitude_different: f64,
    /// Std of the local white noise added to an agent's grid intensity.
    pub local_noise: f64,
    /// Fraction of agents that receive injected noise under `Different`.
    pub noisy_fraction: f64,
}

impl Default for DataCenterSynth {
    fn default() -> Self {
        Self {
            agents: 50,
            heterogeneity: Heterogeneity::Similar,
            lambda_scheme: LambdaScheme::Grid,
            length: 24 * 40,
            carbon: SeriesShape {
                base: 0.5,
                harmonics: vec![
                    Harmonic {
                        period: 24.0,
                        amplitude: 0.15,
                        phase: 0.0,
                    },
                    Harmonic {
                        period: 12.0,
                        amplitude: 0.04,
                        phase: 3.0,
                    },
                ],
                noise_std: 0.03,
                persistence: 0.7,
            },
            workload_base: 1.0,
            local_spread: 0.05,
            local_amplitude: 0.3,
            local_spread_different: 0.15,
            local_amplitude_different: 0.5,
            local_noise: 0.01,
            noisy_fraction: 0.4,
        }
    }
}

/// Local grid intensity `c_t * (1 + offset + amplitude * sin(2 pi (t + phase) / 24))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGrid {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl LocalGrid {
    pub fn factor(&self, t: usize) -> f64 {
        1.0 + self.offset + self.amplitude * (2.0 * PI * (t as f64 + self.phase) / DAY as f64).sin()
    }
}

/// Agent list plus per-agent streams produced by [`synth_agents`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPool {
    pub agents: Vec<AgentSpec>,
    pub workloads: Vec<Vec<f64>>,
    /// How each agent's local grid deviates from the public signal.
    pub local_grids: Vec<LocalGrid>,
    /// Indices of agents that received injected noise.
    pub noisy: Vec<usize>,
}

fn pick_noisy(num_agents: usize, fraction: f64, rng: &mut Rng64) -> Vec<usize> {
    let count = ((num_agents as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..num_agents).collect();
    idx.shuffle(rng);
    let mut chosen = idx[..count.min(num_agents)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Data-center agents with workload streams.
///
/// `Similar` agents share one diurnal workload profile with small per-agent
/// perturbations. `Different` additionally multiplies the workloads of a
/// random subset of agents by log-normal noise whose scale varies over an
/// order of magnitude between agents, and widens their local grid deviations.
pub fn synth_agents(
    num_agents: usize,
    heterogeneity: Heterogeneity,
    lambda_scheme: LambdaScheme,
    length: usize,
    seed: u64,
) -> Result<SynthPool> {
    let cfg = DataCenterSynth {
        agents: num_agents,
        heterogeneity,
        lambda_scheme,
        length,
        ..DataCenterSynth::default()
    };
    synth_agents_with(&cfg, seed)
}

pub fn synth_agents_with(cfg: &DataCenterSynth, seed: u64) -> Result<SynthPool> {
    if cfg.agents == 0 {
        return Err(Error::Config("agent pool needs at least one agent".into()));
    }
    if !(cfg.workload_base > 0.0) {
        return Err(Error::Config("workload base must be positive".into()));
    }
    let mut rng = seeded(derive_seed(seed, 0xA6E7));
    let lambdas = lambda_values(cfg.agents, cfg.lambda_scheme);
    let noisy = match cfg.heterogeneity {
        Heterogeneity::Similar => Vec::new(),
        Heterogeneity::Different => pick_noisy(cfg.agents, cfg.noisy_fraction, &mut rng),
    };
    let mut agents = Vec::with_capacity(cfg.agents);
    let mut workloads = Vec::with_capacity(cfg.agents);
    let mut local_grids = Vec::with_capacity(cfg.agents);
    for (m, &lambda) in lambdas.iter().enumerate() {
        agents.push(AgentSpec {
            id: m,
            kind: AgentKind::DataCenter { lambda },
        });
        let level = cfg.workload_base * rng.random_range(0.9..1.1);
        let phase = rng.random_range(-2.0..2.0);
        let is_noisy = noisy.binary_search(&m).is_ok();
        // Log-normal multiplicative noise; scale spans 0.05..1.5 across noisy agents.
        let noise_scale = if is_noisy {
            (0.05f64.ln() + rng.random::<f64>() * (1.5f64.ln() - 0.05f64.ln())).exp()
        } else {
            0.02
        };
        let series: Vec<f64> = (0..cfg.length)
            .map(|t| {
                let diurnal = 1.0 + 0.3 * (2.0 * PI * (t as f64 + phase) / DAY as f64).sin();
                let z: f64 = StandardNormal.sample(&mut rng);
                let w = level * diurnal * (noise_scale * z - 0.5 * noise_scale * noise_scale).exp();
                w.max(0.01 * cfg.workload_base)
            })
            .collect();
        workloads.push(series);
        let (spread, amplitude) = if is_noisy {
            (cfg.local_spread_different, cfg.local_amplitude_different)
        } else {
            (cfg.local_spread, cfg.local_amplitude)
        };
        local_grids.push(LocalGrid {
            offset: if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 },
            amplitude: if amplitude > 0.0 { rng.random_range(0.0..=amplitude) } else { 0.0 },
            phase: rng.random_range(0.0..DAY as f64),
        });
    }
    Ok(SynthPool {
        agents,
        workloads,
        local_grids,
        noisy,
    })
}

/// Full synthetic data-center dataset: public carbon signal plus local targets and workloads.
pub fn synth_datacenter(cfg: &DataCenterSynth, seed: u64) -> Result<SeriesDataset> {
    let signal = synth_series(cfg.length, derive_seed(seed, 0xCA4B), &cfg.carbon)?;
    let pool = synth_agents_with(cfg, seed)?;
    let floor = 0.05 * cfg.carbon.base;
    let noise = Normal::new(0.0, cfg.local_noise.max(0.0))
        .map_err(|e| Error::Config(format!("local noise: {e}")))?;
    let mut rng = seeded(derive_seed(seed, 0x10CA));
    let agents = pool
        .agents
        .into_iter()
        .zip(pool.workloads)
        .zip(pool.local_grids)
        .map(|((spec, workload), grid)| {
            let target = signal
                .iter()
                .enumerate()
                .map(|(t, &c)| (c * grid.factor(t) + noise.sample(&mut rng)).max(floor))
                .collect();
            AgentSeries {
                spec,
                target,
                workload: Some(workload),
            }
        })
        .collect();
    let ds = SeriesDataset {
        timestamps: (0..cfg.length as i64).collect(),
        signal,
        agents,
    };
    ds.validate()?;
    Ok(ds)
}

/// What the public model forecasts for charging agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargingTarget {
    /// Each agent's `E^C + gamma E^W + eta E^P`; the public input is the unit-weight sum.
    #[default]
    Combined,
    /// Carbon intensity only, for every agent.
    Carbon,
}

/// Knobs for the synthetic charging pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargingSynth {
    pub agents: usize,
    pub horizon: usize,
    pub heterogeneity: Heterogeneity,
    pub length: usize,
    pub target: ChargingTarget,
    pub carbon: SeriesShape,
    pub water: SeriesShape,
    pub price: SeriesShape,
    /// Nominal charging rate (energy per slot).
    pub rate: f64,
    /// Share of `Different` agents that weigh water and price heavily; the rest mostly follow carbon.
    pub minority_fraction: f64,
    /// Unit multiplier applied to all three signals.
    pub signal_scale: f64,
}

impl Default for ChargingSynth {
    fn default() -> Self {
        Self {
            agents: 70,
            horizon: 12,
            heterogeneity: Heterogeneity::Similar,
            length: 24 * 40,
            target: ChargingTarget::Combined,
            carbon: SeriesShape {
                base: 0.5,
                harmonics: vec![Harmonic {
                    period: 24.0,
                    amplitude: 0.15,
                    phase: 0.0,
                }],
                noise_std: 0.04,
                persistence: 0.6,
            },
            water: SeriesShape {
                base: 0.4,
                harmonics: vec![Harmonic {
                    period: 24.0,
                    amplitude: 0.15,
                    phase: 8.0,
                }],
                noise_std: 0.04,
                persistence: 0.6,
            },
            price: SeriesShape {
                base: 0.4,
                harmonics: vec![
                    Harmonic {
                        period: 24.0,
                        amplitude: 0.12,
                        phase: 16.0,
                    },
                    Harmonic {
                        period: 12.0,
                        amplitude: 0.06,
                        phase: 1.0,
                    },
                ],
                noise_std: 0.04,
                persistence: 0.6,
            },
            rate: 1.0,
            minority_fraction: 0.3,
            signal_scale: 1.0,
        }
    }
}

/// Charging contexts and the signal components produced by [`synth_charging`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingPool {
    pub contexts: Vec<ChargingContext>,
    pub carbon: Vec<f64>,
    pub water: Vec<f64>,
    pub price: Vec<f64>,
}

impl ChargingPool {
    /// `E^C + gamma E^W + eta E^P`.
    pub fn combined(&self, gamma: f64, eta: f64) -> Vec<f64> {
        self.carbon
            .iter()
            .zip(&self.water)
            .zip(&self.price)
            .map(|((c, w), p)| c + gamma * w + eta * p)
            .collect()
    }
}

/// Charging agents whose slot requirement `ceil((D - I) / rate)` lies in `[1, T]`.
///
/// `Similar` agents need 4 to 8 slots at rates within 20% of nominal and weigh
/// water and price close to 1. `Different` agents span 1 to `T` slots and a
/// fourfold range of rates; a majority weighs water and price by at most 0.5,
/// while a minority weighs them by 2 to 3 and so ranks slots differently.
pub fn synth_charging(cfg: &ChargingSynth, seed: u64) -> Result<ChargingPool> {
    if cfg.agents == 0 {
        return Err(Error::Config("charging pool needs at least one agent".into()));
    }
    if cfg.horizon == 0 {
        return Err(Error::Config("charging horizon must be at least 1".into()));
    }
    if !(cfg.rate > 0.0) {
        return Err(Error::Config("charging rate must be positive".into()));
    }
    if !(cfg.signal_scale > 0.0 && cfg.signal_scale.is_finite()) {
        return Err(Error::Config("signal scale must be positive".into()));
    }
    let mut rng = seeded(derive_seed(seed, 0xEC4A));
    let t = cfg.horizon;
    let minority = match cfg.heterogeneity {
        Heterogeneity::Similar => Vec::new(),
        Heterogeneity::Different => pick_noisy(cfg.agents, cfg.minority_fraction, &mut rng),
    };
    let mut contexts = Vec::with_capacity(cfg.agents);
    for m in 0..cfg.agents {
        let in_minority = minority.binary_search(&m).is_ok();
        let (k_lo, k_hi, rate_lo, rate_hi, w_lo, w_hi): (usize, usize, f64, f64, f64, f64) = match cfg.heterogeneity {
            Heterogeneity::Similar => ((t / 3).max(1), (2 * t / 3).max(1), 0.8, 1.2, 0.8, 1.2),
            Heterogeneity::Different if in_minority => (2, t.saturating_sub(2).max(2), 0.8, 1.25, 2.0, 3.0),
            Heterogeneity::Different => (2, t.saturating_sub(2).max(2), 0.8, 1.25, 0.0, 0.5),
        };
        let k = rng.random_range(k_lo..=k_hi.max(k_lo));
        let rate = cfg.rate * (rate_lo.ln() + rng.random::<f64>() * (rate_hi.ln() - rate_lo.ln())).exp();
        // Energy strictly inside ((k-1) rate, k rate] so exactly k slots are needed.
        let energy = rate * (k as f64 - 1.0 + rng.random_range(0.05..=1.0));
        let initial = rng.random_range(0.0..2.0) * cfg.rate;
        let (gamma, eta) = match cfg.target {
            ChargingTarget::Combined => (rng.random_range(w_lo..=w_hi), rng.random_range(w_lo..=w_hi)),
            ChargingTarget::Carbon => (0.0, 0.0),
        };
        let ctx = ChargingContext {
            initial,
            demand: initial + energy,
            rate,
            horizon: t,
            gamma,
            eta,
        };
        ctx.validate()?;
        debug_assert_eq!(ctx.slots_needed(), k);
        contexts.push(ctx);
    }
    let scaled = |tag: u64, shape: &SeriesShape| -> Result<Vec<f64>> {
        let mut v = synth_series(cfg.length, derive_seed(seed, tag), shape)?;
        v.iter_mut().for_each(|x| *x *= cfg.signal_scale);
        Ok(v)
    };
    Ok(ChargingPool {
        contexts,
        carbon: scaled(1, &cfg.carbon)?,
        water: scaled(2, &cfg.water)?,
        price: scaled(3, &cfg.price)?,
    })
}

/// Full synthetic charging dataset.
pub fn synth_charging_dataset(cfg: &ChargingSynth, seed: u64) -> Result<SeriesDataset> {
    let pool = synth_charging(cfg, seed)?;
    let signal = match cfg.target {
        ChargingTarget::Combined => pool.combined(1.0, 1.0),
        ChargingTarget::Carbon => pool.carbon.clone(),
    };
    let agents = pool
        .contexts
        .iter()
        .enumerate()
        .map(|(m, ctx)| AgentSeries {
            spec: AgentSpec {
                id: m,
                kind: AgentKind::Charging(*ctx),
            },
            target: match cfg.target {
                ChargingTarget::Combined => pool.combined(ctx.gamma, ctx.eta),
                ChargingTarget::Carbon => pool.carbon.clone(),
            },
            workload: None,
        })
        .collect();
    let ds = SeriesDataset {
        timestamps: (0..cfg.length as i64).collect(),
        signal,
        agents,
    };
    ds.validate()?;
    Ok(ds)
}

/// Data-center agents and charging agents sharing one carbon forecast.
///
/// The public signal is the regional carbon intensity. Data-center agents keep
/// their local grids; charging agents rank slots by the regional carbon
/// intensity itself.
pub fn synth_mixed(dc: &DataCenterSynth, ev: &ChargingSynth, seed: u64) -> Result<SeriesDataset> {
    let mut ds = synth_datacenter(dc, seed)?;
    let ev_cfg = ChargingSynth {
        target: ChargingTarget::Carbon,
        ..ev.clone()
    };
    let pool = synth_charging(&ev_cfg, derive_seed(seed, 0x313D))?;
    let offset = ds.agents.len();
    for (i, ctx) in pool.contexts.into_iter().enumerate() {
        ds.agents.push(AgentSeries {
            spec: AgentSpec {
                id: offset + i,
                kind: AgentKind::Charging(ctx),
            },
            target: ds.signal.clone(),
            workload: None,
        });
    }
    ds.validate()?;
    Ok(ds)
}

/// Earth mover's distance between two empirical 1-D distributions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // Integrate |F_a^-1(u) - F_b^-1(u)| over the merged quantile grid.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Min and max of each agent's distance to the pooled distribution of `streams`.
pub fn heterogeneity_range(streams: &[Vec<f64>]) -> (f64, f64) {
    let pooled: Vec<f64> = streams.iter().flatten().copied().collect();
    streams
        .iter()
        .map(|s| wasserstein_1d(s, &pooled))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    /// `timestamp,carbon_intensity`
    Carbon,
    /// `timestamp,agent_id,demand`
    Workload,
    /// `agent_id,initial,demand,rate,horizon`
    Charging,
    /// `timestamp,E`
    Signal,
}

impl CsvSchema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            CsvSchema::Carbon => &["timestamp", "carbon_intensity"],
            CsvSchema::Workload => &["timestamp", "agent_id", "demand"],
            CsvSchema::Charging => &["agent_id", "initial", "demand", "rate", "horizon"],
            CsvSchema::Signal => &["timestamp", "E"],
        }
    }
}

/// Parsed contents of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvData {
    Series {
        timestamps: Vec<i64>,
        values: Vec<f64>,
    },
    Workload {
        timestamps: Vec<i64>,
        per_agent: BTreeMap<usize, Vec<f64>>,
    },
    Charging(Vec<(usize, ChargingContext)>),
}

impl CsvData {
    pub fn len(&self) -> usize {
        match self {
            CsvData::Series { values, .. } => values.len(),
            CsvData::Workload { timestamps, .. } => timestamps.len(),
            CsvData::Charging(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_cell<T: std::str::FromStr>(path: &Path, line: usize, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column `{column}`: cannot parse {raw:?}"),
    })
}

fn parse_finite(path: &Path, line: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = parse_cell(path, line, column, raw)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column `{column}`: value {raw:?} is not finite"),
        });
    }
    Ok(v)
}

/// Read and validate one CSV file. Lines are counted from 1, the header being line 1.
pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<CsvData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let mut index = Vec::new();
    for col in schema.columns() {
        let pos = headers.iter().position(|h| h == *col).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing column `{col}`"),
        })?;
        index.push(pos);
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let cells: Vec<String> = index
            .iter()
            .zip(schema.columns())
            .map(|(&pos, col)| {
                record.get(pos).map(str::to_owned).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("missing value for `{col}`"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push((line, cells));
    }

    let cols = schema.columns();
    match schema {
        CsvSchema::Carbon | CsvSchema::Signal => {
            let mut timestamps = Vec::with_capacity(rows.len());
            let mut values = Vec::with_capacity(rows.len());
            for (line, cells) in &rows {
                let ts: i64 = parse_cell(path, *line, cols[0], &cells[0])?;
                let v = parse_finite(path, *line, cols[1], &cells[1])?;
                if schema == CsvSchema::Carbon && v <= 0.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message: format!("carbon intensity must be positive, got {v}"),
                    });
                }
                if timestamps.last().is_some_and(|&prev| ts <= prev) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message: format!("timestamp {ts} is not strictly increasing"),
                    });
                }
                timestamps.push(ts);
                values.push(v);
            }
            Ok(CsvData::Series { timestamps, values })
        }
        CsvSchema::Workload => {
            let mut per_agent_ts: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
            let mut per_agent: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (line, cells) in &rows {
                let ts: i64 = parse_cell(path, *line, cols[0], &cells[0])?;
                let agent: usize = parse_cell(path, *line, cols[1], &cells[1])?;
                let demand = parse_finite(path, *line, cols[2], &cells[2])?;
                if demand <= 0.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message: format!("demand must be positive, got {demand}"),
                    });
                }
                let series_ts = per_agent_ts.entry(agent).or_default();
                if series_ts.last().is_some_and(|&prev| ts <= prev) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message: format!("timestamp {ts} for agent {agent} is not strictly increasing"),
                    });
                }
                series_ts.push(ts);
                per_agent.entry(agent).or_default().push(demand);
            }
            let mut iter = per_agent_ts.values();
            let timestamps = iter.next().cloned().unwrap_or_default();
            if let Some(other) = iter.find(|ts| **ts != timestamps) {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: format!(
                        "agents cover different timestamps ({} vs {} rows)",
                        timestamps.len(),
                        other.len()
                    ),
                });
            }
            Ok(CsvData::Workload { timestamps, per_agent })
        }
        CsvSchema::Charging => {
            let mut out = Vec::with_capacity(rows.len());
            for (line, cells) in &rows {
                let agent: usize = parse_cell(path, *line, cols[0], &cells[0])?;
                let ctx = ChargingContext {
                    initial: parse_finite(path, *line, cols[1], &cells[1])?,
                    demand: parse_finite(path, *line, cols[2], &cells[2])?,
                    rate: parse_finite(path, *line, cols[3], &cells[3])?,
                    horizon: parse_cell(path, *line, cols[4], &cells[4])?,
                    gamma: 1.0,
                    eta: 1.0,
                };
                ctx.validate().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    message: e.to_string(),
                })?;
                out.push((agent, ctx));
            }
            Ok(CsvData::Charging(out))
        }
    }
}

fn header_line(header: Option<&str>) -> String {
    header.map(|h| format!("# {h}\n")).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write a two-column series file (`timestamp,<value_column>`).
///
/// `header`, when given, becomes a leading `# ...` comment line; `load_csv` skips it.
pub fn write_series_csv(
    path: &Path,
    header: Option<&str>,
    value_column: &str,
    timestamps: &[i64],
    values: &[f64],
) -> Result<()> {
    let mut s = header_line(header);
    s.push_str(&format!("timestamp,{value_column}\n"));
    for (t, v) in timestamps.iter().zip(values) {
        s.push_str(&format!("{t},{v}\n"));
    }
    write_file(path, &s)
}

pub fn write_workload_csv(
    path: &Path,
    header: Option<&str>,
    timestamps: &[i64],
    workloads: &[(usize, &[f64])],
) -> Result<()> {
    let mut s = header_line(header);
    s.push_str("timestamp,agent_id,demand\n");
    for (i, t) in timestamps.iter().enumerate() {
        for (agent, w) in workloads {
            s.push_str(&format!("{t},{agent},{}\n", w[i]));
        }
    }
    write_file(path, &s)
}

pub fn write_charging_csv(path: &Path, header: Option<&str>, contexts: &[(usize, ChargingContext)]) -> Result<()> {
    let mut s = header_line(header);
    s.push_str("agent_id,initial,demand,rate,horizon\n");
    for (agent, c) in contexts {
        s.push_str(&format!("{agent},{},{},{},{}\n", c.initial, c.demand, c.rate, c.horizon));
    }
    write_file(path, &s)
}

// ---------------------------------------------------------------------------
// Agent pool description

/// One entry of the agent pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    #[serde(flatten)]
    pub spec: AgentSpec,
    /// Series the agent is scored against, relative to the pool file. Defaults to the public signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolFile {
    pub agents: Vec<PoolEntry>,
}

impl PoolFile {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("agent pool is empty".into()));
        }
        for (m, entry) in self.agents.iter().enumerate() {
            if entry.spec.id != m {
                return Err(Error::Config(format!(
                    "agent ids must be 0..M in file order; entry {m} has id {}",
                    entry.spec.id
                )));
            }
            match &entry.spec.kind {
                AgentKind::DataCenter { lambda } => {
                    if !(*lambda > 0.0 && lambda.is_finite()) {
                        return Err(Error::Config(format!("agent {m}: lambda must be positive")));
                    }
                }
                AgentKind::Charging(ctx) => ctx
                    .validate()
                    .map_err(|e| Error::Config(format!("agent {m}: {e}")))?,
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pool: PoolFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        write_file(path, &(text + "\n"))
    }
}

/// File locations of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    /// Public signal (`timestamp,carbon_intensity` or `timestamp,E`).
    pub signal: PathBuf,
    pub pool: PathBuf,
    /// Workload file for data-center agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<PathBuf>,
}

fn load_series_any(path: &Path) -> Result<(Vec<i64>, Vec<f64>)> {
    let data = load_csv(path, CsvSchema::Carbon).or_else(|_| load_csv(path, CsvSchema::Signal))?;
    match data {
        CsvData::Series { timestamps, values } => Ok((timestamps, values)),
        _ => unreachable!("series schemas parse into CsvData::Series"),
    }
}

/// Write `ds` as signal, workload, pool and per-agent target files under `dir`.
pub fn save_dataset(
    ds: &SeriesDataset,
    dir: &Path,
    signal_column: &str,
    header: Option<&str>,
) -> Result<DatasetFiles> {
    let signal = dir.join("signal.csv");
    write_series_csv(&signal, header, signal_column, &ds.timestamps, &ds.signal)?;
    let mut entries = Vec::with_capacity(ds.agents.len());
    let mut workloads = Vec::new();
    for a in &ds.agents {
        let dataset = if a.target == ds.signal {
            None
        } else {
            let rel = format!("targets/agent_{}.csv", a.spec.id);
            write_series_csv(&dir.join(&rel), header, signal_column, &ds.timestamps, &a.target)?;
            Some(rel)
        };
        if let Some(w) = &a.workload {
            workloads.push((a.spec.id, w.as_slice()));
        }
        entries.push(PoolEntry {
            spec: a.spec.clone(),
            dataset,
        });
    }
    let workload = if workloads.is_empty() {
        None
    } else {
        let p = dir.join("workload.csv");
        write_workload_csv(&p, header, &ds.timestamps, &workloads)?;
        Some(p)
    };
    let charging: Vec<(usize, ChargingContext)> = ds
        .agents
        .iter()
        .filter_map(|a| match a.spec.kind {
            AgentKind::Charging(c) => Some((a.spec.id, c)),
            _ => None,
        })
        .collect();
    if !charging.is_empty() {
        write_charging_csv(&dir.join("charging.csv"), header, &charging)?;
    }
    let pool = dir.join("agents.json");
    PoolFile { agents: entries }.save(&pool)?;
    Ok(DatasetFiles {
        signal,
        pool,
        workload,
    })
}

/// Assemble a dataset from files written by [`save_dataset`] or prepared by hand.
pub fn load_dataset(files: &DatasetFiles) -> Result<SeriesDataset> {
    let (timestamps, signal) = load_series_any(&files.signal)?;
    let pool = PoolFile::load(&files.pool)?;
    let base = files.pool.parent().map(Path::to_path_buf).unwrap_or_default();
    let workloads = match &files.workload {
        Some(p) => match load_csv(p, CsvSchema::Workload)? {
            CsvData::Workload {
                timestamps: wt,
                per_agent,
            } => {
                if wt != timestamps {
                    return Err(Error::Schema {
                        path: p.clone(),
                        message: "workload timestamps do not match the signal".into(),
                    });
                }
                per_agent
            }
            _ => unreachable!(),
        },
        None => BTreeMap::new(),
    };
    let mut agents = Vec::with_capacity(pool.agents.len());
    for entry in pool.agents {
        let target = match &entry.dataset {
            Some(rel) => {
                let p = base.join(rel);
                let (ts, v) = load_series_any(&p)?;
                if ts != timestamps {
                    return Err(Error::Schema {
                        path: p,
                        message: "target timestamps do not match the signal".into(),
                    });
                }
                v
            }
            None => signal.clone(),
        };
        let workload = match entry.spec.kind {
            AgentKind::DataCenter { .. } => Some(workloads.get(&entry.spec.id).cloned().ok_or_else(|| {
                Error::Config(format!("no workload rows for data-center agent {}", entry.spec.id))
            })?),
            AgentKind::Charging(_) => None,
        };
        agents.push(AgentSeries {
            spec: entry.spec,
            target,
            workload,
        });
    }
    let ds = SeriesDataset {
        timestamps,
        signal,
        agents,
    };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Windowing, normalization and splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Split by time instead of at random; windows whose targets straddle the cut are dropped.
    #[serde(default)]
    pub chronological: bool,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        let s = Self {
            train_fraction,
            seed,
            chronological: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Affine z-scoring of features and targets, fit on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: f64,
    pub feature_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            feature_mean: 0.0,
            feature_std: 1.0,
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    fn fit_one(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return (0.0, 1.0);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        (mean, if std > 1e-12 { std } else { 1.0 })
    }

    pub fn normalize_feature(&self, v: f64) -> f64 {
        (v - self.feature_mean) / self.feature_std
    }

    pub fn denormalize_target(&self, v: f64) -> f64 {
        self.target_mean + self.target_std * v
    }

    pub fn normalize_target(&self, v: f64) -> f64 {
        (v - self.target_mean) / self.target_std
    }
}

/// One supervised example for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Normalized lookback window.
    pub window: FeatureWindow,
    /// Raw target (1 value, or `horizon` values).
    pub target: Vec<f64>,
    /// Workload at the first target step (data centers).
    pub workload: Option<f64>,
    /// Index of the first target step in the source series.
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    pub spec: AgentSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Windowed, normalized and split dataset ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedData {
    pub agents: Vec<AgentData>,
    pub standardizer: Standardizer,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowedData {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn input_dim(&self) -> usize {
        self.lookback
    }
}

/// Slice `ds` into `(window of L signal values, next `horizon` target values)` pairs,
/// split each agent's windows into train/test, and z-score with training statistics.
pub fn window_split(ds: &SeriesDataset, lookback: usize, horizon: usize, split: &SplitSpec) -> Result<WindowedData> {
    split.validate()?;
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback and horizon must be at least 1".into()));
    }
    if ds.len() < lookback + horizon {
        return Err(Error::Config(format!(
            "dataset has {} steps, fewer than lookback {lookback} + horizon {horizon}",
            ds.len()
        )));
    }
    if ds.agents.is_empty() {
        return Err(Error::Config("dataset has no agents".into()));
    }
    let num_windows = ds.len() - lookback - horizon + 1;
    let mut rng = seeded(derive_seed(split.seed, 0x5B11));

    // Window index i covers features [i, i+L) and targets [i+L, i+L+H).
    let mut splits: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(ds.agents.len());
    for _ in &ds.agents {
        let n_train = ((num_windows as f64) * split.train_fraction).round() as usize;
        let n_train = n_train.clamp(1, num_windows.saturating_sub(1).max(1));
        if split.chronological {
            let train: Vec<usize> = (0..n_train).collect();
            // Purge windows whose targets overlap the last training targets.
            let test: Vec<usize> = (n_train + horizon - 1..num_windows).collect();
            splits.push((train, test));
        } else {
            let mut idx: Vec<usize> = (0..num_windows).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            splits.push((train, test));
        }
    }

    let (feature_mean, feature_std) = Standardizer::fit_one(
        splits
            .iter()
            .flat_map(|(train, _)| train.iter())
            .flat_map(|&i| ds.signal[i..i + lookback].iter().copied()),
    );
    let (target_mean, target_std) = Standardizer::fit_one(
        splits
            .iter()
            .zip(&ds.agents)
            .flat_map(|((train, _), a)| train.iter().map(move |&i| (i, a)))
            .flat_map(|(i, a)| a.target[i + lookback..i + lookback + horizon].iter().copied()),
    );
    let standardizer = Standardizer {
        feature_mean,
        feature_std,
        target_mean,
        target_std,
    };

    let make = |a: &AgentSeries, i: usize| Sample {
        window: FeatureWindow::new(
            ds.signal[i..i + lookback]
                .iter()
                .map(|&v| standardizer.normalize_feature(v))
                .collect(),
            a.spec.id,
        ),
        target: a.target[i + lookback..i + lookback + horizon].to_vec(),
        workload: a.workload.as_ref().map(|w| w[i + lookback]),
        time: i + lookback,
    };
    let agents = ds
        .agents
        .iter()
        .zip(splits)
        .map(|(a, (train, test))| AgentData {
            spec: a.spec.clone(),
            train: train.iter().map(|&i| make(a, i)).collect(),
            test: test.iter().map(|&i| make(a, i)).collect(),
        })
        .collect();
    Ok(WindowedData {
        agents,
        standardizer,
        lookback,
        horizon,
    })
}

/// Indices `(agent, sample)` of one training batch.
pub type Batch = Vec<(usize, usize)>;

/// Shuffled per-agent batches for one epoch: every batch holds `B_m` samples of every agent.
pub fn epoch_batches(data: &WindowedData, batch_sizes: &[usize], rng: &mut Rng64) -> Result<Vec<Batch>> {
    if batch_sizes.len() != data.agents.len() {
        return Err(Error::dim("batch sizes", data.agents.len(), batch_sizes.len()));
    }
    let mut orders = Vec::with_capacity(data.agents.len());
    let mut effective = Vec::with_capacity(data.agents.len());
    for (a, &b) in data.agents.iter().zip(batch_sizes) {
        if a.train.is_empty() {
            return Err(Error::Config(format!("agent {} has no training samples", a.spec.id)));
        }
        if b == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        let mut idx: Vec<usize> = (0..a.train.len()).collect();
        idx.shuffle(rng);
        orders.push(idx);
        effective.push(b.min(a.train.len()));
    }
    let k = orders
        .iter()
        .zip(&effective)
        .map(|(o, &b)| o.len() / b)
        .min()
        .unwrap_or(0)
        .max(1);
    Ok((0..k)
        .map(|batch| {
            orders
                .iter()
                .zip(&effective)
                .enumerate()
                .flat_map(|(m, (o, &b))| o[batch * b..(batch + 1) * b].iter().map(move |&i| (m, i)))
                .collect()
        })
        .collect())
}
