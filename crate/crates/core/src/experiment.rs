//! Declarative experiment files and the runs they describe: dataset generation,
//! single training runs, evaluation of a checkpoint, and q/beta sweeps.
//!
//! Every file written here starts with the config hash and the seed, either as
//! a `# config_hash=... seed=...` line (CSV) or as top-level fields (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentKind;
use crate::checkpoint;
use crate::data::{
    heterogeneity_range, load_dataset, save_dataset, synth_charging_dataset, synth_datacenter, synth_mixed,
    window_split, ChargingSynth, DataCenterSynth, DatasetFiles, SeriesDataset, SplitSpec, WindowedData,
};
use crate::error::{Error, Result};
use crate::training::{evaluate, train, Forecaster, RunSummary, Split, StepRecord, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Application {
    #[default]
    Datacenter,
    Charging,
    /// Data centers and charging agents served by one carbon forecast.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub lookback: usize,
    /// Forecast length. Defaults to 1 for data centers and to the charging horizon otherwise.
    pub horizon: Option<usize>,
    pub train_fraction: f64,
    pub chronological: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 12,
            horizon: None,
            train_fraction: 0.67,
            chronological: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Power applied to regrets before the entropy. Unset: `q + 1` of the run.
    pub entropy_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub q_plus_1: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            q_plus_1: vec![1.0, 2.0, 5.0],
            beta: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub application: Application,
    pub seed: u64,
    /// Number of seeds, `seed, seed + 1, ...`.
    pub repeats: usize,
    pub output: PathBuf,
    pub datacenter: DataCenterSynth,
    pub charging: ChargingSynth,
    /// Read the dataset from disk instead of generating it.
    pub data: Option<DatasetFiles>,
    pub window: WindowConfig,
    pub train: TrainConfig,
    /// Trained first for every seed and reported next to the main runs.
    pub reference: Option<TrainConfig>,
    /// Start the main runs from the reference model rather than a fresh network.
    pub warm_start: bool,
    pub metrics: MetricsConfig,
    pub sweep: SweepGrid,
    /// Checkpoint read by `evaluate`; defaults to `<output>/model.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            application: Application::Datacenter,
            seed: 0,
            repeats: 1,
            output: PathBuf::from("out"),
            datacenter: DataCenterSynth::default(),
            charging: ChargingSynth::default(),
            data: None,
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            reference: None,
            warm_start: false,
            metrics: MetricsConfig::default(),
            sweep: SweepGrid::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

impl ConfigFormat {
    /// `.toml` is TOML; anything else is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("toml") => ConfigFormat::Toml,
            _ => ConfigFormat::Json,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let cfg: Self = match format {
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
        };
        Ok(cfg)
    }

    /// Read, resolve data paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, ConfigFormat::from_path(path)).map_err(|e| match e {
            Error::Config(msg) => Error::Schema {
                path: path.to_path_buf(),
                message: msg,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(files) = &mut cfg.data {
            files.signal = base.join(&files.signal);
            files.pool = base.join(&files.pool);
            files.workload = files.workload.as_ref().map(|p| base.join(p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.window.lookback == 0 {
            return bad("lookback must be positive".into());
        }
        if self.window.horizon == Some(0) {
            return bad("horizon must be positive".into());
        }
        SplitSpec {
            train_fraction: self.window.train_fraction,
            seed: self.seed,
            chronological: self.window.chronological,
        }
        .validate()?;
        self.train.validate()?;
        if let Some(r) = &self.reference {
            r.validate()?;
            if self.warm_start && r.hidden != self.train.hidden {
                return bad("warm start needs the reference and main runs to share hidden sizes".into());
            }
        } else if self.warm_start {
            return bad("warm_start needs a reference run".into());
        }
        if self.metrics.entropy_exponent.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
            return bad("entropy exponent must be positive".into());
        }
        if self.sweep.q_plus_1.is_empty() || self.sweep.beta.is_empty() {
            return bad("sweep grids must be nonempty".into());
        }
        if let Some(v) = self.sweep.q_plus_1.iter().find(|v| !(**v >= 1.0 && v.is_finite())) {
            return bad(format!("sweep q_plus_1 values must be at least 1, got {v}"));
        }
        if let Some(v) = self.sweep.beta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("sweep beta values must lie in [0, 1], got {v}"));
        }
        if let Some(files) = &self.data {
            let mut paths = vec![&files.signal, &files.pool];
            paths.extend(files.workload.as_ref());
            if let Some(p) = paths.into_iter().find(|p| !p.is_file()) {
                return bad(format!("data file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the config with `seed` and `output` blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.output = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed + i).collect()
    }

    pub fn horizon(&self) -> usize {
        if let Some(h) = self.window.horizon {
            return h;
        }
        match self.application {
            Application::Datacenter => 1,
            Application::Charging | Application::Mixed => self.charging.horizon,
        }
    }

    /// Synthetic or on-disk dataset for `seed`.
    pub fn dataset(&self, seed: u64) -> Result<SeriesDataset> {
        if let Some(files) = &self.data {
            return load_dataset(files);
        }
        match self.application {
            Application::Datacenter => synth_datacenter(&self.datacenter, seed),
            Application::Charging => synth_charging_dataset(&self.charging, seed),
            Application::Mixed => synth_mixed(&self.datacenter, &self.charging, seed),
        }
    }

    pub fn windowed(&self, seed: u64) -> Result<WindowedData> {
        let ds = self.dataset(seed)?;
        let split = SplitSpec {
            train_fraction: self.window.train_fraction,
            seed,
            chronological: self.window.chronological,
        };
        window_split(&ds, self.window.lookback, self.horizon(), &split)
    }

    pub fn entropy_exponent(&self, run: &TrainConfig) -> f64 {
        self.metrics.entropy_exponent.unwrap_or(run.q + 1.0)
    }

    /// The run configuration of one sweep cell.
    pub fn cell(&self, q_plus_1: f64, beta: f64) -> TrainConfig {
        TrainConfig {
            q: q_plus_1 - 1.0,
            beta,
            ..self.train.clone()
        }
    }

    pub fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }
}

/// One trained and evaluated model.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: TrainConfig,
    pub model: Forecaster,
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
}

/// Train `run` on `data` from `init` (or a fresh network) and evaluate on the test split.
pub fn run_once(
    cfg: &ExperimentConfig,
    run: &TrainConfig,
    data: &WindowedData,
    seed: u64,
    init: Option<&Forecaster>,
) -> Result<RunResult> {
    let run = TrainConfig {
        seed,
        ..run.clone()
    };
    let model = match init {
        Some(m) => Forecaster {
            std: run.std,
            ..m.clone()
        },
        None => Forecaster::init(data, &run.hidden, run.std, seed)?,
    };
    let outcome = train(&run, &model, data)?;
    // A finite model whose forecasts break the policies has still diverged.
    let summary = evaluate(&outcome.model, data, Split::Test, cfg.entropy_exponent(&run), &run).map_err(|e| match e {
        Error::Infeasible(detail) => Error::Divergence {
            step: outcome.steps.len(),
            agent: None,
            detail,
        },
        other => other,
    })?;
    Ok(RunResult {
        config: run,
        model: outcome.model,
        steps: outcome.steps,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub provenance: Provenance,
    pub reference: Option<RunResult>,
    pub main: RunResult,
}

/// Reference run (if configured), then the main run, on the first seed.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let seed = cfg.seed;
    let data = cfg.windowed(seed)?;
    let reference = match &cfg.reference {
        Some(r) => Some(run_once(cfg, r, &data, seed, None)?),
        None => None,
    };
    let init = reference.as_ref().filter(|_| cfg.warm_start).map(|r| &r.model);
    let main = run_once(cfg, &cfg.train, &data, seed, init)?;
    Ok(TrainReport {
        provenance: cfg.provenance(seed),
        reference,
        main,
    })
}

/// Evaluate the configured checkpoint on the test split of the first seed.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join("model.json"));
    let model = checkpoint::load(&path)?;
    let data = cfg.windowed(cfg.seed)?;
    if model.lookback != data.lookback || model.horizon() != data.horizon {
        return Err(Error::Config(format!(
            "checkpoint {} has lookback {} and horizon {}, the config {} and {}",
            path.display(),
            model.lookback,
            model.horizon(),
            data.lookback,
            data.horizon
        )));
    }
    let run = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    evaluate(&model, &data, Split::Test, cfg.entropy_exponent(&run), &run)
}

/// Outcome of one sweep run; failures keep their message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q_plus_1: f64,
    pub beta: f64,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

impl SweepRow {
    fn new(q_plus_1: f64, beta: f64, seed: u64, outcome: Result<RunSummary>) -> Self {
        let (status, summary, error) = match outcome {
            Ok(s) => (RunStatus::Ok, Some(s), None),
            Err(e) => (RunStatus::Failed, None, Some(e.to_string())),
        };
        Self {
            q_plus_1,
            beta,
            seed,
            status,
            summary,
            error,
        }
    }

    /// File-name label, e.g. `q2_b0.5_s1`.
    pub fn label(&self) -> String {
        format!("q{}_b{}_s{}", self.q_plus_1, self.beta, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub provenance: Provenance,
    /// One row per (q + 1, beta, seed), in that order.
    pub rows: Vec<SweepRow>,
    /// Reference runs, one per seed; empty without a reference config.
    pub reference: Vec<SweepRow>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .chain(&self.reference)
            .filter(|r| r.status == RunStatus::Failed)
            .count()
    }
}

/// All cells of the grid over all seeds, on up to `jobs` threads.
///
/// Each run is single-threaded and results come back in (q + 1, beta, seed)
/// order, so the report does not depend on `jobs`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let seeds = cfg.seeds();
    pool.install(|| {
        let prepared: Vec<(u64, WindowedData, Option<Result<RunResult>>)> = seeds
            .par_iter()
            .map(|&seed| {
                let data = cfg.windowed(seed)?;
                let reference = cfg.reference.as_ref().map(|r| run_once(cfg, r, &data, seed, None));
                Ok((seed, data, reference))
            })
            .collect::<Result<_>>()?;

        let mut cells = Vec::new();
        for &q1 in &cfg.sweep.q_plus_1 {
            for &beta in &cfg.sweep.beta {
                for i in 0..prepared.len() {
                    cells.push((q1, beta, i));
                }
            }
        }
        let rows = cells
            .par_iter()
            .map(|&(q1, beta, i)| {
                let (seed, data, reference) = &prepared[i];
                let init = match (cfg.warm_start, reference) {
                    (true, Some(Ok(r))) => Some(&r.model),
                    (true, Some(Err(e))) => {
                        let err = Error::Config(format!("reference run failed: {e}"));
                        return SweepRow::new(q1, beta, *seed, Err(err));
                    }
                    _ => None,
                };
                let outcome = run_once(cfg, &cfg.cell(q1, beta), data, *seed, init).map(|r| r.summary);
                SweepRow::new(q1, beta, *seed, outcome)
            })
            .collect();
        let reference = match &cfg.reference {
            Some(r) => prepared
                .iter()
                .map(|(seed, _, res)| {
                    let res = res.as_ref().expect("reference configured");
                    let outcome = match res {
                        Ok(run) => Ok(run.summary.clone()),
                        Err(e) => Err(Error::Config(e.to_string())),
                    };
                    SweepRow::new(r.q + 1.0, r.beta, *seed, outcome)
                })
                .collect(),
            None => Vec::new(),
        };
        Ok(SweepReport {
            provenance: cfg.provenance(cfg.seed),
            rows,
            reference,
        })
    })
}

/// Distance ranges of the generated pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySummary {
    pub agents: usize,
    pub datacenter_agents: usize,
    pub charging_agents: usize,
    /// Min and max distance of an agent's workload stream to the pooled workloads.
    pub workload_distance: Option<[f64; 2]>,
    /// Min and max distance of an agent's target stream to the pooled targets.
    pub target_distance: [f64; 2],
    /// Fewest and most charging slots required.
    pub charging_slots: Option<[usize; 2]>,
}

pub fn heterogeneity(ds: &SeriesDataset) -> HeterogeneitySummary {
    let workloads: Vec<Vec<f64>> = ds.agents.iter().filter_map(|a| a.workload.clone()).collect();
    let targets: Vec<Vec<f64>> = ds.agents.iter().map(|a| a.target.clone()).collect();
    let slots: Vec<usize> = ds
        .agents
        .iter()
        .filter_map(|a| match &a.spec.kind {
            AgentKind::Charging(c) => Some(c.slots_needed()),
            AgentKind::DataCenter { .. } => None,
        })
        .collect();
    let (t_lo, t_hi) = heterogeneity_range(&targets);
    HeterogeneitySummary {
        agents: ds.agents.len(),
        datacenter_agents: ds.agents.len() - slots.len(),
        charging_agents: slots.len(),
        workload_distance: (!workloads.is_empty()).then(|| {
            let (lo, hi) = heterogeneity_range(&workloads);
            [lo, hi]
        }),
        target_distance: [t_lo, t_hi],
        charging_slots: (!slots.is_empty()).then(|| {
            [*slots.iter().min().expect("nonempty"), *slots.iter().max().expect("nonempty")]
        }),
    }
}

// ---------------------------------------------------------------------------
// Output files

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    write(path, &(text + "\n"))
}

fn csv_text(prov: &Provenance, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("# {}\n{header}\n", prov.header());
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub fn write_regrets(path: &Path, prov: &Provenance, regrets: &[f64]) -> Result<()> {
    let rows = regrets.iter().enumerate().map(|(m, r)| format!("{m},{r}"));
    write(path, &csv_text(prov, "agent_id,mean_regret", rows))
}

pub fn write_steps(path: &Path, prov: &Provenance, steps: &[StepRecord]) -> Result<()> {
    let rows = steps.iter().map(|s| {
        format!(
            "{},{},{},{},{},{},{}",
            s.step, s.epoch, s.lr, s.loss, s.equitable, s.mse, s.grad_norm
        )
    });
    write(path, &csv_text(prov, "step,epoch,lr,loss,equitable,mse,grad_norm", rows))
}

fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Plain => "plain",
        TrainMode::Chain => "chain",
        TrainMode::Pg => "pg",
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config_hash: &'a str,
    seed: u64,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<&'a RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heterogeneity: Option<&'a HeterogeneitySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    files: Option<&'a DatasetFiles>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<&'a Path>,
    config: &'a ExperimentConfig,
}

impl<'a> SummaryFile<'a> {
    fn new(cfg: &'a ExperimentConfig, prov: &'a Provenance, command: &'a str) -> Self {
        Self {
            config_hash: &prov.config_hash,
            seed: prov.seed,
            command,
            mode: None,
            summary: None,
            reference: None,
            heterogeneity: None,
            files: None,
            checkpoint: None,
            config: cfg,
        }
    }
}

/// `summary.json`, `steps.csv`, `model.json` and `regrets_<run>.csv` of a train run.
pub fn write_train_outputs(cfg: &ExperimentConfig, report: &TrainReport, out: &Path) -> Result<()> {
    let prov = &report.provenance;
    let summary = SummaryFile {
        mode: Some(mode_name(report.main.config.mode)),
        summary: Some(&report.main.summary),
        reference: report.reference.as_ref().map(|r| &r.summary),
        ..SummaryFile::new(cfg, prov, "train")
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_steps(&out.join("steps.csv"), prov, &report.main.steps)?;
    write_regrets(&out.join("regrets_train.csv"), prov, &report.main.summary.mean_regrets)?;
    checkpoint::save(&report.main.model, &out.join("model.json"), Some((&prov.config_hash, prov.seed)))?;
    if let Some(r) = &report.reference {
        write_steps(&out.join("steps_reference.csv"), prov, &r.steps)?;
        write_regrets(&out.join("regrets_reference.csv"), prov, &r.summary.mean_regrets)?;
        checkpoint::save(&r.model, &out.join("model_reference.json"), Some((&prov.config_hash, prov.seed)))?;
    }
    Ok(())
}

pub fn write_evaluate_outputs(cfg: &ExperimentConfig, summary: &RunSummary, out: &Path) -> Result<()> {
    let prov = cfg.provenance(cfg.seed);
    let checkpoint = cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join("model.json"));
    let file = SummaryFile {
        summary: Some(summary),
        checkpoint: Some(&checkpoint),
        ..SummaryFile::new(cfg, &prov, "evaluate")
    };
    write_json(&out.join("summary.json"), &file)?;
    write_regrets(&out.join("regrets_evaluate.csv"), &prov, &summary.mean_regrets)
}

fn metric_cells(row: &SweepRow) -> String {
    match &row.summary {
        Some(s) => format!("{},{},{},{}", s.variance, s.mean, s.c95_minus_c5, s.mse),
        None => "NaN,NaN,NaN,NaN".into(),
    }
}

/// `sweep.csv` (one row per cell and seed; failed runs carry NaN metrics),
/// `reference.csv`, `sweep.json` with statuses, and one regret file per run.
pub fn write_sweep_outputs(cfg: &ExperimentConfig, report: &SweepReport, out: &Path) -> Result<()> {
    let prov = &report.provenance;
    let rows = report
        .rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.q_plus_1, r.beta, r.seed, metric_cells(r)));
    write(
        &out.join("sweep.csv"),
        &csv_text(prov, "q_plus_1,beta,seed,variance,mean,c95_minus_c5,mse", rows),
    )?;
    if !report.reference.is_empty() {
        let rows = report
            .reference
            .iter()
            .map(|r| format!("{},{}", r.seed, metric_cells(r)));
        write(
            &out.join("reference.csv"),
            &csv_text(prov, "seed,variance,mean,c95_minus_c5,mse", rows),
        )?;
    }
    for r in &report.rows {
        if let Some(s) = &r.summary {
            write_regrets(&out.join(format!("regrets_{}.csv", r.label())), prov, &s.mean_regrets)?;
        }
    }
    for r in &report.reference {
        if let Some(s) = &r.summary {
            let name = format!("regrets_reference_s{}.csv", r.seed);
            write_regrets(&out.join(name), prov, &s.mean_regrets)?;
        }
    }
    #[derive(Serialize)]
    struct SweepFile<'a> {
        config_hash: &'a str,
        seed: u64,
        command: &'a str,
        rows: &'a [SweepRow],
        reference: &'a [SweepRow],
        config: &'a ExperimentConfig,
    }
    write_json(
        &out.join("sweep.json"),
        &SweepFile {
            config_hash: &prov.config_hash,
            seed: prov.seed,
            command: "sweep",
            rows: &report.rows,
            reference: &report.reference,
            config: cfg,
        },
    )
}

/// Generate the dataset of the first seed under `<out>/data` and summarize it.
pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<HeterogeneitySummary> {
    if cfg.data.is_some() {
        return Err(Error::Config("generate writes synthetic data; remove the `data` section".into()));
    }
    let prov = cfg.provenance(cfg.seed);
    let ds = cfg.dataset(cfg.seed)?;
    let column = match cfg.application {
        Application::Charging => "E",
        Application::Datacenter | Application::Mixed => "carbon_intensity",
    };
    let files = save_dataset(&ds, &out.join("data"), column, Some(&prov.header()))?;
    let summary = heterogeneity(&ds);
    let file = SummaryFile {
        heterogeneity: Some(&summary),
        files: Some(&files),
        ..SummaryFile::new(cfg, &prov, "generate")
    };
    write_json(&out.join("summary.json"), &file)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            datacenter: DataCenterSynth {
                agents: 3,
                length: 24 * 6,
                ..DataCenterSynth::default()
            },
            train: TrainConfig {
                epochs: 2,
                hidden: vec![4],
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn json_and_toml_agree() {
        let json = r#"{"application": "charging", "repeats": 2, "train": {"mode": "pg", "q": 1.0},
                       "sweep": {"q_plus_1": [1, 5], "beta": [0, 0.5]}}"#;
        let toml = "application = \"charging\"\nrepeats = 2\n[train]\nmode = \"pg\"\nq = 1.0\n\
                    [sweep]\nq_plus_1 = [1.0, 5.0]\nbeta = [0.0, 0.5]\n";
        let a = ExperimentConfig::parse(json, ConfigFormat::Json).unwrap();
        let b = ExperimentConfig::parse(toml, ConfigFormat::Toml).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.mode, TrainMode::Pg);
        assert_eq!(a.horizon(), 12);
        assert_eq!(a.seeds(), vec![0, 1]);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(ExperimentConfig::parse(r#"{"epochs": 3}"#, ConfigFormat::Json).is_err());
        assert!(ExperimentConfig::parse(r#"{"train": {"epoch": 3}}"#, ConfigFormat::Json).is_err());
        let mut c = ExperimentConfig::default();
        c.train.beta = 1.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sweep.q_plus_1 = vec![0.5];
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            repeats: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            warm_start: true,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            data: Some(DatasetFiles {
                signal: "/nonexistent/signal.csv".into(),
                pool: "/nonexistent/agents.json".into(),
                workload: None,
            }),
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_seed_and_output() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 9,
            output: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = ExperimentConfig {
            repeats: 2,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sweep_row_count_and_order() {
        let cfg = ExperimentConfig {
            repeats: 2,
            sweep: SweepGrid {
                q_plus_1: vec![1.0, 2.0],
                beta: vec![0.0, 0.5],
            },
            ..tiny()
        };
        let one = run_sweep(&cfg, 1).unwrap();
        let four = run_sweep(&cfg, 4).unwrap();
        assert_eq!(one.rows.len(), 8);
        assert_eq!(one.rows, four.rows);
        let keys: Vec<(f64, f64, u64)> = one.rows.iter().map(|r| (r.q_plus_1, r.beta, r.seed)).collect();
        assert_eq!(keys[0], (1.0, 0.0, 0));
        assert_eq!(keys[1], (1.0, 0.0, 1));
        assert_eq!(keys[2], (1.0, 0.5, 0));
        assert_eq!(keys[7], (2.0, 0.5, 1));
        assert_eq!(one.failures(), 0);
    }

    #[test]
    fn warm_start_uses_reference() {
        let cfg = ExperimentConfig {
            reference: Some(TrainConfig {
                epochs: 3,
                hidden: vec![4],
                ..TrainConfig::default()
            }),
            warm_start: true,
            train: TrainConfig {
                lr: 0.0,
                epochs: 1,
                hidden: vec![4],
                ..TrainConfig::default()
            },
            ..tiny()
        };
        let report = run_train(&cfg).unwrap();
        let r = report.reference.unwrap();
        assert_eq!(report.main.model.params, r.model.params);
        assert_eq!(report.main.summary.mean_regrets, r.summary.mean_regrets);
    }
}
