use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqpm::experiment::{self, ExperimentConfig, RunStatus};
use eqpm::verify::{self, Oracles};
use eqpm::Error;

/// Train and evaluate a public forecaster for a pool of decision-making agents.
#[derive(Debug, Parser)]
#[command(name = "eqpm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file, JSON or TOML (by extension). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Parallel sweep runs.
    #[arg(long, global = true, value_name = "INT", default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset and print its heterogeneity.
    Generate,
    /// Train one model; writes summary.json, steps.csv, model.json and regrets_train.csv.
    Train,
    /// Evaluate a checkpoint on the test split.
    Evaluate,
    /// Run the q+1 x beta grid over all seeds; writes sweep.csv and per-run regrets.
    Sweep,
    /// Run the built-in correctness suites.
    Verify,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::NonConvergence(_) => 2,
        _ => 1,
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn metrics_line(s: &eqpm::training::RunSummary) -> String {
    format!(
        "variance {:.6e}  mean {:.6e}  c95_minus_c5 {:.6e}  mse {:.6e}  entropy {:.6}",
        s.variance, s.mean, s.c95_minus_c5, s.mse, s.entropy
    )
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Command::Verify = cli.command {
        let seed = cli.seed.unwrap_or(0);
        let report = verify::run_all(&Oracles::default(), seed);
        for s in &report.suites {
            println!("{}", s.line());
        }
        if let Some(out) = &cli.out {
            std::fs::create_dir_all(out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let path = out.join("verify.json");
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;
        }
        return Ok(if report.passed() { 0 } else { 2 });
    }

    let cfg = load(cli)?;
    let out = cfg.output.clone();
    match cli.command {
        Command::Generate => {
            let h = experiment::run_generate(&cfg, &out)?;
            println!(
                "agents {} (datacenter {}, charging {})",
                h.agents, h.datacenter_agents, h.charging_agents
            );
            if let Some([lo, hi]) = h.workload_distance {
                println!("workload distance to pool: {lo:.4e} .. {hi:.4e}");
            }
            let [lo, hi] = h.target_distance;
            println!("target distance to pool:   {lo:.4e} .. {hi:.4e}");
            if let Some([lo, hi]) = h.charging_slots {
                println!("charging slots needed:     {lo} .. {hi}");
            }
            println!("wrote {}", out.join("data").display());
        }
        Command::Train => {
            let report = experiment::run_train(&cfg)?;
            experiment::write_train_outputs(&cfg, &report, &out)?;
            if let Some(r) = &report.reference {
                println!("reference  {}", metrics_line(&r.summary));
            }
            println!("trained    {}", metrics_line(&report.main.summary));
            println!("wrote {}", out.display());
        }
        Command::Evaluate => {
            let summary = experiment::run_evaluate(&cfg)?;
            experiment::write_evaluate_outputs(&cfg, &summary, &out)?;
            println!("{}", metrics_line(&summary));
        }
        Command::Sweep => {
            let report = experiment::run_sweep(&cfg, cli.jobs)?;
            experiment::write_sweep_outputs(&cfg, &report, &out)?;
            for r in report.reference.iter().chain(&report.rows) {
                let tag = if report.reference.contains(r) {
                    format!("reference seed {}", r.seed)
                } else {
                    format!("q+1 {} beta {} seed {}", r.q_plus_1, r.beta, r.seed)
                };
                match (&r.status, &r.summary) {
                    (RunStatus::Ok, Some(s)) => println!("{tag:<28} {}", metrics_line(s)),
                    _ => println!("{tag:<28} FAILED {}", r.error.as_deref().unwrap_or("")),
                }
            }
            println!("wrote {}", out.join("sweep.csv").display());
            if report.failures() > 0 {
                eprintln!("{} run(s) failed", report.failures());
                return Ok(2);
            }
        }
        Command::Verify => unreachable!("handled above"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
