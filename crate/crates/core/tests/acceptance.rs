//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Run with `cargo test -p eqpm --test acceptance`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use eqpm::experiment::{run_sweep, ExperimentConfig, SweepReport, SweepRow};
use eqpm::metrics::{mse, norm_entropy, percentile_gap, variance};
use eqpm::rng::seeded;
use eqpm::verify::{self, Oracles, SuiteReport};

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    seconds: f64,
    limit: f64,
    detail: String,
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn from_suites(suites: &[&SuiteReport], limit: f64) -> Outcome {
    Outcome {
        passed: suites.iter().all(|s| s.passed),
        seconds: suites.iter().map(|s| s.seconds).sum(),
        limit,
        detail: suites
            .iter()
            .map(|s| format!("{} {:.3e} (tol {:.1e})", s.name, s.measured, s.tolerance))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

/// Seed-averaged variance, C95-C5 and MSE of the rows in one cell.
#[derive(Debug, Clone, Copy)]
struct Cell {
    variance: f64,
    gap: f64,
    mse: f64,
}

fn average<'a>(rows: impl Iterator<Item = &'a SweepRow>) -> Option<Cell> {
    let (mut v, mut g, mut m, mut n) = (0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let s = r.summary.as_ref()?;
        v += s.variance;
        g += s.c95_minus_c5;
        m += s.mse;
        n += 1.0;
    }
    (n > 0.0).then(|| Cell {
        variance: v / n,
        gap: g / n,
        mse: m / n,
    })
}

fn cell(report: &SweepReport, q1: f64, beta: f64) -> Option<Cell> {
    average(report.rows.iter().filter(|r| r.q_plus_1 == q1 && r.beta == beta))
}

fn describe(label: &str, c: &Cell) -> String {
    format!("{label}: var {:.3e} gap {:.3e} mse {:.3e}", c.variance, c.gap, c.mse)
}

fn sweep(name: &str) -> (SweepReport, f64) {
    let cfg = config(name);
    let t = Instant::now();
    // One job: the limits are stated for a single thread.
    let report = run_sweep(&cfg, 1).unwrap_or_else(|e| panic!("{name}: {e}"));
    (report, t.elapsed().as_secs_f64())
}

fn criterion_7() -> Outcome {
    let (report, seconds) = sweep("datacenter.toml");
    let cells = (
        average(report.reference.iter()),
        cell(&report, 1.0, 0.0),
        cell(&report, 2.0, 0.0),
        cell(&report, 5.0, 0.0),
    );
    let (Some(plain), Some(c1), Some(c2), Some(c5)) = cells else {
        return Outcome {
            passed: false,
            seconds,
            limit: 300.0,
            detail: format!("{} failed run(s)", report.failures()),
        };
    };
    let best_mse = [c1.mse, c2.mse, c5.mse].into_iter().fold(f64::INFINITY, f64::min);
    let checks = [
        c5.variance < plain.variance,
        c5.gap < plain.gap,
        c2.variance <= c1.variance && c5.variance <= c2.variance,
        c2.gap <= c1.gap && c5.gap <= c2.gap,
        plain.mse <= 1.05 * best_mse,
    ];
    Outcome {
        passed: checks.iter().all(|&c| c),
        seconds,
        limit: 300.0,
        detail: [
            describe("plain", &plain),
            describe("q+1=1", &c1),
            describe("q+1=2", &c2),
            describe("q+1=5", &c5),
        ]
        .join(" | "),
    }
}

fn criterion_8() -> Outcome {
    let (report, seconds) = sweep("charging.toml");
    let (Some(plain), Some(c1), Some(c5)) =
        (average(report.reference.iter()), cell(&report, 1.0, 0.0), cell(&report, 5.0, 0.0))
    else {
        return Outcome {
            passed: false,
            seconds,
            limit: 300.0,
            detail: format!("{} failed run(s)", report.failures()),
        };
    };
    Outcome {
        passed: c5.variance < plain.variance && c5.gap < plain.gap,
        seconds,
        limit: 300.0,
        detail: [describe("plain", &plain), describe("q+1=1", &c1), describe("q+1=5", &c5)].join(" | "),
    }
}

fn criterion_9() -> Outcome {
    let (report, seconds) = sweep("charging_beta.toml");
    let q1 = report.rows[0].q_plus_1;
    let cells: Option<Vec<Cell>> = [0.0, 0.5, 1.0].iter().map(|&b| cell(&report, q1, b)).collect();
    let Some(cells) = cells else {
        return Outcome {
            passed: false,
            seconds,
            limit: 300.0,
            detail: format!("{} failed run(s)", report.failures()),
        };
    };
    let passed = cells.windows(2).all(|w| w[1].mse <= w[0].mse && w[1].variance >= w[0].variance);
    Outcome {
        passed,
        seconds,
        limit: 300.0,
        detail: cells
            .iter()
            .zip(["beta=0", "beta=0.5", "beta=1"])
            .map(|(c, l)| describe(l, c))
            .collect::<Vec<_>>()
            .join(" | "),
    }
}

/// Examples and invariants of the metrics module. Values that are not exactly
/// representable are compared to 1e-12.
fn criterion_10() -> Outcome {
    let t = Instant::now();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    let mut failed: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    check("variance [0.2, 0.4]", close(variance(&[0.2, 0.4]).unwrap(), 0.01));
    check("variance constant", variance(&[0.7; 5]).unwrap() == 0.0);
    check("variance [1, 2, 3]", close(variance(&[1.0, 2.0, 3.0]).unwrap(), 2.0 / 3.0));

    // Reference percentile: interpolate at rank (n - 1) p of the sorted values.
    let reference_pct = |v: &[f64], p: f64| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = (s.len() - 1) as f64 * p;
        let (i, frac) = (rank.floor() as usize, rank.fract());
        if i + 1 < s.len() {
            s[i] * (1.0 - frac) + s[i + 1] * frac
        } else {
            s[i]
        }
    };
    let gap = |v: &[f64]| percentile_gap(v, 0.05, 0.95).unwrap();
    check("gap [1, 3]", close(gap(&[1.0, 3.0]), 1.8));
    check("gap constant", gap(&[2.5; 7]) == 0.0);
    let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
    check("gap 1..100", close(gap(&hundred), 89.1));
    check(
        "gap 1..100 reference",
        close(gap(&hundred), reference_pct(&hundred, 0.95) - reference_pct(&hundred, 0.05)),
    );

    check("entropy [1, 1]", close(norm_entropy(&[1.0, 1.0], 1.0).unwrap(), 2f64.ln()));
    check("entropy [1, 0]", norm_entropy(&[1.0, 0.0], 1.0).unwrap() == 0.0);
    let h = norm_entropy(&[1.0, 2.0], 2.0).unwrap();
    check("entropy [1, 2]^2", close(h, -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln())));
    check("entropy [1, 2]^2 rounded", (h - 0.5004).abs() < 5e-5);
    check("entropy all zero", close(norm_entropy(&[0.0; 4], 1.5).unwrap(), 4f64.ln()));

    let one = |v: Vec<f64>| vec![vec![v]];
    check("mse exact", mse(&one(vec![1.0, 2.0]), &one(vec![1.0, 2.0])).unwrap() == 0.0);
    check(
        "mse one agent",
        mse(&[vec![vec![0.0], vec![0.0]]], &[vec![vec![1.0], vec![1.0]]]).unwrap() == 1.0,
    );
    let agent = vec![vec![0.0], vec![0.0], vec![0.0]];
    let shifted = vec![vec![1.0], vec![-1.0], vec![1.0]];
    check(
        "mse two agents",
        mse(&[agent.clone(), agent], &[shifted.clone(), shifted]).unwrap() == 2.0,
    );

    let mut rng = seeded(10);
    for trial in 0..200 {
        let m = rng.random_range(1..12usize);
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..3.0)).collect();
        let c: f64 = rng.random_range(0.1..10.0);
        let e: f64 = rng.random_range(0.5..4.0);
        let cv: Vec<f64> = v.iter().map(|x| c * x).collect();
        let tag = |what: &str| format!("{what} (trial {trial})");
        let var = variance(&v).unwrap();
        check(&tag("variance scale"), (variance(&cv).unwrap() - c * c * var).abs() <= 1e-12 * (c * c * var).max(1.0));
        check(&tag("gap scale"), (gap(&cv) - c * gap(&v)).abs() <= 1e-12 * (c * gap(&v)).max(1.0));
        let h = norm_entropy(&v, e).unwrap();
        check(&tag("entropy scale"), (norm_entropy(&cv, e).unwrap() - h).abs() <= 1e-12);
        check(&tag("entropy bounds"), (0.0..=(m as f64).ln() + 1e-12).contains(&h));
        let mut rev = v.clone();
        rev.reverse();
        check(&tag("gap permutation"), gap(&rev) == gap(&v));
        // Mean-preserving spread of a pair.
        let (a, b) = (v[0], rng.random_range(0.0..3.0));
        let d: f64 = rng.random_range(0.0..1.0);
        let (lo, hi) = (a.min(b), a.max(b));
        check(&tag("gap spread order"), gap(&[lo - d, hi + d]) >= gap(&[lo, hi]));
    }
    check("entropy max iff equal", close(norm_entropy(&[0.3, 0.3, 0.3], 2.0).unwrap(), 3f64.ln()));
    check("entropy max ignores zeros", close(norm_entropy(&[0.3, 0.0, 0.3], 2.0).unwrap(), 2f64.ln()));
    check("entropy below max", norm_entropy(&[0.3, 0.31, 0.3], 2.0).unwrap() < 3f64.ln());
    check("entropy zero iff single", norm_entropy(&[0.0, 5.0, 0.0], 0.7).unwrap() == 0.0);
    check("entropy positive otherwise", norm_entropy(&[0.0, 5.0, 1e-3], 0.7).unwrap() > 0.0);

    Outcome {
        passed: failed.is_empty(),
        seconds: t.elapsed().as_secs_f64(),
        limit: 1.0,
        detail: if failed.is_empty() {
            "all examples and invariants hold".into()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored.
    let report = verify::run_all(&Oracles::default(), 0);
    let suite = |name: &str| report.suites.iter().find(|s| s.name == name).expect("suite present");

    let criteria: Vec<Criterion> = vec![
        ("decision oracles", Box::new(|| from_suites(&[suite("dc_oracle"), suite("ev_oracle")], 30.0))),
        ("chain gradient", Box::new(|| from_suites(&[suite("chain_gradient")], 60.0))),
        ("pg estimator", Box::new(|| from_suites(&[suite("pg_unbiased")], 60.0))),
        ("variance equity", Box::new(|| from_suites(&[suite("equity_variance")], 10.0))),
        ("entropy equity", Box::new(|| from_suites(&[suite("equity_entropy")], 10.0))),
        ("dual norm", Box::new(|| from_suites(&[suite("dual_norm")], 5.0))),
        ("datacenter trend", Box::new(criterion_7)),
        ("charging trend", Box::new(criterion_8)),
        ("beta trade-off", Box::new(criterion_9)),
        ("metric units", Box::new(criterion_10)),
    ];

    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let ok = o.passed && o.seconds < o.limit;
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {:>2} {:<17} {}  {:.2}s (limit {}s)  {}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            o.seconds,
            o.limit,
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
