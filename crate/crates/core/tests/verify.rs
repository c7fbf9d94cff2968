use eqpm::agents::{dc_cost, ev_optimal, Action, ChargingContext, DataCenterContext};
use eqpm::objective::{chain_grad, pg_batch_grad, ChainRecord, PgBatch, PgOptions, PgRecord};
use eqpm::predictor::ParamVector;
use eqpm::training::{toy_optimum, ToyAgent};
use eqpm::verify::{self, Oracles};
use eqpm::Result;

#[test]
fn all_suites_pass_with_the_library_implementations() {
    let report = verify::run_all(&Oracles::default(), 0);
    for s in &report.suites {
        assert!(s.passed, "{}", s.line());
        assert!(s.measured.is_finite());
    }
    assert_eq!(report.suites.len(), 7);
    assert!(report.passed());
}

/// Over-allocates by 2 %: close, but not optimal.
fn dc_too_generous(ctx: &DataCenterContext, c: f64) -> Result<(Action, f64)> {
    let p = 1.02 * (ctx.workload + (ctx.lambda * ctx.workload / c).sqrt());
    Ok((Action::Allocation(p), dc_cost(ctx, p, c)?))
}

/// Reports the right allocation with the cost of a different one.
fn dc_wrong_cost(ctx: &DataCenterContext, c: f64) -> Result<(Action, f64)> {
    let p = ctx.workload + (ctx.lambda * ctx.workload / c).sqrt();
    Ok((Action::Allocation(p), dc_cost(ctx, p + 0.5, c)?))
}

/// Swaps the dearest chosen slot for the dearest free one.
fn ev_swapped(ctx: &ChargingContext, e: &[f64]) -> Result<(Action, f64)> {
    let (action, _) = ev_optimal(ctx, e)?;
    let mut x = action.schedule().unwrap().to_vec();
    let k = x.iter().filter(|&&v| v == 1).count();
    if k < x.len() {
        let last = (0..x.len()).filter(|&t| x[t] == 1).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        let worst_off = (0..x.len()).filter(|&t| x[t] == 0).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        x[last] = 0;
        x[worst_off] = 1;
    }
    let cost = x.iter().zip(e).filter(|(&v, _)| v == 1).map(|(_, e)| ctx.rate * e).sum();
    Ok((Action::Schedule(x), cost))
}

/// Drops the `(q + 1)` factor of the equitable term.
fn chain_missing_factor(
    params: &ParamVector,
    records: &[ChainRecord<'_>],
    num_agents: usize,
    q: f64,
    beta: f64,
) -> Result<ParamVector> {
    let mut g = chain_grad(params, records, num_agents, q, beta)?;
    if q > 0.0 && beta < 1.0 {
        g.scale(1.0 / (q + 1.0));
    }
    Ok(g)
}

/// Double-counts the score.
fn pg_doubled(records: &[PgRecord], num_agents: usize, opts: &PgOptions) -> Result<PgBatch> {
    let mut out = pg_batch_grad(records, num_agents, opts)?;
    out.grad.scale(2.0);
    Ok(out)
}

/// Overshoots past the worse-off agent's target for q > 0.
fn toy_greedy(toys: &[ToyAgent], q: f64) -> Result<f64> {
    if q == 0.0 {
        return toy_optimum(toys, q);
    }
    let worst = toys.iter().max_by(|a, b| a.offset.total_cmp(&b.offset)).unwrap();
    Ok(worst.target + (worst.target - toy_optimum(toys, 0.0)?))
}

/// Off by one part in a million.
fn loss_inflated(r: &[f64], q: f64) -> Result<f64> {
    Ok(eqpm::objective::equitable_loss(r, q)? * 1.000_001)
}

/// Right direction, not scaled into the unit ball.
fn maximizer_unnormalized(r: &[f64], q: f64) -> Result<Vec<f64>> {
    Ok(r.iter().map(|x| x.powf(q)).collect())
}

fn suite(name: &str, oracles: Oracles) -> verify::SuiteReport {
    verify::run_all(&oracles, 0)
        .suites
        .into_iter()
        .find(|s| s.name == name)
        .unwrap()
}

#[test]
fn injected_bugs_fail_their_suites() {
    let ok = Oracles::default();
    let cases: Vec<(&str, Oracles)> = vec![
        ("dc_oracle", Oracles { dc_optimal: dc_too_generous, ..ok }),
        ("dc_oracle", Oracles { dc_optimal: dc_wrong_cost, ..ok }),
        ("ev_oracle", Oracles { ev_optimal: ev_swapped, ..ok }),
        ("chain_gradient", Oracles { chain_grad: chain_missing_factor, ..ok }),
        ("pg_unbiased", Oracles { pg_batch_grad: pg_doubled, ..ok }),
        ("equity_variance", Oracles { toy_optimum: toy_greedy, ..ok }),
        ("equity_entropy", Oracles { toy_optimum: toy_greedy, ..ok }),
        ("dual_norm", Oracles { equitable_loss: loss_inflated, ..ok }),
        ("dual_norm", Oracles { holder_maximizer: maximizer_unnormalized, ..ok }),
    ];
    for (name, oracles) in cases {
        let s = suite(name, oracles);
        assert!(!s.passed, "{name} did not catch the injected bug: {}", s.line());
    }
}
