//! One function per subcommand. Each writes its files to the sink and
//! returns a one-line summary.

use liqsolve_core::bsde2::minimality_diagnostic;
use liqsolve_core::control::{path_rng, MeasureCost};
use liqsolve_core::mollify::{lipschitz_estimate, local_monotonicity_check};
use liqsolve_core::oracle::{
    closed_form_geometric, ode_oracle, OdeProblem, OdeTerminal, MAX_TREE_STEPS,
};
use liqsolve_core::rbsde::snell_check;
use liqsolve_core::verify::run_all;
use liqsolve_core::{
    build_mollified, integrate_state, simulate_cost, solve_2bsde_with, solve_reflected,
    solve_singular, terminal_constraint_check, terminal_slice, verify_value, worst_case_cost,
    Barrier, CostEstimate, Field, Lattice, LatticePath, MollifierSpec, Policy, Solution2, Strategy,
    VerificationReport,
};
use serde::Serialize;
use std::sync::Arc;

use crate::config::{Coefficients, Format, RunConfig};
use crate::output::{Sink, Table};
use crate::CliError;

fn field_table(lat: &Lattice, y: &Field, last_step: usize, extra: Option<(&str, &Field)>) -> Table {
    let mut header = vec!["t", "x", "y"];
    if let Some((name, _)) = extra {
        header.push(name);
    }
    let mut table = Table::new(header);
    let xs = lat.state().points();
    for i in 0..=last_step {
        let t = lat.time().time(i);
        for (j, &x) in xs.iter().enumerate() {
            let mut row = vec![t, x, y.get(i, j)];
            if let Some((_, f)) = extra {
                row.push(f.get(i, j));
            }
            table.push(row);
        }
    }
    table
}

fn solve_value(cfg: &RunConfig) -> Result<(liqsolve_core::Model, Lattice, Solution2), CliError> {
    let model = cfg.model()?;
    let lat = cfg.lattice(&model)?;
    let terminal = terminal_slice(&model, &lat, None);
    let sol = solve_2bsde_with(&model, &lat, &terminal, None, cfg.scheme)?;
    Ok((model, lat, sol))
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct SolveReport {
    name: String,
    /// `Y` at time 0 on the origin node.
    y0: f64,
    x_origin: f64,
    dt: f64,
    dx: f64,
    vol_grid: Vec<f64>,
    max_dk: Option<f64>,
    minimality: Option<f64>,
    newton_iterations: u64,
}

pub fn solve(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let (model, lat, sol) = solve_value(cfg)?;
    let origin = lat.origin();
    if cfg.output.wants(Format::Csv) {
        let mut vol = lat.zero_field();
        for i in 0..lat.n_steps() {
            for j in 0..lat.n_points() {
                vol.set(i, j, lat.vol_grid()[sol.policy.vol(i, j)]);
            }
        }
        for j in 0..lat.n_points() {
            vol.set(lat.n_steps(), j, f64::NAN);
        }
        sink.csv(
            "y.csv",
            &field_table(&lat, &sol.y_upper, lat.n_steps(), Some(("a", &vol))),
        )?;
    }
    let report = SolveReport {
        name: cfg.name.clone(),
        y0: sol.y0(origin),
        x_origin: lat.state().point(origin),
        dt: lat.dt(),
        dx: lat.state().dx(),
        vol_grid: lat.vol_grid().to_vec(),
        max_dk: finite_or_none(sol.max_dk()),
        minimality: finite_or_none(minimality_diagnostic(&sol, &model, &lat)?),
        newton_iterations: sol.meta.newton_iterations,
    };
    if cfg.output.wants(Format::Json) {
        sink.json("solve.json", &report)?;
    }
    Ok(format!("Y0 = {:.10}", report.y0))
}

#[derive(Serialize)]
struct SingularReport {
    converged: bool,
    levels_used: Vec<f64>,
    last_increment: Option<f64>,
    profile_exponent: Option<f64>,
    cutoff_step: usize,
    cutoff_time: f64,
    y0: f64,
}

pub fn singular(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let model = cfg.model()?;
    let lat = cfg.lattice(&model)?;
    let sing = solve_singular(&model, &lat, &cfg.ladder)?;
    if cfg.output.wants(Format::Csv) {
        let mut ladder = Table::new([
            "level",
            "sup_increment",
            "y0",
            "y_cutoff",
            "bound_slack",
            "monotonicity_violation",
        ]);
        for r in &sing.levels {
            ladder.push(vec![
                r.level,
                r.sup_increment.unwrap_or(f64::NAN),
                r.y0,
                r.y_cutoff,
                r.bound_slack,
                r.monotonicity_violation,
            ]);
        }
        sink.csv("ladder.csv", &ladder)?;
        sink.csv(
            "y_limit.csv",
            &field_table(&lat, &sing.y_limit, sing.cutoff_step, None),
        )?;
    }
    let report = SingularReport {
        converged: sing.converged,
        levels_used: sing.levels_used(),
        last_increment: sing.last_increment(),
        profile_exponent: sing.profile_exponent,
        cutoff_step: sing.cutoff_step,
        cutoff_time: lat.time().time(sing.cutoff_step),
        y0: sing.y_limit.get(0, lat.origin()),
    };
    if cfg.output.wants(Format::Json) {
        sink.json("singular.json", &report)?;
    }
    Ok(format!(
        "{} levels, converged {}, Y0 = {:.10}",
        report.levels_used.len(),
        report.converged,
        report.y0
    ))
}

#[derive(Serialize)]
struct ClosedFormCheck {
    y: f64,
    relative_error: f64,
    pass: bool,
}

#[derive(Serialize)]
struct LiquidationReport {
    y0: f64,
    x0: f64,
    verification: VerificationReport,
    argmax_cost: CostEstimate,
    worst_case: WorstCase,
    terminal_constraint: bool,
    closed_form: Option<ClosedFormCheck>,
    pass: bool,
}

#[derive(Serialize)]
struct WorstCase {
    mean: Option<f64>,
    infinite: bool,
    attaining: Option<String>,
    per_measure: Vec<MeasureCost>,
}

/// Closed forms hold for the geometric model up to this relative error.
const CLOSED_FORM_TOLERANCE: f64 = 0.02;

pub fn liquidate(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let (model, lat, sol) = solve_value(cfg)?;
    let origin = lat.origin();
    let x0 = cfg.mc.x0;
    let theta = model.generator.theta;
    let path = LatticePath::sample(&lat, &sol.policy, origin, &mut path_rng(cfg.mc.seed, 0));
    let traj = integrate_state(&sol, &model, &lat, &path, x0)?;
    if cfg.output.wants(Format::Csv) {
        let mut table = Table::new(["t", "x", "inventory", "rate", "y", "eta"]);
        for i in 0..traj.times.len() {
            let at = |v: &Vec<f64>| v.get(i).copied().unwrap_or(f64::NAN);
            table.push(vec![
                traj.times[i],
                traj.x[i],
                traj.state[i],
                at(&traj.rate),
                at(&traj.y),
                at(&traj.eta),
            ]);
        }
        sink.csv("trajectory.csv", &table)?;
    }
    let opt = Strategy::optimal(&sol, &model, &lat)?;
    let argmax = simulate_cost(
        &opt,
        &model,
        &lat,
        &sol.policy,
        x0,
        cfg.mc.paths,
        cfg.mc.seed,
        None,
    )?;
    let worst = worst_case_cost(
        &opt,
        &model,
        &lat,
        &sol,
        x0,
        cfg.mc.paths,
        cfg.mc.seed,
        None,
    )?;
    let y0 = sol.y0(origin);
    let value = y0 * x0.abs().powf(theta);
    let verification = verify_value(y0, x0, theta, &argmax, 1e-10 * (1.0 + value.abs()));
    let closed_form = match cfg.model.coefficients {
        Coefficients::GeometricEta { .. }
            if cfg.model.terminal.penalty.0.is_infinite() && !cfg.has_partial_singular_set() =>
        {
            let x = lat.state().point(origin);
            let eta = model.generator.eta(0.0, x, lat.vol_grid()[0]);
            let b = cfg.uncertainty.drift;
            let exact = closed_form_geometric(eta, &move |_| b, theta, lat.time().horizon(), 0.0)?;
            let rel = (y0 - exact.y).abs() / exact.y;
            Some(ClosedFormCheck {
                y: exact.y,
                relative_error: rel,
                pass: rel <= CLOSED_FORM_TOLERANCE,
            })
        }
        _ => None,
    };
    let terminal_constraint = terminal_constraint_check(&traj, &model.terminal, None);
    let pass =
        verification.pass && terminal_constraint && closed_form.as_ref().is_none_or(|c| c.pass);
    let report = LiquidationReport {
        y0,
        x0,
        verification,
        argmax_cost: argmax,
        worst_case: WorstCase {
            mean: finite_or_none(worst.mean),
            infinite: worst.mean.is_infinite(),
            attaining: worst.attaining,
            per_measure: worst.per_measure,
        },
        terminal_constraint,
        closed_form,
        pass,
    };
    if cfg.output.wants(Format::Json) {
        sink.json("liquidation.json", &report)?;
    }
    Ok(format!(
        "Y0 x0^theta = {:.10}, cost {:.10} (SE {:.2e}), pass {}",
        report.verification.value, report.verification.mc_mean, report.verification.se, pass
    ))
}

#[derive(Serialize)]
struct RbsdeReport {
    y0: f64,
    vol: f64,
    max_dk: f64,
    complementarity_residual: f64,
    /// Absent when the lattice is too long for the stopping-tree oracle.
    snell_gap: Option<f64>,
    snell_exact: Option<bool>,
}

pub fn rbsde(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let model = cfg.model()?;
    let lat = cfg.lattice(&model)?;
    let rc = cfg.rbsde.clone();
    if rc.vol >= lat.n_vols() {
        return Err(CliError::Validation(format!(
            "rbsde.vol = {} but the grid has {} volatilities",
            rc.vol,
            lat.n_vols()
        )));
    }
    let horizon = lat.time().horizon();
    let barrier = Barrier::new(Arc::new(move |t, x| {
        rc.level + rc.call_weight * (x - rc.strike).max(0.0) + rc.time_weight * (horizon - t)
    }));
    let policy = Policy::Constant(rc.vol);
    let terminal = terminal_slice(&model, &lat, None);
    if terminal.iter().any(|v| v.is_infinite()) {
        return Err(CliError::Validation(
            "the reflected solver needs a finite terminal penalty".into(),
        ));
    }
    let sol = solve_reflected(&model, &lat, &policy, &terminal, &barrier, None, cfg.scheme)?;
    let snell = if lat.n_steps() <= MAX_TREE_STEPS {
        Some(snell_check(&sol, &model, &lat, &policy)?)
    } else {
        None
    };
    if cfg.output.wants(Format::Csv) {
        let mut table = Table::new(["t", "x", "y", "dk", "barrier"]);
        let xs = lat.state().points();
        for i in 0..=lat.n_steps() {
            for (j, &x) in xs.iter().enumerate() {
                table.push(vec![
                    lat.time().time(i),
                    x,
                    sol.y_tilde.get(i, j),
                    sol.dk_tilde.get(i, j),
                    sol.barrier.get(i, j),
                ]);
            }
        }
        sink.csv("reflected.csv", &table)?;
    }
    let report = RbsdeReport {
        y0: sol.y_tilde.get(0, lat.origin()),
        vol: lat.vol_grid()[cfg.rbsde.vol],
        max_dk: sol.dk_tilde.max(),
        complementarity_residual: sol.complementarity_residual(),
        snell_gap: snell.map(|r| r.gap),
        snell_exact: snell.map(|r| r.exact),
    };
    if cfg.output.wants(Format::Json) {
        sink.json("rbsde.json", &report)?;
    }
    Ok(format!(
        "Y0 = {:.10}, Snell gap {}, complementarity {:.2e}",
        report.y0,
        report
            .snell_gap
            .map_or("n/a".into(), |g| format!("{g:.2e}")),
        report.complementarity_residual
    ))
}

#[derive(Serialize)]
struct MollifyLevel {
    n: u32,
    plateau: f64,
    sup_gap: f64,
    lipschitz: f64,
    monotonicity_residual: f64,
    value_at_zero: f64,
}

#[derive(Serialize)]
struct MollifyReport {
    psi: f64,
    q: f64,
    gamma: f64,
    levels: Vec<MollifyLevel>,
}

pub fn mollify_demo(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let model = cfg.model()?;
    let lat = cfg.lattice(&model)?;
    let mc = &cfg.mollify;
    if mc.levels.is_empty() || mc.samples < 2 || !(mc.range > 0.0) {
        return Err(CliError::Validation(
            "mollify needs levels, at least 2 samples and a positive range".into(),
        ));
    }
    let gen = &model.generator;
    let x = lat.state().point(lat.origin());
    let a = lat.vol_grid()[0];
    let psi = gen.impact_coefficient(0.0, x, a);
    let gamma = gen.gamma(0.0, x, a);
    let q = gen.q;
    let h = move |y: f64| -psi * y * y.abs().powf(q - 1.0) + gamma;
    let ys: Vec<f64> = (0..mc.samples)
        .map(|k| -mc.range + 2.0 * mc.range * k as f64 / (mc.samples - 1) as f64)
        .collect();
    let mut columns = Vec::new();
    let mut levels = Vec::new();
    for &n in &mc.levels {
        let spec = MollifierSpec::new(n, mc.lq, lat.time().horizon())?;
        let hn = build_mollified(h, &spec)?;
        let col: Vec<f64> = ys.iter().map(|&y| hn.eval(y)).collect();
        let sup_gap = ys
            .iter()
            .zip(&col)
            .map(|(&y, v)| (v - h(y)).abs())
            .fold(0.0, f64::max);
        levels.push(MollifyLevel {
            n,
            plateau: spec.plateau(),
            sup_gap,
            lipschitz: lipschitz_estimate(|y| hn.eval(y), -mc.range, mc.range, mc.samples)?,
            monotonicity_residual: local_monotonicity_check(|y| hn.eval(y), mc.range, mc.samples),
            value_at_zero: hn.eval(0.0),
        });
        columns.push(col);
    }
    if cfg.output.wants(Format::Csv) {
        let mut header = vec!["y".to_string(), "h".to_string()];
        header.extend(mc.levels.iter().map(|n| format!("h_{n}")));
        let mut table = Table::new(header);
        for (k, &y) in ys.iter().enumerate() {
            let mut row = vec![y, h(y)];
            row.extend(columns.iter().map(|c| c[k]));
            table.push(row);
        }
        sink.csv("mollify.csv", &table)?;
    }
    let summary = levels
        .iter()
        .map(|l| format!("n={} gap {:.2e}", l.n, l.sup_gap))
        .collect::<Vec<_>>()
        .join(", ");
    if cfg.output.wants(Format::Json) {
        sink.json(
            "mollify.json",
            &MollifyReport {
                psi,
                q,
                gamma,
                levels,
            },
        )?;
    }
    Ok(summary)
}

#[derive(Serialize)]
struct OracleReport {
    kind: &'static str,
    y0: f64,
}

pub fn oracle(cfg: &RunConfig, sink: &mut Sink) -> Result<String, CliError> {
    let model = cfg.model()?;
    let lat = cfg.lattice(&model)?;
    if cfg.has_partial_singular_set() {
        return Err(CliError::Validation(
            "oracles need a state-independent terminal penalty".into(),
        ));
    }
    let horizon = lat.time().horizon();
    let q = model.generator.q;
    let theta = model.generator.theta;
    let penalty = cfg.model.terminal.penalty.0;
    let times = lat.time().times();
    let inner = &times[..times.len() - 1];
    let (kind, mut ys) = match cfg.model.coefficients {
        Coefficients::Constant { eta, gamma }
        | Coefficients::QuadraticRisk {
            eta,
            g0: gamma,
            g1: 0.0,
        } => {
            let eta_fn = move |_: f64| eta;
            let gamma_fn = move |_: f64| gamma;
            let problem = OdeProblem {
                eta: &eta_fn,
                gamma: &gamma_fn,
                q,
                horizon,
                terminal: if penalty.is_infinite() {
                    OdeTerminal::Singular
                } else {
                    OdeTerminal::Value(penalty)
                },
            };
            let n_fine = lat.n_steps().max(100_000);
            ("ode", ode_oracle(&problem, n_fine, inner)?)
        }
        Coefficients::GeometricEta { .. } if penalty.is_infinite() && !cfg.has_partial_singular_set() => {
            let x = lat.state().point(lat.origin());
            let b = cfg.uncertainty.drift;
            let a = lat.vol_grid()[0];
            let ys = inner
                .iter()
                .map(|&t| {
                    let eta = model.generator.eta(t, x, a);
                    closed_form_geometric(eta, &move |_| b, theta, horizon, t).map(|v| v.y)
                })
                .collect::<liqsolve_core::Result<Vec<f64>>>()?;
            ("closed-form", ys)
        }
        _ => {
            return Err(CliError::Validation(
                "no oracle for this model: need constant coefficients or the geometric model with an infinite penalty"
                    .into(),
            ))
        }
    };
    ys.push(penalty);
    if cfg.output.wants(Format::Csv) {
        let mut table = Table::new(["t", "y"]);
        for (t, y) in times.iter().zip(&ys) {
            table.push(vec![*t, *y]);
        }
        sink.csv("oracle.csv", &table)?;
    }
    let report = OracleReport { kind, y0: ys[0] };
    if cfg.output.wants(Format::Json) {
        sink.json("oracle.json", &report)?;
    }
    Ok(format!("{kind} oracle, Y0 = {:.10}", report.y0))
}

#[derive(Serialize)]
struct CriterionLine {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

/// Runs the acceptance suite; failures are reported through the error.
pub fn verify(sink: &mut Sink, quiet: bool) -> Result<String, CliError> {
    let outcomes = run_all();
    let mut lines = Vec::new();
    for o in &outcomes {
        if !quiet {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            println!("[{tag}] {:>2} {}: {}", o.id, o.name, o.detail);
        }
        lines.push(CriterionLine {
            id: o.id,
            name: o.name,
            passed: o.passed,
            detail: o.detail.clone(),
        });
    }
    sink.json("verify.json", &lines)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} criteria failed",
            outcomes.len()
        )));
    }
    Ok(format!("all {} criteria passed", outcomes.len()))
}
