//! Single-measure backward solver for the monotone BSDE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::Lattice;
use crate::model::{DriverKind, Model};
use crate::mollify::{build_mollified, MollifierSpec};

/// A scalar driver `y ↦ f(y)`, non-increasing.
pub trait ScalarDriver {
    fn value(&self, y: f64) -> f64;

    /// `f'(y)` when known in closed form.
    fn slope(&self, _y: f64) -> Option<f64> {
        None
    }
}

impl<F: Fn(f64) -> f64> ScalarDriver for F {
    fn value(&self, y: f64) -> f64 {
        self(y)
    }
}

/// `-ψ y |y|^(q-1) + r`.
#[derive(Debug, Clone, Copy)]
pub struct PowerDriver {
    pub psi: f64,
    pub q: f64,
    pub running: f64,
}

impl ScalarDriver for PowerDriver {
    fn value(&self, y: f64) -> f64 {
        -self.psi * y * y.abs().powf(self.q - 1.0) + self.running
    }

    fn slope(&self, y: f64) -> Option<f64> {
        Some(-self.q * self.psi * y.abs().powf(self.q - 1.0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub iterations: u32,
    pub residual: f64,
}

const MAX_ITERATIONS: u32 = 200;

/// Root of `y = c + dt f(y)` by Newton's method safeguarded with bisection.
pub fn implicit_step<D: ScalarDriver + ?Sized>(c: f64, dt: f64, driver: &D) -> Result<f64> {
    implicit_step_stats(c, dt, driver).map(|(y, _)| y)
}

pub fn implicit_step_stats<D: ScalarDriver + ?Sized>(
    c: f64,
    dt: f64,
    driver: &D,
) -> Result<(f64, StepStats)> {
    if !c.is_finite() {
        return Err(Error::Numeric(format!("implicit step from c = {c}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let g = |y: f64| y - c - dt * driver.value(y);
    let tol = |y: f64| 1e-12 * (1.0 + y.abs());

    let f0 = driver.value(0.0);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("driver at 0 is {f0}")));
    }
    let width = c.abs() + dt * f0.abs() + 1.0;
    let (mut lo, mut hi) = (-width, width);
    let (mut g_lo, mut g_hi) = (g(lo), g(hi));
    let mut expansions = 0;
    while g_lo > 0.0 || g_hi < 0.0 {
        expansions += 1;
        if expansions > 1100 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NoConvergence {
                iterations: 0,
                c,
                dt,
                residual: g_lo.abs().min(g_hi.abs()),
            });
        }
        if g_lo > 0.0 {
            lo *= 2.0;
            g_lo = g(lo);
        }
        if g_hi < 0.0 {
            hi *= 2.0;
            g_hi = g(hi);
        }
    }

    let mut y = c.clamp(lo, hi);
    let mut gy = g(y);
    for it in 1..=MAX_ITERATIONS {
        if gy.abs() <= tol(y) {
            return Ok((
                y,
                StepStats {
                    iterations: it - 1,
                    residual: gy.abs(),
                },
            ));
        }
        if gy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let slope = match driver.slope(y) {
            Some(s) => 1.0 - dt * s,
            None => {
                let h = 1e-7 * (1.0 + y.abs());
                (g(y + h) - gy) / h
            }
        };
        let newton = y - gy / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == y || hi - lo <= 4.0 * f64::EPSILON * y.abs().max(f64::MIN_POSITIVE) {
            // bracket exhausted at machine precision
            let residual = gy.abs();
            if residual <= 64.0 * f64::EPSILON * (y.abs() + c.abs() + dt * driver.value(y).abs()) {
                return Ok((
                    y,
                    StepStats {
                        iterations: it,
                        residual,
                    },
                ));
            }
        }
        y = next;
        gy = g(y);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        c,
        dt,
        residual: gy.abs(),
    })
}

/// Exact flow of `y' = -ψ y |y|^(q-1)` over `dt` started from `c`
/// (which may be `+∞`): `(|c|^(1-q) + (q-1) ψ dt)^(-1/(q-1))` with the sign of `c`.
pub fn frozen_power_step(c: f64, dt: f64, psi: f64, q: f64) -> f64 {
    if psi == 0.0 || c == 0.0 {
        return c;
    }
    let p = q - 1.0;
    let inv = c.abs().powf(-p) + p * psi * dt;
    c.signum() * inv.powf(-1.0 / p)
}

/// How one backward step treats the driver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepScheme {
    /// Exact power flow with coefficients frozen at the left node, then the
    /// running reward added over the step. Accepts infinite terminal data.
    #[default]
    FrozenExact,
    /// Backward Euler `y = c + dt f(y)`.
    ImplicitEuler,
    /// Backward Euler with the driver's `y`-part replaced by its level-`n`
    /// mollification.
    Mollified { level: u32 },
}

/// Per-sweep constants of a backward step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub scheme: StepScheme,
    pub dt: f64,
    pub horizon: f64,
    pub cap: Option<f64>,
}

impl StepContext {
    pub fn new(lat: &Lattice, scheme: StepScheme, cap: Option<f64>) -> Self {
        Self {
            scheme,
            dt: lat.dt(),
            horizon: lat.time().horizon(),
            cap,
        }
    }
}

/// One backward step at node `(t, x)` under volatility `a`, from the
/// continuation value `c = E[Y_next]`.
pub fn scheme_step(
    model: &Model,
    ctx: &StepContext,
    t: f64,
    x: f64,
    a: f64,
    c: f64,
) -> Result<(f64, StepStats)> {
    let (dt, cap) = (ctx.dt, ctx.cap);
    let gen = &model.generator;
    let running = gen.running(t, x, a, cap);
    if gen.kind() == DriverKind::Linear {
        return Ok((c + dt * running, StepStats::default()));
    }
    let psi = gen.impact_coefficient(t, x, a);
    match ctx.scheme {
        StepScheme::FrozenExact => {
            if c.is_nan() {
                return Err(Error::Numeric(format!(
                    "NaN continuation value at t={t}, x={x}"
                )));
            }
            Ok((
                frozen_power_step(c, dt, psi, gen.q) + dt * running,
                StepStats::default(),
            ))
        }
        StepScheme::ImplicitEuler => {
            let driver = PowerDriver {
                psi,
                q: gen.q,
                running,
            };
            implicit_step_stats(c, dt, &driver)
        }
        StepScheme::Mollified { level } => {
            let q = gen.q;
            let spec = MollifierSpec::new(level, psi, ctx.horizon)?;
            let hn = build_mollified(move |y: f64| -psi * y * y.abs().powf(q - 1.0), &spec)?;
            let driver = move |y: f64| hn.eval(y) + running;
            implicit_step_stats(c, dt, &driver)
        }
    }
}

/// Volatility choice per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Policy {
    Constant(usize),
    /// Volatility index per `(step, node)` for steps `0..n_steps`, time-major.
    Nodewise {
        n_points: usize,
        indices: Vec<usize>,
    },
}

impl Policy {
    #[inline]
    pub fn vol(&self, step: usize, node: usize) -> usize {
        match self {
            Policy::Constant(v) => *v,
            Policy::Nodewise { n_points, indices } => indices[step * n_points + node],
        }
    }

    pub fn check(&self, lat: &Lattice) -> Result<()> {
        let ok = match self {
            Policy::Constant(v) => *v < lat.n_vols(),
            Policy::Nodewise { n_points, indices } => {
                *n_points == lat.n_points()
                    && indices.len() >= lat.n_steps() * lat.n_points()
                    && indices.iter().all(|&v| v < lat.n_vols())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Mismatch("policy does not fit the lattice".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolverMeta {
    pub newton_iterations: u64,
    pub max_iterations: u32,
    pub max_residual: f64,
}

impl SolverMeta {
    pub(crate) fn absorb(&mut self, s: StepStats) {
        self.newton_iterations += u64::from(s.iterations);
        self.max_iterations = self.max_iterations.max(s.iterations);
        self.max_residual = self.max_residual.max(s.residual);
    }
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub y: Field,
    /// Martingale-representation coefficient; the terminal slice is zero.
    pub z: Field,
    pub meta: SolverMeta,
}

impl BackwardSolution {
    pub fn y0(&self, node: usize) -> f64 {
        self.y.get(0, node)
    }
}

/// `Cov(Y_next, ΔX) / (a dt)` at a node, or NaN when a neighbour is infinite.
pub(crate) fn z_at(lat: &Lattice, step: usize, vol: usize, next: &[f64], node: usize) -> f64 {
    let w = lat.weights(step, vol, node);
    let dx = lat.state().dx();
    let mean = (w.up - w.down) * dx;
    let a = lat.vol_grid()[vol];
    let mut acc = 0.0;
    if w.down > 0.0 {
        acc += w.down * next[node - 1] * (-dx - mean);
    }
    if w.stay > 0.0 {
        acc += w.stay * next[node] * (-mean);
    }
    if w.up > 0.0 {
        acc += w.up * next[node + 1] * (dx - mean);
    }
    acc / (a * lat.dt())
}

/// Applies `ξ ∧ L` to a terminal slice (`+∞` stays when no cap is given).
pub fn terminal_slice(model: &Model, lat: &Lattice, cap: Option<f64>) -> Vec<f64> {
    lat.state()
        .points()
        .into_iter()
        .map(|x| {
            let xi = model.terminal.xi(x);
            match cap {
                Some(l) => xi.capped(l),
                None => xi.as_extended(),
            }
        })
        .collect()
}

pub(crate) fn ensure_compatible(model: &Model, lat: &Lattice) -> Result<()> {
    if model.uncertainty.vol_grid.as_slice() != lat.vol_grid() {
        return Err(Error::Mismatch(
            "lattice was built for a different volatility grid".into(),
        ));
    }
    Ok(())
}

/// Solves backward under a fixed volatility policy.
pub fn solve_bsde_single(
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
    terminal: &[f64],
    cap: Option<f64>,
    scheme: StepScheme,
) -> Result<BackwardSolution> {
    if let Some(v) = terminal.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("terminal value {v} is not finite")));
    }
    sweep_policy(
        model,
        lat,
        policy,
        terminal,
        &StepContext::new(lat, scheme, cap),
    )
}

/// Backward sweep under a policy. Infinite terminal values are accepted by
/// the frozen-exact scheme; every earlier slice must come out finite.
pub(crate) fn sweep_policy(
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
    terminal: &[f64],
    ctx: &StepContext,
) -> Result<BackwardSolution> {
    ensure_compatible(model, lat)?;
    policy.check(lat)?;
    check_terminal(lat, terminal)?;
    let n = lat.n_steps();
    let np = lat.n_points();
    let mut y = lat.zero_field();
    let mut z = lat.zero_field();
    y.slice_mut(n).copy_from_slice(terminal);
    let mut meta = SolverMeta::default();
    let xs = lat.state().points();

    for step in (0..n).rev() {
        let t = lat.time().time(step);
        let (head, next) = y.split_step(step);
        let results: Vec<Result<(f64, f64, StepStats)>> = (0..np)
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                let vol = policy.vol(step, j);
                let a = lat.vol_grid()[vol];
                let c = lat.expect(step, vol, next, j);
                let (v, stats) = scheme_step(model, ctx, t, xs[j], a, c)?;
                Ok((v, z_at(lat, step, vol, next, j), stats))
            })
            .collect();
        let zs = z.slice_mut(step);
        for (j, r) in results.into_iter().enumerate() {
            let (v, zv, stats) = r?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at step {step}, node {j}"
                )));
            }
            head[j] = v;
            zs[j] = zv;
            meta.absorb(stats);
        }
    }
    Ok(BackwardSolution { y, z, meta })
}

pub(crate) fn check_terminal(lat: &Lattice, terminal: &[f64]) -> Result<()> {
    if terminal.len() != lat.n_points() {
        return Err(Error::Mismatch(format!(
            "terminal slice of {} values on {} nodes",
            terminal.len(),
            lat.n_points()
        )));
    }
    if let Some(v) = terminal.iter().find(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("terminal value {v}")));
    }
    Ok(())
}

/// `λ = (f(y) - f(0)) / y`: the slope of the driver's `y`-part through 0.
#[inline]
pub(crate) fn linear_coefficient(psi: f64, q: f64, y: f64) -> f64 {
    if y == 0.0 || psi == 0.0 {
        0.0
    } else {
        -psi * y.abs().powf(q - 1.0)
    }
}

/// Recomputes `y` from the linear representation
/// `y_t = E[Λ_{t,T} ξ + ∫_t^T Λ_{t,s} f⁰_s ds]` with `Λ` built from the
/// solved `y`, using trapezoidal weights on every step.
pub fn linearized_representation(
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
    solution: &BackwardSolution,
    cap: Option<f64>,
) -> Result<Field> {
    ensure_compatible(model, lat)?;
    policy.check(lat)?;
    lat.ensure_field(&solution.y)?;
    let gen = &model.generator;
    let n = lat.n_steps();
    let np = lat.n_points();
    let dt = lat.dt();
    let xs = lat.state().points();

    // λ and f⁰ on every node under the policy; the terminal slice uses the
    // last step's volatility.
    let coeffs = |step: usize, j: usize| {
        let vol = policy.vol(step.min(n - 1), j);
        let a = lat.vol_grid()[vol];
        let t = lat.time().time(step);
        let psi = gen.impact_coefficient(t, xs[j], a);
        let lambda = linear_coefficient(psi, gen.q, solution.y.get(step, j));
        (lambda, gen.running(t, xs[j], a, cap))
    };

    let mut out = lat.zero_field();
    out.slice_mut(n).copy_from_slice(solution.y.slice(n));
    for step in (0..n).rev() {
        let next: Vec<f64> = out.slice(step + 1).to_vec();
        let row: Vec<f64> = (0..np)
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                let vol = policy.vol(step, j);
                let (lam, f0) = coeffs(step, j);
                let w = lat.weights(step, vol, j);
                let mut acc = 0.5 * dt * f0;
                for (p, k) in [(w.down, j.wrapping_sub(1)), (w.stay, j), (w.up, j + 1)] {
                    if p > 0.0 {
                        let (lam_k, f0_k) = coeffs(step + 1, k);
                        let disc = (0.5 * (lam + lam_k) * dt).exp();
                        acc += p * disc * (next[k] + 0.5 * dt * f0_k);
                    }
                }
                acc
            })
            .collect();
        out.slice_mut(step).copy_from_slice(&row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `max (y¹ - y²)⁺` over all nodes.
    pub max_violation: f64,
    /// `(step, node)` where it occurs.
    pub worst: (usize, usize),
    pub nodes: usize,
}

impl ComparisonReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Checks `y¹ <= y²` node by node.
pub fn compare_fields(y1: &Field, y2: &Field) -> Result<ComparisonReport> {
    y1.ensure_same_shape(y2)?;
    let mut report = ComparisonReport {
        max_violation: 0.0,
        worst: (0, 0),
        nodes: y1.values().len(),
    };
    for step in 0..y1.n_times() {
        for (j, (a, b)) in y1.slice(step).iter().zip(y2.slice(step)).enumerate() {
            let gap = if a == b { 0.0 } else { a - b };
            if gap.is_nan() || gap > report.max_violation {
                report.max_violation = if gap.is_nan() { f64::INFINITY } else { gap };
                report.worst = (step, j);
            }
        }
    }
    Ok(report)
}

pub fn compare_solutions(
    sol1: &BackwardSolution,
    sol2: &BackwardSolution,
) -> Result<ComparisonReport> {
    compare_fields(&sol1.y, &sol2.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::model::{Penalty, UncertaintySet};
    use proptest::prelude::*;

    fn constant_lattice(model: &Model, n: usize) -> Lattice {
        Lattice::saturated(&model.uncertainty, 1.0, n, 41, 0.0).unwrap()
    }

    #[test]
    fn step_examples() {
        assert_eq!(implicit_step(5.0, 0.3, &|_: f64| 0.0).unwrap(), 5.0);
        let y = implicit_step(1.0, 1.0, &|y: f64| -y * y.abs()).unwrap();
        assert!((y - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        let d = PowerDriver {
            psi: 1.0,
            q: 2.0,
            running: 0.0,
        };
        assert!((implicit_step(1.0, 1.0, &d).unwrap() - 0.618_033_988_749_895).abs() < 1e-12);
        assert_eq!(implicit_step(1.0, 0.5, &|_: f64| 2.0).unwrap(), 2.0);
        assert!(implicit_step(f64::INFINITY, 0.5, &|_: f64| 2.0).is_err());
    }

    #[test]
    fn frozen_step_matches_ode() {
        // y' = -y² from 1 over dt = 1: 1/(1+1)
        assert!((frozen_power_step(1.0, 1.0, 1.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((frozen_power_step(f64::INFINITY, 0.25, 1.0, 2.0) - 4.0).abs() < 1e-15);
        assert!((frozen_power_step(-1.0, 1.0, 1.0, 2.0) + 0.5).abs() < 1e-15);
        assert_eq!(frozen_power_step(0.0, 1.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn zero_data_gives_zero() {
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Finite(0.0), vec![0.04]).unwrap();
        let lat = constant_lattice(&m, 20);
        for scheme in [StepScheme::FrozenExact, StepScheme::ImplicitEuler] {
            let term = terminal_slice(&m, &lat, None);
            let sol =
                solve_bsde_single(&m, &lat, &Policy::Constant(0), &term, None, scheme).unwrap();
            assert_eq!(sol.y.max(), 0.0);
            assert_eq!(sol.y.min(), 0.0);
        }
    }

    #[test]
    fn truncated_constant_model_is_the_riccati_solution() {
        let l = 3.0;
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Infinite, vec![0.04]).unwrap();
        let lat = constant_lattice(&m, 10_000);
        let term = terminal_slice(&m, &lat, Some(l));
        let sol = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            Some(l),
            StepScheme::default(),
        )
        .unwrap();
        for step in [0, 2_500, 5_000, 9_999] {
            let t = lat.time().time(step);
            let exact = l / (1.0 + l * (1.0 - t));
            assert!((sol.y.get(step, 20) - exact).abs() < 1e-6);
        }
        assert!(sol.y.max() <= l);
    }

    #[test]
    fn implicit_euler_is_first_order() {
        let l = 1.0;
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Infinite, vec![0.04]).unwrap();
        let err = |n| {
            let lat = constant_lattice(&m, n);
            let term = terminal_slice(&m, &lat, Some(l));
            let sol = solve_bsde_single(
                &m,
                &lat,
                &Policy::Constant(0),
                &term,
                Some(l),
                StepScheme::ImplicitEuler,
            )
            .unwrap();
            (sol.y0(20) - 0.5).abs()
        };
        let (e1, e2) = (err(100), err(200));
        assert!(e1 < 5e-3 && (e1 / e2 - 2.0).abs() < 0.1);
    }

    #[test]
    fn mollified_scheme_tracks_implicit_euler() {
        let m = Model::constant(2.0, 1.0, 0.2, Penalty::Finite(1.0), vec![0.04]).unwrap();
        let lat = constant_lattice(&m, 40);
        let term = terminal_slice(&m, &lat, None);
        let a = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::ImplicitEuler,
        )
        .unwrap();
        let b = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::Mollified { level: 128 },
        )
        .unwrap();
        assert!((a.y0(20) - b.y0(20)).abs() < 1e-4);
    }

    #[test]
    fn bounded_data_bound() {
        let l = 2.0;
        let m = Model::quadratic_risk(2.0, 0.5, 0.5, 3.0, Penalty::Finite(5.0), vec![0.04, 0.16])
            .unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 50, 41, 0.0).unwrap();
        let term = terminal_slice(&m, &lat, Some(l));
        for scheme in [StepScheme::FrozenExact, StepScheme::ImplicitEuler] {
            let sol =
                solve_bsde_single(&m, &lat, &Policy::Constant(1), &term, Some(l), scheme).unwrap();
            assert!(sol.y.max() <= l * (1.0 + 1.0) + 1e-10);
            assert!(sol.y.min() >= 0.0);
        }
    }

    #[test]
    fn linear_driver_representation_is_exact() {
        let gen =
            crate::model::GeneratorSpec::linear(2.0, std::sync::Arc::new(|_, _, _| 0.7)).unwrap();
        let m = Model {
            name: "linear".into(),
            generator: gen,
            terminal: crate::model::TerminalSpec::new(std::sync::Arc::new(|x: f64| {
                Penalty::Finite(x * x)
            })),
            uncertainty: UncertaintySet::driftless(vec![0.09]).unwrap(),
        };
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 30, 101, 0.0).unwrap();
        let term = terminal_slice(&m, &lat, None);
        let sol = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::default(),
        )
        .unwrap();
        // E[X_T²] = x² + a T
        assert!((sol.y0(50) - (0.09 + 0.7)).abs() < 1e-12);
        let rep = linearized_representation(&m, &lat, &Policy::Constant(0), &sol, None).unwrap();
        assert!((rep.get(0, 50) - sol.y0(50)).abs() < 1e-12);
    }

    #[test]
    fn representation_matches_solver() {
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Finite(1.0), vec![0.04]).unwrap();
        let lat = constant_lattice(&m, 200);
        let term = terminal_slice(&m, &lat, None);
        let sol = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::default(),
        )
        .unwrap();
        let rep = linearized_representation(&m, &lat, &Policy::Constant(0), &sol, None).unwrap();
        assert!((rep.get(0, 20) - sol.y0(20)).abs() < 1e-4);
        let zero = Model::constant(2.0, 1.0, 0.0, Penalty::Finite(0.0), vec![0.04]).unwrap();
        let term = terminal_slice(&zero, &lat, None);
        let sol = solve_bsde_single(
            &zero,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::default(),
        )
        .unwrap();
        let rep = linearized_representation(&zero, &lat, &Policy::Constant(0), &sol, None).unwrap();
        assert_eq!(rep.get(0, 20), 0.0);
    }

    #[test]
    fn comparison_examples() {
        let m = Model::quadratic_risk(2.0, 1.0, 0.3, 1.0, Penalty::Infinite, vec![0.09]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 40, 41, 0.0).unwrap();
        let solve = |xi: f64, cap: f64| {
            let term = vec![xi; lat.n_points()];
            solve_bsde_single(
                &m,
                &lat,
                &Policy::Constant(0),
                &term,
                Some(cap),
                StepScheme::default(),
            )
            .unwrap()
        };
        let s1 = solve(1.0, 10.0);
        assert_eq!(compare_solutions(&s1, &s1).unwrap().max_violation, 0.0);
        assert!(compare_solutions(&s1, &solve(2.0, 10.0))
            .unwrap()
            .holds(0.0));
        assert!(compare_solutions(&solve(1.0, 0.5), &solve(1.0, 1.0))
            .unwrap()
            .holds(0.0));
        let other = crate::field::Field::zeros(3, 3);
        assert!(compare_fields(&s1.y, &other).is_err());
    }

    #[test]
    fn z_is_the_regression_coefficient() {
        let gen =
            crate::model::GeneratorSpec::linear(2.0, std::sync::Arc::new(|_, _, _| 0.0)).unwrap();
        let m = Model {
            name: "identity".into(),
            generator: gen,
            terminal: crate::model::TerminalSpec::new(std::sync::Arc::new(Penalty::Finite)),
            uncertainty: UncertaintySet::driftless(vec![0.09]).unwrap(),
        };
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 10, 41, 0.0).unwrap();
        let term = terminal_slice(&m, &lat, None);
        let sol = solve_bsde_single(
            &m,
            &lat,
            &Policy::Constant(0),
            &term,
            None,
            StepScheme::default(),
        )
        .unwrap();
        assert!((sol.z.get(5, 20) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn step_root_is_unique(
            c in -50.0f64..50.0,
            dt in 1e-4f64..2.0,
            psi in 0.0f64..5.0,
            q in 1.2f64..4.0,
            running in 0.0f64..3.0,
        ) {
            let d = PowerDriver { psi, q, running };
            let y = implicit_step(c, dt, &d).unwrap();
            let g = |v: f64| v - c - dt * d.value(v);
            prop_assert!(g(y).abs() <= 1e-12 * (1.0 + y.abs()) + 1e-13 * (c.abs() + dt * d.value(y).abs()));
            // single sign change on the bracket
            let width = c.abs() + dt * running + 1.0;
            let mut sign_changes = 0;
            let mut prev = g(-width);
            for k in 1..=200 {
                let v = -width + 2.0 * width * k as f64 / 200.0;
                let cur = g(v);
                if (prev < 0.0) != (cur < 0.0) {
                    sign_changes += 1;
                }
                prev = cur;
            }
            prop_assert!(sign_changes <= 1);
        }

        #[test]
        fn ordered_data_give_ordered_solutions(
            xi1 in 0.0f64..3.0,
            dxi in 0.0f64..3.0,
            g1 in 0.0f64..2.0,
            dg in 0.0f64..2.0,
        ) {
            let lat_model = Model::constant(2.0, 1.0, 0.0, Penalty::Infinite, vec![0.09]).unwrap();
            let lat = Lattice::saturated(&lat_model.uncertainty, 1.0, 20, 21, 0.0).unwrap();
            let m1 = Model::quadratic_risk(2.0, 0.8, g1, 0.5, Penalty::Infinite, vec![0.09]).unwrap();
            let m2 = Model::quadratic_risk(2.0, 0.8, g1 + dg, 0.5, Penalty::Infinite, vec![0.09]).unwrap();
            let t1: Vec<f64> = lat.state().points().iter().map(|x| xi1 + x.abs()).collect();
            let t2: Vec<f64> = t1.iter().map(|v| v + dxi).collect();
            let s1 = solve_bsde_single(&m1, &lat, &Policy::Constant(0), &t1, None, StepScheme::ImplicitEuler).unwrap();
            let s2 = solve_bsde_single(&m2, &lat, &Policy::Constant(0), &t2, None, StepScheme::ImplicitEuler).unwrap();
            prop_assert!(compare_solutions(&s1, &s2).unwrap().holds(1e-10));
        }

        #[test]
        fn stability_under_terminal_perturbation(delta in -0.1f64..0.1) {
            let m = Model::constant(2.0, 1.0, 0.3, Penalty::Infinite, vec![0.09]).unwrap();
            let lat = Lattice::saturated(&m.uncertainty, 1.0, 20, 21, 0.0).unwrap();
            let t1 = vec![1.0; lat.n_points()];
            let t2: Vec<f64> = t1.iter().map(|v| v + delta).collect();
            let s1 = solve_bsde_single(&m, &lat, &Policy::Constant(0), &t1, None, StepScheme::ImplicitEuler).unwrap();
            let s2 = solve_bsde_single(&m, &lat, &Policy::Constant(0), &t2, None, StepScheme::ImplicitEuler).unwrap();
            prop_assert!((s1.y0(10) - s2.y0(10)).abs() <= delta.abs() + 1e-11);
        }
    }
}
