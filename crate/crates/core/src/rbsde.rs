//! Reflected BSDE above a lower barrier, solved by projection after each
//! backward step.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::bsde::{
    check_terminal, ensure_compatible, scheme_step, BackwardSolution, Policy, SolverMeta,
    StepContext, StepScheme,
};
use crate::bsde2::lambda_value;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::Lattice;
use crate::model::{DriverKind, Model};
use crate::oracle::{snell_oracle, StoppingTree};

pub type BarrierFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Lower obstacle `S(t, x)`; `none()` is `S ≡ -∞`.
#[derive(Clone)]
pub struct Barrier {
    s_fn: Option<BarrierFn>,
}

impl fmt::Debug for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Barrier")
            .field("active", &self.s_fn.is_some())
            .finish()
    }
}

impl Barrier {
    pub fn new(s_fn: BarrierFn) -> Self {
        Self { s_fn: Some(s_fn) }
    }

    pub fn none() -> Self {
        Self { s_fn: None }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Arc::new(move |_, _| value))
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        match &self.s_fn {
            Some(f) => f(t, x),
            None => f64::NEG_INFINITY,
        }
    }

    /// The barrier on every lattice node.
    pub fn discretize(&self, lat: &Lattice) -> Field {
        let xs = lat.state().points();
        let mut out = lat.zero_field();
        for i in 0..=lat.n_steps() {
            let t = lat.time().time(i);
            for (j, &x) in xs.iter().enumerate() {
                out.set(i, j, self.value(t, x));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ReflectedSolution {
    pub y_tilde: Field,
    /// `ỹ - (unreflected step value)`, zero at `T`.
    pub dk_tilde: Field,
    pub barrier: Field,
    pub terminal: Vec<f64>,
    pub cap: Option<f64>,
    pub scheme: StepScheme,
    pub meta: SolverMeta,
}

impl ReflectedSolution {
    /// `Σ dk (ỹ - S)` over all nodes where the barrier is finite.
    pub fn complementarity_residual(&self) -> f64 {
        self.dk_tilde
            .values()
            .iter()
            .zip(self.y_tilde.values())
            .zip(self.barrier.values())
            .filter(|((dk, _), s)| **dk > 0.0 && s.is_finite())
            .map(|((dk, y), s)| dk * (y - s))
            .sum()
    }

    pub fn as_backward(&self) -> BackwardSolution {
        BackwardSolution {
            y: self.y_tilde.clone(),
            z: Field::zeros(self.y_tilde.n_times(), self.y_tilde.n_points()),
            meta: self.meta,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn solve_reflected(
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
    terminal: &[f64],
    barrier: &Barrier,
    cap: Option<f64>,
    scheme: StepScheme,
) -> Result<ReflectedSolution> {
    ensure_compatible(model, lat)?;
    policy.check(lat)?;
    check_terminal(lat, terminal)?;
    if let Some(v) = terminal.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("terminal value {v} is not finite")));
    }
    let s = barrier.discretize(lat);
    let n = lat.n_steps();
    let np = lat.n_points();
    for (j, (&xi, &sv)) in terminal.iter().zip(s.slice(n)).enumerate() {
        if sv > xi + 1e-12 * (1.0 + xi.abs()) {
            return Err(Error::Config(format!(
                "barrier {sv} exceeds terminal value {xi} at terminal node {j}"
            )));
        }
    }
    let ctx = StepContext::new(lat, scheme, cap);
    let xs = lat.state().points();
    let mut y = lat.zero_field();
    let mut dk = lat.zero_field();
    y.slice_mut(n).copy_from_slice(terminal);
    let mut meta = SolverMeta::default();
    for step in (0..n).rev() {
        let t = lat.time().time(step);
        let (head, next) = y.split_step(step);
        for j in 0..np {
            let vol = policy.vol(step, j);
            let a = lat.vol_grid()[vol];
            let c = lat.expect(step, vol, next, j);
            let (v, stats) = scheme_step(model, &ctx, t, xs[j], a, c)?;
            meta.absorb(stats);
            let sv = s.get(step, j);
            if sv > v {
                head[j] = sv;
                dk.set(step, j, sv - v);
            } else {
                head[j] = v;
            }
        }
    }
    Ok(ReflectedSolution {
        y_tilde: y,
        dk_tilde: dk,
        barrier: s,
        terminal: terminal.to_vec(),
        cap,
        scheme,
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnellReport {
    /// `max |ỹ - V|` over all nodes.
    pub gap: f64,
    /// `true` when the driver does not depend on `y`, so that the gap
    /// certifies the identity; otherwise it is a diagnostic only.
    pub exact: bool,
}

/// Compares the reflected solution with the value of the optimal stopping
/// problem computed on a separate tree.
///
/// For `y`-dependent drivers the stopping problem is discounted by
/// `exp(λ dt)` with `λ = (f(ỹ) - f(0)) / ỹ`.
pub fn snell_check(
    sol: &ReflectedSolution,
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
) -> Result<SnellReport> {
    lat.ensure_field(&sol.y_tilde)?;
    policy.check(lat)?;
    let n = lat.n_steps();
    let np = lat.n_points();
    let gen = &model.generator;
    let xs = lat.state().points();
    let mut exact = gen.kind() == DriverKind::Linear;

    let mut children = Vec::with_capacity(n);
    let mut running = Vec::with_capacity(n);
    let mut obstacle = Vec::with_capacity(n);
    for i in 0..n {
        let t = lat.time().time(i);
        let mut kids_row = Vec::with_capacity(np);
        let mut run_row = Vec::with_capacity(np);
        for (j, &x) in xs.iter().enumerate() {
            let vol = policy.vol(i, j);
            let a = lat.vol_grid()[vol];
            let psi = gen.impact_coefficient(t, x, a);
            if psi != 0.0 {
                exact = false;
            }
            let grow = (lambda_value(psi, gen.q, sol.y_tilde.get(i, j), 0.0) * lat.dt()).exp();
            let w = lat.weights(i, vol, j);
            let kids: Vec<(usize, f64)> = [(w.down, j.wrapping_sub(1)), (w.stay, j), (w.up, j + 1)]
                .into_iter()
                .filter(|&(p, _)| p > 0.0)
                .map(|(p, k)| (k, p * grow))
                .collect();
            kids_row.push(kids);
            run_row.push(gen.running(t, x, a, sol.cap));
        }
        children.push(kids_row);
        running.push(run_row);
        obstacle.push(sol.barrier.slice(i).to_vec());
    }
    let tree = StoppingTree {
        children,
        running,
        obstacle,
        terminal: sol.terminal.clone(),
        dt: lat.dt(),
    };
    let values = snell_oracle(&tree)?;
    let gap = values
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .zip(sol.y_tilde.slice(i))
                .map(|(v, y)| (v - y).abs())
        })
        .fold(0.0, f64::max);
    Ok(SnellReport { gap, exact })
}
