//! Second-order solver: per-node maximum over the volatility grid.

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::{
    check_terminal, ensure_compatible, scheme_step, sweep_policy, BackwardSolution, Policy,
    SolverMeta, StepContext, StepScheme,
};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::Lattice;
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct Solution2 {
    /// The value `Y = max_a` of the one-step values.
    pub y_upper: Field,
    /// Argmax volatility per node (smallest index on ties).
    pub policy: Policy,
    /// `ΔK^a = Y - (one-step value under a)` per volatility; zero at `T`.
    pub dk: Vec<Field>,
    /// `λ^a` between `Y` and `y^a` per volatility.
    pub lambda: Vec<Field>,
    /// Solutions under each constant volatility.
    pub y_single: Vec<BackwardSolution>,
    pub terminal: Vec<f64>,
    pub cap: Option<f64>,
    pub scheme: StepScheme,
    pub meta: SolverMeta,
}

impl Solution2 {
    pub fn y0(&self, node: usize) -> f64 {
        self.y_upper.get(0, node)
    }

    /// Largest `ΔK` over all volatilities and nodes.
    pub fn max_dk(&self) -> f64 {
        self.dk.iter().map(Field::max).fold(0.0, f64::max)
    }

    /// Volatility index chosen at `(step, node)`.
    pub fn argmax(&self, step: usize, node: usize) -> usize {
        self.policy.vol(step, node)
    }
}

pub fn solve_2bsde(
    model: &Model,
    lat: &Lattice,
    terminal: &[f64],
    cap: Option<f64>,
) -> Result<Solution2> {
    solve_2bsde_with(model, lat, terminal, cap, StepScheme::default())
}

pub fn solve_2bsde_with(
    model: &Model,
    lat: &Lattice,
    terminal: &[f64],
    cap: Option<f64>,
    scheme: StepScheme,
) -> Result<Solution2> {
    ensure_compatible(model, lat)?;
    check_terminal(lat, terminal)?;
    let report = model.validate(lat.time(), lat.state());
    if !report.is_valid() {
        return Err(Error::Config(report.messages().join("; ")));
    }
    if scheme != StepScheme::FrozenExact && terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "infinite terminal data need the frozen-exact scheme".into(),
        ));
    }
    let ctx = StepContext::new(lat, scheme, cap);
    let n = lat.n_steps();
    let np = lat.n_points();
    let nv = lat.n_vols();
    let xs = lat.state().points();

    let mut y = lat.zero_field();
    y.slice_mut(n).copy_from_slice(terminal);
    let mut dk = vec![lat.zero_field(); nv];
    let mut indices = vec![0usize; n * np];
    let mut meta = SolverMeta::default();

    for step in (0..n).rev() {
        let t = lat.time().time(step);
        let (head, next) = y.split_step(step);
        let rows: Vec<Result<(usize, Vec<f64>, SolverMeta)>> = (0..np)
            .into_par_iter()
            .with_min_len(32)
            .map(|j| {
                let mut local = SolverMeta::default();
                let mut values = Vec::with_capacity(nv);
                for (vol, &a) in lat.vol_grid().iter().enumerate() {
                    let c = lat.expect(step, vol, next, j);
                    let (v, stats) = scheme_step(model, &ctx, t, xs[j], a, c)?;
                    local.absorb(stats);
                    values.push(v);
                }
                let mut best = 0;
                for vol in 1..nv {
                    if values[vol] > values[best] {
                        best = vol;
                    }
                }
                Ok((best, values, local))
            })
            .collect();
        for (j, row) in rows.into_iter().enumerate() {
            let (best, values, local) = row?;
            let top = values[best];
            if !top.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {top} at step {step}, node {j}"
                )));
            }
            head[j] = top;
            indices[step * np + j] = best;
            for (vol, v) in values.iter().enumerate() {
                dk[vol].set(step, j, top - v);
            }
            meta.newton_iterations += local.newton_iterations;
            meta.max_iterations = meta.max_iterations.max(local.max_iterations);
            meta.max_residual = meta.max_residual.max(local.max_residual);
        }
    }

    let y_single: Vec<BackwardSolution> = (0..nv)
        .into_par_iter()
        .map(|vol| sweep_policy(model, lat, &Policy::Constant(vol), terminal, &ctx))
        .collect::<Result<_>>()?;
    let lambda = (0..nv)
        .map(|vol| lambda_field(model, lat, &y, &y_single[vol].y, vol))
        .collect::<Result<_>>()?;

    Ok(Solution2 {
        y_upper: y,
        policy: Policy::Nodewise {
            n_points: np,
            indices,
        },
        dk,
        lambda,
        y_single,
        terminal: terminal.to_vec(),
        cap,
        scheme,
        meta,
    })
}

/// Slope of the driver between `big` and `small`:
/// `(f(Y) - f(y)) / (Y - y)`, or `f'(y)` when the two are within 1e-12.
pub fn lambda_value(psi: f64, q: f64, big: f64, small: f64) -> f64 {
    if psi == 0.0 {
        return 0.0;
    }
    if big.is_infinite() || small.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let power = |y: f64| -psi * y * y.abs().powf(q - 1.0);
    if (big - small).abs() > 1e-12 {
        (power(big) - power(small)) / (big - small)
    } else {
        -q * psi * small.abs().powf(q - 1.0)
    }
}

/// `λ^a` on every node, comparing `Y` with a solution under volatility `vol`.
pub fn lambda_field(
    model: &Model,
    lat: &Lattice,
    big: &Field,
    small: &Field,
    vol: usize,
) -> Result<Field> {
    lat.ensure_field(big)?;
    big.ensure_same_shape(small)?;
    let a = *lat
        .vol_grid()
        .get(vol)
        .ok_or_else(|| Error::Domain(format!("volatility index {vol} out of range")))?;
    let gen = &model.generator;
    let xs = lat.state().points();
    let mut out = lat.zero_field();
    for step in 0..=lat.n_steps() {
        let t = lat.time().time(step);
        for (j, &x) in xs.iter().enumerate() {
            let psi = gen.impact_coefficient(t, x, a);
            out.set(
                step,
                j,
                lambda_value(psi, gen.q, big.get(step, j), small.get(step, j)),
            );
        }
    }
    Ok(out)
}

/// Expected `K` mass under a policy, from one start node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMass {
    /// `E[Σ exp(Σ λ dt) ΔK]`, left-endpoint `λ`.
    pub weighted: f64,
    /// `E[Σ ΔK]`.
    pub unweighted: f64,
}

/// Forward propagation of the path distribution under `policy` from
/// `start`, accumulating `ΔK^P` with and without the exponential weight.
///
/// `λ^P` compares `Y` with the solution under `policy` itself.
pub fn k_mass(
    sol: &Solution2,
    model: &Model,
    lat: &Lattice,
    policy: &Policy,
    start: usize,
) -> Result<KMass> {
    lat.ensure_field(&sol.y_upper)?;
    if start >= lat.n_points() {
        return Err(Error::Domain(format!(
            "start node {start} outside the grid"
        )));
    }
    let ctx = StepContext::new(lat, sol.scheme, sol.cap);
    let y_policy = sweep_policy(model, lat, policy, &sol.terminal, &ctx)?;
    let np = lat.n_points();
    let dt = lat.dt();
    let xs = lat.state().points();
    let gen = &model.generator;

    // mass[j]: probability of being at j; disc[j]: probability times Λ
    let mut mass = vec![0.0; np];
    let mut disc = vec![0.0; np];
    mass[start] = 1.0;
    disc[start] = 1.0;
    let mut out = KMass {
        weighted: 0.0,
        unweighted: 0.0,
    };
    for step in 0..lat.n_steps() {
        let t = lat.time().time(step);
        let mut next_mass = vec![0.0; np];
        let mut next_disc = vec![0.0; np];
        for j in 0..np {
            if mass[j] == 0.0 {
                continue;
            }
            let vol = policy.vol(step, j);
            let dk = sol.dk[vol].get(step, j);
            out.unweighted += mass[j] * dk;
            out.weighted += disc[j] * dk;
            let a = lat.vol_grid()[vol];
            let lam = lambda_value(
                gen.impact_coefficient(t, xs[j], a),
                gen.q,
                sol.y_upper.get(step, j),
                y_policy.y.get(step, j),
            );
            let grow = (lam * dt).exp();
            let w = lat.weights(step, vol, j);
            for (p, k) in [(w.down, j.wrapping_sub(1)), (w.stay, j), (w.up, j + 1)] {
                if p > 0.0 {
                    next_mass[k] += p * mass[j];
                    next_disc[k] += p * disc[j] * grow;
                }
            }
        }
        mass = next_mass;
        disc = next_disc;
    }
    Ok(out)
}

/// Weighted `K` mass along the argmax policy from the origin node.
pub fn minimality_diagnostic(sol: &Solution2, model: &Model, lat: &Lattice) -> Result<f64> {
    Ok(k_mass(sol, model, lat, &sol.policy, lat.origin())?.weighted)
}

/// `E[Σ ΔK^a]` under constant volatility `a`, from the origin node.
pub fn k_total(sol: &Solution2, model: &Model, lat: &Lattice, vol: usize) -> Result<f64> {
    if vol >= lat.n_vols() {
        return Err(Error::Domain(format!(
            "volatility index {vol} out of range"
        )));
    }
    Ok(k_mass(sol, model, lat, &Policy::Constant(vol), lat.origin())?.unweighted)
}
