//! Liquidation strategies read off a solved value field, lattice Monte
//! Carlo for their costs, and the value and terminal-constraint checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::Policy;
use crate::bsde2::Solution2;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::Lattice;
use crate::model::{Model, Penalty, TerminalSpec};

/// Inventory below `LIQUIDATED * |x0|` counts as closed, so that `0 · ∞ = 0`.
pub const LIQUIDATED: f64 = 1e-9;

/// Optimal trading speed `-(Y/η)^(q-1) x`.
pub fn optimal_rate(y: f64, eta: f64, q: f64, x: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    -(y / eta).powf(q - 1.0) * x
}

/// A trading rule on the lattice.
#[derive(Debug, Clone)]
pub enum Strategy {
    Hold,
    /// Constant speed `-x0 / T`.
    Twap {
        x0: f64,
        horizon: f64,
    },
    /// `α = -m ρ(t, node) 𝒳`, never trading through zero.
    Feedback {
        rho: Field,
        multiplier: f64,
    },
}

impl Strategy {
    /// The feedback attaining the value `Y` one step at a time.
    ///
    /// Over a step the exact minimiser trades a fraction `dt (P/η)^(q-1)` of
    /// the inventory at constant speed, `P = Y - dt (γ ∧ L)` being the value
    /// without the step's risk term and `(η, γ)` read at the argmax volatility.
    pub fn optimal(sol: &Solution2, model: &Model, lat: &Lattice) -> Result<Self> {
        lat.ensure_field(&sol.y_upper)?;
        let gen = &model.generator;
        let dt = lat.dt();
        let xs = lat.state().points();
        let mut rho = lat.zero_field();
        for i in 0..lat.n_steps() {
            let t = lat.time().time(i);
            for (j, &x) in xs.iter().enumerate() {
                let a = lat.vol_grid()[sol.policy.vol(i, j)];
                let p = sol.y_upper.get(i, j) - dt * gen.running(t, x, a, sol.cap);
                let r = if p > 0.0 {
                    (p / gen.eta(t, x, a)).powf(gen.q - 1.0)
                } else {
                    0.0
                };
                rho.set(i, j, r);
            }
        }
        Ok(Strategy::Feedback {
            rho,
            multiplier: 1.0,
        })
    }

    /// The same rule with its speed multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            Strategy::Hold => Strategy::Hold,
            Strategy::Twap { x0, horizon } => Strategy::Twap {
                x0: x0 * k,
                horizon: *horizon,
            },
            Strategy::Feedback { rho, multiplier } => Strategy::Feedback {
                rho: rho.clone(),
                multiplier: multiplier * k,
            },
        }
    }

    /// Inventory after one step from `x` at `(step, node)`.
    #[inline]
    pub fn next_state(&self, step: usize, node: usize, x: f64, dt: f64) -> f64 {
        match self {
            Strategy::Hold => x,
            Strategy::Twap { x0, horizon } => {
                let next = x - dt * x0 / horizon;
                if next * x <= 0.0 {
                    0.0
                } else {
                    next
                }
            }
            Strategy::Feedback { rho, multiplier } => {
                x * (1.0 - dt * multiplier * rho.get(step, node)).max(0.0)
            }
        }
    }
}

/// Node indices of one lattice path and the volatility used on each step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticePath {
    pub nodes: Vec<usize>,
    pub vols: Vec<usize>,
}

impl LatticePath {
    /// Draws a path from `start` under `policy`.
    pub fn sample(lat: &Lattice, policy: &Policy, start: usize, rng: &mut impl Rng) -> Self {
        let n = lat.n_steps();
        let mut nodes = Vec::with_capacity(n + 1);
        let mut vols = Vec::with_capacity(n);
        let mut j = start;
        nodes.push(j);
        for step in 0..n {
            let vol = policy.vol(step, j);
            vols.push(vol);
            j = lat.successor(step, vol, j, rng.random::<f64>());
            nodes.push(j);
        }
        Self { nodes, vols }
    }
}

/// Stream-split generator for path `index`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Inventory `𝒳` at each time.
    pub state: Vec<f64>,
    /// Speed on each step, `(𝒳_{i+1} - 𝒳_i) / dt`.
    pub rate: Vec<f64>,
    /// `Y` read at each step's left node.
    pub y: Vec<f64>,
    /// `η` at each step's left node.
    pub eta: Vec<f64>,
    /// Canonical state value at each time.
    pub x: Vec<f64>,
    pub path: LatticePath,
}

impl Trajectory {
    pub fn terminal_inventory(&self) -> f64 {
        *self.state.last().expect("trajectory has a terminal time")
    }
}

/// Inventory under the optimal feedback of `sol` along `path`.
pub fn integrate_state(
    sol: &Solution2,
    model: &Model,
    lat: &Lattice,
    path: &LatticePath,
    x0: f64,
) -> Result<Trajectory> {
    let n = lat.n_steps();
    if path.nodes.len() != n + 1 || path.vols.len() != n {
        return Err(Error::Mismatch(format!(
            "path of {} nodes on a lattice of {} steps",
            path.nodes.len(),
            n
        )));
    }
    let strategy = Strategy::optimal(sol, model, lat)?;
    let dt = lat.dt();
    let xs = lat.state().points();
    let mut state = Vec::with_capacity(n + 1);
    let mut rate = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut inv = x0;
    state.push(inv);
    for step in 0..n {
        let j = path.nodes[step];
        let t = lat.time().time(step);
        let next = strategy.next_state(step, j, inv, dt);
        rate.push((next - inv) / dt);
        y.push(sol.y_upper.get(step, j));
        eta.push(
            model
                .generator
                .eta(t, xs[j], lat.vol_grid()[path.vols[step]]),
        );
        inv = next;
        state.push(inv);
    }
    Ok(Trajectory {
        times: lat.time().times(),
        state,
        rate,
        y,
        eta,
        x: path.nodes.iter().map(|&j| xs[j]).collect(),
        path: path.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureCost {
    pub label: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√paths`; zero when the mean is infinite.
    pub se: f64,
    pub n_paths: usize,
    /// Paths ending with inventory on the singular set.
    pub infinite_paths: usize,
    pub per_measure: Vec<MeasureCost>,
    /// Label of the measure with the largest mean, for worst-case estimates.
    pub attaining: Option<String>,
}

/// Cost of one path: `Σ (η |α|^θ + (γ ∧ L) |𝒳|^θ) dt + (ξ ∧ L) |𝒳_T|^θ`.
#[allow(clippy::too_many_arguments)]
fn path_cost(
    strategy: &Strategy,
    model: &Model,
    lat: &Lattice,
    path: &LatticePath,
    xs: &[f64],
    x0: f64,
    cap: Option<f64>,
) -> f64 {
    let gen = &model.generator;
    let theta = gen.theta;
    let dt = lat.dt();
    let mut inv = x0;
    let mut cost = 0.0;
    for step in 0..lat.n_steps() {
        let j = path.nodes[step];
        let t = lat.time().time(step);
        let a = lat.vol_grid()[path.vols[step]];
        let next = strategy.next_state(step, j, inv, dt);
        let speed = (next - inv) / dt;
        cost += dt
            * (gen.eta(t, xs[j], a) * speed.abs().powf(theta)
                + gen.running(t, xs[j], a, cap) * inv.abs().powf(theta));
        inv = next;
    }
    let xt = xs[*path.nodes.last().expect("non-empty path")];
    let weight = if inv.abs() <= LIQUIDATED * x0.abs() {
        0.0
    } else {
        inv.abs().powf(theta)
    };
    let penalty = match (model.terminal.xi(xt), cap) {
        (p, Some(l)) => Penalty::Finite(p.capped(l)),
        (p, None) => p,
    };
    cost + penalty.times(weight)
}

/// Monte Carlo over lattice paths drawn under `measure` from the origin node.
///
/// Path `k` uses its own stream of a ChaCha generator seeded with `seed`;
/// costs are summed in path order, so results do not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_cost(
    strategy: &Strategy,
    model: &Model,
    lat: &Lattice,
    measure: &Policy,
    x0: f64,
    n_paths: usize,
    seed: u64,
    cap: Option<f64>,
) -> Result<CostEstimate> {
    if n_paths == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    measure.check(lat)?;
    let xs = lat.state().points();
    let start = lat.origin();
    let costs: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .with_min_len(256)
        .map(|k| {
            let mut rng = path_rng(seed, k as u64);
            let path = LatticePath::sample(lat, measure, start, &mut rng);
            path_cost(strategy, model, lat, &path, &xs, x0, cap)
        })
        .collect();
    if let Some(c) = costs.iter().find(|c| c.is_nan()) {
        return Err(Error::Numeric(format!("path cost {c}")));
    }
    let infinite_paths = costs.iter().filter(|c| c.is_infinite()).count();
    let n = n_paths as f64;
    let (mean, se) = if infinite_paths > 0 {
        (f64::INFINITY, 0.0)
    } else {
        let mean = costs.iter().sum::<f64>() / n;
        let var = if n_paths > 1 {
            costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, (var / n).sqrt())
    };
    Ok(CostEstimate {
        mean,
        se,
        n_paths,
        infinite_paths,
        per_measure: Vec::new(),
        attaining: None,
    })
}

/// Largest cost over every constant volatility and the argmax policy of `sol`.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_cost(
    strategy: &Strategy,
    model: &Model,
    lat: &Lattice,
    sol: &Solution2,
    x0: f64,
    n_paths: usize,
    seed: u64,
    cap: Option<f64>,
) -> Result<CostEstimate> {
    let mut measures: Vec<(String, Policy)> = lat
        .vol_grid()
        .iter()
        .enumerate()
        .map(|(k, a)| (format!("a={a}"), Policy::Constant(k)))
        .collect();
    measures.push(("argmax".into(), sol.policy.clone()));
    let mut per_measure = Vec::with_capacity(measures.len());
    let mut worst: Option<CostEstimate> = None;
    let mut attaining = String::new();
    for (label, policy) in &measures {
        let est = simulate_cost(strategy, model, lat, policy, x0, n_paths, seed, cap)?;
        per_measure.push(MeasureCost {
            label: label.clone(),
            mean: est.mean,
            se: est.se,
        });
        if worst.as_ref().is_none_or(|w| est.mean > w.mean) {
            attaining = label.clone();
            worst = Some(est);
        }
    }
    let mut out = worst.expect("at least one measure");
    out.per_measure = per_measure;
    out.attaining = Some(attaining);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationReport {
    /// `Y₀ |x0|^θ`.
    pub value: f64,
    pub mc_mean: f64,
    pub se: f64,
    pub gap: f64,
    /// `gap / se`; without sampling noise, 0 inside the allowance and ±∞ outside.
    pub z: f64,
    pub allowance: f64,
    pub pass: bool,
}

/// Checks `|E[cost] - Y₀ |x0|^θ| <= 3 SE + allowance`.
pub fn verify_value(
    y0: f64,
    x0: f64,
    theta: f64,
    cost: &CostEstimate,
    allowance: f64,
) -> VerificationReport {
    let value = if x0 == 0.0 {
        0.0
    } else {
        y0 * x0.abs().powf(theta)
    };
    let gap = cost.mean - value;
    let z = if cost.se > 0.0 {
        gap / cost.se
    } else if gap.abs() <= allowance {
        0.0
    } else {
        f64::INFINITY.copysign(gap)
    };
    VerificationReport {
        value,
        mc_mean: cost.mean,
        se: cost.se,
        gap,
        z,
        allowance,
        pass: gap.abs() <= 3.0 * cost.se + allowance,
    }
}

/// `true` unless the path ends on the singular set with inventory above
/// `tol · |x0|` (default `1e-6`).
pub fn terminal_constraint_check(traj: &Trajectory, term: &TerminalSpec, tol: Option<f64>) -> bool {
    let x_t = *traj.x.last().expect("trajectory has a terminal state");
    if !term.singular(x_t) {
        return true;
    }
    let x0 = traj.state[0];
    traj.terminal_inventory().abs() <= tol.unwrap_or(1e-6) * x0.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::terminal_slice;
    use crate::bsde2::solve_2bsde;
    use crate::model::Penalty;
    use crate::singular::{solve_singular_direct, solve_truncated};

    fn constant_setup(n: usize) -> (Model, Lattice, Solution2) {
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Infinite, vec![0.04, 0.09]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, n, 41, 0.0).unwrap();
        let sol = solve_singular_direct(&m, &lat).unwrap();
        (m, lat, sol)
    }

    #[test]
    fn rate_examples() {
        assert_eq!(optimal_rate(0.0, 1.0, 2.0, 5.0), 0.0);
        assert_eq!(optimal_rate(1.0, 1.0, 2.0, 3.0), -3.0);
        assert_eq!(optimal_rate(4.0, 1.0, 1.5, 2.0), -4.0);
    }

    #[test]
    fn zero_value_keeps_inventory() {
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Finite(0.0), vec![0.04]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 50, 21, 0.0).unwrap();
        let sol = solve_2bsde(&m, &lat, &terminal_slice(&m, &lat, None), None).unwrap();
        let path = LatticePath::sample(&lat, &sol.policy, lat.origin(), &mut path_rng(1, 0));
        let traj = integrate_state(&sol, &m, &lat, &path, 2.5).unwrap();
        assert!(traj.state.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn constant_model_trades_linearly() {
        let (m, lat, sol) = constant_setup(1000);
        let path = LatticePath::sample(&lat, &sol.policy, lat.origin(), &mut path_rng(3, 0));
        let traj = integrate_state(&sol, &m, &lat, &path, 1.0).unwrap();
        let err = traj
            .times
            .iter()
            .zip(&traj.state)
            .map(|(t, x)| (x - (1.0 - t)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5e-3);
        for (i, r) in traj.rate.iter().enumerate() {
            let d = (traj.state[i + 1] - traj.state[i]) / lat.dt();
            assert!((r - d).abs() <= 1e-10);
        }
        assert!(terminal_constraint_check(&traj, &m.terminal, None));
        assert!(traj.state.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constraint_examples() {
        let (m, lat, sol) = constant_setup(500);
        let path = LatticePath::sample(&lat, &sol.policy, lat.origin(), &mut path_rng(3, 0));
        let mut traj = integrate_state(&sol, &m, &lat, &path, 1.0).unwrap();
        assert!(terminal_constraint_check(&traj, &m.terminal, None));
        assert!(terminal_constraint_check(
            &traj,
            &TerminalSpec::constant(2.0),
            None
        ));
        traj.state.iter_mut().for_each(|x| *x = 1.0);
        assert!(!terminal_constraint_check(&traj, &m.terminal, None));
    }

    #[test]
    fn hold_with_bounded_penalty_costs_the_penalty() {
        let m = Model::constant(2.0, 1.0, 0.0, Penalty::Finite(0.3), vec![0.04]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 20, 21, 0.0).unwrap();
        let est = simulate_cost(
            &Strategy::Hold,
            &m,
            &lat,
            &Policy::Constant(0),
            2.0,
            100,
            9,
            None,
        )
        .unwrap();
        assert!((est.mean - 0.3 * 4.0).abs() < 1e-12);
        let inf = Model::constant(2.0, 1.0, 0.0, Penalty::Infinite, vec![0.04]).unwrap();
        let est = simulate_cost(
            &Strategy::Hold,
            &inf,
            &lat,
            &Policy::Constant(0),
            2.0,
            10,
            9,
            None,
        )
        .unwrap();
        assert!(est.mean.is_infinite() && est.infinite_paths == 10);
    }

    #[test]
    fn twap_and_optimal_agree_on_constant_model() {
        let (m, lat, sol) = constant_setup(100);
        let x0 = 3.0;
        let opt = Strategy::optimal(&sol, &m, &lat).unwrap();
        let c_opt = simulate_cost(&opt, &m, &lat, &sol.policy, x0, 50, 1, None).unwrap();
        let twap = Strategy::Twap { x0, horizon: 1.0 };
        let c_twap = simulate_cost(&twap, &m, &lat, &sol.policy, x0, 50, 1, None).unwrap();
        assert!((c_opt.mean - x0 * x0).abs() <= 1e-10 * x0 * x0);
        assert!((c_twap.mean - x0 * x0).abs() <= 1e-10 * x0 * x0);
        let report = verify_value(sol.y0(lat.origin()), x0, 2.0, &c_opt, 1e-10 * x0 * x0);
        assert!(report.pass, "{report:?}");
        let zero = verify_value(
            sol.y0(lat.origin()),
            0.0,
            2.0,
            &simulate_cost(&opt, &m, &lat, &sol.policy, 0.0, 5, 1, None).unwrap(),
            0.0,
        );
        assert_eq!((zero.value, zero.mc_mean), (0.0, 0.0));
    }

    #[test]
    fn homogeneity_and_determinism() {
        let m =
            Model::quadratic_risk(2.5, 1.0, 0.2, 0.5, Penalty::Infinite, vec![0.04, 0.16]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 60, 61, 0.0).unwrap();
        let sol = solve_singular_direct(&m, &lat).unwrap();
        let opt = Strategy::optimal(&sol, &m, &lat).unwrap();
        let c1 = simulate_cost(&opt, &m, &lat, &Policy::Constant(0), 1.3, 500, 42, None).unwrap();
        let c2 = simulate_cost(&opt, &m, &lat, &Policy::Constant(0), 2.6, 500, 42, None).unwrap();
        assert!((c2.mean / c1.mean - 2f64.powf(2.5)).abs() <= 1e-10);
        let again =
            simulate_cost(&opt, &m, &lat, &Policy::Constant(0), 1.3, 500, 42, None).unwrap();
        assert_eq!(c1, again);
        assert!(c1.se > 0.0);
    }

    #[test]
    fn worst_case_dominates_each_measure() {
        let m =
            Model::quadratic_risk(2.0, 1.0, 0.1, 1.0, Penalty::Infinite, vec![0.04, 0.16]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 50, 61, 0.0).unwrap();
        let sol = solve_truncated(&m, &lat, 256.0).unwrap();
        let opt = Strategy::optimal(&sol, &m, &lat).unwrap();
        let wc = worst_case_cost(&opt, &m, &lat, &sol, 1.0, 2000, 5, Some(256.0)).unwrap();
        assert_eq!(wc.per_measure.len(), 3);
        assert!(wc.attaining.is_some());
        for mc in &wc.per_measure {
            assert!(wc.mean >= mc.mean);
        }
        // the optimal strategy costs Y₀ x0^θ under the argmax measure
        let argmax = wc.per_measure.iter().find(|c| c.label == "argmax").unwrap();
        let report = verify_value(
            sol.y0(lat.origin()),
            1.0,
            2.0,
            &CostEstimate {
                mean: argmax.mean,
                se: argmax.se,
                n_paths: 2000,
                infinite_paths: 0,
                per_measure: vec![],
                attaining: None,
            },
            1e-10,
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn perturbations_cost_more() {
        let m =
            Model::quadratic_risk(2.0, 1.0, 0.1, 1.0, Penalty::Infinite, vec![0.04, 0.16]).unwrap();
        let lat = Lattice::saturated(&m.uncertainty, 1.0, 50, 61, 0.0).unwrap();
        let sol = solve_singular_direct(&m, &lat).unwrap();
        let opt = Strategy::optimal(&sol, &m, &lat).unwrap();
        let base = worst_case_cost(&opt, &m, &lat, &sol, 1.0, 2000, 5, None).unwrap();
        for k in [0.5, 0.8, 1.2, 1.5] {
            let c = worst_case_cost(&opt.scaled(k), &m, &lat, &sol, 1.0, 2000, 5, None).unwrap();
            assert!(c.mean >= base.mean - 2.0 * base.se);
        }
        let twap = worst_case_cost(
            &Strategy::Twap {
                x0: 1.0,
                horizon: 1.0,
            },
            &m,
            &lat,
            &sol,
            1.0,
            2000,
            5,
            None,
        )
        .unwrap();
        assert!(twap.mean >= base.mean - 2.0 * base.se);
    }
}
