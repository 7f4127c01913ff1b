//! Reference values computed without the lattice solvers: the geometric
//! impact closed form, high-resolution ODE integration for deterministic
//! coefficients, and optimal stopping on small trees.

use crate::error::{Error, Result};

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Closed-form value along the deterministic skeleton of the geometric
/// impact model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricValue {
    /// `Y_t = η_t / (A_t ∫_t^T A_s⁻¹ ds)^(θ-1)`.
    pub y: f64,
    /// `𝒳_t / x0 = ∫_t^T A⁻¹ / ∫_0^T A⁻¹`.
    pub state_ratio: f64,
}

/// `A_t = exp((q-1) ∫_0^t b)`, `q` the conjugate of `theta`; `eta_t` is the
/// impact at the evaluated node.
pub fn closed_form_geometric(
    eta_t: f64,
    b: &dyn Fn(f64) -> f64,
    theta: f64,
    horizon: f64,
    t: f64,
) -> Result<GeometricValue> {
    if !(theta > 1.0) {
        return Err(Error::Domain(format!("theta must exceed 1, got {theta}")));
    }
    if !(t >= 0.0 && t < horizon) {
        return Err(Error::Domain(format!(
            "need 0 <= t < T, got t = {t}, T = {horizon}"
        )));
    }
    let q = theta / (theta - 1.0);
    let tol = 1e-13;
    let a = |s: f64| ((q - 1.0) * integrate(b, 0.0, s, tol)).exp();
    let inv_a = |s: f64| 1.0 / a(s);
    let tail = integrate(&inv_a, t, horizon, tol);
    let full = if t == 0.0 {
        tail
    } else {
        tail + integrate(&inv_a, 0.0, t, tol)
    };
    Ok(GeometricValue {
        y: eta_t / (a(t) * tail).powf(theta - 1.0),
        state_ratio: tail / full,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeTerminal {
    /// `y(T) = value`.
    Value(f64),
    /// `y(T) = +∞`, seeded at `T - δ` from the asymptote `η(T) δ^{-(θ-1)}`.
    Singular,
}

/// `y' = y|y|^(q-1) / ((q-1) η(t)^(q-1)) - γ(t)` backward from `T`.
pub struct OdeProblem<'a> {
    pub eta: &'a dyn Fn(f64) -> f64,
    pub gamma: &'a dyn Fn(f64) -> f64,
    pub q: f64,
    pub horizon: f64,
    pub terminal: OdeTerminal,
}

impl OdeProblem<'_> {
    fn psi(&self, t: f64) -> f64 {
        1.0 / ((self.q - 1.0) * (self.eta)(t).powf(self.q - 1.0))
    }

    fn dy(&self, t: f64, y: f64) -> f64 {
        self.psi(t) * y * y.abs().powf(self.q - 1.0) - (self.gamma)(t)
    }

    /// The same equation for `w = y^(1-q)`, valid while `y > 0`.
    fn dw(&self, t: f64, w: f64) -> f64 {
        (1.0 - self.q) * self.psi(t)
            + (self.q - 1.0) * (self.gamma)(t) * w.powf(self.q / (self.q - 1.0))
    }
}

/// Singular seeds are placed at `T - 1e-4 T`.
pub const SINGULAR_SEED_FRACTION: f64 = 1e-4;

/// Integrates the deterministic equation with classical RK4 at `n_fine`
/// steps per horizon and returns `y` at each of `samples`.
///
/// Positive solutions are integrated in `w = y^(1-q)`, which is smooth up
/// to the blow-up.
pub fn ode_oracle(problem: &OdeProblem, n_fine: usize, samples: &[f64]) -> Result<Vec<f64>> {
    if n_fine < 100_000 {
        return Err(Error::Domain(format!(
            "need at least 1e5 fine steps, got {n_fine}"
        )));
    }
    if !(problem.q > 1.0) {
        return Err(Error::Domain(format!("q must exceed 1, got {}", problem.q)));
    }
    let horizon = problem.horizon;
    let (t_start, y_start) = match problem.terminal {
        OdeTerminal::Value(v) => (horizon, v),
        OdeTerminal::Singular => {
            let delta = SINGULAR_SEED_FRACTION * horizon;
            let theta = problem.q / (problem.q - 1.0);
            (
                horizon - delta,
                (problem.eta)(horizon) * delta.powf(-(theta - 1.0)),
            )
        }
    };
    if let Some(&s) = samples.iter().find(|&&s| !(s >= 0.0 && s <= t_start)) {
        return Err(Error::Domain(format!(
            "sample time {s} outside the integration window [0, {t_start}]"
        )));
    }
    let in_w = y_start > 0.0;
    let f = |t: f64, u: f64| {
        if in_w {
            problem.dw(t, u)
        } else {
            problem.dy(t, u)
        }
    };
    let to_y = |u: f64| {
        if in_w {
            u.powf(-1.0 / (problem.q - 1.0))
        } else {
            u
        }
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].total_cmp(&samples[a]));
    let mut out = vec![0.0; samples.len()];
    let mut t = t_start;
    let mut u = if in_w {
        y_start.powf(1.0 - problem.q)
    } else {
        y_start
    };
    for idx in order {
        let target = samples[idx];
        let span = t - target;
        let steps = ((span / horizon) * n_fine as f64).ceil() as usize;
        if steps > 0 {
            let h = -span / steps as f64;
            for _ in 0..steps {
                let k1 = f(t, u);
                let k2 = f(t + 0.5 * h, u + 0.5 * h * k1);
                let k3 = f(t + 0.5 * h, u + 0.5 * h * k2);
                let k4 = f(t + h, u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += h;
                if !u.is_finite() {
                    return Err(Error::Numeric(format!(
                        "integration overflow at t = {t}, window [0, {t_start}]"
                    )));
                }
            }
            t = target;
        }
        out[idx] = to_y(u);
    }
    Ok(out)
}

/// A recombining tree for optimal stopping.
#[derive(Debug, Clone)]
pub struct StoppingTree {
    /// `children[i][j]` = `(child node at step i+1, probability)` pairs.
    pub children: Vec<Vec<Vec<(usize, f64)>>>,
    /// Running reward per unit time at `(i, j)` for `i < n`.
    pub running: Vec<Vec<f64>>,
    /// Reward for stopping at `(i, j)` before `T`.
    pub obstacle: Vec<Vec<f64>>,
    /// Reward at `T` on each terminal node.
    pub terminal: Vec<f64>,
    pub dt: f64,
}

pub const MAX_TREE_STEPS: usize = 15;

impl StoppingTree {
    /// Symmetric binomial tree: node `j` at step `i` sits at
    /// `x0 + (2j - i) dx`, up and down with probability ½.
    pub fn symmetric_binomial(
        n_steps: usize,
        x0: f64,
        dx: f64,
        dt: f64,
        running: &dyn Fn(f64, f64) -> f64,
        obstacle: &dyn Fn(f64, f64) -> f64,
        terminal: &dyn Fn(f64) -> f64,
    ) -> Self {
        let x = |i: usize, j: usize| x0 + (2.0 * j as f64 - i as f64) * dx;
        let t = |i: usize| i as f64 * dt;
        Self {
            children: (0..n_steps)
                .map(|i| (0..=i).map(|j| vec![(j, 0.5), (j + 1, 0.5)]).collect())
                .collect(),
            running: (0..n_steps)
                .map(|i| (0..=i).map(|j| running(t(i), x(i, j))).collect())
                .collect(),
            obstacle: (0..n_steps)
                .map(|i| (0..=i).map(|j| obstacle(t(i), x(i, j))).collect())
                .collect(),
            terminal: (0..=n_steps).map(|j| terminal(x(n_steps, j))).collect(),
            dt,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.children.len()
    }
}

/// Value of stopping optimally: `V_T = ξ`,
/// `V_i = max(S_i, r_i dt + Σ p V_{i+1})`, for every node of every step.
pub fn snell_oracle(tree: &StoppingTree) -> Result<Vec<Vec<f64>>> {
    let n = tree.n_steps();
    if n > MAX_TREE_STEPS {
        return Err(Error::Domain(format!(
            "tree of {n} steps exceeds the cap of {MAX_TREE_STEPS}"
        )));
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    values[n] = tree.terminal.clone();
    for i in (0..n).rev() {
        let row = tree.children[i]
            .iter()
            .enumerate()
            .map(|(j, kids)| {
                let cont: f64 = kids.iter().map(|&(k, p)| p * values[i + 1][k]).sum();
                tree.obstacle[i][j].max(tree.running[i][j] * tree.dt + cont)
            })
            .collect();
        values[i] = row;
    }
    Ok(values)
}
