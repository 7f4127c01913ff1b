//! Singular terminal data: the truncation ladder `L_k = l0 · growth^k`,
//! the level-independent a-priori bound and the blow-up profile.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{compare_fields, terminal_slice, StepScheme};
use crate::bsde2::{solve_2bsde_with, Solution2};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::lattice::Lattice;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationLadder {
    pub l0: f64,
    pub growth: f64,
    pub max_levels: usize,
    /// Results are certified on `[0, T - eps_cutoff]`.
    pub eps_cutoff: f64,
    /// Stop once the sup-norm increment on `[0, T - ε]` falls below this.
    pub tol: f64,
}

impl Default for TruncationLadder {
    fn default() -> Self {
        Self {
            l0: 1.0,
            growth: 2.0,
            max_levels: 17,
            eps_cutoff: 0.05,
            tol: 1e-3,
        }
    }
}

impl TruncationLadder {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.l0 > 0.0 && self.l0.is_finite()) {
            return Err(Error::Config(format!(
                "ladder l0 must be positive, got {}",
                self.l0
            )));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(Error::Config(format!(
                "ladder growth must exceed 1, got {}",
                self.growth
            )));
        }
        if !(self.eps_cutoff > 0.0 && self.eps_cutoff < horizon) {
            return Err(Error::Config(format!(
                "cutoff must lie in (0, T), got {}",
                self.eps_cutoff
            )));
        }
        if self.max_levels == 0 {
            return Err(Error::Config("ladder needs at least one level".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("ladder tolerance {}", self.tol)));
        }
        Ok(())
    }

    pub fn level(&self, k: usize) -> f64 {
        self.l0 * self.growth.powi(k as i32)
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.max_levels).map(|k| self.level(k)).collect()
    }
}

/// Last time step with `t <= T - ε`.
pub fn cutoff_step(lat: &Lattice, eps: f64) -> usize {
    let tg = lat.time();
    let limit = tg.horizon() - eps;
    (0..=tg.n_steps())
        .rev()
        .find(|&i| tg.time(i) <= limit + 1e-12 * tg.horizon())
        .unwrap_or(0)
}

/// One row of the ladder table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: f64,
    /// Sup-norm change from the previous level on `[0, T - ε]`; `None` at the first level.
    pub sup_increment: Option<f64>,
    /// `Y^L` at time 0, origin node.
    pub y0: f64,
    /// `Y^L` at the cutoff time, origin node.
    pub y_cutoff: f64,
    /// `min (U - (T-t)^θ Y^L)` over nodes with `t < T`.
    pub bound_slack: f64,
    /// `max (Y^{prev} - Y^L)⁺` over all nodes.
    pub monotonicity_violation: f64,
}

#[derive(Debug, Clone)]
pub struct SingularSolution {
    /// Highest-level solution restricted to `[0, T - ε]`.
    pub y_limit: Field,
    pub cutoff_step: usize,
    pub levels: Vec<LevelReport>,
    pub converged: bool,
    pub profile_exponent: Option<f64>,
    /// Solution at the last level solved.
    pub top: Solution2,
}

impl SingularSolution {
    pub fn levels_used(&self) -> Vec<f64> {
        self.levels.iter().map(|r| r.level).collect()
    }

    pub fn increments(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|r| r.sup_increment).collect()
    }

    pub fn last_increment(&self) -> Option<f64> {
        self.levels.last().and_then(|r| r.sup_increment)
    }
}

/// The 2BSDE with terminal `ξ ∧ L` and risk `γ ∧ L`.
pub fn solve_truncated(model: &Model, lat: &Lattice, level: f64) -> Result<Solution2> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Domain(format!(
            "truncation level must be >= 0, got {level}"
        )));
    }
    let terminal = terminal_slice(model, lat, Some(level));
    solve_2bsde_with(model, lat, &terminal, Some(level), StepScheme::FrozenExact)
}

/// The 2BSDE with `ξ` and `γ` uncapped; `+∞` terminal values are
/// propagated exactly through the first step.
pub fn solve_singular_direct(model: &Model, lat: &Lattice) -> Result<Solution2> {
    let terminal = terminal_slice(model, lat, None);
    solve_2bsde_with(model, lat, &terminal, None, StepScheme::FrozenExact)
}

fn restrict(field: &Field, last_step: usize) -> Field {
    let np = field.n_points();
    Field::from_values(
        last_step + 1,
        np,
        field.values()[..(last_step + 1) * np].to_vec(),
    )
    .expect("restriction keeps the shape consistent")
}

fn sup_diff(a: &Field, b: &Field, last_step: usize) -> f64 {
    let np = a.n_points();
    a.values()[..(last_step + 1) * np]
        .iter()
        .zip(&b.values()[..(last_step + 1) * np])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `min (U - (T-t)^θ Y)` over all nodes with `t < T`.
pub fn bound_slack(model: &Model, lat: &Lattice, y: &Field, bound: &Field) -> f64 {
    let theta = model.generator.theta;
    let tg = lat.time();
    (0..tg.n_steps())
        .map(|i| {
            let w = (tg.horizon() - tg.time(i)).powf(theta);
            y.slice(i)
                .iter()
                .zip(bound.slice(i))
                .map(|(yv, u)| u - w * yv)
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Climbs the ladder until the increment on `[0, T - ε]` drops below `tol`
/// or the levels run out. Running out is reported, not an error.
pub fn solve_singular(
    model: &Model,
    lat: &Lattice,
    ladder: &TruncationLadder,
) -> Result<SingularSolution> {
    ladder.validate(lat.time().horizon())?;
    let cut = cutoff_step(lat, ladder.eps_cutoff);
    let origin = lat.origin();
    let bound = apriori_bound_field(model, lat)?;
    let mut levels: Vec<LevelReport> = Vec::new();
    let mut prev: Option<Solution2> = None;
    let mut converged = false;
    // at least two levels so that an increment exists
    let n_levels = ladder.max_levels.max(2);

    for k in 0..n_levels {
        let l = ladder.level(k);
        let sol = solve_truncated(model, lat, l)?;
        let (sup_increment, violation) = match &prev {
            Some(p) => (
                Some(sup_diff(&sol.y_upper, &p.y_upper, cut)),
                compare_fields(&p.y_upper, &sol.y_upper)?.max_violation,
            ),
            None => (None, 0.0),
        };
        levels.push(LevelReport {
            level: l,
            sup_increment,
            y0: sol.y_upper.get(0, origin),
            y_cutoff: sol.y_upper.get(cut, origin),
            bound_slack: bound_slack(model, lat, &sol.y_upper, &bound),
            monotonicity_violation: violation,
        });
        let done = matches!(sup_increment, Some(inc) if inc <= ladder.tol);
        // a saturated ladder keeps the lower level
        if sup_increment != Some(0.0) {
            prev = Some(sol);
        }
        if done {
            converged = true;
            break;
        }
    }
    let top = prev.expect("at least one level is solved");
    let mut out = SingularSolution {
        y_limit: restrict(&top.y_upper, cut),
        cutoff_step: cut,
        levels,
        converged,
        profile_exponent: None,
        top,
    };
    out.profile_exponent = blowup_profile_fit(&out, lat, origin).ok();
    Ok(out)
}

/// The linear 2BSDE `U_t = sup E[∫_t^T (η + (T-s)^θ γ) ds]` with left-point
/// sums; for every level `(T-t)^θ Y^L <= U`.
pub fn apriori_bound_field(model: &Model, lat: &Lattice) -> Result<Field> {
    let gen = &model.generator;
    let theta = gen.theta;
    let tg = lat.time();
    let dt = lat.dt();
    let xs = lat.state().points();
    let np = lat.n_points();
    let mut u = lat.zero_field();
    for step in (0..lat.n_steps()).rev() {
        let t = tg.time(step);
        let w = (tg.horizon() - t).powf(theta);
        let (head, next) = u.split_step(step);
        let row: Vec<f64> = (0..np)
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                lat.vol_grid()
                    .iter()
                    .enumerate()
                    .map(|(vol, &a)| {
                        let reward = gen.eta(t, xs[j], a) + w * gen.gamma(t, xs[j], a);
                        lat.expect(step, vol, next, j) + dt * reward
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "bound field value {v} at step {step}"
            )));
        }
        head.copy_from_slice(&row);
    }
    Ok(u)
}

/// Least-squares slope of `log y` against `log(T - t)` at `node`, over the
/// last quarter of the steps before the cutoff.
pub fn blowup_profile_fit(sing: &SingularSolution, lat: &Lattice, node: usize) -> Result<f64> {
    let cut = sing.cutoff_step;
    let first = cut - cut / 4;
    let tg = lat.time();
    let pts: Vec<(f64, f64)> = (first..=cut)
        .filter_map(|i| {
            let y = sing.y_limit.get(i, node);
            let s = tg.horizon() - tg.time(i);
            (y > 0.0 && s > 0.0).then(|| (s.ln(), y.ln()))
        })
        .collect();
    if pts.len() < 4 {
        return Err(Error::Numeric(format!(
            "profile fit needs at least 4 positive points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("degenerate profile fit".into()));
    }
    Ok(sxy / sxx)
}
