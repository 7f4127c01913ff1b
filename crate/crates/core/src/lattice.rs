//! Time grid, state grid and per-volatility trinomial kernels.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::model::UncertaintySet;

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i`, with `t_n` equal to the horizon exactly.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }
}

/// Uniform grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl StateGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::Config(format!(
                "state bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 3 {
            return Err(Error::Config(format!(
                "state grid needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// `n_points` nodes spaced `dx` apart with `center` at the middle node.
    /// `n_points` is rounded up to the next odd number.
    pub fn centered(center: f64, dx: f64, n_points: usize) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::Config(format!(
                "state spacing must be positive, got {dx}"
            )));
        }
        let half = n_points.max(3) / 2;
        Self::new(
            center - half as f64 * dx,
            center + half as f64 * dx,
            2 * half + 1,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        if j + 1 >= self.n_points {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.point(j)).collect()
    }

    /// Index of the node closest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.x_min) / self.dx()).round();
        if r <= 0.0 {
            0
        } else {
            (r as usize).min(self.n_points - 1)
        }
    }
}

/// Transition weights from one node to its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights {
    pub down: f64,
    pub stay: f64,
    pub up: f64,
}

impl Weights {
    pub const STAY: Weights = Weights {
        down: 0.0,
        stay: 1.0,
        up: 0.0,
    };

    pub fn sum(&self) -> f64 {
        self.down + self.stay + self.up
    }
}

#[derive(Debug, Clone, Copy)]
struct StepKernel {
    interior: Weights,
    lower: Weights,
    upper: Weights,
}

/// Trinomial lattice with one kernel family per volatility level.
#[derive(Debug, Clone)]
pub struct Lattice {
    time: TimeGrid,
    state: StateGrid,
    vol_grid: Vec<f64>,
    drift: Vec<f64>,
    // indexed [step * n_vols + vol]
    kernels: Vec<StepKernel>,
}

const WEIGHT_TOL: f64 = 1e-12;

fn trinomial(m: f64, v: f64, dx: f64) -> Option<Weights> {
    let s = (v + m * m) / (dx * dx);
    let d = m / dx;
    let mut up = 0.5 * (s + d);
    let mut down = 0.5 * (s - d);
    let mut stay = 1.0 - s;
    for w in [&mut up, &mut down, &mut stay] {
        if *w < 0.0 {
            if *w < -WEIGHT_TOL {
                return None;
            }
            *w = 0.0;
        }
    }
    stay = 1.0 - up - down;
    if stay <= WEIGHT_TOL {
        let total = up + down;
        up /= total;
        down /= total;
        stay = 0.0;
    }
    Some(Weights { down, stay, up })
}

/// One-sided boundary kernel: matches the drift when it points inward,
/// otherwise the node absorbs.
fn boundary(m: f64, dx: f64, lower: bool) -> Weights {
    let inward = if lower { m } else { -m };
    if inward <= 0.0 {
        return Weights::STAY;
    }
    let p = (inward / dx).min(1.0);
    if lower {
        Weights {
            down: 0.0,
            stay: 1.0 - p,
            up: p,
        }
    } else {
        Weights {
            down: p,
            stay: 1.0 - p,
            up: 0.0,
        }
    }
}

impl Lattice {
    pub fn new(time: TimeGrid, state: StateGrid, unc: &UncertaintySet) -> Result<Self> {
        if unc.vol_grid.is_empty() {
            return Err(Error::Config("empty uncertainty set".into()));
        }
        let dt = time.dt();
        let dx = state.dx();
        let drift: Vec<f64> = (0..time.n_steps())
            .map(|i| unc.drift(time.time(i)))
            .collect();
        let mut kernels = Vec::with_capacity(time.n_steps() * unc.vol_grid.len());
        for &b in &drift {
            let m = b * dt;
            for &a in &unc.vol_grid {
                let interior = trinomial(m, a * dt, dx).ok_or_else(|| {
                    Error::Config(format!(
                        "unstable lattice: a = {a}, dt = {dt}, dx = {dx}, drift step = {m} \
                         (need a*dt + (b*dt)^2 <= dx^2 and |b*dt|*dx <= a*dt + (b*dt)^2)"
                    ))
                })?;
                kernels.push(StepKernel {
                    interior,
                    lower: boundary(m, dx, true),
                    upper: boundary(m, dx, false),
                });
            }
        }
        Ok(Self {
            time,
            state,
            vol_grid: unc.vol_grid.clone(),
            drift,
            kernels,
        })
    }

    /// A lattice centred on `center` whose spacing saturates the largest
    /// volatility: `dx² = a_max dt + max (b dt)²`.
    pub fn saturated(
        unc: &UncertaintySet,
        horizon: f64,
        n_steps: usize,
        n_points: usize,
        center: f64,
    ) -> Result<Self> {
        let time = TimeGrid::new(horizon, n_steps)?;
        let dt = time.dt();
        let m2 = (0..n_steps)
            .map(|i| (unc.drift(time.time(i)) * dt).powi(2))
            .fold(0.0, f64::max);
        let dx = (unc.max_vol() * dt + m2).sqrt();
        let state = StateGrid::centered(center, dx, n_points)?;
        Self::new(time, state, unc)
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn state(&self) -> &StateGrid {
        &self.state
    }

    pub fn vol_grid(&self) -> &[f64] {
        &self.vol_grid
    }

    pub fn n_vols(&self) -> usize {
        self.vol_grid.len()
    }

    pub fn n_steps(&self) -> usize {
        self.time.n_steps()
    }

    pub fn n_points(&self) -> usize {
        self.state.n_points()
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn drift(&self, step: usize) -> f64 {
        self.drift[step]
    }

    /// The middle node of the state grid.
    pub fn origin(&self) -> usize {
        self.n_points() / 2
    }

    /// Node closest to `x`.
    pub fn node_of(&self, x: f64) -> usize {
        self.state.nearest(x)
    }

    pub fn is_interior(&self, node: usize) -> bool {
        node > 0 && node + 1 < self.n_points()
    }

    /// An empty field over all `n_steps + 1` slices.
    pub fn zero_field(&self) -> Field {
        Field::zeros(self.n_steps() + 1, self.n_points())
    }

    /// Index of `a` in the volatility grid (relative tolerance 1e-12).
    pub fn vol_index(&self, a: f64) -> Result<usize> {
        self.vol_grid
            .iter()
            .position(|&v| (v - a).abs() <= 1e-12 * v.abs().max(a.abs()))
            .ok_or_else(|| Error::Domain(format!("volatility {a} is not in the grid")))
    }

    #[inline]
    pub fn weights(&self, step: usize, vol: usize, node: usize) -> Weights {
        let k = &self.kernels[step * self.vol_grid.len() + vol];
        if node == 0 {
            k.lower
        } else if node + 1 == self.n_points() {
            k.upper
        } else {
            k.interior
        }
    }

    /// `E[next | node]` for the step from `step` to `step + 1`.
    ///
    /// Zero weights are skipped so that infinite neighbours do not produce NaN.
    #[inline]
    pub fn expect(&self, step: usize, vol: usize, next: &[f64], node: usize) -> f64 {
        let w = self.weights(step, vol, node);
        let mut acc = 0.0;
        if w.down > 0.0 {
            acc += w.down * next[node - 1];
        }
        if w.stay > 0.0 {
            acc += w.stay * next[node];
        }
        if w.up > 0.0 {
            acc += w.up * next[node + 1];
        }
        acc
    }

    /// `E[next | ·]` on a whole slice.
    pub fn expect_slice(&self, step: usize, vol: usize, next: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .with_min_len(256)
            .enumerate()
            .for_each(|(j, o)| *o = self.expect(step, vol, next, j));
    }

    /// Draws the successor of `node` from a uniform number `u ∈ [0, 1)`.
    #[inline]
    pub fn successor(&self, step: usize, vol: usize, node: usize, u: f64) -> usize {
        let w = self.weights(step, vol, node);
        if u < w.down {
            node - 1
        } else if u < w.down + w.stay || w.up == 0.0 {
            node
        } else {
            node + 1
        }
    }

    pub fn ensure_field(&self, f: &Field) -> Result<()> {
        if f.n_times() == self.n_steps() + 1 && f.n_points() == self.n_points() {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "field shaped {} x {} on a lattice of {} x {}",
                f.n_times(),
                f.n_points(),
                self.n_steps() + 1,
                self.n_points()
            )))
        }
    }
}

pub fn build_lattice(time: TimeGrid, state: StateGrid, unc: &UncertaintySet) -> Result<Lattice> {
    Lattice::new(time, state, unc)
}

/// `E^a[values | node]` for values on slice `step + 1`.
pub fn conditional_expectation(
    lat: &Lattice,
    a: f64,
    values: &[f64],
    step: usize,
    node: usize,
) -> Result<f64> {
    let vol = lat.vol_index(a)?;
    if values.len() != lat.n_points() {
        return Err(Error::Mismatch(format!(
            "slice of {} values on {} nodes",
            values.len(),
            lat.n_points()
        )));
    }
    if step >= lat.n_steps() {
        return Err(Error::Domain(format!("no transition out of step {step}")));
    }
    Ok(lat.expect(step, vol, values, node))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice(dt_ratio: f64, b: f64) -> Lattice {
        // dx = 0.1, dt = 0.01, a = dt_ratio * dx^2 / dt
        let time = TimeGrid::new(1.0, 100).unwrap();
        let state = StateGrid::centered(0.0, 0.1, 41).unwrap();
        let a = dt_ratio * 0.01 / 0.01;
        let unc = UncertaintySet::with_constant_drift(vec![a], b).unwrap();
        Lattice::new(time, state, &unc).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-14
    }

    #[test]
    fn grids() {
        let tg = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(tg.time(7), 0.3);
        assert!(tg.times().windows(2).all(|w| w[1] > w[0]));
        let sg = StateGrid::centered(1.0, 0.25, 9).unwrap();
        assert_eq!(sg.point(4), 1.0);
        assert_eq!(sg.nearest(1.1), 4);
        assert_eq!(sg.nearest(-100.0), 0);
        assert!(StateGrid::new(0.0, 1.0, 2).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn saturated_weights() {
        let w = lattice(1.0, 0.0).weights(0, 0, 20);
        assert!(close(w.down, 0.5) && close(w.stay, 0.0) && close(w.up, 0.5));
    }

    #[test]
    fn half_saturated_weights() {
        let w = lattice(0.5, 0.0).weights(0, 0, 20);
        assert!(close(w.down, 0.25) && close(w.stay, 0.5) && close(w.up, 0.25));
    }

    #[test]
    fn pure_drift_weights() {
        // b dt = dx with a -> 0
        let time = TimeGrid::new(1.0, 100).unwrap();
        let state = StateGrid::centered(0.0, 0.1, 41).unwrap();
        let unc = UncertaintySet::with_constant_drift(vec![1e-300], 10.0).unwrap();
        let w = Lattice::new(time, state, &unc).unwrap().weights(0, 0, 20);
        assert!(close(w.up, 1.0) && close(w.down, 0.0) && close(w.stay, 0.0));
    }

    #[test]
    fn unstable_grid_is_rejected() {
        let time = TimeGrid::new(1.0, 10).unwrap();
        let state = StateGrid::centered(0.0, 0.01, 11).unwrap();
        let unc = UncertaintySet::driftless(vec![1.0]).unwrap();
        match Lattice::new(time, state, &unc) {
            Err(Error::Config(msg)) => assert!(msg.contains("a = 1") && msg.contains("dx")),
            other => panic!("expected configuration error, got {other:?}"),
        }
    }

    #[test]
    fn expectation_examples() {
        let lat = lattice(0.5, 0.0);
        let xs = lat.state().points();
        let ones = vec![3.0; xs.len()];
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let j = 25;
        assert!(close(
            conditional_expectation(&lat, 0.5, &ones, 0, j).unwrap(),
            3.0
        ));
        assert!(close(
            conditional_expectation(&lat, 0.5, &xs, 0, j).unwrap(),
            xs[j]
        ));
        let expected = xs[j] * xs[j] + 0.5 * lat.dt();
        assert!((conditional_expectation(&lat, 0.5, &sq, 0, j).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            conditional_expectation(&lat, 0.7, &xs, 0, j),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn infinite_neighbours_do_not_poison_expectation() {
        let lat = lattice(1.0, 0.0);
        let mut v = vec![1.0; lat.n_points()];
        v[20] = f64::INFINITY;
        assert_eq!(lat.expect(0, 0, &v, 20), 1.0);
    }

    #[test]
    fn martingale_through_all_steps() {
        let time = TimeGrid::new(1.0, 50).unwrap();
        let state = StateGrid::centered(0.0, (0.16f64 / 50.0).sqrt(), 201).unwrap();
        let unc = UncertaintySet::driftless(vec![0.04, 0.09, 0.16]).unwrap();
        let lat = Lattice::new(time, state, &unc).unwrap();
        let xs = lat.state().points();
        for vol in 0..3 {
            let mut v = xs.clone();
            let mut out = vec![0.0; v.len()];
            for step in (0..50).rev() {
                lat.expect_slice(step, vol, &v, &mut out);
                std::mem::swap(&mut v, &mut out);
            }
            for j in 51..150 {
                assert!((v[j] - xs[j]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_moments(
            ratio in 0.01f64..1.0,
            drift_frac in -0.5f64..0.5,
        ) {
            let dt: f64 = 0.01;
            let dx: f64 = 0.1;
            let a = ratio * dx * dx / dt;
            let m_max = ((dx * dx - a * dt).max(0.0)).sqrt().min(a * dt / dx);
            let b = drift_frac * m_max / dt;
            let time = TimeGrid::new(1.0, 100).unwrap();
            let state = StateGrid::centered(0.0, dx, 21).unwrap();
            let unc = UncertaintySet::with_constant_drift(vec![a], b).unwrap();
            let lat = Lattice::new(time, state, &unc).unwrap();
            let w = lat.weights(3, 0, 10);
            prop_assert!(w.down >= 0.0 && w.stay >= 0.0 && w.up >= 0.0);
            prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
            let mean = (w.up - w.down) * dx;
            prop_assert!((mean - b * dt).abs() <= 1e-10);
            let var = (w.up + w.down) * dx * dx - mean * mean;
            prop_assert!((var - a * dt).abs() <= 1e-10);
            for node in [0, 20] {
                let w = lat.weights(3, 0, node);
                prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(w.down >= 0.0 && w.stay >= 0.0 && w.up >= 0.0);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = lattice(0.3, 0.1);
        let b = lattice(0.3, 0.1);
        for node in 0..a.n_points() {
            assert_eq!(a.weights(5, 0, node), b.weights(5, 0, node));
        }
    }
}
