//! Fixtures shared by the solver benchmarks.

use liqsolve_core::{Lattice, Model, Penalty, Solution2};

pub const VOLS: [f64; 3] = [0.04, 0.09, 0.16];

/// Geometric impact model on a saturated lattice of `n_steps` steps.
pub fn geometric(n_steps: usize, n_points: usize) -> (Model, Lattice) {
    let model = Model::geometric_eta(2.0, 1.0, 0.0, VOLS.to_vec()).expect("valid model");
    let lat =
        Lattice::saturated(&model.uncertainty, 1.0, n_steps, n_points, 0.0).expect("valid lattice");
    (model, lat)
}

/// State-dependent risk with an infinite penalty.
pub fn quadratic(n_steps: usize, n_points: usize) -> (Model, Lattice) {
    let model = Model::quadratic_risk(2.0, 1.0, 0.2, 1.0, Penalty::Infinite, VOLS.to_vec())
        .expect("valid model");
    let lat =
        Lattice::saturated(&model.uncertainty, 1.0, n_steps, n_points, 0.0).expect("valid lattice");
    (model, lat)
}

/// Direct singular solve, used as the input of the Monte Carlo benchmark.
pub fn solved(model: &Model, lat: &Lattice) -> Solution2 {
    liqsolve_core::solve_singular_direct(model, lat).expect("solver converges")
}
