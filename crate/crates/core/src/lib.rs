//! Monotone, singular and second-order BSDE solvers on a trinomial
//! volatility-uncertainty lattice, with worst-case optimal liquidation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod bsde2;
pub mod control;
pub mod error;
pub mod field;
pub mod lattice;
pub mod model;
pub mod mollify;
pub mod oracle;
pub mod rbsde;
pub mod singular;
pub mod verify;

pub use bsde::{
    compare_fields, solve_bsde_single, terminal_slice, BackwardSolution, ComparisonReport, Policy,
    StepScheme,
};
pub use bsde2::{minimality_diagnostic, solve_2bsde, solve_2bsde_with, Solution2};
pub use control::{
    integrate_state, optimal_rate, simulate_cost, terminal_constraint_check, verify_value,
    worst_case_cost, CostEstimate, LatticePath, Strategy, Trajectory, VerificationReport,
};
pub use error::{Error, Result};
pub use field::Field;
pub use lattice::{build_lattice, conditional_expectation, Lattice, StateGrid, TimeGrid, Weights};
pub use model::{
    evaluate_driver, holder_conjugate, validate_model, DriverKind, GeneratorSpec, Model, Penalty,
    TerminalSpec, UncertaintySet, ValidationReport, Violation,
};
pub use mollify::{build_mollified, MollifierSpec};
pub use rbsde::{solve_reflected, Barrier, ReflectedSolution};
pub use singular::{
    apriori_bound_field, solve_singular, solve_singular_direct, solve_truncated, SingularSolution,
    TruncationLadder,
};
