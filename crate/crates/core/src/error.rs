use thiserror::Error;

/// Errors raised by the solvers and their inputs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Grid or model configuration that cannot be solved as given.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The scalar root solve did not converge.
    #[error("solver did not converge after {iterations} iterations (c = {c}, dt = {dt}, last residual {residual:e})")]
    NoConvergence {
        iterations: u32,
        c: f64,
        dt: f64,
        residual: f64,
    },

    /// Two objects that must share a lattice do not.
    #[error("shape mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
