//! Market model: price impact, risk, terminal penalty, the volatility
//! uncertainty set, and the monotone driver built from them.
//!
//! The driver of the liquidation problem is
//!
//! ```text
//! f(t, x, a, y) = -y |y|^(q-1) / ((q-1) η(t,x,a)^(q-1)) + min(γ(t,x,a), L)
//! ```
//!
//! where `q` is the Hölder conjugate of the cost exponent `θ` and `L` an
//! optional truncation level. It is non-increasing in `y`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{StateGrid, TimeGrid};

/// Coefficient as a function of `(t, x, a)`: time, state, squared volatility.
pub type CoefficientFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Terminal penalty as a function of the terminal state.
pub type PenaltyFn = Arc<dyn Fn(f64) -> Penalty + Send + Sync>;
/// Deterministic drift of the canonical process.
pub type DriftFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Returns `q` with `(θ - 1)(q - 1) = 1`.
pub fn holder_conjugate(theta: f64) -> Result<f64> {
    if !(theta.is_finite() && theta > 1.0) {
        return Err(Error::Domain(format!(
            "cost exponent must be finite and > 1, got {theta}"
        )));
    }
    Ok(theta / (theta - 1.0))
}

/// Shape of the driver's dependence on `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DriverKind {
    /// Power impact term plus capped risk.
    Liquidation,
    /// Risk term only; the driver does not depend on `y`.
    Linear,
}

/// The monotone generator.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub theta: f64,
    pub q: f64,
    /// Upper monotonicity constant: `(f(y) - f(y'))(y - y') <= l1 (y - y')^2`.
    pub l1: f64,
    /// Lipschitz constant in `z`; the drivers here carry no `z` term.
    pub l2: f64,
    kind: DriverKind,
    eta: CoefficientFn,
    gamma: CoefficientFn,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("theta", &self.theta)
            .field("q", &self.q)
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    pub fn liquidation(theta: f64, eta: CoefficientFn, gamma: CoefficientFn) -> Result<Self> {
        let q = holder_conjugate(theta)?;
        Ok(Self {
            theta,
            q,
            l1: 0.0,
            l2: 0.0,
            kind: DriverKind::Liquidation,
            eta,
            gamma,
        })
    }

    /// A driver equal to the (capped) running reward `γ`, independent of `y`.
    ///
    /// `theta` is kept so that cost functionals stay defined.
    pub fn linear(theta: f64, gamma: CoefficientFn) -> Result<Self> {
        let q = holder_conjugate(theta)?;
        Ok(Self {
            theta,
            q,
            l1: 0.0,
            l2: 0.0,
            kind: DriverKind::Linear,
            eta: Arc::new(|_, _, _| 1.0),
            gamma,
        })
    }

    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn is_y_independent(&self) -> bool {
        self.kind == DriverKind::Linear
    }

    #[inline]
    pub fn eta(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.eta)(t, x, a)
    }

    #[inline]
    pub fn gamma(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.gamma)(t, x, a)
    }

    /// `ψ = 1 / ((q-1) η^(q-1))`, the coefficient of `-y|y|^(q-1)`.
    #[inline]
    pub fn impact_coefficient(&self, t: f64, x: f64, a: f64) -> f64 {
        match self.kind {
            DriverKind::Linear => 0.0,
            DriverKind::Liquidation => {
                1.0 / ((self.q - 1.0) * self.eta(t, x, a).powf(self.q - 1.0))
            }
        }
    }

    /// `γ ∧ L`, or `γ` when no cap is given.
    #[inline]
    pub fn running(&self, t: f64, x: f64, a: f64, cap: Option<f64>) -> f64 {
        let g = self.gamma(t, x, a);
        match cap {
            Some(l) => g.min(l),
            None => g,
        }
    }

    /// The driver's `y`-term alone, `-ψ y |y|^(q-1)`.
    #[inline]
    pub fn power_term(&self, psi: f64, y: f64) -> f64 {
        if psi == 0.0 {
            0.0
        } else {
            -psi * y * y.abs().powf(self.q - 1.0)
        }
    }
}

/// Evaluates the driver at one point.
pub fn evaluate_driver(
    gen: &GeneratorSpec,
    t: f64,
    x: f64,
    a: f64,
    y: f64,
    cap: Option<f64>,
) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Numeric(format!("driver evaluated at y = {y}")));
    }
    let psi = gen.impact_coefficient(t, x, a);
    Ok(gen.power_term(psi, y) + gen.running(t, x, a, cap))
}

/// A terminal penalty in `[0, +∞]`.
///
/// `Infinite` is kept apart from any float so that `0 × ∞ = 0` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Finite(f64),
    Infinite,
}

impl Penalty {
    pub fn is_infinite(self) -> bool {
        matches!(self, Penalty::Infinite)
    }

    /// `ξ ∧ L`.
    pub fn capped(self, cap: f64) -> f64 {
        match self {
            Penalty::Finite(v) => v.min(cap),
            Penalty::Infinite => cap,
        }
    }

    /// The penalty as an extended real, `+∞` included.
    pub fn as_extended(self) -> f64 {
        match self {
            Penalty::Finite(v) => v,
            Penalty::Infinite => f64::INFINITY,
        }
    }

    /// `ξ · w` with `0 · ∞ = 0`.
    pub fn times(self, weight: f64) -> f64 {
        match self {
            Penalty::Finite(v) => v * weight,
            Penalty::Infinite if weight == 0.0 => 0.0,
            Penalty::Infinite => f64::INFINITY,
        }
    }
}

/// Terminal penalty `ξ`; the singular set is `{ξ = +∞}`.
#[derive(Clone)]
pub struct TerminalSpec {
    xi: PenaltyFn,
}

impl fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalSpec").finish_non_exhaustive()
    }
}

impl TerminalSpec {
    pub fn new(xi: PenaltyFn) -> Self {
        Self { xi }
    }

    /// `ξ ≡ +∞`: full liquidation is mandatory.
    pub fn infinite() -> Self {
        Self::new(Arc::new(|_| Penalty::Infinite))
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Arc::new(move |_| Penalty::Finite(value)))
    }

    pub fn xi(&self, x: f64) -> Penalty {
        (self.xi)(x)
    }

    /// Membership of the singular set.
    pub fn singular(&self, x: f64) -> bool {
        self.xi(x).is_infinite()
    }
}

/// Finite volatility grid plus a deterministic drift.
#[derive(Clone)]
pub struct UncertaintySet {
    /// Squared-volatility levels, strictly increasing.
    pub vol_grid: Vec<f64>,
    pub drift: DriftFn,
}

impl fmt::Debug for UncertaintySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UncertaintySet")
            .field("vol_grid", &self.vol_grid)
            .finish_non_exhaustive()
    }
}

impl UncertaintySet {
    pub fn new(vol_grid: Vec<f64>, drift: DriftFn) -> Result<Self> {
        let set = Self { vol_grid, drift };
        if let Some(problem) = set.grid_problem() {
            return Err(Error::Config(problem.to_string()));
        }
        Ok(set)
    }

    pub fn driftless(vol_grid: Vec<f64>) -> Result<Self> {
        Self::new(vol_grid, Arc::new(|_| 0.0))
    }

    pub fn with_constant_drift(vol_grid: Vec<f64>, b: f64) -> Result<Self> {
        Self::new(vol_grid, Arc::new(move |_| b))
    }

    pub fn drift(&self, t: f64) -> f64 {
        (self.drift)(t)
    }

    pub fn max_vol(&self) -> f64 {
        self.vol_grid
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn grid_problem(&self) -> Option<Violation> {
        if self.vol_grid.is_empty() {
            return Some(Violation::EmptyUncertaintySet);
        }
        if let Some(&a) = self.vol_grid.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Some(Violation::VolatilityNonPositive { a });
        }
        if self.vol_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Some(Violation::VolatilityGridNotIncreasing);
        }
        None
    }
}

/// A complete market model.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub generator: GeneratorSpec,
    pub terminal: TerminalSpec,
    pub uncertainty: UncertaintySet,
}

impl Model {
    /// Constant impact and risk, constant terminal penalty.
    pub fn constant(
        theta: f64,
        eta: f64,
        gamma: f64,
        xi: Penalty,
        vol_grid: Vec<f64>,
    ) -> Result<Self> {
        let generator = GeneratorSpec::liquidation(
            theta,
            Arc::new(move |_, _, _| eta),
            Arc::new(move |_, _, _| gamma),
        )?;
        Ok(Self {
            name: "constant".into(),
            generator,
            terminal: TerminalSpec::new(Arc::new(move |_| xi)),
            uncertainty: UncertaintySet::driftless(vol_grid)?,
        })
    }

    /// Geometric impact `η = η₀ exp(x - a_max t / 2)`, no risk, `ξ = +∞`,
    /// constant drift `b`.
    ///
    /// The compensator uses the largest volatility of the grid, so `η` is a
    /// martingale (times `e^{bt}`) under the constant-`a_max` measure and a
    /// supermartingale under every other one.
    pub fn geometric_eta(theta: f64, eta0: f64, b: f64, vol_grid: Vec<f64>) -> Result<Self> {
        let uncertainty = UncertaintySet::with_constant_drift(vol_grid, b)?;
        let a_max = uncertainty.max_vol();
        let generator = GeneratorSpec::liquidation(
            theta,
            Arc::new(move |t, x, _| eta0 * (x - 0.5 * a_max * t).exp()),
            Arc::new(|_, _, _| 0.0),
        )?;
        Ok(Self {
            name: "geometric-eta".into(),
            generator,
            terminal: TerminalSpec::infinite(),
            uncertainty,
        })
    }

    /// Constant impact with state-dependent risk `γ = g0 + g1 x²`.
    pub fn quadratic_risk(
        theta: f64,
        eta: f64,
        g0: f64,
        g1: f64,
        xi: Penalty,
        vol_grid: Vec<f64>,
    ) -> Result<Self> {
        let generator = GeneratorSpec::liquidation(
            theta,
            Arc::new(move |_, _, _| eta),
            Arc::new(move |_, x, _| g0 + g1 * x * x),
        )?;
        Ok(Self {
            name: "quadratic-risk".into(),
            generator,
            terminal: TerminalSpec::new(Arc::new(move |_| xi)),
            uncertainty: UncertaintySet::driftless(vol_grid)?,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self, time: &TimeGrid, state: &StateGrid) -> ValidationReport {
        validate_model(
            &self.generator,
            &self.terminal,
            &self.uncertainty,
            time,
            state,
        )
    }
}

/// One failed model check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    ExponentOutOfRange { theta: f64 },
    ConjugacyBroken { theta: f64, q: f64 },
    EmptyUncertaintySet,
    VolatilityNonPositive { a: f64 },
    VolatilityGridNotIncreasing,
    EtaNonPositive { t: f64, x: f64, a: f64, eta: f64 },
    ImpactNotFinite { t: f64, x: f64, a: f64 },
    GammaNegative { t: f64, x: f64, a: f64, gamma: f64 },
    PenaltyNegative { x: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ExponentOutOfRange { theta } => {
                write!(f, "cost exponent {theta} not greater than one")
            }
            Violation::ConjugacyBroken { theta, q } => {
                write!(f, "q = {q} is not the conjugate of theta = {theta}")
            }
            Violation::EmptyUncertaintySet => write!(f, "empty uncertainty set"),
            Violation::VolatilityNonPositive { a } => {
                write!(f, "volatility level {a} non-positive")
            }
            Violation::VolatilityGridNotIncreasing => {
                write!(f, "volatility grid not strictly increasing")
            }
            Violation::EtaNonPositive { t, x, a, eta } => {
                write!(f, "eta non-positive ({eta} at t={t}, x={x}, a={a})")
            }
            Violation::ImpactNotFinite { t, x, a } => {
                write!(f, "1/eta^(q-1) not finite at t={t}, x={x}, a={a}")
            }
            Violation::GammaNegative { t, x, a, gamma } => {
                write!(f, "gamma negative ({gamma} at t={t}, x={x}, a={a})")
            }
            Violation::PenaltyNegative { x } => write!(f, "terminal penalty negative at x={x}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

/// Finite-sample sanity checks of a model on every lattice node.
///
/// At most one violation per kind is recorded.
pub fn validate_model(
    gen: &GeneratorSpec,
    term: &TerminalSpec,
    unc: &UncertaintySet,
    time: &TimeGrid,
    state: &StateGrid,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |v: Violation| {
        if !report
            .violations
            .iter()
            .any(|w| std::mem::discriminant(w) == std::mem::discriminant(&v))
        {
            report.violations.push(v);
        }
    };

    if !(gen.theta.is_finite() && gen.theta > 1.0) || !(gen.q > 1.0) {
        push(Violation::ExponentOutOfRange { theta: gen.theta });
    } else if ((gen.theta - 1.0) * (gen.q - 1.0) - 1.0).abs() > 1e-12 {
        push(Violation::ConjugacyBroken {
            theta: gen.theta,
            q: gen.q,
        });
    }
    if let Some(v) = unc.grid_problem() {
        push(v);
    }

    for i in 0..=time.n_steps() {
        let t = time.time(i);
        for j in 0..state.n_points() {
            let x = state.point(j);
            for &a in &unc.vol_grid {
                if gen.kind() == DriverKind::Liquidation {
                    let eta = gen.eta(t, x, a);
                    if !(eta > 0.0) {
                        push(Violation::EtaNonPositive { t, x, a, eta });
                    } else if !gen.impact_coefficient(t, x, a).is_finite() {
                        push(Violation::ImpactNotFinite { t, x, a });
                    }
                }
                let gamma = gen.gamma(t, x, a);
                if !(gamma >= 0.0) {
                    push(Violation::GammaNegative { t, x, a, gamma });
                }
            }
        }
    }
    for j in 0..state.n_points() {
        let x = state.point(j);
        if let Penalty::Finite(v) = term.xi(x) {
            if !(v >= 0.0) {
                push(Violation::PenaltyNegative { x });
            }
        }
    }
    report
}
