//! Lipschitz approximation of a monotone driver by truncation and
//! mollification: `h_n = ς_n * (Θ_m h̃_n)` with `m = ϖ(n+1)`.

use crate::bsde::ScalarDriver;
use crate::error::{Error, Result};

/// Unnormalised bump `exp(-1 / (1 - u²))` on `(-1, 1)`.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// C¹ plateau: 1 on `[-m, m]`, 0 outside `[-m-1, m+1]`, cubic ramp between.
pub fn plateau_cutoff(m: f64, u: f64) -> f64 {
    let s = u.abs() - m;
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - 3.0 * s * s + 2.0 * s * s * s
    }
}

fn simpson_weights(intervals: usize) -> Vec<(f64, f64)> {
    let h = 2.0 / intervals as f64;
    (0..=intervals)
        .map(|k| {
            let v = -1.0 + k as f64 * h;
            let c = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (v, c * h / 3.0)
        })
        .collect()
}

/// `∫ bump` by composite Simpson with `intervals` sub-intervals.
pub fn kernel_mass(intervals: usize) -> f64 {
    simpson_weights(intervals.max(2) & !1)
        .into_iter()
        .map(|(v, w)| w * bump(v))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    /// Level `n ≥ 1`; the kernel has support `[-1/n, 1/n]`.
    pub n: u32,
    /// Growth constant with `|h(y) - h(0)| <= L_q (1 + |y|^q)`.
    pub lq: f64,
    pub horizon: f64,
    /// Replaces `ϖ(n+1)` as the plateau half-width when set.
    pub plateau_override: Option<f64>,
    /// Even number of Simpson sub-intervals on the kernel support.
    pub intervals: usize,
}

impl MollifierSpec {
    pub fn new(n: u32, lq: f64, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("mollifier level must be at least 1".into()));
        }
        if !(lq.is_finite() && lq >= 0.0) {
            return Err(Error::Domain(format!(
                "growth constant must be >= 0, got {lq}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            n,
            lq,
            horizon,
            plateau_override: None,
            intervals: 512,
        })
    }

    /// `ϖ(k) = ⌊e^{1/2} (k + 2 L_q) √(1 + T²)⌋ + 1`.
    pub fn varpi(&self, k: u32) -> f64 {
        (0.5f64.exp() * (k as f64 + 2.0 * self.lq) * (1.0 + self.horizon * self.horizon).sqrt())
            .floor()
            + 1.0
    }

    /// Half-width of the region where `Θ = 1`.
    pub fn plateau(&self) -> f64 {
        self.plateau_override
            .unwrap_or_else(|| self.varpi(self.n + 1))
    }
}

/// The mollified driver `h_n`.
pub struct Mollified<F> {
    h: F,
    scale: f64,
    plateau: f64,
    // (offset u, weight) with Σ weight = 1
    nodes: Vec<(f64, f64)>,
}

impl<F: Fn(f64) -> f64> Mollified<F> {
    /// `h_n(y) = Σ_k w_k Θ(y - u_k) h̃_n(y - u_k)`.
    pub fn eval(&self, y: f64) -> f64 {
        self.nodes
            .iter()
            .map(|&(u, w)| {
                let s = y - u;
                let theta = plateau_cutoff(self.plateau, s);
                if theta == 0.0 {
                    0.0
                } else {
                    w * theta * self.scale * (self.h)(s)
                }
            })
            .sum()
    }

    pub fn plateau(&self) -> f64 {
        self.plateau
    }
}

impl<F: Fn(f64) -> f64> ScalarDriver for Mollified<F> {
    fn value(&self, y: f64) -> f64 {
        self.eval(y)
    }
}

pub fn build_mollified<F: Fn(f64) -> f64>(h: F, spec: &MollifierSpec) -> Result<Mollified<F>> {
    if spec.intervals < 64 || spec.intervals % 2 == 1 {
        return Err(Error::Domain(format!(
            "Simpson rule needs an even number >= 64 of sub-intervals, got {}",
            spec.intervals
        )));
    }
    let h0 = h(0.0);
    if !h0.is_finite() {
        return Err(Error::Numeric(format!("h(0) = {h0}")));
    }
    let n = spec.n as f64;
    let raw: Vec<(f64, f64)> = simpson_weights(spec.intervals)
        .into_iter()
        .map(|(v, w)| (v / n, w * bump(v)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let mass: f64 = raw.iter().map(|&(_, w)| w).sum();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Numeric(format!("kernel quadrature mass {mass}")));
    }
    Ok(Mollified {
        h,
        scale: n / n.max(h0.abs()),
        plateau: spec.plateau(),
        nodes: raw.into_iter().map(|(u, w)| (u, w / mass)).collect(),
    })
}

/// Largest finite-difference slope of `g` on a uniform grid of `samples`
/// points in `[lo, hi]`.
pub fn lipschitz_estimate(g: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Result<f64> {
    if !(lo < hi) || samples < 2 {
        return Err(Error::Domain(format!(
            "need lo < hi and at least 2 samples, got [{lo}, {hi}] with {samples}"
        )));
    }
    let h = (hi - lo) / (samples - 1) as f64;
    let mut prev = g(lo);
    let mut best: f64 = 0.0;
    for k in 1..samples {
        let y = if k + 1 == samples {
            hi
        } else {
            lo + k as f64 * h
        };
        let v = g(y);
        best = best.max(((v - prev) / h).abs());
        prev = v;
    }
    Ok(best)
}

/// `max (y - y') (h(y) - h(y'))` over all pairs of a uniform grid of
/// `samples` points in `[-radius, radius]`. Non-positive means monotone.
pub fn local_monotonicity_check(h: impl Fn(f64) -> f64, radius: f64, samples: usize) -> f64 {
    let samples = samples.max(2);
    let ys: Vec<f64> = (0..samples)
        .map(|k| -radius + 2.0 * radius * k as f64 / (samples - 1) as f64)
        .collect();
    let hs: Vec<f64> = ys.iter().map(|&y| h(y)).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..samples {
        for j in i + 1..samples {
            worst = worst.max((ys[i] - ys[j]) * (hs[i] - hs[j]));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup_gap(hn: impl Fn(f64) -> f64, h: impl Fn(f64) -> f64) -> f64 {
        (0..=400)
            .map(|k| -2.0 + k as f64 * 0.01)
            .map(|y| (hn(y) - h(y)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn kernel_has_unit_mass() {
        let reference = kernel_mass(20_000);
        let spec = MollifierSpec::new(8, 1.0, 1.0).unwrap();
        assert!((kernel_mass(spec.intervals) / reference - 1.0).abs() < 1e-10);
        assert!((0..=100).all(|k| bump(-1.0 + k as f64 * 0.02) >= 0.0));
    }

    #[test]
    fn cutoff_range() {
        for k in 0..=100 {
            let v = plateau_cutoff(2.0, k as f64 * 0.05);
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(plateau_cutoff(2.0, 1.9), 1.0);
        assert_eq!(plateau_cutoff(2.0, -3.1), 0.0);
    }

    #[test]
    fn varpi_value() {
        let spec = MollifierSpec::new(8, 1.0, 1.0).unwrap();
        let expected = (0.5f64.exp() * 10.0 * 2f64.sqrt()).floor() + 1.0;
        assert_eq!(spec.varpi(8), expected);
        assert_eq!(spec.varpi(8), 24.0);
    }

    #[test]
    fn constant_is_fixed() {
        let spec = MollifierSpec::new(4, 0.0, 1.0).unwrap();
        let hn = build_mollified(|_| 3.0, &spec).unwrap();
        // n ∨ |h(0)| = 4: no rescaling
        let r = spec.plateau();
        for k in 0..=50 {
            let y = -(r - 1.0) + 2.0 * (r - 1.0) * k as f64 / 50.0;
            assert!((hn.eval(y) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_is_nearly_fixed() {
        let spec = MollifierSpec::new(64, 1.0, 1.0).unwrap();
        let hn = build_mollified(|y| -y, &spec).unwrap();
        assert!(sup_gap(|y| hn.eval(y), |y| -y) < 2.0 / 64.0);
    }

    #[test]
    fn cubic_converges_monotonically() {
        let mut gaps = vec![];
        for n in [8, 32, 128] {
            let spec = MollifierSpec::new(n, 1.0, 1.0).unwrap();
            let hn = build_mollified(|y: f64| -y.powi(3), &spec).unwrap();
            gaps.push(sup_gap(|y| hn.eval(y), |y| -y.powi(3)));
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
        assert!(gaps[2] <= 0.05);
    }

    #[test]
    fn lipschitz_examples() {
        assert!((lipschitz_estimate(|y| -y, -1.0, 1.0, 11).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(lipschitz_estimate(|_| 5.0, -1.0, 1.0, 11).unwrap(), 0.0);
        let est = lipschitz_estimate(|y| -y * y, -3.0, 3.0, 6001).unwrap();
        assert!((est - 6.0).abs() < 2e-3);
        assert!(lipschitz_estimate(|y| y, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn mollified_driver_is_locally_monotone() {
        assert!(local_monotonicity_check(|y| -y, 5.0, 101) <= 0.0);
        let spec = MollifierSpec::new(32, 1.0, 1.0).unwrap();
        let hn = build_mollified(|y: f64| -y.powi(3), &spec).unwrap();
        assert!(local_monotonicity_check(|y| hn.eval(y), 2.0, 201) <= 1e-10);
        let hn = build_mollified(|y: f64| -y * y.abs(), &spec).unwrap();
        assert!(local_monotonicity_check(|y| hn.eval(y), 1.0, 201) <= 1e-10);
    }

    #[test]
    fn growth_bound_at_zero() {
        for n in [8, 32, 128] {
            let spec = MollifierSpec::new(n, 1.0, 1.0).unwrap();
            let h = |y: f64| 0.5 - y * y.abs();
            let hn = build_mollified(h, &spec).unwrap();
            assert!(hn.eval(0.0).abs() <= h(0.0).abs() + 2.0 * spec.lq + 1e-10);
        }
    }

    #[test]
    fn lipschitz_constant_stays_bounded_under_refinement() {
        let spec = MollifierSpec::new(8, 1.0, 1.0).unwrap();
        let hn = build_mollified(|y: f64| -y.powi(3), &spec).unwrap();
        let m = spec.plateau() + 1.5;
        let coarse = lipschitz_estimate(|y| hn.eval(y), -m, m, 2001).unwrap();
        let fine = lipschitz_estimate(|y| hn.eval(y), -m, m, 8001).unwrap();
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(fine <= 1.01 * coarse);
    }
}
