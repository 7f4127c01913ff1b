use crate::error::{Error, Result};

/// Node-indexed values on a time × state lattice, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n_times: usize,
    n_points: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn filled(n_times: usize, n_points: usize, value: f64) -> Self {
        Self {
            n_times,
            n_points,
            values: vec![value; n_times * n_points],
        }
    }

    pub fn zeros(n_times: usize, n_points: usize) -> Self {
        Self::filled(n_times, n_points, 0.0)
    }

    pub fn from_values(n_times: usize, n_points: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_times * n_points {
            return Err(Error::Mismatch(format!(
                "field of {} values cannot be shaped {} x {}",
                values.len(),
                n_times,
                n_points
            )));
        }
        Ok(Self {
            n_times,
            n_points,
            values,
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn get(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.n_points + node]
    }

    #[inline]
    pub fn set(&mut self, step: usize, node: usize, value: f64) {
        self.values[step * self.n_points + node] = value;
    }

    pub fn slice(&self, step: usize) -> &[f64] {
        &self.values[step * self.n_points..(step + 1) * self.n_points]
    }

    pub fn slice_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.values[step * self.n_points..(step + 1) * self.n_points]
    }

    /// Slice `step` mutably together with slice `step + 1`.
    pub fn split_step(&mut self, step: usize) -> (&mut [f64], &[f64]) {
        let np = self.n_points;
        let (head, tail) = self.values[step * np..(step + 2) * np].split_at_mut(np);
        (head, tail)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.n_times == other.n_times && self.n_points == other.n_points
    }

    pub fn ensure_same_shape(&self, other: &Field) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "fields shaped {} x {} and {} x {}",
                self.n_times, self.n_points, other.n_times, other.n_points
            )))
        }
    }

    /// Largest value over the whole field, ignoring NaN.
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .fold(f64::INFINITY, f64::min)
    }
}
