//! Uniform one-dimensional position grids and wavefunctions sampled on them.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Uniform periodic grid `x_k = x_min + k dx`, `k = 0..n_points`, with
/// `dx = (x_max - x_min) / n_points`. The right end point is excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidArgument(format!(
                "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid point count must be a power of two >= 2, got {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_points as f64
    }

    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        let dx = self.dx();
        (0..self.n_points).map(move |k| self.x_min + k as f64 * dx)
    }

    /// Angular wavenumbers in FFT order for the discrete Fourier transform of
    /// a function on this grid.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * self.dx());
        (0..n)
            .map(|k| {
                let signed = if k < n / 2 {
                    k as f64
                } else {
                    k as f64 - n as f64
                };
                signed * dk
            })
            .collect()
    }

    /// Index range `[lo, hi)` of grid points within `[center - half_width, center + half_width]`.
    pub fn window(&self, center: f64, half_width: f64) -> (usize, usize) {
        let dx = self.dx();
        let lo = ((center - half_width - self.x_min) / dx).ceil();
        let hi = ((center + half_width - self.x_min) / dx).floor() + 1.0;
        let clamp = |v: f64| v.max(0.0).min(self.n_points as f64) as usize;
        (clamp(lo), clamp(hi))
    }
}

/// Diagnostic attached to a grid evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum GridWarning {
    /// Part of a Gaussian (or of several) lies outside the grid; `mass_loss`
    /// estimates the discarded squared norm.
    Truncation { mass_loss: f64 },
    /// Probability within a few points of the boundary exceeds the threshold.
    EdgeMass { mass: f64 },
    /// Trajectories excluded from the estimator because they were flagged invalid.
    InvalidTrajectories { count: usize },
}

/// Complex wavefunction values on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridWavefunction {
    pub grid: SpatialGrid,
    pub values: Vec<Complex64>,
    pub warnings: Vec<GridWarning>,
}

impl GridWavefunction {
    pub fn new(grid: SpatialGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            warnings: Vec::new(),
        })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
            warnings: Vec::new(),
        }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Self {
        Self {
            grid,
            values: grid.points().map(f).collect(),
            warnings: Vec::new(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self|other>` by the rectangle rule.
    pub fn inner(&self, other: &GridWavefunction) -> Result<Complex64> {
        self.check_same_grid(other)?;
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.dx())
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn check_same_grid(&self, other: &GridWavefunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}
