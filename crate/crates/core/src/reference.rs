//! Reference propagators: the closed-form Gaussian solution in a harmonic
//! potential and a Strang split-operator Fourier solver on a periodic grid.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dynamics::Potential;
use crate::error::{Error, Result};
use crate::grid::{GridWarning, GridWavefunction, SpatialGrid};
use crate::phase_space::GaussianWavepacket;

/// Points at each edge inspected for boundary contact.
const EDGE_POINTS: usize = 5;
/// Probability within the edge points that triggers a warning.
const EDGE_MASS_THRESHOLD: f64 = 1e-10;

/// `psi(x, t) = exp{(i/hbar)[(alpha_t/2)(x - q_t)^2 + p_t (x - q_t) + beta_t]}`
/// for a Gaussian evolving in `V = m w^2 x^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicExactState {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub q: f64,
    pub p: f64,
    pub hbar: f64,
}

impl HarmonicExactState {
    /// Evolves the Gaussian `psi0` (one dimension) to time `t`. The logarithm
    /// in the phase follows the branch continuous in `t`.
    pub fn evolve(psi0: &GaussianWavepacket, omega: f64, mass: f64, t: f64) -> Result<Self> {
        if psi0.dim() != 1 {
            return Err(Error::InvalidArgument(
                "the closed-form harmonic solution is one-dimensional".into(),
            ));
        }
        if !(omega > 0.0 && mass > 0.0) {
            return Err(Error::InvalidArgument(
                "omega and mass must be positive".into(),
            ));
        }
        let hbar = psi0.hbar();
        let gamma = psi0.width().gamma()[0];
        let (q0, p0) = (psi0.q()[0], psi0.p()[0]);
        let b = mass * omega;
        let theta = omega * t;
        let (s, c) = theta.sin_cos();
        let alpha0 = Complex64::new(0.0, gamma);
        let alpha = b * (alpha0 * c - b * s) / (b * c + alpha0 * s);
        let q = q0 * c + p0 / b * s;
        let p = p0 * c - b * q0 * s;
        // ln(z_t / b) with z_t / b = cos + i (gamma/b) sin.
        let ratio = gamma / b;
        let n = (theta / PI).round();
        let arg = n * PI + (ratio * (theta - n * PI).tan()).atan();
        let log = Complex64::new(0.5 * (c * c + ratio * ratio * s * s).ln(), arg);
        let beta0 = Complex64::new(0.0, -0.25 * hbar * (gamma / (PI * hbar)).ln());
        let beta = beta0 + 0.5 * (q * p - q0 * p0 + Complex64::new(0.0, hbar) * log);
        Ok(Self {
            alpha,
            beta,
            q,
            p,
            hbar,
        })
    }

    pub fn value(&self, x: f64) -> Complex64 {
        let u = x - self.q;
        let exponent = 0.5 * self.alpha * u * u + self.p * u + self.beta;
        (Complex64::new(0.0, 1.0 / self.hbar) * exponent).exp()
    }
}

/// Closed-form harmonic evolution of a Gaussian, sampled on `grid`.
pub fn harmonic_exact(
    psi0: &GaussianWavepacket,
    omega: f64,
    mass: f64,
    t: f64,
    grid: &SpatialGrid,
) -> Result<GridWavefunction> {
    let state = HarmonicExactState::evolve(psi0, omega, mass, t)?;
    Ok(GridWavefunction::from_fn(*grid, |x| state.value(x)))
}

/// Precomputed Strang splitting factors for a fixed grid, potential and step.
pub struct SplitOperator {
    grid: SpatialGrid,
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for SplitOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitOperator")
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl SplitOperator {
    pub fn new(grid: &SpatialGrid, pot: &Potential, dt: f64, hbar: f64) -> Result<Self> {
        if pot.dim() != 1 {
            return Err(Error::InvalidArgument(
                "split-operator propagation is one-dimensional".into(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let n = grid.len();
        let mass = pot.mass();
        let mut half_potential = Vec::with_capacity(n);
        for x in grid.points() {
            let v = pot.value(&[x]);
            if !v.is_finite() {
                return Err(Error::NonFiniteForce { position: vec![x] });
            }
            half_potential.push(Complex64::from_polar(1.0, -0.5 * v * dt / hbar));
        }
        // The inverse transform is unnormalised; fold 1/n into the kinetic factor.
        let kinetic = grid
            .wavenumbers()
            .into_iter()
            .map(|k| Complex64::from_polar(1.0 / n as f64, -hbar * k * k * dt / (2.0 * mass)))
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            grid: *grid,
            half_potential,
            kinetic,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        })
    }

    fn kinetic_step(&mut self, values: &mut [Complex64]) {
        self.forward.process_with_scratch(values, &mut self.scratch);
        for (v, k) in values.iter_mut().zip(&self.kinetic) {
            *v *= k;
        }
        self.inverse.process_with_scratch(values, &mut self.scratch);
    }

    fn potential_half_step(&self, values: &mut [Complex64]) {
        for (v, f) in values.iter_mut().zip(&self.half_potential) {
            *v *= f;
        }
    }

    /// One full step `V/2, T, V/2`.
    pub fn step(&mut self, values: &mut [Complex64]) {
        self.potential_half_step(values);
        self.kinetic_step(values);
        self.potential_half_step(values);
    }

    /// Largest probability found within the edge points of `values`.
    fn edge_mass(&self, values: &[Complex64]) -> f64 {
        let n = values.len();
        let dx = self.grid.dx();
        let k = EDGE_POINTS.min(n / 2);
        let left: f64 = values[..k].iter().map(|v| v.norm_sqr()).sum();
        let right: f64 = values[n - k..].iter().map(|v| v.norm_sqr()).sum();
        (left + right) * dx
    }
}

fn check_grid(psi: &GridWavefunction, grid: &SpatialGrid) -> Result<()> {
    if psi.grid != *grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", psi.grid, grid)));
    }
    Ok(())
}

fn edge_warning(max_edge: f64) -> Option<GridWarning> {
    (max_edge > EDGE_MASS_THRESHOLD).then_some(GridWarning::EdgeMass { mass: max_edge })
}

/// Propagates `psi` by `n_steps` Strang steps of size `dt`.
pub fn split_operator_propagate(
    psi: &GridWavefunction,
    pot: &Potential,
    dt: f64,
    n_steps: usize,
    hbar: f64,
) -> Result<GridWavefunction> {
    let mut op = SplitOperator::new(&psi.grid, pot, dt, hbar)?;
    check_grid(psi, &op.grid)?;
    let mut out = psi.clone();
    let mut max_edge = op.edge_mass(&out.values);
    for _ in 0..n_steps {
        op.step(&mut out.values);
        max_edge = max_edge.max(op.edge_mass(&out.values));
    }
    out.warnings.extend(edge_warning(max_edge));
    Ok(out)
}

/// `<psi|psi(k dt)>` for `k = 0..=n_steps` together with the final state.
pub fn split_operator_autocorrelation(
    psi: &GridWavefunction,
    pot: &Potential,
    dt: f64,
    n_steps: usize,
    hbar: f64,
) -> Result<(Vec<Complex64>, GridWavefunction)> {
    let mut op = SplitOperator::new(&psi.grid, pot, dt, hbar)?;
    let mut current = psi.clone();
    let mut series = Vec::with_capacity(n_steps + 1);
    series.push(psi.inner(&current)?);
    let mut max_edge = op.edge_mass(&current.values);
    for _ in 0..n_steps {
        op.step(&mut current.values);
        max_edge = max_edge.max(op.edge_mass(&current.values));
        series.push(psi.inner(&current)?);
    }
    current.warnings.extend(edge_warning(max_edge));
    Ok((series, current))
}
