//! Error metrics, variance formulas, power-law fits, trajectory-count
//! planning and spectra.

mod coherent;

pub use coherent::{
    initial_error, initial_error_ladder, initial_error_ladder_pairwise, initial_error_pairwise,
    ProjectionOptions,
};

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::GridWavefunction;

/// Discrete L2 distance `sqrt(sum |a - b|^2 dx)`.
pub fn l2_error(a: &GridWavefunction, b: &GridWavefunction) -> Result<f64> {
    a.check_same_grid(b)?;
    let s: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    Ok((s * a.grid.dx()).sqrt())
}

/// Variance of the square-root-Husimi estimator at `t = 0`: `4^D - 1`.
pub fn variance_initial_sqrt_husimi(dim: usize) -> f64 {
    4f64.powi(dim as i32) - 1.0
}

/// Variance at `t = 0` when sampling from `rho_a`: `(a^2 / (2(a - 2)))^D - 1`.
pub fn variance_rho_a_initial(a: f64, dim: usize) -> Result<f64> {
    if !(a > 2.0 && a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "the rho_a variance is finite only for a > 2, got {a}"
        )));
    }
    Ok((a * a / (2.0 * (a - 2.0))).powi(dim as i32) - 1.0)
}

/// Square-root-Husimi variance in a harmonic potential:
/// `2 [4 cos^2(wt) + (gamma/b + b/gamma)^2 sin^2(wt)]^{1/2} - 1`, `b = m w`.
pub fn variance_harmonic_sqrt_husimi(gamma: f64, mass: f64, omega: f64, t: f64) -> f64 {
    let b = mass * omega;
    let k = gamma / b + b / gamma;
    let (s, c) = (omega * t).sin_cos();
    2.0 * (4.0 * c * c + k * k * s * s).sqrt() - 1.0
}

/// `F(N) = c N^{-s}` fitted by least squares in log-log space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceFit {
    pub c: f64,
    pub s: f64,
    pub n_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Root-mean-square residual of `ln F` about the fitted line.
    pub residual: f64,
}

impl ConvergenceFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.c * n.powf(-self.s)
    }
}

pub fn fit_power_law(n_values: &[f64], errors: &[f64]) -> Result<ConvergenceFit> {
    if n_values.len() != errors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sample counts for {} errors",
            n_values.len(),
            errors.len()
        )));
    }
    if n_values.len() < 3 {
        return Err(Error::InvalidArgument(
            "a power-law fit needs at least three points".into(),
        ));
    }
    if let Some(bad) = n_values
        .iter()
        .chain(errors)
        .find(|v| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "power-law fit needs positive finite data, got {bad}"
        )));
    }
    let xs: Vec<f64> = n_values.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "sample counts must not all coincide".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(ConvergenceFit {
        c: intercept.exp(),
        s: -slope,
        n_values: n_values.to_vec(),
        errors: errors.to_vec(),
        residual,
    })
}

/// Mean squared error over independent runs and its square root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStatistics {
    /// `S_K = (1/K) sum_j ||psi^(j) - psi_ref||^2`.
    pub s_k: f64,
    pub root: f64,
}

pub fn empirical_rmse(
    runs: &[GridWavefunction],
    reference: &GridWavefunction,
) -> Result<RunStatistics> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one run is required".into(),
        ));
    }
    let mut total = 0.0;
    for run in runs {
        total += l2_error(run, reference)?.powi(2);
    }
    let s_k = total / runs.len() as f64;
    Ok(RunStatistics {
        s_k,
        root: s_k.sqrt(),
    })
}

/// Inputs of the trajectory-count estimates: variance `sigma2`, error
/// threshold `epsilon` and exceedance probability `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCountQuery {
    pub sigma2: f64,
    pub epsilon: f64,
    pub p: f64,
}

impl TrajectoryCountQuery {
    pub fn new(sigma2: f64, epsilon: f64, p: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p must lie in (0, 1), got {p}"
            )));
        }
        Ok(Self { sigma2, epsilon, p })
    }
}

/// Rounds up, ignoring excess from floating-point noise just above an integer.
fn ceil_count(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Chebyshev bound `N >= sigma2 / (p epsilon^2)`.
pub fn chebyshev_min_trajectories(q: &TrajectoryCountQuery) -> u64 {
    ceil_count(q.sigma2 / (q.p * q.epsilon * q.epsilon))
}

/// Central-limit estimate `N ~ (sigma2 / 2 epsilon^2) [erfc^-1(2p)]^2`,
/// rounded up. `None` when `p >= 1/2`, where the estimate is not positive.
pub fn clt_trajectory_estimate(q: &TrajectoryCountQuery) -> Option<u64> {
    if q.p >= 0.5 {
        return None;
    }
    let x = erfc_inv(2.0 * q.p).ok()?;
    Some(ceil_count(q.sigma2 / (2.0 * q.epsilon * q.epsilon) * x * x))
}

/// Inverse complementary error function on `(0, 2)` by Newton iteration on
/// `erfc`, started from an asymptotic guess.
pub fn erfc_inv(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "erfc^-1 is defined on (0, 2), got {y}"
        )));
    }
    if y > 1.0 {
        return Ok(-erfc_inv(2.0 - y)?);
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    // For small y, erfc(x) ~ exp(-x^2) / (x sqrt(pi)); near 1 use the series.
    let mut x = if y < 0.5 {
        let t = (-(y * PI.sqrt()).ln()).max(0.25);
        (t - 0.5 * t.ln()).max(0.1).sqrt()
    } else {
        0.5 * PI.sqrt() * (1.0 - y)
    };
    for _ in 0..100 {
        let f = erfc(x) - y;
        let slope = -2.0 / PI.sqrt() * (-x * x).exp();
        let step = f / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    Ok(x)
}

/// One point of a spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    pub energy: f64,
    pub intensity: f64,
}

/// Fourier transform `I(E) = Re sum_t C(t) exp(iEt/hbar) dt` of an
/// autocorrelation sampled at `t = k dt`, `k >= 0`, extended to negative
/// times by `C(-t) = conj C(t)`. `damping_hwhm` applies a Gaussian time
/// window producing Gaussian lines of that half width at half maximum (in
/// energy). Points are returned in increasing energy.
pub fn spectrum(
    autocorr: &[Complex64],
    dt: f64,
    hbar: f64,
    damping_hwhm: Option<f64>,
) -> Result<Vec<SpectrumPoint>> {
    if autocorr.len() < 2 {
        return Err(Error::InvalidArgument(
            "a spectrum needs at least two autocorrelation values".into(),
        ));
    }
    if !(dt > 0.0 && hbar > 0.0) {
        return Err(Error::InvalidArgument(
            "dt and hbar must be positive".into(),
        ));
    }
    let window = |k: usize| -> f64 {
        match damping_hwhm {
            Some(h) => {
                let sigma_e = h / (2.0 * 2f64.ln()).sqrt();
                let t = k as f64 * dt;
                (-0.5 * (sigma_e * t / hbar).powi(2)).exp()
            }
            None => 1.0,
        }
    };
    let l = autocorr.len();
    let m = 2 * l - 1;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (k, c) in autocorr.iter().enumerate() {
        let w = window(k);
        buf[k] = c * w;
        if k > 0 {
            buf[m - k] = c.conj() * w;
        }
    }
    // The inverse transform carries exp(+2 pi i j k / m).
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let de = 2.0 * PI * hbar / (m as f64 * dt);
    let mut points: Vec<SpectrumPoint> = buf
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let signed = if k <= m / 2 {
                k as f64
            } else {
                k as f64 - m as f64
            };
            SpectrumPoint {
                energy: signed * de,
                intensity: v.re * dt,
            }
        })
        .collect();
    points.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(points)
}

/// Energy spacing of [`spectrum`] output for a series of `len` values.
pub fn spectrum_bin_width(len: usize, dt: f64, hbar: f64) -> f64 {
    2.0 * PI * hbar / ((2 * len - 1) as f64 * dt)
}

/// Interior local maxima whose intensity exceeds `min_relative` times the
/// largest intensity, in increasing energy.
pub fn find_peaks(points: &[SpectrumPoint], min_relative: f64) -> Vec<SpectrumPoint> {
    let top = points
        .iter()
        .map(|p| p.intensity)
        .fold(f64::NEG_INFINITY, f64::max);
    points
        .windows(3)
        .filter(|w| {
            w[1].intensity > w[0].intensity
                && w[1].intensity >= w[2].intensity
                && w[1].intensity > min_relative * top
        })
        .map(|w| w[1])
        .collect()
}
