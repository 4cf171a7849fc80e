//! Herman-Kluk prefactor, trajectory ensembles and the Monte Carlo estimator
//! `psi_N(t) = (1/N) sum_j r(z_j) R(t, z_j) exp(i S_j / hbar) g_{z_j(t)}`.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{harmonic_classical, Potential, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{GridWarning, GridWavefunction, SpatialGrid};
use crate::phase_space::{
    accumulate_gaussian, overlap_points, GaussianWavepacket, PhaseSpaceSamples, SamplingScheme,
    WidthMatrix,
};

/// `|A|` below this is treated as a caustic.
pub const CAUSTIC_THRESHOLD: f64 = 1e-30;

/// Default number of trajectories per reduction leaf.
pub const DEFAULT_CHUNK: usize = 1024;

/// Prefactor `R` together with the continuously tracked argument of
/// `A = R^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HkPrefactorState {
    pub r: Complex64,
    pub unwrapped_arg: f64,
    pub t: f64,
}

impl HkPrefactorState {
    pub fn initial() -> Self {
        Self {
            r: Complex64::new(1.0, 0.0),
            unwrapped_arg: 0.0,
            t: 0.0,
        }
    }

    fn from_parts(magnitude: f64, arg: f64, t: f64) -> Self {
        Self {
            r: Complex64::from_polar(magnitude.sqrt(), 0.5 * arg),
            unwrapped_arg: arg,
            t,
        }
    }
}

impl Default for HkPrefactorState {
    fn default() -> Self {
        Self::initial()
    }
}

/// `A = 2^{-D} det(M_qq + gamma^-1 M_pp gamma - i M_qp gamma + i gamma^-1 M_pq)`
/// for a row-major `2D x 2D` stability matrix.
pub fn prefactor_determinant(stability: &[f64], width: &WidthMatrix) -> Complex64 {
    let d = width.dim();
    let n = 2 * d;
    if d == 1 {
        let g = width.gamma()[0];
        let (mqq, mqp, mpq, mpp) = (stability[0], stability[1], stability[2], stability[3]);
        return 0.5 * Complex64::new(mqq + mpp, mpq / g - mqp * g);
    }
    let block =
        |r0: usize, c0: usize| DMatrix::from_fn(d, d, |i, j| stability[(r0 + i) * n + c0 + j]);
    let (mqq, mqp, mpq, mpp) = (block(0, 0), block(0, d), block(d, 0), block(d, d));
    let g = width.to_matrix();
    let gi = width.inverse_matrix();
    let re = &mqq + &gi * &mpp * &g;
    let im = &gi * &mpq - &mqp * &g;
    let c = DMatrix::from_fn(d, d, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
    c.determinant() / 2f64.powi(d as i32)
}

/// Advances the prefactor branch: the new argument of `A` is the previous one
/// plus the principal increment nearest zero.
pub fn hk_prefactor(
    stability: &[f64],
    width: &WidthMatrix,
    prev: &HkPrefactorState,
    t: f64,
) -> Result<HkPrefactorState> {
    let a = prefactor_determinant(stability, width);
    let magnitude = a.norm();
    if magnitude.is_nan() || magnitude < CAUSTIC_THRESHOLD {
        return Err(Error::Caustic { magnitude, time: t });
    }
    let increment = wrap_angle(a.arg() - prev.unwrapped_arg);
    Ok(HkPrefactorState::from_parts(
        magnitude,
        prev.unwrapped_arg + increment,
        t,
    ))
}

/// Maps an angle to `(-pi, pi]`.
fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x % TAU;
    if y > PI {
        y -= TAU;
    } else if y <= -PI {
        y += TAU;
    }
    y
}

/// Returns `(|R|^2, 2^{-D} sqrt(det(Id + Mt^T Mt)))` with
/// `Mt = diag(gamma^{1/2}, gamma^{-1/2}) M diag(gamma^{-1/2}, gamma^{1/2})`.
/// For scalar gamma `Mt` equals `diag(Id, gamma^-1) M diag(Id, gamma)` up to
/// the blocks commuting with gamma; for a general width only the symmetric
/// scaling makes the two values agree.
pub fn prefactor_bound_check(stability: &[f64], width: &WidthMatrix) -> (f64, f64) {
    let d = width.dim();
    let n = 2 * d;
    let lhs = prefactor_determinant(stability, width).norm();
    let vecs = DMatrix::from_row_slice(d, d, width.eigenvectors());
    let sqrt_diag = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            width.eigenvalues()[i].sqrt()
        } else {
            0.0
        }
    });
    let half = &vecs * &sqrt_diag * vecs.transpose();
    let half_inv = half
        .clone()
        .try_inverse()
        .expect("width matrix square root is invertible");
    let mut left = DMatrix::zeros(n, n);
    let mut right = DMatrix::zeros(n, n);
    left.view_mut((0, 0), (d, d)).copy_from(&half);
    left.view_mut((d, d), (d, d)).copy_from(&half_inv);
    right.view_mut((0, 0), (d, d)).copy_from(&half_inv);
    right.view_mut((d, d), (d, d)).copy_from(&half);
    let m = DMatrix::from_row_slice(n, n, stability);
    let mt = left * m * right;
    let det = (DMatrix::identity(n, n) + mt.transpose() * mt).determinant();
    (lhs, det.sqrt() / 2f64.powi(d as i32))
}

#[derive(Debug, Clone)]
struct Member {
    z0: Vec<f64>,
    traj: Trajectory,
    prefactor: HkPrefactorState,
    weight: Complex64,
    valid: bool,
}

impl Member {
    #[inline]
    fn coefficient(&self, hbar: f64) -> Complex64 {
        self.weight * self.prefactor.r * Complex64::from_polar(1.0, self.traj.action() / hbar)
    }
}

/// Sum of HK contributions over a trajectory range, before division by `N`.
#[derive(Debug, Clone)]
pub struct PartialSum {
    pub values: Vec<Complex64>,
    /// Number of trajectories in the range, valid or not.
    pub count: usize,
    pub invalid: usize,
    /// `sum |c_j|^2 * (mass fraction of g_{z_j(t)} outside the grid)`.
    weighted_loss: f64,
    weight_norm: f64,
    truncated: bool,
}

impl PartialSum {
    fn empty(len: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); len],
            count: 0,
            invalid: 0,
            weighted_loss: 0.0,
            weight_norm: 0.0,
            truncated: false,
        }
    }

    /// Sum of two partial sums over disjoint ranges.
    pub fn merge(mut self, other: PartialSum) -> Self {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.count += other.count;
        self.invalid += other.invalid;
        self.weighted_loss += other.weighted_loss;
        self.weight_norm += other.weight_norm;
        self.truncated |= other.truncated;
        self
    }

    /// Estimated fraction of squared norm lost to the grid boundaries.
    pub fn mass_loss(&self) -> f64 {
        if self.weight_norm > 0.0 {
            self.weighted_loss / self.weight_norm
        } else {
            0.0
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Divides by `n` and attaches diagnostics.
    pub fn into_wavefunction(self, grid: SpatialGrid, n: usize) -> GridWavefunction {
        let scale = 1.0 / n as f64;
        let mut psi = GridWavefunction {
            grid,
            values: self.values.iter().map(|v| v * scale).collect(),
            warnings: Vec::new(),
        };
        if self.truncated {
            psi.warnings.push(GridWarning::Truncation {
                mass_loss: self.mass_loss(),
            });
        }
        if self.invalid > 0 {
            psi.warnings.push(GridWarning::InvalidTrajectories {
                count: self.invalid,
            });
        }
        psi
    }
}

/// Pairwise reduction over `[lo, hi)` in units of chunks. The split points
/// depend only on the range, so the floating-point result does not depend on
/// the number of worker threads.
fn tree_reduce<T, F, M>(lo: usize, hi: usize, leaf: &F, merge: &M) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync,
    M: Fn(T, T) -> T + Sync,
{
    if hi - lo == 1 {
        return leaf(lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(
        || tree_reduce(lo, mid, leaf, merge),
        || tree_reduce(mid, hi, leaf, merge),
    );
    merge(a, b)
}

/// Sampled initial conditions with their weights and propagated states.
#[derive(Debug, Clone)]
pub struct HkEnsemble {
    psi0: GaussianWavepacket,
    scheme: SamplingScheme,
    potential: Potential,
    seed: u64,
    members: Vec<Member>,
    chunk: usize,
    time: f64,
    steps: usize,
}

/// Draws `n` samples from `scheme` with the counter-based stream `seed` and
/// starts one trajectory per sample.
pub fn build_ensemble(
    psi0: &GaussianWavepacket,
    scheme: &SamplingScheme,
    potential: &Potential,
    n: usize,
    seed: u64,
) -> Result<HkEnsemble> {
    let samples = scheme.sample(n, seed)?;
    HkEnsemble::from_samples(psi0, scheme, potential, &samples, seed)
}

impl HkEnsemble {
    /// Ensemble over explicitly given initial conditions.
    pub fn from_samples(
        psi0: &GaussianWavepacket,
        scheme: &SamplingScheme,
        potential: &Potential,
        samples: &PhaseSpaceSamples,
        seed: u64,
    ) -> Result<Self> {
        let d = psi0.dim();
        if potential.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: potential.dim(),
            });
        }
        if scheme.dim() != d || samples.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: samples.dim(),
            });
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one sample".into(),
            ));
        }
        let members = samples
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|z| -> Result<Member> {
                let traj = Trajectory::new(z, potential)?;
                let valid = traj.is_valid();
                Ok(Member {
                    z0: z.to_vec(),
                    traj,
                    prefactor: HkPrefactorState::initial(),
                    weight: scheme.prefactor_r(z)?,
                    valid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            psi0: psi0.clone(),
            scheme: scheme.clone(),
            potential: potential.clone(),
            seed,
            members,
            chunk: DEFAULT_CHUNK,
            time: 0.0,
            steps: 0,
        })
    }

    pub fn with_chunk_size(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    pub fn initial_state(&self) -> &GaussianWavepacket {
        &self.psi0
    }

    pub fn invalid_count(&self) -> usize {
        self.members.iter().filter(|m| !m.valid).count()
    }

    /// Weight `r(z_j)` fixed at `t = 0`.
    pub fn weight(&self, j: usize) -> Complex64 {
        self.members[j].weight
    }

    pub fn trajectory(&self, j: usize) -> &Trajectory {
        &self.members[j].traj
    }

    pub fn prefactor(&self, j: usize) -> &HkPrefactorState {
        &self.members[j].prefactor
    }

    pub fn is_valid(&self, j: usize) -> bool {
        self.members[j].valid
    }

    /// `r(z_j) R_j exp(i S_j / hbar)`, or zero for a flagged trajectory.
    pub fn coefficient(&self, j: usize) -> Complex64 {
        let m = &self.members[j];
        if m.valid {
            m.coefficient(self.psi0.hbar())
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Advances every valid trajectory by `n_steps` integrator steps, tracking
    /// the prefactor branch after each step. Trajectories that hit a
    /// non-finite force or a caustic are flagged and frozen.
    pub fn propagate(&mut self, dt: f64, n_steps: usize) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let pot = &self.potential;
        let width = self.psi0.width();
        self.members.par_iter_mut().for_each(|m| {
            for _ in 0..n_steps {
                if !m.valid {
                    break;
                }
                if m.traj.step(pot, dt).is_err() {
                    m.valid = false;
                    break;
                }
                match hk_prefactor(m.traj.stability(), width, &m.prefactor, m.traj.time()) {
                    Ok(next) => m.prefactor = next,
                    Err(_) => m.valid = false,
                }
            }
        });
        self.steps += n_steps;
        self.time += n_steps as f64 * dt;
        Ok(())
    }

    /// Places every trajectory at time `t` on its closed-form harmonic path,
    /// with the closed-form action, stability matrix and continuous prefactor.
    /// Requires a harmonic potential and a scalar width.
    pub fn set_exact_harmonic_time(&mut self, t: f64) -> Result<()> {
        let (dim, mass, omega) = match self.potential {
            Potential::Harmonic { dim, mass, omega } => (dim, mass, omega),
            _ => {
                return Err(Error::InvalidArgument(
                    "exact classical inputs need a harmonic potential".into(),
                ))
            }
        };
        let gamma = self.psi0.width().as_scalar().ok_or_else(|| {
            Error::InvalidArgument("exact classical inputs need a scalar width".into())
        })?;
        let (magnitude, arg) = harmonic_prefactor_parts(gamma, mass, omega, t);
        let prefactor =
            HkPrefactorState::from_parts(magnitude.powi(dim as i32), dim as f64 * arg, t);
        let pot = &self.potential;
        let n = 2 * dim;
        self.members.par_iter_mut().for_each(|m| {
            let z0 = &m.z0;
            let mut z = vec![0.0; n];
            let mut stability = vec![0.0; n * n];
            let mut action = 0.0;
            for i in 0..dim {
                let c = harmonic_classical(z0[i], z0[dim + i], mass, omega, t);
                z[i] = c.q;
                z[dim + i] = c.p;
                action += c.action;
                stability[i * n + i] = c.stability[0];
                stability[i * n + dim + i] = c.stability[1];
                stability[(dim + i) * n + i] = c.stability[2];
                stability[(dim + i) * n + dim + i] = c.stability[3];
            }
            m.traj.set_state(pot, &z, action, &stability, t);
            m.prefactor = prefactor;
        });
        self.time = t;
        Ok(())
    }

    fn chunk_bounds(&self, range: &Range<usize>) -> (usize, impl Fn(usize) -> Range<usize> + Sync) {
        let chunk = self.chunk;
        let start = range.start;
        let end = range.end;
        let n_chunks = (end - start).div_ceil(chunk).max(1);
        (n_chunks, move |c: usize| {
            let lo = start + c * chunk;
            lo..(lo + chunk).min(end)
        })
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory range {range:?} is empty or exceeds the ensemble size {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Unnormalised sum of HK contributions for trajectories in `range`,
    /// evaluated on `grid` (one dimension only).
    pub fn partial_sum(&self, grid: &SpatialGrid, range: Range<usize>) -> Result<PartialSum> {
        if self.psi0.dim() != 1 {
            return Err(Error::InvalidArgument(
                "grid estimates are only available for D = 1".into(),
            ));
        }
        self.check_range(&range)?;
        let hbar = self.psi0.hbar();
        let gamma = self.psi0.width().gamma()[0];
        let (n_chunks, bounds) = self.chunk_bounds(&range);
        let leaf = |c: usize| {
            let mut acc = PartialSum::empty(grid.len());
            for m in &self.members[bounds(c)] {
                acc.count += 1;
                if !m.valid {
                    acc.invalid += 1;
                    continue;
                }
                let coeff = m.coefficient(hbar);
                let z = m.traj.z();
                let loss =
                    accumulate_gaussian(grid, z[0], z[1], gamma, hbar, coeff, &mut acc.values);
                let w = coeff.norm_sqr();
                acc.weight_norm += w;
                if loss > 0.0 {
                    acc.truncated = true;
                    acc.weighted_loss += w * loss;
                }
            }
            acc
        };
        Ok(tree_reduce(0, n_chunks, &leaf, &PartialSum::merge))
    }

    /// `psi_N` on `grid` using all trajectories.
    pub fn estimate_wavefunction(&self, grid: &SpatialGrid) -> Result<GridWavefunction> {
        self.estimate_prefix(grid, self.len())
    }

    /// `psi_n` on `grid` from the first `n` trajectories.
    pub fn estimate_prefix(&self, grid: &SpatialGrid, n: usize) -> Result<GridWavefunction> {
        Ok(self.partial_sum(grid, 0..n)?.into_wavefunction(*grid, n))
    }

    /// Unnormalised `sum_j c_j <psi0|g_{z_j(t)}>` over `range`.
    pub fn autocorrelation_sum(&self, range: Range<usize>) -> Result<Complex64> {
        self.check_range(&range)?;
        let hbar = self.psi0.hbar();
        let width = self.psi0.width();
        let z0 = self.psi0.center();
        let (n_chunks, bounds) = self.chunk_bounds(&range);
        let leaf = |c: usize| {
            self.members[bounds(c)]
                .iter()
                .filter(|m| m.valid)
                .map(|m| m.coefficient(hbar) * overlap_points(width, hbar, z0, m.traj.z()))
                .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
        };
        Ok(tree_reduce(0, n_chunks, &leaf, &|a, b| a + b))
    }

    /// `<psi0|psi_N(t)>` from analytic Gaussian overlaps.
    pub fn autocorrelation(&self) -> Complex64 {
        self.autocorrelation_sum(0..self.len())
            .expect("ensembles are never empty")
            / self.len() as f64
    }
}

/// `|A|` and the continuous `arg A` of the one-dimensional harmonic prefactor
/// `A = cos(wt) - i kappa sin(wt)` with `kappa = (gamma/b + b/gamma)/2`.
pub fn harmonic_prefactor_parts(gamma: f64, mass: f64, omega: f64, t: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    let b = mass * omega;
    let kappa = 0.5 * (gamma / b + b / gamma);
    let theta = omega * t;
    let (s, c) = theta.sin_cos();
    let magnitude = (c * c + kappa * kappa * s * s).sqrt();
    let n = (theta / PI).round();
    let arg = -(n * PI + (kappa * (theta - n * PI).tan()).atan());
    (magnitude, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{propagate, MorseParams};
    use crate::phase_space::evaluate_gaussian;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn identity(d: usize) -> Vec<f64> {
        let n = 2 * d;
        (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn prefactor_at_identity() {
        let w = WidthMatrix::scalar(3, 0.7).unwrap();
        let s = hk_prefactor(&identity(3), &w, &HkPrefactorState::initial(), 0.0).unwrap();
        assert_relative_eq!(s.r.re, 1.0, epsilon = 1e-14);
        assert!(s.r.im.abs() < 1e-14);
        let (lhs, rhs) = prefactor_bound_check(&identity(3), &w);
        assert_relative_eq!(lhs, 1.0, epsilon = 1e-14);
        assert_relative_eq!(rhs, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn harmonic_quarter_period_prefactor_keeps_branch() {
        let w = WidthMatrix::scalar(1, 2.0).unwrap();
        let pot = Potential::harmonic(1, 1.0, 1.0);
        let dt = PI / 2.0 / 500.0;
        let history = propagate(&[0.0, 0.0], &pot, dt, 500, true).unwrap();
        let mut state = HkPrefactorState::initial();
        for t in &history[1..] {
            state = hk_prefactor(t.stability(), &w, &state, t.time()).unwrap();
        }
        assert_relative_eq!(state.r.norm(), 1.25f64.sqrt(), epsilon = 1e-5);
        // sqrt(-1.25 i) on the branch continuous from R(0) = 1 has argument -pi/4.
        assert_relative_eq!(state.r.arg(), -PI / 4.0, epsilon = 1e-5);
        assert_relative_eq!(state.unwrapped_arg, -PI / 2.0, epsilon = 1e-5);
        let (mag, arg) = harmonic_prefactor_parts(2.0, 1.0, 1.0, PI / 2.0);
        assert_relative_eq!(mag, 1.25, epsilon = 1e-12);
        assert_relative_eq!(arg, -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn prefactor_unit_modulus_when_width_matches() {
        let w = WidthMatrix::scalar(1, 1.0).unwrap();
        let pot = Potential::harmonic(1, 1.0, 1.0);
        let dt = 2.0 * PI / 1000.0;
        let history = propagate(&[0.5, 0.2], &pot, dt, 1000, true).unwrap();
        let mut state = HkPrefactorState::initial();
        for t in &history[1..] {
            state = hk_prefactor(t.stability(), &w, &state, t.time()).unwrap();
            assert!((state.r.norm() - 1.0).abs() < 1e-5);
            let (lhs, rhs) = prefactor_bound_check(t.stability(), &w);
            assert!((lhs - 1.0).abs() < 1e-5 && (rhs - 1.0).abs() < 1e-5);
        }
        // R(t) = sqrt(exp(-i t)): after a full period the argument of A is -2 pi.
        assert_relative_eq!(state.unwrapped_arg, -2.0 * PI, epsilon = 1e-4);
    }

    #[test]
    fn integrated_prefactor_matches_closed_form_over_periods() {
        let w = WidthMatrix::scalar(1, 2.0).unwrap();
        let pot = Potential::harmonic(1, 1.0, 1.0);
        let dt = 2.0 * PI / 2000.0;
        let mut traj = Trajectory::new(&[-1.0, 0.0], &pot).unwrap();
        let mut state = HkPrefactorState::initial();
        for k in 1..=6000 {
            traj.step(&pot, dt).unwrap();
            state = hk_prefactor(traj.stability(), &w, &state, traj.time()).unwrap();
            if k % 250 == 0 {
                let (mag, arg) = harmonic_prefactor_parts(2.0, 1.0, 1.0, traj.time());
                assert!((state.unwrapped_arg - arg).abs() < 1e-4, "step {k}");
                assert!((state.r.norm_sqr() - mag).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn caustic_is_reported() {
        let w = WidthMatrix::scalar(1, 1.0).unwrap();
        let singular = [0.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            hk_prefactor(&singular, &w, &HkPrefactorState::initial(), 1.0),
            Err(Error::Caustic { .. })
        ));
    }

    #[test]
    fn bound_check_non_scalar_width() {
        let w = WidthMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        // Symplectic matrix from a short anharmonic-like flow: exp of J S.
        let pot = Potential::harmonic(2, 1.0, 1.3);
        let t = propagate(&[0.1, 0.2, 0.3, -0.1], &pot, 0.01, 37, false)
            .unwrap()
            .pop()
            .unwrap();
        let mut m = t.stability().to_vec();
        // Mix the coordinates with a symplectic shear to avoid a diagonal M.
        let shear = [
            1.0, 0.4, 0.0, 0.0, 0.4, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ];
        let sh = DMatrix::from_row_slice(4, 4, &shear);
        // diag(S, S^-T) is symplectic for invertible S.
        let s = sh.view((0, 0), (2, 2)).into_owned();
        let s_inv_t = s.clone().try_inverse().unwrap().transpose();
        let mut big = DMatrix::zeros(4, 4);
        big.view_mut((0, 0), (2, 2)).copy_from(&s);
        big.view_mut((2, 2), (2, 2)).copy_from(&s_inv_t);
        let mm = big * DMatrix::from_row_slice(4, 4, &m);
        for i in 0..4 {
            for j in 0..4 {
                m[i * 4 + j] = mm[(i, j)];
            }
        }
        let (lhs, rhs) = prefactor_bound_check(&m, &w);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn morse_bound_identity_and_branch_continuity() {
        let params = MorseParams::new(0.01, 0.0041, 0.1, 20.95).unwrap();
        let pot = params.potential();
        let psi0 = GaussianWavepacket::new_1d(0.0, 0.0, 0.00456, 1.0).unwrap();
        let scheme = SamplingScheme::sqrt_husimi(psi0.clone());
        let samples = scheme.sample(100, 5).unwrap();
        let w = psi0.width();
        for z in samples.iter() {
            let mut traj = Trajectory::new(z, &pot).unwrap();
            let mut state = HkPrefactorState::initial();
            for k in 1..=2020 {
                traj.step(&pot, 8.0).unwrap();
                let next = hk_prefactor(traj.stability(), w, &state, traj.time()).unwrap();
                let jump = (0.5 * (next.unwrapped_arg - state.unwrapped_arg)).abs();
                assert!(jump < PI / 2.0);
                state = next;
                if k % 101 == 0 {
                    let (lhs, rhs) = prefactor_bound_check(traj.stability(), w);
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
                }
            }
        }
    }

    fn harmonic_setup(gamma: f64, q0: f64) -> (GaussianWavepacket, Potential) {
        (
            GaussianWavepacket::new_1d(q0, 0.0, gamma, 1.0).unwrap(),
            Potential::harmonic(1, 1.0, 1.0),
        )
    }

    #[test]
    fn ensemble_weights() {
        let (psi0, pot) = harmonic_setup(2.0, -1.0);
        let sqrt = SamplingScheme::sqrt_husimi(psi0.clone());
        let ens = build_ensemble(&psi0, &sqrt, &pot, 64, 1).unwrap();
        for j in 0..ens.len() {
            assert_relative_eq!(ens.weight(j).norm(), 2.0, epsilon = 1e-14);
        }
        let forced = PhaseSpaceSamples::from_points(1, &[vec![-1.0, 0.0]]).unwrap();
        let hus = SamplingScheme::husimi(psi0.clone());
        let single = HkEnsemble::from_samples(&psi0, &hus, &pot, &forced, 0).unwrap();
        assert_eq!(single.weight(0), Complex64::new(1.0, 0.0));
        let grid = SpatialGrid::new(-8.0, 8.0, 512).unwrap();
        let est = single.estimate_wavefunction(&grid).unwrap();
        let exact = evaluate_gaussian(&psi0, &grid).unwrap();
        for (a, b) in est.values.iter().zip(&exact.values) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn single_coherent_state_keeps_shape() {
        let (psi0, pot) = harmonic_setup(1.0, -1.0);
        let forced = PhaseSpaceSamples::from_points(1, &[vec![-1.0, 0.0]]).unwrap();
        let hus = SamplingScheme::husimi(psi0.clone());
        let mut ens = HkEnsemble::from_samples(&psi0, &hus, &pot, &forced, 0).unwrap();
        let grid = SpatialGrid::new(-8.0, 8.0, 512).unwrap();
        for k in 1..=4 {
            ens.propagate(2.0 * PI / 1000.0, 150).unwrap();
            let est = ens.estimate_wavefunction(&grid).unwrap();
            let z = ens.trajectory(0).z();
            let g = psi0.recentered(z).unwrap();
            let exact = evaluate_gaussian(&g, &grid).unwrap();
            for (a, b) in est.values.iter().zip(&exact.values) {
                assert!((a.norm() - b.norm()).abs() < 1e-5, "segment {k}");
            }
        }
    }

    #[test]
    fn husimi_autocorrelation_at_zero_is_one() {
        let (psi0, pot) = harmonic_setup(2.0, -1.0);
        let hus = SamplingScheme::husimi(psi0.clone());
        for n in [1, 7, 1000] {
            let ens = build_ensemble(&psi0, &hus, &pot, n, 3).unwrap();
            let c = ens.autocorrelation();
            assert!(
                (c - Complex64::new(1.0, 0.0)).norm() < 1e-14,
                "n = {n}: {c}"
            );
        }
        let sqrt = SamplingScheme::sqrt_husimi(psi0.clone());
        let ens = build_ensemble(&psi0, &sqrt, &pot, 1 << 16, 3).unwrap();
        let c = ens.autocorrelation();
        assert!((c - Complex64::new(1.0, 0.0)).norm() < 5.0 * (3.0 / 65536.0f64).sqrt());
        assert!((c - Complex64::new(1.0, 0.0)).norm() > 0.0);
    }

    #[test]
    fn estimator_is_linear_in_disjoint_halves() {
        let (psi0, pot) = harmonic_setup(2.0, -1.0);
        let scheme = SamplingScheme::sqrt_husimi(psi0.clone());
        let grid = SpatialGrid::new(-8.0, 8.0, 256).unwrap();
        let mut ens = build_ensemble(&psi0, &scheme, &pot, 2048, 9).unwrap();
        ens.propagate(0.01, 50).unwrap();
        let full = ens.estimate_wavefunction(&grid).unwrap();
        let a = ens
            .partial_sum(&grid, 0..1024)
            .unwrap()
            .into_wavefunction(grid, 1024);
        let b = ens
            .partial_sum(&grid, 1024..2048)
            .unwrap()
            .into_wavefunction(grid, 1024);
        for k in 0..grid.len() {
            let avg = 0.5 * (a.values[k] + b.values[k]);
            assert!((avg - full.values[k]).norm() <= 1e-15 * (1.0 + avg.norm()));
        }
    }

    #[test]
    fn estimate_independent_of_thread_count() {
        let (psi0, pot) = harmonic_setup(2.0, -1.0);
        let scheme = SamplingScheme::sqrt_husimi(psi0.clone());
        let grid = SpatialGrid::new(-8.0, 8.0, 256).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut ens = build_ensemble(&psi0, &scheme, &pot, 5000, 4)
                    .unwrap()
                    .with_chunk_size(300);
                ens.propagate(0.01, 20).unwrap();
                (
                    ens.estimate_wavefunction(&grid).unwrap(),
                    ens.autocorrelation(),
                )
            })
        };
        let (a, ca) = run(1);
        for threads in [3, 8] {
            let (b, cb) = run(threads);
            assert_eq!(a.values, b.values);
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn exact_mode_matches_integrator() {
        let (psi0, pot) = harmonic_setup(2.0, -1.0);
        let scheme = SamplingScheme::sqrt_husimi(psi0.clone());
        let mut a = build_ensemble(&psi0, &scheme, &pot, 50, 2).unwrap();
        let mut b = a.clone();
        let dt = 2.0 * PI / 4000.0;
        a.propagate(dt, 3000).unwrap();
        b.set_exact_harmonic_time(3000.0 * dt).unwrap();
        for j in 0..50 {
            assert!((a.coefficient(j) - b.coefficient(j)).norm() < 1e-4);
            for (x, y) in a.trajectory(j).z().iter().zip(b.trajectory(j).z()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn truncation_and_invalid_warnings() {
        let params = MorseParams::new(0.01, 0.0041, 0.1, 20.95).unwrap();
        let pot = params.potential();
        let psi0 = GaussianWavepacket::new_1d(0.0, 0.0, 0.00456, 1.0).unwrap();
        let scheme = SamplingScheme::husimi(psi0.clone());
        let forced = PhaseSpaceSamples::from_points(1, &[vec![0.0, 0.0], vec![-1e6, 0.0]]).unwrap();
        let ens = HkEnsemble::from_samples(&psi0, &scheme, &pot, &forced, 0);
        // The far sample has a vanishing Husimi overlap.
        assert!(matches!(ens, Err(Error::WeightOverflow { .. })));

        let sqrt = SamplingScheme::sqrt_husimi(psi0.clone());
        let mut ens = HkEnsemble::from_samples(&psi0, &sqrt, &pot, &forced, 0).unwrap();
        assert_eq!(ens.invalid_count(), 1);
        ens.propagate(8.0, 3).unwrap();
        let small = SpatialGrid::new(-20.0, 20.0, 64).unwrap();
        let est = ens.estimate_wavefunction(&small).unwrap();
        assert!(est
            .warnings
            .iter()
            .any(|w| matches!(w, GridWarning::Truncation { mass_loss } if *mass_loss > 0.01)));
        assert!(est
            .warnings
            .contains(&GridWarning::InvalidTrajectories { count: 1 }));
    }
}
