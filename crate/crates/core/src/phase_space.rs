//! Frozen Gaussian wavepackets, their overlaps, and the normal family of
//! phase-space sampling densities used to discretise the Herman-Kluk integral.
//!
//! Phase-space points are passed around as flat slices `z = [q_1..q_D, p_1..p_D]`.
//! All densities are taken with respect to the scaled measure
//! `dnu = dz / (2 pi hbar)^D`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::{GridWarning, GridWavefunction, SpatialGrid};

/// `|<g_z|psi0>|` below this makes the Husimi weight `1/<psi0|g_z>` unusable.
pub const HUSIMI_OVERLAP_FLOOR: f64 = 1e-300;

/// Relative tolerance used when comparing width matrices.
const WIDTH_MATCH_TOL: f64 = 1e-12;

/// Real symmetric positive-definite width matrix with the factorisations the
/// rest of the crate needs precomputed.
#[derive(Debug, Clone)]
pub struct WidthMatrix {
    dim: usize,
    gamma: Vec<f64>,
    gamma_inv: Vec<f64>,
    det: f64,
    /// Lower Cholesky factors of gamma and gamma^-1 (row-major).
    chol: Vec<f64>,
    chol_inv: Vec<f64>,
    /// `Some(c)` when gamma = c Id.
    scalar: Option<f64>,
    eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors (row-major storage of the matrix).
    eigenvectors: Vec<f64>,
}

impl WidthMatrix {
    pub fn scalar(dim: usize, value: f64) -> Result<Self> {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = value;
        }
        Self::from_matrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(
                "width matrix must be square and non-empty".into(),
            ));
        }
        Self::from_matrix(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        if dim == 0 || m.ncols() != dim {
            return Err(Error::InvalidArgument(
                "width matrix must be square and non-empty".into(),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("width matrix is not finite".into()));
        }
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..dim {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "width matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigen = m.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "width matrix is not positive definite (eigenvalues {:?})",
                eigen.eigenvalues.as_slice()
            )));
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("width matrix is singular".into()))?;
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("width matrix has no Cholesky factor".into()))?
            .l();
        let chol_inv = inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("inverse width has no Cholesky factor".into()))?
            .l();
        let diag0 = m[(0, 0)];
        let is_scalar = (0..dim).all(|i| {
            (0..dim).all(|j| {
                let target = if i == j { diag0 } else { 0.0 };
                (m[(i, j)] - target).abs() <= 1e-15 * scale
            })
        });
        let row_major = |a: &DMatrix<f64>| -> Vec<f64> {
            (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)])
                .collect()
        };
        Ok(Self {
            dim,
            gamma: row_major(&m),
            gamma_inv: row_major(&inv),
            det: eigen.eigenvalues.iter().product(),
            chol: row_major(&chol),
            chol_inv: row_major(&chol_inv),
            scalar: is_scalar.then_some(diag0),
            eigenvalues: eigen.eigenvalues.iter().copied().collect(),
            eigenvectors: row_major(&eigen.eigenvectors),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn as_scalar(&self) -> Option<f64> {
        self.scalar
    }

    /// Row-major entries of gamma.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Row-major entries of gamma^-1.
    pub fn gamma_inv(&self) -> &[f64] {
        &self.gamma_inv
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row-major orthogonal matrix whose columns are eigenvectors of gamma.
    pub fn eigenvectors(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.gamma)
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.gamma_inv)
    }

    /// `Sigma0 = diag(gamma, gamma^-1)`.
    pub fn sigma0(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut s = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] = self.gamma[i * d + j];
                s[(d + i, d + j)] = self.gamma_inv[i * d + j];
            }
        }
        s
    }

    /// `dz^T Sigma0 dz` for `dz = z - w`.
    #[inline]
    pub fn quadratic_form(&self, z: &[f64], w: &[f64]) -> f64 {
        let d = self.dim;
        if let Some(c) = self.scalar {
            let mut sq = 0.0;
            let mut sp = 0.0;
            for i in 0..d {
                let dq = z[i] - w[i];
                let dp = z[d + i] - w[d + i];
                sq += dq * dq;
                sp += dp * dp;
            }
            return c * sq + sp / c;
        }
        let mut total = 0.0;
        for i in 0..d {
            let dqi = z[i] - w[i];
            let dpi = z[d + i] - w[d + i];
            for j in 0..d {
                let dqj = z[j] - w[j];
                let dpj = z[d + j] - w[d + j];
                total += dqi * self.gamma[i * d + j] * dqj + dpi * self.gamma_inv[i * d + j] * dpj;
            }
        }
        total
    }

    fn matches(&self, other: &WidthMatrix) -> bool {
        if self.dim != other.dim {
            return false;
        }
        let scale = self.gamma.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.gamma
            .iter()
            .zip(&other.gamma)
            .all(|(a, b)| (a - b).abs() <= WIDTH_MATCH_TOL * scale)
    }
}

/// Frozen Gaussian `g_z^gamma(x) = (det gamma / (pi hbar)^D)^{1/4}
/// exp{[-(x-q)^T gamma (x-q)/2 + i p^T (x-q)] / hbar}`.
#[derive(Debug, Clone)]
pub struct GaussianWavepacket {
    center: Vec<f64>,
    width: Arc<WidthMatrix>,
    hbar: f64,
}

impl GaussianWavepacket {
    pub fn new(q: &[f64], p: &[f64], width: WidthMatrix, hbar: f64) -> Result<Self> {
        Self::with_shared_width(q, p, Arc::new(width), hbar)
    }

    pub fn with_shared_width(
        q: &[f64],
        p: &[f64],
        width: Arc<WidthMatrix>,
        hbar: f64,
    ) -> Result<Self> {
        let d = width.dim();
        if q.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q.len(),
            });
        }
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        if q.iter().chain(p).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "wavepacket centre is not finite".into(),
            ));
        }
        let mut center = q.to_vec();
        center.extend_from_slice(p);
        Ok(Self {
            center,
            width,
            hbar,
        })
    }

    /// One-dimensional wavepacket with scalar width.
    pub fn new_1d(q: f64, p: f64, gamma: f64, hbar: f64) -> Result<Self> {
        Self::new(&[q], &[p], WidthMatrix::scalar(1, gamma)?, hbar)
    }

    /// Same width and hbar, different centre.
    pub fn recentered(&self, z: &[f64]) -> Result<Self> {
        let d = self.dim();
        if z.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: z.len(),
            });
        }
        Self::with_shared_width(&z[..d], &z[d..], self.width.clone(), self.hbar)
    }

    pub fn dim(&self) -> usize {
        self.width.dim()
    }

    /// `z0 = (q0, p0)`.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn q(&self) -> &[f64] {
        &self.center[..self.dim()]
    }

    pub fn p(&self) -> &[f64] {
        &self.center[self.dim()..]
    }

    pub fn width(&self) -> &WidthMatrix {
        &self.width
    }

    pub fn shared_width(&self) -> Arc<WidthMatrix> {
        self.width.clone()
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn normalization(&self) -> f64 {
        normalization(self.width.det(), self.dim(), self.hbar)
    }

    /// Standard deviation of `|g|^2` along x in one dimension.
    pub fn position_spread(&self) -> f64 {
        let g = self.width.as_scalar().unwrap_or(self.width.gamma()[0]);
        (self.hbar / (2.0 * g)).sqrt()
    }

    /// Pointwise value at `x` (length `D`).
    pub fn value(&self, x: &[f64]) -> Complex64 {
        let d = self.dim();
        let (q, p) = (self.q(), self.p());
        let g = self.width.gamma();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..d {
            let ui = x[i] - q[i];
            lin += p[i] * ui;
            for j in 0..d {
                quad += ui * g[i * d + j] * (x[j] - q[j]);
            }
        }
        Complex64::from_polar(
            self.normalization() * (-0.5 * quad / self.hbar).exp(),
            lin / self.hbar,
        )
    }
}

#[inline]
fn normalization(det: f64, dim: usize, hbar: f64) -> f64 {
    (det / (PI * hbar).powi(dim as i32)).powf(0.25)
}

/// `<g_z|g_w>` for two frozen Gaussians sharing `width` and `hbar`:
/// `exp[-(z-w)^T Sigma0 (z-w)/(4 hbar)] exp[i (p_z+p_w)^T (q_z-q_w)/(2 hbar)]`.
#[inline]
pub fn overlap_points(width: &WidthMatrix, hbar: f64, z: &[f64], w: &[f64]) -> Complex64 {
    let d = width.dim();
    let quad = width.quadratic_form(z, w);
    let mut phase = 0.0;
    for i in 0..d {
        phase += (z[d + i] + w[d + i]) * (z[i] - w[i]);
    }
    Complex64::from_polar((-quad / (4.0 * hbar)).exp(), phase / (2.0 * hbar))
}

/// `<bra|ket>` for two frozen Gaussians with the same dimension, width and hbar.
pub fn gaussian_overlap(bra: &GaussianWavepacket, ket: &GaussianWavepacket) -> Result<Complex64> {
    if bra.dim() != ket.dim() {
        return Err(Error::DimensionMismatch {
            expected: ket.dim(),
            got: bra.dim(),
        });
    }
    if !bra.width.matches(&ket.width) {
        return Err(Error::InvalidArgument(
            "overlap requires identical width matrices".into(),
        ));
    }
    if (bra.hbar - ket.hbar).abs() > 1e-15 * ket.hbar {
        return Err(Error::InvalidArgument(
            "overlap requires identical hbar".into(),
        ));
    }
    Ok(overlap_points(
        &ket.width,
        ket.hbar,
        bra.center(),
        ket.center(),
    ))
}

/// Half-width (in x) beyond which `|g| / max|g| < e^{-40}`.
#[inline]
pub(crate) fn gaussian_support(gamma: f64, hbar: f64) -> f64 {
    (80.0 * hbar / gamma).sqrt()
}

/// Adds `coeff * g_{(q,p)}(x)` onto `out` for a one-dimensional Gaussian with
/// scalar width. Returns the squared-norm fraction lying outside the grid.
pub(crate) fn accumulate_gaussian(
    grid: &SpatialGrid,
    q: f64,
    p: f64,
    gamma: f64,
    hbar: f64,
    coeff: Complex64,
    out: &mut [Complex64],
) -> f64 {
    // Values are re-anchored with a direct exponential every block so the
    // multiplicative recurrence never runs long enough to drift.
    const BLOCK: usize = 64;
    let dx = grid.dx();
    let (lo, hi) = grid.window(q, gaussian_support(gamma, hbar));
    let norm = normalization(gamma, 1, hbar);
    let ratio_step = (-gamma * dx * dx / hbar).exp();
    let mut k = lo;
    while k < hi {
        let end = (k + BLOCK).min(hi);
        let u = grid.x(k) - q;
        let mut value =
            coeff * Complex64::from_polar(norm * (-0.5 * gamma * u * u / hbar).exp(), p * u / hbar);
        let mut ratio = Complex64::from_polar(
            (-gamma * (2.0 * u * dx + dx * dx) / (2.0 * hbar)).exp(),
            p * dx / hbar,
        );
        for slot in &mut out[k..end] {
            *slot += value;
            value *= ratio;
            ratio *= ratio_step;
        }
        k = end;
    }
    outside_mass(grid, q, gamma, hbar)
}

/// Fraction of `|g|^2` (centre q, scalar width) outside `[x_min, x_max)`.
pub(crate) fn outside_mass(grid: &SpatialGrid, q: f64, gamma: f64, hbar: f64) -> f64 {
    let sigma = (hbar / (2.0 * gamma)).sqrt();
    let six = 6.0 * sigma;
    if q - six >= grid.x_min() && q + six <= grid.x_max() {
        return 0.0;
    }
    let scale = std::f64::consts::SQRT_2 * sigma;
    0.5 * erfc((q - grid.x_min()) / scale) + 0.5 * erfc((grid.x_max() - q) / scale)
}

/// Samples a one-dimensional Gaussian on a grid. Higher dimensions are rejected.
pub fn evaluate_gaussian(g: &GaussianWavepacket, grid: &SpatialGrid) -> Result<GridWavefunction> {
    if g.dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grid evaluation is only available for D = 1, got D = {}",
            g.dim()
        )));
    }
    let gamma = g.width().gamma()[0];
    let mut psi = GridWavefunction::zeros(*grid);
    let loss = accumulate_gaussian(
        grid,
        g.q()[0],
        g.p()[0],
        gamma,
        g.hbar(),
        Complex64::new(1.0, 0.0),
        &mut psi.values,
    );
    let sigma = g.position_spread();
    if g.q()[0] - 6.0 * sigma < grid.x_min() || g.q()[0] + 6.0 * sigma > grid.x_max() {
        psi.warnings
            .push(GridWarning::Truncation { mass_loss: loss });
    }
    Ok(psi)
}

/// Which member of the normal family `rho_a` is used for sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeKind {
    /// `a = 2`, the Husimi density of the initial state.
    Husimi,
    /// `a = 4`, the normalised square root of the Husimi density.
    SqrtHusimi,
    /// General `a >= 2`.
    GeneralA(f64),
}

impl SchemeKind {
    pub fn a(&self) -> f64 {
        match *self {
            SchemeKind::Husimi => 2.0,
            SchemeKind::SqrtHusimi => 4.0,
            SchemeKind::GeneralA(a) => a,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SchemeKind::Husimi => "husimi".to_string(),
            SchemeKind::SqrtHusimi => "sqrt_husimi".to_string(),
            SchemeKind::GeneralA(a) => format!("rho_a={a}"),
        }
    }
}

/// Phase-space sampling density together with its importance weight `r(z)`,
/// chosen so that `r(z) rho(z) = <g_z|psi0>`.
#[derive(Debug, Clone)]
pub struct SamplingScheme {
    kind: SchemeKind,
    reference: GaussianWavepacket,
}

impl SamplingScheme {
    pub fn new(kind: SchemeKind, reference: GaussianWavepacket) -> Result<Self> {
        let a = kind.a();
        if !(a.is_finite() && a >= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling parameter a must be >= 2, got {a}"
            )));
        }
        Ok(Self { kind, reference })
    }

    pub fn husimi(reference: GaussianWavepacket) -> Self {
        Self {
            kind: SchemeKind::Husimi,
            reference,
        }
    }

    pub fn sqrt_husimi(reference: GaussianWavepacket) -> Self {
        Self {
            kind: SchemeKind::SqrtHusimi,
            reference,
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn a(&self) -> f64 {
        self.kind.a()
    }

    pub fn reference(&self) -> &GaussianWavepacket {
        &self.reference
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    /// `(z - z0)^T Sigma0 (z - z0) / hbar`.
    #[inline]
    fn scaled_distance(&self, z: &[f64]) -> f64 {
        self.reference
            .width()
            .quadratic_form(z, self.reference.center())
            / self.reference.hbar()
    }

    /// Density with respect to `dnu`: `(2/a)^D exp[-(z-z0)^T Sigma0 (z-z0)/(a hbar)]`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let a = self.a();
        (2.0 / a).powi(self.dim() as i32) * (-self.scaled_distance(z) / a).exp()
    }

    /// Importance weight `r(z) = <g_z|psi0> / rho(z)`.
    pub fn prefactor_r(&self, z: &[f64]) -> Result<Complex64> {
        let d = self.dim();
        let a = self.a();
        let dist = self.scaled_distance(z);
        if self.kind == SchemeKind::Husimi {
            let magnitude = (-dist / 4.0).exp();
            if magnitude < HUSIMI_OVERLAP_FLOOR {
                return Err(Error::WeightOverflow { magnitude });
            }
        }
        let z0 = self.reference.center();
        let mut phase = 0.0;
        for i in 0..d {
            phase += (z[d + i] + z0[d + i]) * (z[i] - z0[i]);
        }
        let magnitude = (a / 2.0).powi(d as i32) * (dist * (1.0 / a - 0.25)).exp();
        Ok(Complex64::from_polar(
            magnitude,
            phase / (2.0 * self.reference.hbar()),
        ))
    }

    /// Writes sample `index` of the stream identified by `seed` into `out`
    /// (length `2D`). The value depends only on `(seed, index)`.
    pub fn sample_into(&self, seed: u64, index: u64, out: &mut [f64]) {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let scale = (self.a() * self.reference.hbar() / 2.0).sqrt();
        let width = self.reference.width();
        let mut xi = [0.0f64; 16];
        let xi: &mut [f64] = if 2 * d <= xi.len() {
            &mut xi[..2 * d]
        } else {
            return self.sample_into_large(&mut rng, scale, out);
        };
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let z0 = self.reference.center();
        for i in 0..d {
            let mut dq = 0.0;
            let mut dp = 0.0;
            for j in 0..=i {
                dq += width.chol_inv[i * d + j] * xi[j];
                dp += width.chol[i * d + j] * xi[d + j];
            }
            out[i] = z0[i] + scale * dq;
            out[d + i] = z0[d + i] + scale * dp;
        }
    }

    fn sample_into_large(&self, rng: &mut ChaCha8Rng, scale: f64, out: &mut [f64]) {
        let d = self.dim();
        let width = self.reference.width();
        let xi: Vec<f64> = (0..2 * d).map(|_| StandardNormal.sample(rng)).collect();
        let z0 = self.reference.center();
        for i in 0..d {
            let mut dq = 0.0;
            let mut dp = 0.0;
            for j in 0..=i {
                dq += width.chol_inv[i * d + j] * xi[j];
                dp += width.chol[i * d + j] * xi[d + j];
            }
            out[i] = z0[i] + scale * dq;
            out[d + i] = z0[d + i] + scale * dp;
        }
    }

    /// Draws samples `0..n` of the stream `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PhaseSpaceSamples> {
        self.sample_range(0, n, seed)
    }

    /// Draws samples `start..start + n` of the stream `seed`.
    pub fn sample_range(&self, start: usize, n: usize, seed: u64) -> Result<PhaseSpaceSamples> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "at least one sample is required".into(),
            ));
        }
        let stride = 2 * self.dim();
        let mut data = vec![0.0; n * stride];
        for (i, chunk) in data.chunks_exact_mut(stride).enumerate() {
            self.sample_into(seed, (start + i) as u64, chunk);
        }
        Ok(PhaseSpaceSamples {
            dim: self.dim(),
            data,
        })
    }
}

/// Flat storage of phase-space points.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceSamples {
    dim: usize,
    data: Vec<f64>,
}

impl PhaseSpaceSamples {
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(points.len() * 2 * dim);
        for z in points {
            if z.len() != 2 * dim {
                return Err(Error::DimensionMismatch {
                    expected: 2 * dim,
                    got: z.len(),
                });
            }
            data.extend_from_slice(z);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        let s = 2 * self.dim;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(2 * self.dim)
    }

    pub fn extend(&mut self, other: &PhaseSpaceSamples) {
        assert_eq!(self.dim, other.dim);
        self.data.extend_from_slice(&other.data);
    }
}
