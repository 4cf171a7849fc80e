//! L2 distance between a Monte Carlo superposition of frozen Gaussians and the
//! initial Gaussian, in any dimension and without a spatial grid.
//!
//! The error vector is expanded in the number basis built on `psi0`:
//! `<n|g_z> = <psi0|g_z> prod_d beta_d^{n_d} / sqrt(n_d!)`, where `beta` is the
//! complex displacement of `z` from `z0` in the eigenbasis of gamma. Each sample
//! is expanded up to its own total degree `K_j`, chosen so that the discarded
//! squared norm `P(Poisson(|beta_j|^2) > K_j)` is below a tolerance. The
//! discarded part is added back on the diagonal, where it is exact in
//! expectation because `<n|psi0> = 0` for every `n != 0`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase_space::{overlap_points, GaussianWavepacket, PhaseSpaceSamples};

/// Options for [`initial_error_ladder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Bound on the squared norm discarded per sample, relative to `|c_j|^2`.
    /// Samples truncated at different degrees leave cross terms behind, so
    /// the relative error of the result grows like the square root of this
    /// bound (about 1e-5 at the default).
    pub tail_tolerance: f64,
    /// Upper limit on the total degree kept for any sample.
    pub max_degree: usize,
    /// Samples per reduction leaf.
    pub chunk: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tail_tolerance: 1e-7,
            max_degree: 64,
            chunk: 1024,
        }
    }
}

/// Multi-indices of total degree `<= k` in graded order, each stored with the
/// index of its parent (one lower in some coordinate) and the step factor.
struct IndexTable {
    parent: Vec<u32>,
    axis: Vec<u8>,
    inv_sqrt: Vec<f64>,
    /// `offsets[k]` = number of indices of total degree `< k`.
    offsets: Vec<usize>,
}

impl IndexTable {
    fn new(dim: usize, max_degree: usize) -> Self {
        // Flat storage of the multi-indices, `dim` entries each.
        let mut indices: Vec<u16> = vec![0; dim];
        let mut parent = vec![0u32];
        let mut axis = vec![0u8];
        let mut inv_sqrt = vec![1.0];
        let mut offsets = vec![0, 1];
        for degree in 1..=max_degree {
            for p in offsets[degree - 1]..offsets[degree] {
                let base = indices[p * dim..(p + 1) * dim].to_vec();
                // Only extend along axes at or after the last nonzero one so
                // every multi-index is generated exactly once.
                let last = base.iter().rposition(|&v| v > 0).unwrap_or(0);
                for d in last..dim {
                    let mut next = base.clone();
                    next[d] += 1;
                    parent.push(p as u32);
                    axis.push(d as u8);
                    inv_sqrt.push(1.0 / (next[d] as f64).sqrt());
                    indices.extend_from_slice(&next);
                }
            }
            offsets.push(parent.len());
        }
        Self {
            parent,
            axis,
            inv_sqrt,
            offsets,
        }
    }

    fn len_to_degree(&self, k: usize) -> usize {
        self.offsets[k + 1]
    }
}

/// Smallest `k <= cap` with `P(Poisson(mu) > k) <= tol`, and that tail.
fn poisson_cutoff(mu: f64, tol: f64, cap: usize) -> (usize, f64) {
    if mu == 0.0 {
        return (0, 0.0);
    }
    let mut term = (-mu).exp();
    if term < 1e-250 {
        // The recurrence would underflow; search upward from the mode.
        let mut k = (mu.floor() as usize).min(cap);
        loop {
            let tail = statrs::function::gamma::gamma_lr(k as f64 + 1.0, mu);
            if tail <= tol || k >= cap {
                return (k, tail);
            }
            k += 1;
        }
    }
    let mut cdf = term;
    let mut k = 0;
    loop {
        let tail = (1.0 - cdf).max(0.0);
        if tail <= tol || k == cap {
            if k == cap {
                let tail = statrs::function::gamma::gamma_lr(k as f64 + 1.0, mu);
                return (k, tail);
            }
            return (k, tail);
        }
        k += 1;
        term *= mu / k as f64;
        cdf += term;
    }
}

struct Leaf {
    coeffs: Vec<Complex64>,
    tail: f64,
}

impl Leaf {
    fn merge(mut self, other: Leaf) -> Leaf {
        if other.coeffs.len() > self.coeffs.len() {
            return other.merge(self);
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        self.tail += other.tail;
        self
    }
}

fn tree<F: Fn(usize) -> Leaf + Sync>(lo: usize, hi: usize, leaf: &F) -> Leaf {
    if hi - lo == 1 {
        return leaf(lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(|| tree(lo, mid, leaf), || tree(mid, hi, leaf));
    a.merge(b)
}

/// `||(1/n) sum_{j<n} w_j g_{z_j} - psi0||` for every `n` in `ladder`, where the
/// ensembles are prefixes of `samples`. `weights[j]` multiplies `g_{z_j}`.
pub fn initial_error_ladder(
    psi0: &GaussianWavepacket,
    samples: &PhaseSpaceSamples,
    weights: &[Complex64],
    ladder: &[usize],
    opts: &ProjectionOptions,
) -> Result<Vec<f64>> {
    check_ladder(psi0, samples, weights, ladder)?;
    let d = psi0.dim();
    if opts.tail_tolerance.is_nan() || opts.tail_tolerance <= 0.0 || opts.chunk == 0 {
        return Err(Error::InvalidArgument("invalid projection options".into()));
    }

    let width = psi0.width();
    let hbar = psi0.hbar();
    let z0 = psi0.center();
    let lambdas = width.eigenvalues();
    let vecs = width.eigenvectors();

    // Displacements, coefficients and cutoffs per sample.
    let prepare = |j: usize| -> (Vec<Complex64>, Complex64, usize, f64) {
        let z = samples.get(j);
        let mut beta = vec![Complex64::new(0.0, 0.0); d];
        let mut norm = 0.0;
        for (e, b) in beta.iter_mut().enumerate() {
            let mut dq = 0.0;
            let mut dp = 0.0;
            for i in 0..d {
                dq += vecs[i * d + e] * (z[i] - z0[i]);
                dp += vecs[i * d + e] * (z[d + i] - z0[d + i]);
            }
            let sl = lambdas[e].sqrt();
            *b = Complex64::new(sl * dq, dp / sl) / (2.0 * hbar).sqrt();
            norm += b.norm_sqr();
        }
        let coeff = weights[j] * overlap_points(width, hbar, z0, z);
        let (k, tail) = poisson_cutoff(norm, opts.tail_tolerance, opts.max_degree);
        (beta, coeff, k, tail * weights[j].norm_sqr())
    };

    let mut max_k = 0;
    for j in 0..*ladder.last().unwrap() {
        let z = samples.get(j);
        let mu = width.quadratic_form(z, z0) / (2.0 * hbar);
        max_k = max_k.max(poisson_cutoff(mu, opts.tail_tolerance, opts.max_degree).0);
    }
    let table = IndexTable::new(d, max_k);

    let segment = |lo: usize, hi: usize| -> Leaf {
        let n_chunks = (hi - lo).div_ceil(opts.chunk);
        let leaf = |c: usize| {
            let start = lo + c * opts.chunk;
            let end = (start + opts.chunk).min(hi);
            let mut coeffs: Vec<Complex64> = Vec::new();
            let mut scratch: Vec<Complex64> = Vec::new();
            let mut tail = 0.0;
            for j in start..end {
                let (beta, coeff, k, t) = prepare(j);
                tail += t;
                let len = table.len_to_degree(k);
                if coeffs.len() < len {
                    coeffs.resize(len, Complex64::new(0.0, 0.0));
                }
                if scratch.len() < len {
                    scratch.resize(len, Complex64::new(0.0, 0.0));
                }
                scratch[0] = coeff;
                coeffs[0] += coeff;
                for i in 1..len {
                    let v = scratch[table.parent[i] as usize]
                        * beta[table.axis[i] as usize]
                        * table.inv_sqrt[i];
                    scratch[i] = v;
                    coeffs[i] += v;
                }
            }
            Leaf { coeffs, tail }
        };
        tree(0, n_chunks, &leaf)
    };

    let mut errors = Vec::with_capacity(ladder.len());
    let mut total = Leaf {
        coeffs: Vec::new(),
        tail: 0.0,
    };
    let mut lo = 0;
    for &n in ladder {
        total = total.merge(segment(lo, n));
        lo = n;
        let scale = 1.0 / n as f64;
        let mut sq = 0.0;
        for (i, c) in total.coeffs.iter().enumerate() {
            let mut v = c * scale;
            if i == 0 {
                v -= 1.0;
            }
            sq += v.norm_sqr();
        }
        if total.coeffs.is_empty() {
            sq = 1.0;
        }
        sq += total.tail * scale * scale;
        errors.push(sq.sqrt());
    }
    Ok(errors)
}

/// Same result as [`initial_error_ladder`] from pairwise Gaussian overlaps,
/// `O(N^2 D)` work but no basis truncation. Rows of the Gram matrix are summed
/// independently, so the result does not depend on the thread count.
pub fn initial_error_ladder_pairwise(
    psi0: &GaussianWavepacket,
    samples: &PhaseSpaceSamples,
    weights: &[Complex64],
    ladder: &[usize],
) -> Result<Vec<f64>> {
    check_ladder(psi0, samples, weights, ladder)?;
    let d = psi0.dim();
    let n = *ladder.last().unwrap();
    let hbar = psi0.hbar();
    let width = psi0.width();
    let lambdas = width.eigenvalues();
    let vecs = width.eigenvectors();
    // Coordinates in which Sigma0 is the identity: u = sqrt(lambda) V^T q,
    // v = V^T p / sqrt(lambda), both scaled by 1/sqrt(2 hbar). Then
    // <g_z|g_w> = exp(-|dz|^2 / 2) exp(i sum (v_z + v_w)(u_z - u_w)).
    let scale = 1.0 / (2.0 * hbar).sqrt();
    let mut coords = vec![0.0; 2 * d * n];
    for j in 0..n {
        let z = samples.get(j);
        let out = &mut coords[2 * d * j..2 * d * (j + 1)];
        for e in 0..d {
            let (mut q, mut p) = (0.0, 0.0);
            for i in 0..d {
                q += vecs[i * d + e] * z[i];
                p += vecs[i * d + e] * z[d + i];
            }
            let sl = lambdas[e].sqrt();
            out[e] = sl * q * scale;
            out[d + e] = p / sl * scale;
        }
    }
    let coords = &coords;
    // r_j = Re(conj(w_j) sum_{k<j} w_k <g_j|g_k>).
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let a = &coords[2 * d * j..2 * d * (j + 1)];
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..j {
                let b = &coords[2 * d * k..2 * d * (k + 1)];
                let mut dist = 0.0;
                let mut phase = 0.0;
                for e in 0..d {
                    let du = a[e] - b[e];
                    let dv = a[d + e] - b[d + e];
                    dist += du * du + dv * dv;
                    phase += (a[d + e] + b[d + e]) * du;
                }
                acc += weights[k] * Complex64::from_polar((-0.5 * dist).exp(), phase);
            }
            (weights[j].conj() * acc).re
        })
        .collect();
    let z0 = psi0.center();
    let mut errors = Vec::with_capacity(ladder.len());
    let mut gram = 0.0;
    let mut cross = Complex64::new(0.0, 0.0);
    let mut lo = 0;
    for &m in ladder {
        for j in lo..m {
            gram += weights[j].norm_sqr() + 2.0 * rows[j];
            cross += weights[j] * overlap_points(width, hbar, z0, samples.get(j));
        }
        lo = m;
        let mf = m as f64;
        let sq = gram / (mf * mf) - 2.0 * cross.re / mf + 1.0;
        errors.push(sq.max(0.0).sqrt());
    }
    Ok(errors)
}

/// Largest basis size for which [`initial_error`] uses the projection.
const MAX_PROJECTION_BASIS: f64 = 4.0e6;

/// Initial error over a ladder of prefix sizes, choosing between the
/// number-basis projection and the pairwise sum by estimated cost. The degree
/// cap in `opts` is raised as needed when the projection is chosen.
pub fn initial_error(
    psi0: &GaussianWavepacket,
    samples: &PhaseSpaceSamples,
    weights: &[Complex64],
    ladder: &[usize],
    opts: &ProjectionOptions,
) -> Result<Vec<f64>> {
    check_ladder(psi0, samples, weights, ladder)?;
    let d = psi0.dim();
    let n = *ladder.last().unwrap();
    let width = psi0.width();
    let z0 = psi0.center();
    let hbar = psi0.hbar();
    let basis = |k: usize| binomial(k + d, d);
    let mut max_k = 0;
    let mut projection_work = 0.0;
    for j in 0..n {
        let mu = width.quadratic_form(samples.get(j), z0) / (2.0 * hbar);
        let (k, _) = poisson_cutoff(mu, opts.tail_tolerance, usize::MAX);
        max_k = max_k.max(k);
        projection_work += basis(k);
    }
    let pairwise_work = 0.5 * (n as f64).powi(2) * (4.0 + d as f64);
    if basis(max_k) > MAX_PROJECTION_BASIS || projection_work > pairwise_work {
        initial_error_ladder_pairwise(psi0, samples, weights, ladder)
    } else {
        let opts = ProjectionOptions {
            max_degree: opts.max_degree.max(max_k),
            ..*opts
        };
        initial_error_ladder(psi0, samples, weights, ladder, &opts)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_ladder(
    psi0: &GaussianWavepacket,
    samples: &PhaseSpaceSamples,
    weights: &[Complex64],
    ladder: &[usize],
) -> Result<()> {
    let d = psi0.dim();
    if samples.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: samples.dim(),
        });
    }
    if weights.len() != samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} samples",
            weights.len(),
            samples.len()
        )));
    }
    if ladder.is_empty() || ladder.windows(2).any(|w| w[0] >= w[1]) || ladder[0] == 0 {
        return Err(Error::InvalidArgument(
            "ladder must be a non-empty strictly increasing list of positive sizes".into(),
        ));
    }
    if *ladder.last().unwrap() > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "ladder needs {} samples, {} given",
            ladder.last().unwrap(),
            samples.len()
        )));
    }
    Ok(())
}

/// Exact `O(n^2)` evaluation of `||(1/n) sum_j w_j g_{z_j} - psi0||` from
/// pairwise Gaussian overlaps.
pub fn initial_error_pairwise(
    psi0: &GaussianWavepacket,
    samples: &PhaseSpaceSamples,
    weights: &[Complex64],
) -> Result<f64> {
    if weights.len() != samples.len() || samples.dim() != psi0.dim() {
        return Err(Error::InvalidArgument(
            "samples, weights and psi0 disagree".into(),
        ));
    }
    let width = psi0.width();
    let hbar = psi0.hbar();
    let z0 = psi0.center();
    let n = samples.len();
    let mut gram = 0.0;
    for (j, wj) in weights.iter().enumerate() {
        let zj = samples.get(j);
        let mut row = Complex64::new(0.0, 0.0);
        for (k, wk) in weights.iter().enumerate() {
            row += wk * overlap_points(width, hbar, zj, samples.get(k));
        }
        gram += (wj.conj() * row).re;
    }
    let mut cross = Complex64::new(0.0, 0.0);
    for (j, wj) in weights.iter().enumerate() {
        cross += wj * overlap_points(width, hbar, z0, samples.get(j));
    }
    let nf = n as f64;
    let sq = gram / (nf * nf) - 2.0 * cross.re / nf + 1.0;
    Ok(sq.max(0.0).sqrt())
}
