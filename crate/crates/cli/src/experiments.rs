//! One function per experiment. Each takes a validated config plus resolved
//! parameters and returns a [`Table`]; file handling lives in `app`.

use std::f64::consts::PI;
use std::sync::Arc;

use herman_kluk::analysis::{
    self, chebyshev_min_trajectories, clt_trajectory_estimate, find_peaks, fit_power_law, spectrum,
    spectrum_bin_width, variance_harmonic_sqrt_husimi, variance_rho_a_initial, ProjectionOptions,
    TrajectoryCountQuery,
};
use herman_kluk::hk::PartialSum;
use herman_kluk::reference::split_operator_autocorrelation;
use herman_kluk::{
    build_ensemble, evaluate_gaussian, harmonic_exact, split_operator_propagate,
    GaussianWavepacket, GridWarning, GridWavefunction, HkEnsemble, SchemeKind, SpatialGrid,
    WidthMatrix,
};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{Cell, Table};
use crate::CliError;

/// Relative intensity below which spectral maxima are not reported.
pub const PEAK_THRESHOLD: f64 = 1e-3;

fn analytic_initial(kind: SchemeKind, dim: usize, n: usize) -> Option<f64> {
    match kind {
        SchemeKind::Husimi => None,
        other => variance_rho_a_initial(other.a(), dim)
            .ok()
            .map(|v| (v / n as f64).sqrt()),
    }
}

fn weights(
    scheme: &herman_kluk::SamplingScheme,
    samples: &herman_kluk::PhaseSpaceSamples,
) -> Result<Vec<Complex64>, CliError> {
    samples
        .iter()
        .map(|z| scheme.prefactor_r(z).map_err(CliError::from_core))
        .collect()
}

/// Fails when more than `max_fraction` of the ensemble was flagged invalid.
fn check_invalid(ens: &HkEnsemble, max_fraction: f64) -> Result<(), CliError> {
    let bad = ens.invalid_count();
    if bad as f64 > max_fraction * ens.len() as f64 {
        return Err(CliError::Numerical(format!(
            "{bad} of {} trajectories hit a caustic or a non-finite force by t = {}",
            ens.len(),
            ens.time()
        )));
    }
    Ok(())
}

/// Keeps one note per scheme and warning kind, holding the worst value seen.
fn record_warnings(table: &mut Table, label: &str, psi: &GridWavefunction) {
    for w in &psi.warnings {
        let (kind, value) = match w {
            GridWarning::Truncation { mass_loss } => ("grid truncation, max mass loss", *mass_loss),
            GridWarning::EdgeMass { mass } => ("max probability at the grid edge", *mass),
            GridWarning::InvalidTrajectories { count } => {
                ("max invalid trajectories", *count as f64)
            }
        };
        let prefix = format!("{label}: {kind} ");
        let text = format!("{prefix}{value:e}");
        match table
            .notes
            .iter_mut()
            .find(|(k, v)| k == "warning" && v.starts_with(&prefix))
        {
            Some((_, v)) => {
                let old: f64 = v[prefix.len()..].parse().unwrap_or(0.0);
                if value > old {
                    *v = text;
                }
            }
            None => table.notes.push(("warning".to_string(), text)),
        }
    }
}

fn add_fit_columns(table: &mut Table, fits: &[(usize, Option<(f64, f64)>)]) {
    let ic = table.column("fit_c").expect("fit_c column");
    let is = table.column("fit_s").expect("fit_s column");
    for &(row, fit) in fits {
        if let Some((c, s)) = fit {
            table.rows[row][ic] = Cell::Float(c);
            table.rows[row][is] = Cell::Float(s);
        }
    }
}

fn fit(ns: &[usize], errors: &[f64]) -> Option<(f64, f64)> {
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    fit_power_law(&xs, errors).ok().map(|f| (f.c, f.s))
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialErrorParams {
    pub ladder: Vec<usize>,
    /// Independent runs (seeds `seed, seed + 1, ...`); the reported error is
    /// the root mean square over runs.
    pub repeats: usize,
}

/// L2 error of the sampled initial state for every prefix size in the ladder.
pub fn initial_error(cfg: &ExperimentConfig, p: &InitialErrorParams) -> Result<Table, CliError> {
    check_ladder(&p.ladder)?;
    if p.repeats == 0 {
        return Err(CliError::Config("repeats must be positive".into()));
    }
    let psi0 = cfg.initial_wavepacket()?;
    let n_max = *p.ladder.last().unwrap();
    let mut table = Table::new(&[
        "scheme",
        "N",
        "l2_error",
        "analytic_prediction",
        "fit_c",
        "fit_s",
    ]);
    for kind in cfg.schemes() {
        let scheme = cfg.sampling_scheme(kind)?;
        let mut sum_sq = vec![0.0; p.ladder.len()];
        for r in 0..p.repeats {
            let seed = cfg.run.seed.wrapping_add(r as u64);
            let samples = scheme.sample(n_max, seed).map_err(CliError::from_core)?;
            let w = weights(&scheme, &samples)?;
            let errors = analysis::initial_error(
                &psi0,
                &samples,
                &w,
                &p.ladder,
                &ProjectionOptions::default(),
            )
            .map_err(CliError::from_core)?;
            for (acc, e) in sum_sq.iter_mut().zip(errors) {
                *acc += e * e;
            }
        }
        let errors: Vec<f64> = sum_sq
            .iter()
            .map(|s| (s / p.repeats as f64).sqrt())
            .collect();
        let first = table.rows.len();
        for (&n, &e) in p.ladder.iter().zip(&errors) {
            table.push(vec![
                kind.label().into(),
                n.into(),
                e.into(),
                analytic_initial(kind, psi0.dim(), n).into(),
                Cell::Empty,
                Cell::Empty,
            ]);
        }
        let f = fit(&p.ladder, &errors);
        let rows: Vec<_> = (first..table.rows.len()).map(|r| (r, f)).collect();
        add_fit_columns(&mut table, &rows);
    }
    Ok(table)
}

fn check_ladder(ladder: &[usize]) -> Result<(), CliError> {
    if ladder.is_empty() || ladder[0] == 0 || ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(format!(
            "ladder must be a strictly increasing list of positive sizes, got {ladder:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DimSweepParams {
    pub d_max: usize,
    pub n: usize,
}

pub const MAX_SWEEP_DIM: usize = 8;

/// Initial error at fixed `N` for `D = 1..=d_max`. Every dimension uses the
/// first components of `q0` and `p0` and the scalar width of the config.
pub fn dim_sweep(cfg: &ExperimentConfig, p: &DimSweepParams) -> Result<Table, CliError> {
    if p.d_max == 0 || p.d_max > MAX_SWEEP_DIM {
        return Err(CliError::Config(format!(
            "d_max must lie in 1..={MAX_SWEEP_DIM}, got {}",
            p.d_max
        )));
    }
    if p.n == 0 {
        return Err(CliError::Config("N must be positive".into()));
    }
    let base = cfg.initial_wavepacket()?;
    let gamma = base
        .width()
        .as_scalar()
        .ok_or_else(|| CliError::Config("dim-sweep needs a scalar gamma".into()))?;
    let (q0, p0, hbar) = (base.q()[0], base.p()[0], base.hbar());
    let mut table = Table::new(&["D", "scheme", "N", "error", "analytic_prediction"]);
    for d in 1..=p.d_max {
        let width = WidthMatrix::scalar(d, gamma).map_err(CliError::from_core)?;
        let psi0 = GaussianWavepacket::with_shared_width(
            &vec![q0; d],
            &vec![p0; d],
            Arc::new(width),
            hbar,
        )
        .map_err(CliError::from_core)?;
        for kind in cfg.schemes() {
            let scheme = herman_kluk::SamplingScheme::new(kind, psi0.clone())
                .map_err(CliError::from_core)?;
            let samples = scheme
                .sample(p.n, cfg.run.seed)
                .map_err(CliError::from_core)?;
            let w = weights(&scheme, &samples)?;
            let e =
                analysis::initial_error(&psi0, &samples, &w, &[p.n], &ProjectionOptions::default())
                    .map_err(CliError::from_core)?[0];
            table.push(vec![
                d.into(),
                kind.label().into(),
                p.n.into(),
                e.into(),
                analytic_initial(kind, d, p.n).into(),
            ]);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct HarmonicErrorParams {
    pub n: usize,
    pub k_runs: usize,
    pub exact_classical: bool,
    pub max_invalid_fraction: f64,
}

/// Error against the closed-form solution at `t = k dt`, `k = 0..=n_steps`,
/// for one run and averaged over `k_runs` runs with seeds `seed + r`.
pub fn harmonic_error(cfg: &ExperimentConfig, p: &HarmonicErrorParams) -> Result<Table, CliError> {
    let h = cfg
        .harmonic()
        .ok_or_else(|| CliError::Config("harmonic-error needs a harmonic system".into()))?
        .clone();
    if cfg.dim() != 1 {
        return Err(CliError::Config(
            "harmonic-error works on a one-dimensional grid".into(),
        ));
    }
    if p.n == 0 || p.k_runs == 0 {
        return Err(CliError::Config("N and k_runs must be positive".into()));
    }
    let grid = cfg.spatial_grid()?;
    let psi0 = cfg.initial_wavepacket()?;
    let pot = cfg.potential()?;
    let gamma = psi0.width().gamma()[0];
    let dt = cfg.run.dt;
    let times: Vec<f64> = (0..=cfg.run.n_steps).map(|k| k as f64 * dt).collect();
    let refs: Vec<GridWavefunction> = times
        .iter()
        .map(|&t| harmonic_exact(&psi0, h.omega, h.m, t, &grid))
        .collect::<Result<_, _>>()
        .map_err(CliError::from_core)?;

    let mut table = Table::new(&[
        "t",
        "scheme",
        "error_single_run",
        "s_k",
        "rmse",
        "analytic_prediction",
    ]);
    for kind in cfg.schemes() {
        let scheme = cfg.sampling_scheme(kind)?;
        let mut first_run = vec![0.0; times.len()];
        let mut sum_sq = vec![0.0; times.len()];
        for r in 0..p.k_runs {
            let seed = cfg.run.seed.wrapping_add(r as u64);
            let mut ens =
                build_ensemble(&psi0, &scheme, &pot, p.n, seed).map_err(CliError::from_core)?;
            for (k, &t) in times.iter().enumerate() {
                if p.exact_classical {
                    ens.set_exact_harmonic_time(t)
                        .map_err(CliError::from_core)?;
                } else if k > 0 {
                    ens.propagate(dt, 1).map_err(CliError::from_core)?;
                    check_invalid(&ens, p.max_invalid_fraction)?;
                }
                let psi = ens
                    .estimate_wavefunction(&grid)
                    .map_err(CliError::from_core)?;
                record_warnings(&mut table, kind.label().as_str(), &psi);
                let e = analysis::l2_error(&psi, &refs[k]).map_err(CliError::from_core)?;
                if r == 0 {
                    first_run[k] = e;
                }
                sum_sq[k] += e * e;
            }
        }
        for (k, &t) in times.iter().enumerate() {
            let s_k = sum_sq[k] / p.k_runs as f64;
            let analytic = (kind == SchemeKind::SqrtHusimi).then(|| {
                (variance_harmonic_sqrt_husimi(gamma, h.m, h.omega, t) / p.n as f64).sqrt()
            });
            table.push(vec![
                t.into(),
                kind.label().into(),
                first_run[k].into(),
                s_k.into(),
                s_k.sqrt().into(),
                analytic.into(),
            ]);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseConvergeParams {
    pub ladder: Vec<usize>,
    pub checkpoints: Vec<usize>,
    pub repeats: usize,
    pub max_invalid_fraction: f64,
}

/// `||psi_N - psi_2N||` at each checkpoint, where the `2N` ensemble extends
/// the `N` ensemble. Errors are averaged over `repeats` seeds
/// (`seed, seed + 1, ...`) before fitting `c N^-s`.
pub fn morse_converge(cfg: &ExperimentConfig, p: &MorseConvergeParams) -> Result<Table, CliError> {
    check_ladder(&p.ladder)?;
    if cfg.dim() != 1 {
        return Err(CliError::Config(
            "morse-converge works on a one-dimensional grid".into(),
        ));
    }
    if p.checkpoints.is_empty()
        || p.checkpoints[0] == 0
        || p.checkpoints.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(CliError::Config(format!(
            "checkpoints must be strictly increasing positive step counts, got {:?}",
            p.checkpoints
        )));
    }
    if p.repeats == 0 {
        return Err(CliError::Config("repeats must be positive".into()));
    }
    let grid = cfg.spatial_grid()?;
    let psi0 = cfg.initial_wavepacket()?;
    let pot = cfg.potential()?;
    let dt = cfg.run.dt;
    let n_total = 2 * p.ladder.last().unwrap();

    // Prefix sizes needed: every N and 2N, in increasing order.
    let mut bounds: Vec<usize> = p.ladder.iter().flat_map(|&n| [n, 2 * n]).collect();
    bounds.sort_unstable();
    bounds.dedup();

    let mut table = Table::new(&["scheme", "checkpoint_steps", "N", "error", "fit_c", "fit_s"]);
    for kind in cfg.schemes() {
        let scheme = cfg.sampling_scheme(kind)?;
        // errors[c][i] summed over repeats.
        let mut errors = vec![vec![0.0; p.ladder.len()]; p.checkpoints.len()];
        for r in 0..p.repeats {
            let seed = cfg.run.seed.wrapping_add(r as u64);
            let mut ens =
                build_ensemble(&psi0, &scheme, &pot, n_total, seed).map_err(CliError::from_core)?;
            let mut done = 0;
            for (c, &steps) in p.checkpoints.iter().enumerate() {
                ens.propagate(dt, steps - done)
                    .map_err(CliError::from_core)?;
                done = steps;
                check_invalid(&ens, p.max_invalid_fraction)?;
                let prefixes = prefix_estimates(&ens, &grid, &bounds)?;
                for psi in &prefixes {
                    record_warnings(&mut table, kind.label().as_str(), psi);
                }
                let at = |n: usize| &prefixes[bounds.binary_search(&n).expect("bound")];
                for (i, &n) in p.ladder.iter().enumerate() {
                    errors[c][i] +=
                        analysis::l2_error(at(n), at(2 * n)).map_err(CliError::from_core)?;
                }
            }
        }
        for (c, &steps) in p.checkpoints.iter().enumerate() {
            let mean: Vec<f64> = errors[c].iter().map(|e| e / p.repeats as f64).collect();
            let first = table.rows.len();
            for (&n, &e) in p.ladder.iter().zip(&mean) {
                table.push(vec![
                    kind.label().into(),
                    steps.into(),
                    n.into(),
                    e.into(),
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
            let f = fit(&p.ladder, &mean);
            let rows: Vec<_> = (first..table.rows.len()).map(|r| (r, f)).collect();
            add_fit_columns(&mut table, &rows);
        }
    }
    Ok(table)
}

/// `psi_n` for every `n` in the increasing list `bounds`, sharing the sums
/// over common prefixes.
fn prefix_estimates(
    ens: &HkEnsemble,
    grid: &SpatialGrid,
    bounds: &[usize],
) -> Result<Vec<GridWavefunction>, CliError> {
    let mut out = Vec::with_capacity(bounds.len());
    let mut acc: Option<PartialSum> = None;
    let mut lo = 0;
    for &b in bounds {
        let seg = ens.partial_sum(grid, lo..b).map_err(CliError::from_core)?;
        let total = match acc.take() {
            Some(a) => a.merge(seg),
            None => seg,
        };
        out.push(total.clone().into_wavefunction(*grid, b));
        acc = Some(total);
        lo = b;
    }
    Ok(out)
}

/// Reference wavefunction at `n_steps * dt`: closed form for harmonic
/// systems, split-operator otherwise.
fn reference_state(
    cfg: &ExperimentConfig,
    grid: &SpatialGrid,
) -> Result<GridWavefunction, CliError> {
    let psi0 = cfg.initial_wavepacket()?;
    let t = cfg.run.n_steps as f64 * cfg.run.dt;
    match cfg.harmonic() {
        Some(h) => harmonic_exact(&psi0, h.omega, h.m, t, grid).map_err(CliError::from_core),
        None => {
            let start = evaluate_gaussian(&psi0, grid).map_err(CliError::from_core)?;
            split_operator_propagate(
                &start,
                &cfg.potential()?,
                cfg.run.dt,
                cfg.run.n_steps,
                psi0.hbar(),
            )
            .map_err(CliError::from_core)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityParams {
    pub n: usize,
    pub max_invalid_fraction: f64,
}

/// Position densities at `n_steps * dt` from both sampling schemes and from
/// the reference solution.
pub fn density(cfg: &ExperimentConfig, p: &DensityParams) -> Result<Table, CliError> {
    if cfg.dim() != 1 {
        return Err(CliError::Config(
            "density works on a one-dimensional grid".into(),
        ));
    }
    if p.n == 0 {
        return Err(CliError::Config("N must be positive".into()));
    }
    let grid = cfg.spatial_grid()?;
    let psi0 = cfg.initial_wavepacket()?;
    let pot = cfg.potential()?;
    let reference = reference_state(cfg, &grid)?;
    let mut table = Table::new(&[
        "x",
        "density_reference",
        "density_husimi",
        "density_sqrt_husimi",
        "abs_err_husimi",
        "abs_err_sqrt_husimi",
    ]);
    record_warnings(&mut table, "reference", &reference);
    let mut densities = Vec::new();
    for kind in [SchemeKind::Husimi, SchemeKind::SqrtHusimi] {
        let scheme = cfg.sampling_scheme(kind)?;
        let mut ens =
            build_ensemble(&psi0, &scheme, &pot, p.n, cfg.run.seed).map_err(CliError::from_core)?;
        if cfg.run.n_steps > 0 {
            ens.propagate(cfg.run.dt, cfg.run.n_steps)
                .map_err(CliError::from_core)?;
        }
        check_invalid(&ens, p.max_invalid_fraction)?;
        let psi = ens
            .estimate_wavefunction(&grid)
            .map_err(CliError::from_core)?;
        record_warnings(&mut table, kind.label().as_str(), &psi);
        let l2 = analysis::l2_error(&psi, &reference).map_err(CliError::from_core)?;
        table.note(
            &format!("l2_error_{}", kind.label()),
            crate::output::format_float(l2),
        );
        densities.push(psi.density());
    }
    let rho_ref = reference.density();
    for (k, x) in grid.points().enumerate() {
        let (h, s, r) = (densities[0][k], densities[1][k], rho_ref[k]);
        table.push(vec![
            x.into(),
            r.into(),
            h.into(),
            s.into(),
            (h - r).abs().into(),
            (s - r).abs().into(),
        ]);
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumParams {
    pub n: usize,
    pub damping_hwhm: Option<f64>,
    pub max_invalid_fraction: f64,
}

/// Line half width whose Gaussian time window is `exp(-4.5)` at the last
/// sample, i.e. `sigma_t = T / 3`. About one FFT bin.
pub fn default_damping(cfg: &ExperimentConfig) -> f64 {
    let t = cfg.run.n_steps.max(1) as f64 * cfg.run.dt;
    3.0 * (2.0 * 2f64.ln()).sqrt() * cfg.initial_state.hbar / t
}

/// Spectra from the HK and split-operator autocorrelations on the time
/// ladder `k dt`, `k = 0..=n_steps`. Uses the first configured scheme.
pub fn spectrum_table(cfg: &ExperimentConfig, p: &SpectrumParams) -> Result<Table, CliError> {
    if cfg.dim() != 1 {
        return Err(CliError::Config(
            "spectrum needs a one-dimensional system".into(),
        ));
    }
    if cfg.run.n_steps == 0 {
        return Err(CliError::Config("spectrum needs n_steps >= 1".into()));
    }
    if let Some(h) = p.damping_hwhm {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!(
                "damping must be positive, got {h}"
            )));
        }
    }
    let grid = cfg.spatial_grid()?;
    let psi0 = cfg.initial_wavepacket()?;
    let pot = cfg.potential()?;
    let hbar = psi0.hbar();
    let dt = cfg.run.dt;
    let kind = cfg.schemes()[0];
    let scheme = cfg.sampling_scheme(kind)?;
    let mut ens =
        build_ensemble(&psi0, &scheme, &pot, p.n, cfg.run.seed).map_err(CliError::from_core)?;
    let mut hk = Vec::with_capacity(cfg.run.n_steps + 1);
    hk.push(ens.autocorrelation());
    for _ in 0..cfg.run.n_steps {
        ens.propagate(dt, 1).map_err(CliError::from_core)?;
        hk.push(ens.autocorrelation());
    }
    check_invalid(&ens, p.max_invalid_fraction)?;
    let start = evaluate_gaussian(&psi0, &grid).map_err(CliError::from_core)?;
    let (reference, last) = split_operator_autocorrelation(&start, &pot, dt, cfg.run.n_steps, hbar)
        .map_err(CliError::from_core)?;
    let mut table = Table::new(&["energy", "intensity_hk", "intensity_reference"]);
    record_warnings(&mut table, "reference", &last);
    let s_hk = spectrum(&hk, dt, hbar, p.damping_hwhm).map_err(CliError::from_core)?;
    let s_ref = spectrum(&reference, dt, hbar, p.damping_hwhm).map_err(CliError::from_core)?;
    table.note("scheme", kind.label());
    table.note(
        "hk_autocorrelation_t0_re",
        crate::output::format_float(hk[0].re),
    );
    table.note(
        "hk_autocorrelation_t0_im",
        crate::output::format_float(hk[0].im),
    );
    table.note(
        "bin_width",
        crate::output::format_float(spectrum_bin_width(hk.len(), dt, hbar)),
    );
    // Strongest first: sampling noise and window ringing give many weak
    // local maxima that would crowd an energy-ordered list.
    let list = |pts: &[analysis::SpectrumPoint]| {
        let mut peaks: Vec<_> = find_peaks(pts, PEAK_THRESHOLD)
            .into_iter()
            .filter(|q| q.energy > 0.0)
            .collect();
        peaks.sort_by(|a, b| b.intensity.total_cmp(&a.intensity));
        peaks
            .iter()
            .take(10)
            .map(|q| crate::output::format_float(q.energy))
            .collect::<Vec<_>>()
            .join(" ")
    };
    table.note("peaks_hk", list(&s_hk));
    table.note("peaks_reference", list(&s_ref));
    for (a, b) in s_hk.iter().zip(&s_ref) {
        table.push(vec![
            a.energy.into(),
            a.intensity.into(),
            b.intensity.into(),
        ]);
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Plan {
    pub sigma2: f64,
    pub epsilon: f64,
    pub p: f64,
    pub chebyshev: u64,
    /// `None` when `p >= 1/2`.
    pub clt: Option<u64>,
    pub clt_applicable: bool,
}

pub fn plan(sigma2: f64, epsilon: f64, p: f64) -> Result<Plan, CliError> {
    let q = TrajectoryCountQuery::new(sigma2, epsilon, p)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let clt = clt_trajectory_estimate(&q);
    Ok(Plan {
        sigma2,
        epsilon,
        p,
        chebyshev: chebyshev_min_trajectories(&q),
        clt,
        clt_applicable: clt.is_some(),
    })
}

/// Largest harmonic sqrt-Husimi variance over one period, sampled finely.
pub fn max_harmonic_variance(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    let h = cfg
        .harmonic()
        .ok_or_else(|| CliError::Config("deriving sigma2 needs a harmonic system".into()))?;
    let gamma = cfg
        .width()
        .ok()
        .and_then(|w| w.as_scalar())
        .filter(|_| cfg.dim() == 1)
        .ok_or_else(|| CliError::Config("deriving sigma2 needs D = 1 and a scalar gamma".into()))?;
    let period = PI / h.omega;
    Ok((0..=1000)
        .map(|k| variance_harmonic_sqrt_husimi(gamma, h.m, h.omega, k as f64 * period / 1000.0))
        .fold(f64::NEG_INFINITY, f64::max))
}
