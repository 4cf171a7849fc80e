//! Statistical properties of the Monte Carlo estimator in a harmonic
//! potential, where the exact wavefunction is known.

use std::f64::consts::PI;

use herman_kluk::analysis::{fit_power_law, l2_error, variance_harmonic_sqrt_husimi};
use herman_kluk::{
    build_ensemble, harmonic_exact, GaussianWavepacket, Potential, SamplingScheme, SpatialGrid,
};

const GAMMA: f64 = 2.0;

fn setup() -> (GaussianWavepacket, SamplingScheme, Potential, SpatialGrid) {
    let psi0 = GaussianWavepacket::new_1d(-1.0, 0.0, GAMMA, 1.0).unwrap();
    let scheme = SamplingScheme::sqrt_husimi(psi0.clone());
    let pot = Potential::harmonic(1, 1.0, 1.0);
    let grid = SpatialGrid::new(-10.0, 10.0, 1024).unwrap();
    (psi0, scheme, pot, grid)
}

#[test]
fn n_versus_2n_difference_respects_bound() {
    let (psi0, scheme, pot, grid) = setup();
    let (n, reps, t) = (1024, 50, PI / 2.0);
    let v = variance_harmonic_sqrt_husimi(GAMMA, 1.0, 1.0, t);
    let bound = 1.5 * v / n as f64;
    let (mut nested, mut independent) = (0.0, 0.0);
    for r in 0..reps {
        let mut big = build_ensemble(&psi0, &scheme, &pot, 2 * n, r).unwrap();
        big.set_exact_harmonic_time(t).unwrap();
        let psi_2n = big.estimate_wavefunction(&grid).unwrap();
        let prefix = big.estimate_prefix(&grid, n).unwrap();
        nested += l2_error(&prefix, &psi_2n).unwrap().powi(2);

        let mut other = build_ensemble(&psi0, &scheme, &pot, n, 1000 + r).unwrap();
        other.set_exact_harmonic_time(t).unwrap();
        let psi_n = other.estimate_wavefunction(&grid).unwrap();
        independent += l2_error(&psi_n, &psi_2n).unwrap().powi(2);
    }
    nested /= reps as f64;
    independent /= reps as f64;
    assert!(nested < 1.2 * bound, "nested {nested} vs bound {bound}");
    assert!(
        independent < 1.2 * bound,
        "independent {independent} vs bound {bound}"
    );
    // Independent ensembles saturate the bound; nesting halves the variance
    // of the difference to V / 2N.
    assert!(
        independent > 0.7 * bound,
        "independent {independent} vs bound {bound}"
    );
    assert!(
        (nested / (0.5 * v / n as f64) - 1.0).abs() < 0.35,
        "nested {nested}"
    );
}

#[test]
fn converged_norm_is_one() {
    let (psi0, scheme, pot, grid) = setup();
    let mut ens = build_ensemble(&psi0, &scheme, &pot, 1 << 16, 3).unwrap();
    for t in [0.0, 0.7, PI / 2.0, 2.0, PI] {
        ens.set_exact_harmonic_time(t).unwrap();
        let norm = ens.estimate_wavefunction(&grid).unwrap().norm();
        assert!((norm - 1.0).abs() < 0.01, "t = {t}: norm {norm}");
    }
}

#[test]
fn variance_peaks_when_packet_crosses_minimum() {
    let (psi0, scheme, pot, grid) = setup();
    let steps = 200;
    let dt = 2.0 * PI / steps as f64;
    let mut ens = build_ensemble(&psi0, &scheme, &pot, 4096, 5).unwrap();
    // Per-sample estimate of V[psi(t)] = E|phi|^2 - |psi|^2 along the
    // integrated trajectories.
    let mut variance = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if k > 0 {
            ens.propagate(dt, 1).unwrap();
        }
        let second: f64 = (0..ens.len())
            .map(|j| ens.coefficient(j).norm_sqr())
            .sum::<f64>()
            / ens.len() as f64;
        let norm = ens.estimate_wavefunction(&grid).unwrap().norm_sqr();
        variance.push(second - norm);
    }
    for (k, v) in variance.iter().enumerate() {
        let exact = variance_harmonic_sqrt_husimi(GAMMA, 1.0, 1.0, k as f64 * dt);
        assert!((v / exact - 1.0).abs() < 0.15, "step {k}: {v} vs {exact}");
    }
    let argmax = |r: std::ops::Range<usize>| {
        r.max_by(|&a, &b| variance[a].total_cmp(&variance[b]))
            .unwrap()
    };
    let argmin = |r: std::ops::Range<usize>| {
        r.min_by(|&a, &b| variance[a].total_cmp(&variance[b]))
            .unwrap()
    };
    // q_t = -cos t crosses zero at steps 50 and 150; turning points at 0,
    // 100 and 200.
    let (m1, m2) = (argmax(0..100), argmax(100..201));
    assert!(m1.abs_diff(50) <= 1, "first maximum at step {m1}");
    assert!(m2.abs_diff(150) <= 1, "second maximum at step {m2}");
    let turn = argmin(25..176);
    assert!(turn.abs_diff(100) <= 1, "minimum at step {turn}");
}

#[test]
fn harmonic_rmse_decays_as_inverse_square_root() {
    let (psi0, scheme, pot, grid) = setup();
    let t = 1.0;
    let exact = harmonic_exact(&psi0, 1.0, 1.0, t, &grid).unwrap();
    let ladder = [128usize, 256, 512, 1024, 2048, 4096, 8192];
    let runs = 20;
    let mut sum_sq = vec![0.0; ladder.len()];
    for r in 0..runs {
        let mut ens =
            build_ensemble(&psi0, &scheme, &pot, *ladder.last().unwrap(), 100 + r).unwrap();
        ens.set_exact_harmonic_time(t).unwrap();
        for (acc, &n) in sum_sq.iter_mut().zip(&ladder) {
            *acc += l2_error(&ens.estimate_prefix(&grid, n).unwrap(), &exact)
                .unwrap()
                .powi(2);
        }
    }
    let rmse: Vec<f64> = sum_sq.iter().map(|s| (s / runs as f64).sqrt()).collect();
    let ns: Vec<f64> = ladder.iter().map(|&n| n as f64).collect();
    let fit = fit_power_law(&ns, &rmse).unwrap();
    assert!((0.45..=0.55).contains(&fit.s), "s = {}", fit.s);
    let c = variance_harmonic_sqrt_husimi(GAMMA, 1.0, 1.0, t).sqrt();
    assert!((fit.c / c - 1.0).abs() < 0.25, "c = {} vs {c}", fit.c);
}
