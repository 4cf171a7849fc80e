//! Classical trajectories with action and stability matrix, advanced by
//! velocity Verlet.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User supplied potential: value, gradient and row-major Hessian.
#[derive(Clone)]
pub struct CustomPotential {
    pub dim: usize,
    pub mass: f64,
    pub value: Arc<ScalarFn>,
    pub gradient: Arc<VectorFn>,
    pub hessian: Arc<VectorFn>,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("dim", &self.dim)
            .field("mass", &self.mass)
            .finish_non_exhaustive()
    }
}

/// Morse oscillator parametrised by its anharmonicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseParams {
    pub chi: f64,
    pub omega_eq: f64,
    pub v_eq: f64,
    pub q_eq: f64,
    pub mass: f64,
    pub hbar: f64,
}

impl MorseParams {
    pub fn new(chi: f64, omega_eq: f64, v_eq: f64, q_eq: f64) -> Result<Self> {
        let params = Self {
            chi,
            omega_eq,
            v_eq,
            q_eq,
            mass: 1.0,
            hbar: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("chi", self.chi)?;
        positive("omega_eq", self.omega_eq)?;
        positive("mass", self.mass)?;
        positive("hbar", self.hbar)?;
        if !(self.v_eq.is_finite() && self.q_eq.is_finite()) {
            return Err(Error::InvalidArgument(
                "V_eq and q_eq must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `D_e = hbar omega_eq / (4 chi)`.
    pub fn dissociation_energy(&self) -> f64 {
        self.hbar * self.omega_eq / (4.0 * self.chi)
    }

    /// Range parameter chosen so the harmonic frequency at the minimum is
    /// `omega_eq`: `a = sqrt(m omega_eq^2 / (2 D_e))`, which is
    /// `sqrt(2 omega_eq chi / hbar)` for unit mass.
    pub fn range(&self) -> f64 {
        (self.mass * self.omega_eq * self.omega_eq / (2.0 * self.dissociation_energy())).sqrt()
    }

    /// Harmonic frequency recovered from `D_e` and `a`.
    pub fn harmonic_frequency(&self) -> f64 {
        let a = self.range();
        (2.0 * self.dissociation_energy() * a * a / self.mass).sqrt()
    }

    /// Highest bound vibrational quantum number.
    pub fn max_bound_level(&self) -> usize {
        let n = (1.0 / (2.0 * self.chi) - 0.5).floor();
        if n < 0.0 {
            0
        } else {
            n as usize
        }
    }

    pub fn potential(&self) -> Potential {
        Potential::Morse {
            v_eq: self.v_eq,
            d_e: self.dissociation_energy(),
            a: self.range(),
            q_eq: self.q_eq,
            mass: self.mass,
        }
    }
}

/// Vibrational energies `E_n = hbar omega_eq [(n + 1/2) - chi (n + 1/2)^2]`
/// for `n = 0..=n_max`, measured from `V_eq`.
pub fn morse_levels(params: &MorseParams, n_max: usize) -> Result<Vec<f64>> {
    params.validate()?;
    let bound = params.max_bound_level();
    if n_max > bound {
        return Err(Error::OutOfRange(format!(
            "level {n_max} exceeds the highest bound state {bound} for chi = {}",
            params.chi
        )));
    }
    Ok((0..=n_max)
        .map(|n| {
            let v = n as f64 + 0.5;
            params.hbar * params.omega_eq * (v - params.chi * v * v)
        })
        .collect())
}

/// Potential energy surface with unit-mass-scaled kinetic term `p^2 / 2m`.
#[derive(Debug, Clone)]
pub enum Potential {
    /// `V(q) = m omega^2 |q|^2 / 2`.
    Harmonic {
        dim: usize,
        mass: f64,
        omega: f64,
    },
    /// One-dimensional `V(x) = V_eq + D_e [1 - exp(-a (x - q_eq))]^2`.
    Morse {
        v_eq: f64,
        d_e: f64,
        a: f64,
        q_eq: f64,
        mass: f64,
    },
    Free {
        dim: usize,
        mass: f64,
    },
    Custom(CustomPotential),
}

impl Potential {
    pub fn harmonic(dim: usize, mass: f64, omega: f64) -> Self {
        Potential::Harmonic { dim, mass, omega }
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Harmonic { dim, .. } | Potential::Free { dim, .. } => *dim,
            Potential::Morse { .. } => 1,
            Potential::Custom(c) => c.dim,
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Potential::Harmonic { mass, .. }
            | Potential::Morse { mass, .. }
            | Potential::Free { mass, .. } => *mass,
            Potential::Custom(c) => c.mass,
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match self {
            Potential::Harmonic { mass, omega, .. } => {
                0.5 * mass * omega * omega * q.iter().map(|x| x * x).sum::<f64>()
            }
            Potential::Morse {
                v_eq, d_e, a, q_eq, ..
            } => {
                let e = (-a * (q[0] - q_eq)).exp();
                v_eq + d_e * (1.0 - e) * (1.0 - e)
            }
            Potential::Free { .. } => 0.0,
            Potential::Custom(c) => (c.value)(q),
        }
    }

    /// Returns `V(q)` and fills the gradient and the row-major Hessian.
    pub fn evaluate(&self, q: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        match self {
            Potential::Harmonic { dim, mass, omega } => {
                let k = mass * omega * omega;
                hess.iter_mut().for_each(|h| *h = 0.0);
                let mut v = 0.0;
                for i in 0..*dim {
                    grad[i] = k * q[i];
                    hess[i * dim + i] = k;
                    v += q[i] * q[i];
                }
                0.5 * k * v
            }
            Potential::Morse {
                v_eq, d_e, a, q_eq, ..
            } => {
                let e = (-a * (q[0] - q_eq)).exp();
                grad[0] = 2.0 * d_e * a * e * (1.0 - e);
                hess[0] = 2.0 * d_e * a * a * e * (2.0 * e - 1.0);
                v_eq + d_e * (1.0 - e) * (1.0 - e)
            }
            Potential::Free { .. } => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                hess.iter_mut().for_each(|h| *h = 0.0);
                0.0
            }
            Potential::Custom(c) => {
                (c.gradient)(q, grad);
                (c.hessian)(q, hess);
                (c.value)(q)
            }
        }
    }

    /// Classical energy `h(q, p) = |p|^2 / 2m + V(q)`.
    pub fn energy(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let kinetic: f64 = z[d..2 * d].iter().map(|p| p * p).sum::<f64>() / (2.0 * self.mass());
        kinetic + self.value(&z[..d])
    }
}

/// Classical state `z(t)`, action `S(t)` and stability matrix `M(t)` (row-major
/// `2D x 2D`, blocks `[[M_qq, M_qp], [M_pq, M_pp]]`). The force at the current
/// position is cached so that each step evaluates the potential once.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    z: Vec<f64>,
    action: f64,
    stability: Vec<f64>,
    time: f64,
    valid: bool,
    potential_value: f64,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
}

impl Trajectory {
    pub fn new(z0: &[f64], pot: &Potential) -> Result<Self> {
        let dim = pot.dim();
        if z0.len() != 2 * dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * dim,
                got: z0.len(),
            });
        }
        let n = 2 * dim;
        let mut stability = vec![0.0; n * n];
        for i in 0..n {
            stability[i * n + i] = 1.0;
        }
        let mut traj = Self {
            dim,
            z: z0.to_vec(),
            action: 0.0,
            stability,
            time: 0.0,
            valid: true,
            potential_value: 0.0,
            gradient: vec![0.0; dim],
            hessian: vec![0.0; dim * dim],
        };
        traj.refresh_force(pot);
        Ok(traj)
    }

    fn refresh_force(&mut self, pot: &Potential) {
        self.potential_value =
            pot.evaluate(&self.z[..self.dim], &mut self.gradient, &mut self.hessian);
        if !self.force_is_finite() {
            self.valid = false;
        }
    }

    fn force_is_finite(&self) -> bool {
        self.potential_value.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self.hessian.iter().all(|h| h.is_finite())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn q(&self) -> &[f64] {
        &self.z[..self.dim]
    }

    pub fn p(&self) -> &[f64] {
        &self.z[self.dim..]
    }

    pub fn action(&self) -> f64 {
        self.action
    }

    pub fn stability(&self) -> &[f64] {
        &self.stability
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// False once a non-finite force has been encountered.
    pub fn is_valid(&self) -> bool {
        self.valid
    }

    /// Overwrites the state with externally known values (used for exact
    /// harmonic inputs). The cached force is recomputed.
    pub fn set_state(
        &mut self,
        pot: &Potential,
        z: &[f64],
        action: f64,
        stability: &[f64],
        time: f64,
    ) {
        self.z.copy_from_slice(z);
        self.stability.copy_from_slice(stability);
        self.action = action;
        self.time = time;
        self.refresh_force(pot);
    }

    /// One velocity Verlet step for `z`, the linearised step for `M`, and the
    /// discrete Lagrangian `dt [p_half^2 / 2m - (V(q) + V(q'))/2]` for `S`.
    pub fn step(&mut self, pot: &Potential, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !self.valid {
            return Err(Error::NonFiniteForce {
                position: self.q().to_vec(),
            });
        }
        let d = self.dim;
        let n = 2 * d;
        let mass = pot.mass();
        let half = 0.5 * dt;

        // Half kick.
        for i in 0..d {
            self.z[d + i] -= half * self.gradient[i];
        }
        kick_stability(&mut self.stability, &self.hessian, d, half);
        let kinetic: f64 = self.z[d..].iter().map(|p| p * p).sum::<f64>() / (2.0 * mass);
        let v_start = self.potential_value;

        // Drift.
        for i in 0..d {
            self.z[i] += dt * self.z[d + i] / mass;
        }
        for i in 0..d {
            for c in 0..n {
                self.stability[i * n + c] += dt / mass * self.stability[(d + i) * n + c];
            }
        }

        self.refresh_force(pot);
        if !self.valid {
            return Err(Error::NonFiniteForce {
                position: self.q().to_vec(),
            });
        }

        // Half kick.
        for i in 0..d {
            self.z[d + i] -= half * self.gradient[i];
        }
        kick_stability(&mut self.stability, &self.hessian, d, half);

        self.action += dt * (kinetic - 0.5 * (v_start + self.potential_value));
        self.time += dt;
        Ok(())
    }
}

/// `M_p. -= h Hess M_q.`
#[inline]
fn kick_stability(m: &mut [f64], hess: &[f64], d: usize, h: f64) {
    let n = 2 * d;
    if d == 1 {
        let k = h * hess[0];
        m[2] -= k * m[0];
        m[3] -= k * m[1];
        return;
    }
    for i in 0..d {
        for c in 0..n {
            let mut acc = 0.0;
            for j in 0..d {
                acc += hess[i * d + j] * m[j * n + c];
            }
            m[(d + i) * n + c] -= h * acc;
        }
    }
}

/// Propagates `z0` for `n_steps`; with `record` every intermediate state
/// (including the initial one) is returned, otherwise only the final state.
pub fn propagate(
    z0: &[f64],
    pot: &Potential,
    dt: f64,
    n_steps: usize,
    record: bool,
) -> Result<Vec<Trajectory>> {
    let mut traj = Trajectory::new(z0, pot)?;
    let mut history = Vec::with_capacity(if record { n_steps + 1 } else { 1 });
    if record {
        history.push(traj.clone());
    }
    for _ in 0..n_steps {
        traj.step(pot, dt)?;
        if record {
            history.push(traj.clone());
        }
    }
    if !record {
        history.push(traj);
    }
    Ok(history)
}

/// Closed-form harmonic trajectory data for `D = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicClassical {
    pub q: f64,
    pub p: f64,
    pub action: f64,
    /// Row-major `[[M_qq, M_qp], [M_pq, M_pp]]`.
    pub stability: [f64; 4],
}

/// `q_t = q0 cos(wt) + p0/b sin(wt)`, `p_t = p0 cos(wt) - b q0 sin(wt)` with
/// `b = m w`, and the action accumulated along the way.
pub fn harmonic_classical(q0: f64, p0: f64, mass: f64, omega: f64, t: f64) -> HarmonicClassical {
    let b = mass * omega;
    let (s, c) = (omega * t).sin_cos();
    HarmonicClassical {
        q: q0 * c + p0 / b * s,
        p: p0 * c - b * q0 * s,
        action: 0.5 * s * ((p0 * p0 / b - b * q0 * q0) * c - 2.0 * q0 * p0 * s),
        stability: [c, s / b, -b * s, c],
    }
}
