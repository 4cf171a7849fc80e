//! Experiment configuration: a JSON document with fixed field names. Unknown
//! keys are rejected, and every range check runs before any computation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use herman_kluk::dynamics::MorseParams;
use herman_kluk::{
    GaussianWavepacket, Potential, SamplingScheme, SchemeKind, SpatialGrid, WidthMatrix,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: System,
    pub initial_state: InitialState,
    pub sampling: Sampling,
    pub run: Run,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    Harmonic(HarmonicSystem),
    Morse(MorseSystem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSystem {
    #[serde(default = "one")]
    pub m: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorseSystem {
    pub chi: f64,
    pub omega_eq: f64,
    #[serde(rename = "V_eq")]
    pub v_eq: f64,
    pub q_eq: f64,
    #[serde(default = "one")]
    pub m: f64,
}

/// A number, or one value per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coordinate {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Coordinate {
    fn len(&self) -> Option<usize> {
        match self {
            Coordinate::Scalar(_) => None,
            Coordinate::Vector(v) => Some(v.len()),
        }
    }

    fn expand(&self, dim: usize) -> Vec<f64> {
        match self {
            Coordinate::Scalar(v) => vec![*v; dim],
            Coordinate::Vector(v) => v.clone(),
        }
    }
}

/// A positive number (times the identity) or a full symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Width {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q0: Coordinate,
    pub p0: Coordinate,
    pub gamma: Width,
    #[serde(default = "one")]
    pub hbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeList {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub scheme: SchemeList,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run {
    pub dt: f64,
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_runs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_directory() -> PathBuf {
    PathBuf::from(".")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into()]
}

/// Config error pointing at the first line of `text` that mentions `key`.
fn located(text: Option<&str>, key: &str, msg: String) -> CliError {
    let needle = format!("\"{key}\"");
    let line = text.and_then(|t| t.lines().position(|l| l.contains(&needle)));
    match line {
        Some(i) => CliError::Config(format!("line {}: {key}: {msg}", i + 1)),
        None => CliError::Config(format!("{key}: {msg}")),
    }
}

fn positive(text: Option<&str>, key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(located(
            text,
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn finite(text: Option<&str>, key: &str, v: &[f64]) -> Result<(), CliError> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(located(text, key, format!("must be finite, got {x}"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate_with(Some(text))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.validate_with(None)
    }

    fn validate_with(&self, text: Option<&str>) -> Result<(), CliError> {
        let s = &self.initial_state;
        positive(text, "hbar", s.hbar)?;
        let dim = self.dim();
        if dim == 0 {
            return Err(located(text, "q0", "needs at least one component".into()));
        }
        if let Some(n) = s.p0.len() {
            if n != dim {
                return Err(located(
                    text,
                    "p0",
                    format!("has {n} components, q0 has {dim}"),
                ));
            }
        }
        finite(text, "q0", &s.q0.expand(dim))?;
        finite(text, "p0", &s.p0.expand(dim))?;
        self.width()
            .map_err(|e| located(text, "gamma", e.to_string()))?;

        match &self.system {
            System::Harmonic(h) => {
                positive(text, "m", h.m)?;
                positive(text, "omega", h.omega)?;
            }
            System::Morse(m) => {
                positive(text, "m", m.m)?;
                self.morse_params()
                    .map_err(|e| located(text, "morse", e.to_string()))?;
                if dim != 1 {
                    return Err(located(
                        text,
                        "q0",
                        "the Morse system is one-dimensional".into(),
                    ));
                }
            }
        }

        let schemes = match &self.sampling.scheme {
            SchemeList::One(s) => vec![s.clone()],
            SchemeList::Many(v) => v.clone(),
        };
        if schemes.is_empty() {
            return Err(located(text, "scheme", "needs at least one entry".into()));
        }
        for name in &schemes {
            parse_scheme(name, self.sampling.a).map_err(|msg| located(text, "scheme", msg))?;
        }

        let r = &self.run;
        positive(text, "dt", r.dt)?;
        if r.n_trajectories == 0 {
            return Err(located(text, "n_trajectories", "must be at least 1".into()));
        }
        if r.k_runs == Some(0) {
            return Err(located(text, "k_runs", "must be at least 1".into()));
        }

        if let Some(g) = &self.grid {
            finite(text, "grid", &[g.x_min, g.x_max])?;
            if g.x_min >= g.x_max {
                return Err(located(text, "x_max", "must exceed x_min".into()));
            }
            if g.n_points < 2 {
                return Err(located(text, "n_points", "must be at least 2".into()));
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(located(text, "formats", format!("unknown format {f:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        let s = &self.initial_state;
        s.q0.len()
            .or(s.p0.len())
            .or(match &s.gamma {
                Width::Matrix(m) => Some(m.len()),
                Width::Scalar(_) => None,
            })
            .unwrap_or(1)
    }

    pub fn width(&self) -> herman_kluk::Result<WidthMatrix> {
        match &self.initial_state.gamma {
            Width::Scalar(g) => WidthMatrix::scalar(self.dim(), *g),
            Width::Matrix(rows) => WidthMatrix::from_rows(rows),
        }
    }

    pub fn morse_params(&self) -> herman_kluk::Result<MorseParams> {
        let System::Morse(m) = &self.system else {
            return Err(herman_kluk::Error::InvalidArgument(
                "not a Morse system".into(),
            ));
        };
        let params = MorseParams {
            chi: m.chi,
            omega_eq: m.omega_eq,
            v_eq: m.v_eq,
            q_eq: m.q_eq,
            mass: m.m,
            hbar: self.initial_state.hbar,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        match &self.system {
            System::Harmonic(h) => Ok(Potential::harmonic(self.dim(), h.m, h.omega)),
            System::Morse(_) => Ok(self
                .morse_params()
                .map_err(CliError::from_core)?
                .potential()),
        }
    }

    pub fn initial_wavepacket(&self) -> Result<GaussianWavepacket, CliError> {
        let d = self.dim();
        let s = &self.initial_state;
        let width = self.width().map_err(CliError::from_core)?;
        GaussianWavepacket::with_shared_width(
            &s.q0.expand(d),
            &s.p0.expand(d),
            Arc::new(width),
            s.hbar,
        )
        .map_err(CliError::from_core)
    }

    pub fn schemes(&self) -> Vec<SchemeKind> {
        let names = match &self.sampling.scheme {
            SchemeList::One(s) => vec![s.clone()],
            SchemeList::Many(v) => v.clone(),
        };
        names
            .iter()
            .map(|n| parse_scheme(n, self.sampling.a).expect("validated"))
            .collect()
    }

    pub fn sampling_scheme(&self, kind: SchemeKind) -> Result<SamplingScheme, CliError> {
        SamplingScheme::new(kind, self.initial_wavepacket()?).map_err(CliError::from_core)
    }

    pub fn spatial_grid(&self) -> Result<SpatialGrid, CliError> {
        let g = self
            .grid
            .ok_or_else(|| CliError::Config("this command needs a grid section".into()))?;
        SpatialGrid::new(g.x_min, g.x_max, g.n_points).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn harmonic(&self) -> Option<&HarmonicSystem> {
        match &self.system {
            System::Harmonic(h) => Some(h),
            System::Morse(_) => None,
        }
    }
}

/// Scheme names: `husimi`, `sqrt_husimi` and `rho_a` (needs `a`).
pub fn parse_scheme(name: &str, a: Option<f64>) -> Result<SchemeKind, String> {
    match name.replace('-', "_").as_str() {
        "husimi" => Ok(SchemeKind::Husimi),
        "sqrt_husimi" => Ok(SchemeKind::SqrtHusimi),
        "rho_a" => match a {
            Some(a) if a >= 2.0 && a.is_finite() => Ok(SchemeKind::GeneralA(a)),
            Some(a) => Err(format!("rho_a needs a >= 2, got {a}")),
            None => Err("rho_a needs the field a".into()),
        },
        other => Err(format!("unknown scheme {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARMONIC: &str = r#"{
  "system": {"harmonic": {"m": 1, "omega": 1}},
  "initial_state": {"q0": -1, "p0": 0, "gamma": 2, "hbar": 1},
  "sampling": {"scheme": ["sqrt_husimi", "husimi"]},
  "run": {"dt": 0.1, "n_steps": 10, "n_trajectories": 100, "seed": 3},
  "grid": {"x_min": -10, "x_max": 10, "n_points": 256}
}"#;

    #[test]
    fn parses_harmonic_config() {
        let cfg = ExperimentConfig::parse(HARMONIC).unwrap();
        assert_eq!(cfg.dim(), 1);
        assert_eq!(
            cfg.schemes(),
            vec![SchemeKind::SqrtHusimi, SchemeKind::Husimi]
        );
        assert_eq!(cfg.output.directory, PathBuf::from("."));
        let psi = cfg.initial_wavepacket().unwrap();
        assert_eq!(psi.q(), &[-1.0]);
    }

    #[test]
    fn vector_coordinates_set_dimension() {
        let text = HARMONIC.replace(r#""q0": -1"#, r#""q0": [-1, -1, -1, -1]"#);
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.dim(), 4);
        assert_eq!(cfg.initial_wavepacket().unwrap().p(), &[0.0; 4]);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = HARMONIC.replace(r#""seed": 3"#, r#""seed": 3, "sede": 4"#);
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("unknown field"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = HARMONIC.replace(r#", "seed": 3"#, "");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn range_errors_name_the_line() {
        let text = HARMONIC.replace(r#""gamma": 2"#, r#""gamma": -2"#);
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 3: gamma"), "{err}");
        let text = HARMONIC.replace(r#""dt": 0.1"#, r#""dt": 0"#);
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 5: dt"), "{err}");
    }

    #[test]
    fn scheme_names() {
        assert_eq!(
            parse_scheme("sqrt-husimi", None),
            Ok(SchemeKind::SqrtHusimi)
        );
        assert_eq!(
            parse_scheme("rho_a", Some(3.0)),
            Ok(SchemeKind::GeneralA(3.0))
        );
        assert!(parse_scheme("rho_a", None).is_err());
        assert!(parse_scheme("rho_a", Some(1.0)).is_err());
        assert!(parse_scheme("wigner", None).is_err());
    }

    #[test]
    fn morse_config_builds_parameters() {
        let text = r#"{
  "system": {"morse": {"chi": 0.01, "omega_eq": 0.0041, "V_eq": 0.1, "q_eq": 20.95}},
  "initial_state": {"q0": 0, "p0": 0, "gamma": 0.00456},
  "sampling": {"scheme": "husimi"},
  "run": {"dt": 8, "n_steps": 2020, "n_trajectories": 800, "seed": 1}
}"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let params = cfg.morse_params().unwrap();
        assert!((params.dissociation_energy() - 0.0041 / 0.04).abs() < 1e-15);
        assert!(matches!(cfg.potential().unwrap(), Potential::Morse { .. }));
        let bad = text.replace(r#""chi": 0.01"#, r#""chi": -0.01"#);
        assert!(ExperimentConfig::parse(&bad).is_err());
        let two_d = text.replace(r#""q0": 0"#, r#""q0": [0, 0]"#);
        assert!(ExperimentConfig::parse(&two_d).is_err());
    }
}
