//! Command-line front end: argument parsing, preset resolution, thread pools
//! and file output.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::experiments::{self, Plan};
use crate::output::{output_path, sha256_hex, write_file, Cell, Table};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "hkprop",
    version,
    about = "Herman-Kluk propagation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small ensembles that finish in minutes.
    Desk,
    /// Ensemble sizes of the published experiments.
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the ensemble size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Worker threads (default: all cores). Does not change the output.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Exit with status 3 when a larger fraction of trajectories fails.
    #[arg(long, default_value_t = 0.01)]
    pub max_invalid_fraction: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sampling error of the initial state over a ladder of ensemble sizes.
    InitialError {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ensemble sizes.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        /// Number of seeds; the error is the root mean square over them.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Initial sampling error against dimension at fixed N.
    DimSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = experiments::MAX_SWEEP_DIM)]
        d_max: usize,
    },
    /// Error over time in a harmonic potential, averaged over independent runs.
    HarmonicError {
        #[command(flatten)]
        common: Common,
        /// Use closed-form classical trajectories instead of the integrator.
        #[arg(long)]
        exact_classical: bool,
        #[arg(long)]
        k_runs: Option<usize>,
    },
    /// Distance between estimates with N and 2N trajectories.
    MorseConverge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated values of N.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Number of seeds whose errors are averaged.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Position densities at the final time.
    Density {
        #[command(flatten)]
        common: Common,
    },
    /// Spectra from the autocorrelation function.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Gaussian line half width at half maximum, in energy units. The
        /// default window falls to exp(-4.5) at the final time; 0 disables it.
        #[arg(long)]
        damping: Option<f64>,
    },
    /// Trajectory counts for a target error and confidence.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Estimator variance; derived from a harmonic config when omitted.
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        p: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::InitialError { .. } => "initial-error",
            Command::DimSweep { .. } => "dim-sweep",
            Command::HarmonicError { .. } => "harmonic-error",
            Command::MorseConverge { .. } => "morse-converge",
            Command::Density { .. } => "density",
            Command::Spectrum { .. } => "spectrum",
            Command::Plan { .. } => "plan",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::InitialError { common, .. }
            | Command::DimSweep { common, .. }
            | Command::HarmonicError { common, .. }
            | Command::MorseConverge { common, .. }
            | Command::Density { common }
            | Command::Spectrum { common, .. }
            | Command::Plan { common, .. } => common,
        }
    }
}

/// `100 * 2^k` for `k = 0..=max_exp`.
pub fn doubling_ladder(max_exp: u32) -> Vec<usize> {
    (0..=max_exp).map(|k| 100usize << k).collect()
}

/// `100 * 2^k` up to `limit`, or `[limit]` when `limit < 100`.
fn ladder_up_to(limit: usize) -> Vec<usize> {
    let v: Vec<usize> = (0..40)
        .map(|k| 100usize << k)
        .take_while(|&n| n <= limit)
        .collect();
    if v.is_empty() {
        vec![limit]
    } else {
        v
    }
}

/// Flag, then preset (5 seeds), then `run.k_runs`, then a single run.
fn repeats_for(flag: Option<usize>, preset: Option<Preset>, cfg: &ExperimentConfig) -> usize {
    match (flag, preset) {
        (Some(r), _) => r,
        (None, Some(_)) => 5,
        (None, None) => cfg.run.k_runs.unwrap_or(1),
    }
}

/// Files written by a command, and the rendered table (absent for `plan`).
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub hash: String,
    pub table: Option<Table>,
    pub plan: Option<Plan>,
}

/// Parses `args` (including the program name), runs the command, prints the
/// output paths and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code().clamp(0, 255) as u8;
        }
    };
    match run(&cli) {
        Ok(out) => {
            if let Some(plan) = &out.plan {
                println!(
                    "{}",
                    serde_json::to_string_pretty(plan).expect("plan serializes")
                );
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside a pool of the requested size.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let common = cli.command.common();
    if !(common.max_invalid_fraction >= 0.0 && common.max_invalid_fraction <= 1.0) {
        return Err(CliError::Config(
            "--max-invalid-fraction must lie in [0, 1]".into(),
        ));
    }
    match common.threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(|| execute(&cli.command)),
        None => execute(&cli.command),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output.directory = dir.clone();
    }
    if cfg.output.formats.is_empty() {
        return Err(CliError::Config("output.formats is empty".into()));
    }
    Ok(cfg)
}

fn execute(command: &Command) -> Result<Outcome, CliError> {
    let common = command.common();
    let preset = common.preset;
    let invalid = common.max_invalid_fraction;
    if let Command::Plan {
        sigma2, epsilon, p, ..
    } = command
    {
        return run_plan(common, *sigma2, *epsilon, *p);
    }
    let cfg = load_config(common)?;
    let pick = |desk: usize, paper: usize, fallback: usize| match (common.n, preset) {
        (Some(n), _) => n,
        (None, Some(Preset::Desk)) => desk,
        (None, Some(Preset::Paper)) => paper,
        (None, None) => fallback,
    };
    let n_cfg = cfg.run.n_trajectories;
    let (params, table): (Value, Table) = match command {
        Command::InitialError {
            ladder, repeats, ..
        } => {
            let ladder = match (ladder, common.n, preset) {
                (Some(l), _, _) => l.clone(),
                (None, Some(n), _) => vec![n],
                (None, None, Some(Preset::Desk)) => doubling_ladder(10),
                (None, None, Some(Preset::Paper)) => doubling_ladder(13),
                (None, None, None) => ladder_up_to(n_cfg),
            };
            let p = experiments::InitialErrorParams {
                ladder,
                repeats: repeats_for(*repeats, preset, &cfg),
            };
            (to_value(&p), experiments::initial_error(&cfg, &p)?)
        }
        Command::DimSweep { d_max, .. } => {
            let p = experiments::DimSweepParams {
                d_max: *d_max,
                n: pick(100 << 8, 100 << 13, n_cfg),
            };
            (to_value(&p), experiments::dim_sweep(&cfg, &p)?)
        }
        Command::HarmonicError {
            exact_classical,
            k_runs,
            ..
        } => {
            let k = match (k_runs, preset) {
                (Some(k), _) => *k,
                (None, Some(Preset::Desk)) => 20,
                (None, Some(Preset::Paper)) => 100,
                (None, None) => cfg.run.k_runs.unwrap_or(1),
            };
            let p = experiments::HarmonicErrorParams {
                n: pick(1 << 12, 1 << 16, n_cfg),
                k_runs: k,
                exact_classical: *exact_classical,
                max_invalid_fraction: invalid,
            };
            (to_value(&p), experiments::harmonic_error(&cfg, &p)?)
        }
        Command::MorseConverge {
            ladder,
            checkpoints,
            repeats,
            ..
        } => {
            let ladder = match (ladder, common.n, preset) {
                (Some(l), _, _) => l.clone(),
                (None, Some(n), _) => vec![n],
                (None, None, Some(Preset::Desk)) => doubling_ladder(8),
                (None, None, Some(Preset::Paper)) => doubling_ladder(13),
                (None, None, None) => ladder_up_to(n_cfg / 2),
            };
            let checkpoints = match checkpoints {
                Some(c) => c.clone(),
                None => {
                    let mut c = vec![
                        (cfg.run.n_steps as f64 / 10.0).round() as usize,
                        cfg.run.n_steps,
                    ];
                    c.retain(|&s| s > 0);
                    c.dedup();
                    c
                }
            };
            let repeats = repeats_for(*repeats, preset, &cfg);
            let p = experiments::MorseConvergeParams {
                ladder,
                checkpoints,
                repeats,
                max_invalid_fraction: invalid,
            };
            (to_value(&p), experiments::morse_converge(&cfg, &p)?)
        }
        Command::Density { .. } => {
            let p = experiments::DensityParams {
                n: pick(800, 100 << 14, n_cfg),
                max_invalid_fraction: invalid,
            };
            (to_value(&p), experiments::density(&cfg, &p)?)
        }
        Command::Spectrum { damping, .. } => {
            let p = experiments::SpectrumParams {
                n: common.n.unwrap_or(n_cfg),
                damping_hwhm: match damping {
                    None => Some(experiments::default_damping(&cfg)),
                    Some(h) if *h == 0.0 => None,
                    Some(h) => Some(*h),
                },
                max_invalid_fraction: invalid,
            };
            (to_value(&p), experiments::spectrum_table(&cfg, &p)?)
        }
        Command::Plan { .. } => unreachable!("handled above"),
    };
    let (hash, meta) = metadata(command.name(), &cfg, &params, preset);
    for (k, v) in &table.notes {
        if k == "warning" {
            eprintln!("warning: {v}");
        }
    }
    let mut files = Vec::new();
    let dir = &cfg.output.directory;
    if cfg.output.formats.iter().any(|f| f == "csv") {
        let path = output_path(dir, command.name(), &hash, "csv");
        write_file(&path, &table.to_csv(&meta_lines(&meta)))?;
        files.push(path);
    }
    if cfg.output.formats.iter().any(|f| f == "json") {
        let path = output_path(dir, command.name(), &hash, "json");
        write_file(&path, &table_json(&table, &meta))?;
        files.push(path);
    }
    Ok(Outcome {
        files,
        hash,
        table: Some(table),
        plan: None,
    })
}

fn run_plan(
    common: &Common,
    sigma2: Option<f64>,
    epsilon: f64,
    p: f64,
) -> Result<Outcome, CliError> {
    let cfg = match &common.config {
        Some(_) => Some(load_config(common)?),
        None => None,
    };
    let sigma2 = match (sigma2, &cfg) {
        (Some(s), _) => s,
        (None, Some(cfg)) => experiments::max_harmonic_variance(cfg)?,
        (None, None) => {
            return Err(CliError::Config(
                "plan needs --sigma2 or a harmonic --config".into(),
            ))
        }
    };
    let plan = experiments::plan(sigma2, epsilon, p)?;
    let mut files = Vec::new();
    let mut hash = sha256_hex(
        serde_json::to_string(&plan)
            .expect("plan serializes")
            .as_bytes(),
    );
    if let Some(cfg) = &cfg {
        let (h, meta) = metadata("plan", cfg, &to_value(&plan), common.preset);
        hash = h;
        let body = json!({
            "metadata": meta.iter().cloned().collect::<serde_json::Map<String, Value>>(),
            "plan": plan,
        });
        let path = output_path(&cfg.output.directory, "plan", &hash, "json");
        write_file(
            &path,
            &(serde_json::to_string_pretty(&body).expect("json") + "\n"),
        )?;
        files.push(path);
    }
    Ok(Outcome {
        files,
        hash,
        table: None,
        plan: Some(plan),
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("parameters serialize")
}

/// Hash of the command, the effective config (without output settings) and
/// the resolved parameters, plus the comment lines describing them.
fn metadata(
    command: &str,
    cfg: &ExperimentConfig,
    params: &Value,
    preset: Option<Preset>,
) -> (String, Vec<(String, Value)>) {
    let mut config = to_value(cfg);
    if let Value::Object(map) = &mut config {
        map.remove("output");
    }
    let canonical = json!({ "command": command, "config": config, "params": params });
    let hash = sha256_hex(serde_json::to_string(&canonical).expect("json").as_bytes());
    let meta = vec![
        (
            "program".to_string(),
            json!(format!("hkprop {}", env!("CARGO_PKG_VERSION"))),
        ),
        ("command".to_string(), json!(command)),
        ("config_sha256".to_string(), json!(hash)),
        ("seed".to_string(), json!(cfg.run.seed)),
        ("preset".to_string(), json!(preset)),
        ("config".to_string(), config),
        ("params".to_string(), params.clone()),
    ];
    (hash, meta)
}

fn meta_lines(meta: &[(String, Value)]) -> Vec<(String, String)> {
    meta.iter()
        .map(|(k, v)| {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), text)
        })
        .collect()
}

fn table_json(table: &Table, meta: &[(String, Value)]) -> String {
    let cell = |c: &Cell| match c {
        Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
        Cell::Int(v) => json!(v),
        Cell::Text(s) => json!(s),
        Cell::Empty => Value::Null,
    };
    let mut metadata: serde_json::Map<String, Value> = meta.iter().cloned().collect();
    for (k, v) in &table.notes {
        metadata.insert(k.clone(), json!(v));
    }
    let body = json!({
        "metadata": metadata,
        "columns": table.columns,
        "rows": table.rows.iter().map(|r| r.iter().map(cell).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    serde_json::to_string_pretty(&body).expect("json") + "\n"
}
