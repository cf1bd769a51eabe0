//! Run configuration: TOML file, command-line overrides, resolved defaults.
//!
//! Precedence is defaults, then the config file, then flags. Instance flags
//! replace the file's instance section as a whole.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mk_plane::{InitialGuess, Preset, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::grid_io::read_density;

/// Smallest grid the command line accepts along either axis.
pub const MIN_GRID: usize = 9;
pub const DEFAULT_OUT: &str = "mk-plane-out";

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in instance: uniform, product-gauss or bilinear.
    #[arg(long)]
    pub preset: Option<String>,
    /// Density of P on [0,1]^2.
    #[arg(long)]
    pub p_file: Option<PathBuf>,
    /// Density of Q on [0,1]^2; it is shifted onto [1,2]^2 internally.
    #[arg(long, conflicts_with = "p_tilde_file")]
    pub q_file: Option<PathBuf>,
    /// Density of the already shifted target on [1,2]^2.
    #[arg(long)]
    pub p_tilde_file: Option<PathBuf>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// Picard damping in (0, 1].
    #[arg(long)]
    pub omega: Option<f64>,
    /// Atoms per axis for the discrete transport oracle.
    #[arg(long)]
    pub oracle_atoms: Option<usize>,
    /// Skip the discrete transport oracle.
    #[arg(long)]
    pub no_oracle: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    fn names_instance(&self) -> bool {
        self.preset.is_some() || self.p_file.is_some() || self.q_file.is_some() || self.p_tilde_file.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tilde_file: Option<PathBuf>,
}

/// Where the instance comes from, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Source<'a> {
    Preset(Preset),
    /// `P` and `Q` on the unit square.
    Pq { p: &'a Path, q: &'a Path },
    /// `P` on the unit square and the shifted target on `[1,2]^2`.
    PTilde { p: &'a Path, p_tilde: &'a Path },
}

impl InstanceSection {
    pub fn source(&self) -> Result<Source<'_>> {
        match (&self.preset, &self.p_file, &self.q_file, &self.p_tilde_file) {
            (Some(preset), None, None, None) => Ok(Source::Preset(*preset)),
            (None, Some(p), Some(q), None) => Ok(Source::Pq { p, q }),
            (None, Some(p), None, Some(t)) => Ok(Source::PTilde { p, p_tilde: t }),
            (Some(_), _, _, _) => Err(CliError::config("instance", "a preset excludes density files")),
            (None, None, _, _) => Err(CliError::config("instance.p_file", "density files need p_file")),
            (None, Some(_), None, None) => Err(CliError::config("instance", "p_file needs q_file or p_tilde_file")),
            (None, Some(_), Some(_), Some(_)) => {
                Err(CliError::config("instance", "give q_file or p_tilde_file, not both"))
            }
        }
    }

    /// Whether the run reports distances between `P` and an unshifted `Q`.
    pub fn has_q(&self) -> bool {
        self.p_tilde_file.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub oracle: bool,
    pub oracle_atoms: usize,
    /// Iterations of the direct minimizer.
    pub direct_iters: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        let v = mk_plane::validation::ValidationConfig::default();
        Self {
            oracle: v.oracle,
            oracle_atoms: v.oracle_atoms,
            direct_iters: v.direct_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from(DEFAULT_OUT),
        }
    }
}

/// Fully resolved configuration. Serializing it gives a config file that
/// parses back to the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub instance: InstanceSection,
    pub solver: SolverConfig,
    pub validation: ValidationSection,
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    nx: Option<usize>,
    ny: Option<usize>,
    omega: Option<f64>,
    picard_tol: Option<f64>,
    picard_max_iters: Option<usize>,
    linear_tol: Option<f64>,
    linear_max_iters: Option<usize>,
    initial_guess: Option<InitialGuess>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidation {
    oracle: Option<bool>,
    oracle_atoms: Option<usize>,
    direct_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    seed: Option<u64>,
    instance: InstanceSection,
    solver: RawSolver,
    validation: RawValidation,
    output: RawOutput,
}

fn parse_raw(text: &str, path: &Path) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

/// Parses config text and applies defaults; flag overrides are not involved.
pub fn parse_config_str(text: &str, path: &Path) -> Result<RunConfig> {
    resolve(parse_raw(text, path)?, &Overrides::default())
}

/// Reads the config file named by `--config` (if any), applies the flags and
/// fills in defaults.
pub fn parse_config(flags: &Overrides) -> Result<RunConfig> {
    let raw = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_raw(&text, path)?
        }
        None => RawConfig::default(),
    };
    resolve(raw, flags)
}

fn resolve(raw: RawConfig, flags: &Overrides) -> Result<RunConfig> {
    let mut instance = if flags.names_instance() {
        let preset = match &flags.preset {
            Some(name) => Some(name.parse().map_err(|e: mk_plane::Error| CliError::config("instance.preset", e.to_string()))?),
            None => None,
        };
        InstanceSection {
            preset,
            p_file: flags.p_file.clone(),
            q_file: flags.q_file.clone(),
            p_tilde_file: flags.p_tilde_file.clone(),
        }
    } else {
        raw.instance
    };
    if instance == InstanceSection::default() {
        instance.preset = Some(Preset::Uniform);
    }

    let defaults = SolverConfig::default();
    let s = raw.solver;
    let (file_nx, file_ny) = match instance.source()? {
        Source::Preset(_) => (defaults.nx, defaults.ny),
        Source::Pq { p, .. } | Source::PTilde { p, .. } => {
            if !p.is_file() {
                return Err(CliError::config("instance.p_file", format!("no such file: {}", p.display())));
            }
            let other = instance.q_file.as_ref().or(instance.p_tilde_file.as_ref()).expect("source checked");
            if !other.is_file() {
                let field = if instance.has_q() { "instance.q_file" } else { "instance.p_tilde_file" };
                return Err(CliError::config(field, format!("no such file: {}", other.display())));
            }
            // both files must parse as densities even if the command never solves
            read_density(other)?;
            let d = read_density(p)?;
            (d.gx().n(), d.gy().n())
        }
    };
    let solver = SolverConfig {
        nx: flags.nx.or(s.nx).unwrap_or(file_nx),
        ny: flags.ny.or(s.ny).unwrap_or(file_ny),
        omega: flags.omega.or(s.omega).unwrap_or(defaults.omega),
        picard_tol: s.picard_tol.unwrap_or(defaults.picard_tol),
        picard_max_iters: s.picard_max_iters.unwrap_or(defaults.picard_max_iters),
        linear_tol: s.linear_tol.unwrap_or(defaults.linear_tol),
        linear_max_iters: s.linear_max_iters.unwrap_or(defaults.linear_max_iters),
        initial_guess: s.initial_guess.unwrap_or(defaults.initial_guess),
    };

    let dv = ValidationSection::default();
    let v = raw.validation;
    let validation = ValidationSection {
        oracle: !flags.no_oracle && v.oracle.unwrap_or(dv.oracle),
        oracle_atoms: flags.oracle_atoms.or(v.oracle_atoms).unwrap_or(dv.oracle_atoms),
        direct_iters: v.direct_iters.unwrap_or(dv.direct_iters),
    };

    let cfg = RunConfig {
        seed: flags.seed.or(raw.seed).unwrap_or(mk_plane::validation::ValidationConfig::default().seed),
        instance,
        solver,
        validation,
        output: OutputSection {
            dir: flags.out.clone().or(raw.output.dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        for (field, n) in [("solver.nx", s.nx), ("solver.ny", s.ny)] {
            if n < MIN_GRID {
                return Err(CliError::config(field, format!("{n} is below the minimum of {MIN_GRID}")));
            }
        }
        if !(s.omega > 0.0 && s.omega <= 1.0) {
            return Err(CliError::config("solver.omega", format!("{} is outside (0, 1]", s.omega)));
        }
        for (field, t) in [("solver.picard_tol", s.picard_tol), ("solver.linear_tol", s.linear_tol)] {
            if t.is_nan() || t <= 0.0 {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        for (field, n) in [
            ("solver.picard_max_iters", s.picard_max_iters),
            ("solver.linear_max_iters", s.linear_max_iters),
            ("validation.direct_iters", self.validation.direct_iters),
        ] {
            if n == 0 {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        if self.validation.oracle_atoms < 2 {
            return Err(CliError::config("validation.oracle_atoms", "need at least 2 atoms per axis"));
        }
        self.instance.source()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validation_config(&self) -> mk_plane::validation::ValidationConfig {
        mk_plane::validation::ValidationConfig {
            seed: self.seed,
            oracle: self.validation.oracle,
            oracle_atoms: self.validation.oracle_atoms,
            direct_iters: self.validation.direct_iters,
            solver: self.solver.clone(),
        }
    }
}
