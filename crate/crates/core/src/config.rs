//! Run configuration: `[section]` headers followed by `key = value` lines.
//!
//! `#` starts a comment. Keys outside any section belong to the top level (`seed`).
//! Relative paths are resolved against the directory of the configuration file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::StationarySettings;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::initial::{InitialSpec, Preset};
use crate::model::ModelParams;
use crate::step::SolverTolerances;

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeConfig {
    pub h: f64,
    pub t_end: f64,
    /// Snapshot interval in steps; 0 writes only the final state.
    pub output_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub series: String,
    pub snapshot_prefix: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyConfig {
    /// Defaults to the initial phase mean.
    pub phi_mass: Option<f64>,
    /// Defaults to the initial surfactant mean.
    pub psi_mass: Option<f64>,
    pub settings: StationarySettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub model: ModelParams,
    pub tolerances: SolverTolerances,
    pub initial: InitialSpec,
    pub output: OutputConfig,
    pub steady: SteadyConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig {
                nx: 64,
                ny: 64,
                lx: 2.0 * std::f64::consts::PI,
                ly: 2.0 * std::f64::consts::PI,
            },
            time: TimeConfig {
                h: 1e-3,
                t_end: 0.1,
                output_every: 0,
            },
            model: ModelParams::default(),
            tolerances: SolverTolerances::default(),
            initial: InitialSpec::default(),
            output: OutputConfig {
                directory: PathBuf::from("output"),
                series: "ledger.csv".into(),
                snapshot_prefix: "snap".into(),
            },
            steady: SteadyConfig {
                phi_mass: None,
                psi_mass: None,
                settings: StationarySettings::default(),
            },
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly).map_err(|e| match e {
            Error::Validation { .. } => e,
            other => Error::validation("grid", other.to_string()),
        })
    }

    /// Number of steps needed to reach `t_end`.
    pub fn steps(&self) -> u64 {
        (self.time.t_end / self.time.h - 1e-9).ceil().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let t = &self.time;
        if !(t.h.is_finite() && t.h > 0.0) {
            return Err(Error::validation("h", format!("h must be > 0 (got {})", t.h)));
        }
        if !(t.t_end.is_finite() && t.t_end >= 0.0) {
            return Err(Error::validation("t_end", format!("t_end must be >= 0 (got {})", t.t_end)));
        }
        self.model.validate()?;
        self.tolerances.validate()?;
        self.initial.validate()?;
        let s = &self.steady;
        if let Some(m) = s.phi_mass {
            if !(m > -1.0 && m < 1.0) {
                return Err(Error::validation("phi_mass", format!("phi_mass must lie in (-1, 1) (got {m})")));
            }
        }
        if let Some(m) = s.psi_mass {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::validation("psi_mass", format!("psi_mass must lie in (0, 1) (got {m})")));
            }
        }
        if !(s.settings.tol.is_finite() && s.settings.tol > 0.0) {
            return Err(Error::validation("steady.tol", "must be > 0"));
        }
        if s.settings.max_newton == 0 {
            return Err(Error::validation("steady.max_newton", "must be >= 1"));
        }
        if !(s.settings.damping_min > 0.0 && s.settings.damping_min <= 1.0) {
            return Err(Error::validation("steady.damping_min", "must lie in (0, 1]"));
        }
        if self.output.series.is_empty() || self.output.snapshot_prefix.is_empty() {
            return Err(Error::validation("output", "series and snapshot_prefix must be non-empty"));
        }
        Ok(())
    }
}

fn parse_real(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}` expects a real number, got `{v}`"),
    })
}

fn parse_int<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}` expects a nonnegative integer, got `{v}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("`{key}` expects true or false, got `{v}`"),
        }),
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// Parses configuration text; `base` resolves relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let path = |v: &str| {
        let p = PathBuf::from(unquote(v));
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                message: format!("malformed section header `{content}`"),
            })?;
            section = name.trim().to_ascii_lowercase();
            if !matches!(
                section.as_str(),
                "grid" | "time" | "model" | "tolerances" | "initial" | "output" | "steady"
            ) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown section `[{section}]`"),
                });
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        let v = value.trim();
        if key.is_empty() || v.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            });
        }
        if !seen.insert((section.clone(), key.clone())) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        let real = || parse_real(line, &key, v);
        let m = &mut cfg.model;
        let t = &mut cfg.tolerances;
        match (section.as_str(), key.as_str()) {
            ("", "seed") => cfg.seed = parse_int(line, &key, v)?,
            ("grid", "nx") => cfg.grid.nx = parse_int(line, &key, v)?,
            ("grid", "ny") => cfg.grid.ny = parse_int(line, &key, v)?,
            ("grid", "lx") => cfg.grid.lx = real()?,
            ("grid", "ly") => cfg.grid.ly = real()?,
            ("grid", "dealias") => t.dealias = parse_bool(line, &key, v)?,
            ("time", "h") => cfg.time.h = real()?,
            ("time", "t_end") => cfg.time.t_end = real()?,
            ("time", "output_every") => cfg.time.output_every = parse_int(line, &key, v)?,
            ("model", "alpha") => m.alpha = real()?,
            ("model", "beta") => m.beta = real()?,
            ("model", "sigma1") => m.sigma1 = real()?,
            ("model", "sigma2") => m.sigma2 = real()?,
            ("model", "c") => m.c = real()?,
            ("model", "r") => m.r = real()?,
            ("model", "theta_phi") => m.theta_phi = real()?,
            ("model", "theta_psi") => m.theta_psi = real()?,
            ("model", "theta_c") => m.theta_c = real()?,
            ("model", "w") => m.w = real()?,
            ("model", "nu") => m.nu = real()?,
            ("model", "eta") => m.eta = real()?,
            ("model", "m_phi") => m.m_phi = real()?,
            ("model", "m_psi") => m.m_psi = real()?,
            ("tolerances", "newton_tol") => t.newton_tol = real()?,
            ("tolerances", "picard_tol") => t.picard_tol = real()?,
            ("tolerances", "energy_tol") => t.energy_tol = real()?,
            ("tolerances", "velocity_tol") => t.velocity_tol = real()?,
            ("tolerances", "max_newton") => t.max_newton = parse_int(line, &key, v)?,
            ("tolerances", "max_picard") => t.max_picard = parse_int(line, &key, v)?,
            ("tolerances", "newton_damping_min") => t.newton_damping_min = real()?,
            ("tolerances", "velocity_max_outer") => t.velocity_max_outer = parse_int(line, &key, v)?,
            ("tolerances", "uzawa_relaxation") => t.uzawa_relaxation = real()?,
            ("tolerances", "dealias") => t.dealias = parse_bool(line, &key, v)?,
            ("initial", "preset") => cfg.initial.preset = unquote(v).parse::<Preset>()?,
            ("initial", "phi_mean") => cfg.initial.phi_mean = real()?,
            ("initial", "psi_mean") => cfg.initial.psi_mean = real()?,
            ("initial", "amplitude") => cfg.initial.amplitude = real()?,
            ("initial", "width") => cfg.initial.width = real()?,
            ("initial", "phi_file") => cfg.initial.phi_file = Some(path(v)),
            ("initial", "psi_file") => cfg.initial.psi_file = Some(path(v)),
            ("initial", "ux_file") => cfg.initial.ux_file = Some(path(v)),
            ("initial", "uy_file") => cfg.initial.uy_file = Some(path(v)),
            ("output", "directory") => cfg.output.directory = path(v),
            ("output", "series") => cfg.output.series = unquote(v).to_string(),
            ("output", "snapshot_prefix") => cfg.output.snapshot_prefix = unquote(v).to_string(),
            ("steady", "phi_mass") => cfg.steady.phi_mass = Some(real()?),
            ("steady", "psi_mass") => cfg.steady.psi_mass = Some(real()?),
            ("steady", "tol") => cfg.steady.settings.tol = real()?,
            ("steady", "max_newton") => cfg.steady.settings.max_newton = parse_int(line, &key, v)?,
            ("steady", "damping_min") => cfg.steady.settings.damping_min = real()?,
            (sec, _) => {
                let place = if sec.is_empty() { "top level".to_string() } else { format!("[{sec}]") };
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}` in {place}"),
                });
            }
        }
    }
    if !seen.contains(&("output".to_string(), "directory".to_string())) {
        cfg.output.directory = base.join(&cfg.output.directory);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}
