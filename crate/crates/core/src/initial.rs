//! Initial-condition presets.

use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::model::ModelParams;
use crate::snapshot;
use crate::step::State;

/// Distance kept from the pure phases by the stripe preset.
pub const STRIPE_MARGIN: f64 = 1e-3;
/// Largest admissible noise amplitude of the spinodal preset.
pub const MAX_NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Homogeneous,
    Stripe,
    RandomSpinodal,
    Snapshot,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(Preset::Homogeneous),
            "stripe" => Ok(Preset::Stripe),
            "random_spinodal" => Ok(Preset::RandomSpinodal),
            "snapshot" => Ok(Preset::Snapshot),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialSpec {
    pub preset: Preset,
    pub phi_mean: f64,
    pub psi_mean: f64,
    /// Stripe: tanh amplitude. Spinodal: noise amplitude.
    pub amplitude: f64,
    /// Stripe interface width.
    pub width: f64,
    pub phi_file: Option<PathBuf>,
    pub psi_file: Option<PathBuf>,
    pub ux_file: Option<PathBuf>,
    pub uy_file: Option<PathBuf>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            preset: Preset::Homogeneous,
            phi_mean: 0.0,
            psi_mean: 0.5,
            amplitude: 0.9,
            width: 1.0,
            phi_file: None,
            psi_file: None,
            ux_file: None,
            uy_file: None,
        }
    }
}

impl InitialSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_mean > -1.0 && self.phi_mean < 1.0) {
            return Err(Error::validation("phi_mean", format!("must lie in (-1, 1) (got {})", self.phi_mean)));
        }
        if !(self.psi_mean > 0.0 && self.psi_mean < 1.0) {
            return Err(Error::validation("psi_mean", format!("must lie in (0, 1) (got {})", self.psi_mean)));
        }
        match self.preset {
            Preset::Stripe => {
                if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
                    return Err(Error::validation("amplitude", "must be >= 0"));
                }
                if !(self.width.is_finite() && self.width > 0.0) {
                    return Err(Error::validation("width", "must be > 0"));
                }
            }
            Preset::RandomSpinodal => {
                if !(self.amplitude >= 0.0 && self.amplitude <= MAX_NOISE) {
                    return Err(Error::validation(
                        "amplitude",
                        format!("noise amplitude must lie in [0, {MAX_NOISE}] (got {})", self.amplitude),
                    ));
                }
                let room = (1.0 - self.phi_mean.abs()).min(self.psi_mean).min(1.0 - self.psi_mean);
                if self.amplitude >= room {
                    return Err(Error::validation("amplitude", "noise would leave the admissible range"));
                }
            }
            Preset::Snapshot => {
                if self.phi_file.is_none() || self.psi_file.is_none() {
                    return Err(Error::validation("phi_file", "snapshot preset needs phi_file and psi_file"));
                }
                if self.ux_file.is_some() != self.uy_file.is_some() {
                    return Err(Error::validation("ux_file", "give both velocity components or neither"));
                }
            }
            Preset::Homogeneous => {}
        }
        Ok(())
    }
}

/// Band-limited noise with max amplitude `amp` and zero mean.
fn band_limited_noise(grid: &Grid2D, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
    let (kx, ky) = ((grid.nx() / 4).max(2), (grid.ny() / 4).max(2));
    let mut coeffs = vec![0.0; grid.len()];
    for l in 0..ky {
        for k in 0..kx {
            if k + l > 0 {
                coeffs[l * grid.nx() + k] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let f = ScalarField::from_cos_coeffs(grid, coeffs).zero_mean();
    let m = f.max_abs();
    if m == 0.0 {
        f
    } else {
        f.scale(amp / m)
    }
}

pub fn initial_condition(spec: &InitialSpec, grid: &Grid2D, _params: &ModelParams, seed: u64) -> Result<State> {
    spec.validate()?;
    let state = match spec.preset {
        Preset::Homogeneous => State::homogeneous(grid, spec.phi_mean, spec.psi_mean),
        Preset::Stripe => {
            let (m, a, eps, lx) = (spec.phi_mean, spec.amplitude, spec.width, grid.lx());
            let lim = 1.0 - STRIPE_MARGIN;
            State {
                u: VectorField::zeros(grid),
                phi: ScalarField::from_fn(grid, |x, _| (m + a * ((x - 0.5 * lx) / eps).tanh()).clamp(-lim, lim)),
                psi: ScalarField::constant(grid, spec.psi_mean),
                time: 0.0,
                step_index: 0,
            }
        }
        Preset::RandomSpinodal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = band_limited_noise(grid, &mut rng, spec.amplitude).add_scalar(spec.phi_mean);
            let psi = band_limited_noise(grid, &mut rng, spec.amplitude).add_scalar(spec.psi_mean);
            State {
                u: VectorField::zeros(grid),
                phi,
                psi,
                time: 0.0,
                step_index: 0,
            }
        }
        Preset::Snapshot => {
            let read = |p: &Option<PathBuf>| -> Result<(snapshot::SnapshotHeader, ScalarField)> {
                let path = p.as_ref().expect("validated above");
                snapshot::read_snapshot(path, grid)
            };
            let (hp, phi) = read(&spec.phi_file)?;
            let (_, psi) = read(&spec.psi_file)?;
            let u = match (&spec.ux_file, &spec.uy_file) {
                (Some(_), Some(_)) => VectorField::new(read(&spec.ux_file)?.1, read(&spec.uy_file)?.1)?,
                _ => VectorField::zeros(grid),
            };
            State {
                u,
                phi,
                psi,
                time: hp.time,
                step_index: 0,
            }
        }
    };
    state.validate()?;
    Ok(state)
}
