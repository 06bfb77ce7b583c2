//! Constitutive functions: the singular potentials, the smooth coupling, drag and
//! mobility coefficients, parameter validation and the energy functionals.

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::step::State;

/// Width of the smooth transition used to extend the coupling outside the box.
pub const CLAMP_MARGIN: f64 = 0.1;

const SECANT_BRANCH: f64 = 1e-12;
const SECANT_SLOPE_BRANCH: f64 = 1e-5;

/// Coefficients of the model. Validate with [`ModelParams::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Reaction target for the phase mean, in (-1, 1).
    pub c: f64,
    /// Forchheimer exponent, > 2.
    pub r: f64,
    pub theta_phi: f64,
    pub theta_psi: f64,
    /// Depth of the concave double-well part, carried by the coupling.
    pub theta_c: f64,
    /// Surfactant/interface coupling strength.
    pub w: f64,
    pub nu: f64,
    pub eta: f64,
    pub m_phi: f64,
    pub m_psi: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha: 0.0,
            beta: 1.0,
            sigma1: 0.0,
            sigma2: 0.0,
            c: 0.0,
            r: 3.0,
            theta_phi: 1.0,
            theta_psi: 1.0,
            theta_c: 3.0,
            w: 1.0,
            nu: 1.0,
            eta: 1.0,
            m_phi: 1.0,
            m_psi: 1.0,
        }
    }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(key, format!("must be finite (got {v})")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    finite(key, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(key, format!("{key} must be > 0 (got {v})")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    finite(key, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(key, format!("{key} must be >= 0 (got {v})")))
    }
}

impl ModelParams {
    /// Checks every bound constraint, naming the first offending key.
    pub fn validate(&self) -> Result<()> {
        nonnegative("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        nonnegative("sigma1", self.sigma1)?;
        nonnegative("sigma2", self.sigma2)?;
        finite("c", self.c)?;
        if !(self.c > -1.0 && self.c < 1.0) {
            return Err(Error::validation(
                "c",
                format!("c must lie in the open interval (-1, 1) (got {})", self.c),
            ));
        }
        finite("r", self.r)?;
        if self.r <= 2.0 {
            return Err(Error::validation("r", format!("r must be > 2 (got {})", self.r)));
        }
        positive("theta_phi", self.theta_phi)?;
        positive("theta_psi", self.theta_psi)?;
        nonnegative("theta_c", self.theta_c)?;
        nonnegative("w", self.w)?;
        positive("nu", self.nu)?;
        positive("eta", self.eta)?;
        positive("m_phi", self.m_phi)?;
        positive("m_psi", self.m_psi)?;
        Ok(())
    }

    pub fn f_phi(&self, s: f64) -> Result<PotentialEval> {
        f_phi(self.theta_phi, s)
    }

    pub fn f_psi(&self, s: f64) -> Result<PotentialEval> {
        f_psi(self.theta_psi, s)
    }

    pub fn coupling(&self) -> Coupling {
        Coupling {
            theta_c: self.theta_c,
            w: self.w,
        }
    }

    /// Linear drag coefficient at `(phi, psi)`.
    pub fn nu_at(&self, _phi: f64, _psi: f64) -> f64 {
        self.nu
    }

    /// Forchheimer coefficient at `(phi, psi)`.
    pub fn eta_at(&self, _phi: f64, _psi: f64) -> f64 {
        self.eta
    }

    pub fn m_phi_at(&self, _phi: f64) -> f64 {
        self.m_phi
    }

    pub fn m_psi_at(&self, _psi: f64) -> f64 {
        self.m_psi
    }

    /// Pointwise reaction rate.
    pub fn sigma1_field(&self, phi: &ScalarField) -> ScalarField {
        phi.map(|_| self.sigma1)
    }
}

/// Value and first two derivatives of a potential at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialEval {
    pub value: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
}

/// Logarithmic potential on (-1, 1), normalized so `F(0) = F'(0) = 0`.
pub fn f_phi(theta: f64, s: f64) -> Result<PotentialEval> {
    if !(s > -1.0 && s < 1.0) {
        return Err(Error::OutOfDomain {
            what: "phase potential",
            value: s,
        });
    }
    let lp = (s).ln_1p();
    let lm = (-s).ln_1p();
    Ok(PotentialEval {
        value: 0.5 * theta * ((1.0 + s) * lp + (1.0 - s) * lm),
        first_derivative: 0.5 * theta * (lp - lm),
        second_derivative: theta / ((1.0 - s) * (1.0 + s)),
    })
}

/// Logarithmic potential on (0, 1), normalized so `F(1/2) = F'(1/2) = 0`.
pub fn f_psi(theta: f64, s: f64) -> Result<PotentialEval> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfDomain {
            what: "surfactant potential",
            value: s,
        });
    }
    let t = 1.0 - s;
    let ls = s.ln();
    let lt = (-s).ln_1p();
    Ok(PotentialEval {
        value: theta * (s * ls + t * lt + std::f64::consts::LN_2),
        first_derivative: theta * (ls - lt),
        second_derivative: theta / (s * t),
    })
}

/// C² clamp onto `[lo, hi]`: identity inside, constant beyond the margin.
/// Returns value, first and second derivative.
pub fn smooth_clamp(s: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    // excess beyond an edge, mapped through t - t^3 + t^4/2 on [0, 1]
    fn ramp(t: f64) -> (f64, f64, f64) {
        if t >= 1.0 {
            return (0.5, 0.0, 0.0);
        }
        let t2 = t * t;
        (t - t * t2 + 0.5 * t2 * t2, 1.0 - 3.0 * t2 + 2.0 * t2 * t, -6.0 * t + 6.0 * t2)
    }
    let d = CLAMP_MARGIN;
    if s > hi {
        let (v, d1, d2) = ramp((s - hi) / d);
        (hi + d * v, d1, d2 / d)
    } else if s < lo {
        let (v, d1, d2) = ramp((lo - s) / d);
        (lo - d * v, d1, -d2 / d)
    } else {
        (s, 1.0, 0.0)
    }
}

/// The smooth coupling `G(phi, psi) = -(theta_c/2) X^2 - w Y (1 - X^2)` with
/// `X`, `Y` the clamped arguments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub theta_c: f64,
    pub w: f64,
}

/// Value and gradient of the coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingEval {
    pub value: f64,
    pub d_phi: f64,
    pub d_psi: f64,
}

fn in_phi_box(s: f64) -> bool {
    (-1.0..=1.0).contains(&s)
}

fn in_psi_box(s: f64) -> bool {
    (0.0..=1.0).contains(&s)
}

fn secant_gap_is_small(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs() + b.abs())
}

impl Coupling {
    fn clamp_phi(s: f64) -> (f64, f64, f64) {
        smooth_clamp(s, -1.0, 1.0)
    }

    fn clamp_psi(s: f64) -> (f64, f64, f64) {
        smooth_clamp(s, 0.0, 1.0)
    }

    pub fn value(&self, phi: f64, psi: f64) -> f64 {
        let x = Self::clamp_phi(phi).0;
        let y = Self::clamp_psi(psi).0;
        -0.5 * self.theta_c * x * x - self.w * y * (1.0 - x * x)
    }

    pub fn eval(&self, phi: f64, psi: f64) -> CouplingEval {
        let (x, x1, _) = Self::clamp_phi(phi);
        let (y, y1, _) = Self::clamp_psi(psi);
        CouplingEval {
            value: -0.5 * self.theta_c * x * x - self.w * y * (1.0 - x * x),
            d_phi: (-self.theta_c * x + 2.0 * self.w * y * x) * x1,
            d_psi: -self.w * (1.0 - x * x) * y1,
        }
    }

    pub fn d_phi(&self, phi: f64, psi: f64) -> f64 {
        self.eval(phi, psi).d_phi
    }

    pub fn d_psi(&self, phi: f64, psi: f64) -> f64 {
        self.eval(phi, psi).d_psi
    }

    /// Second derivatives `(G_phiphi, G_phipsi, G_psipsi)`.
    pub fn hessian(&self, phi: f64, psi: f64) -> (f64, f64, f64) {
        let (x, x1, x2) = Self::clamp_phi(phi);
        let (y, y1, y2) = Self::clamp_psi(psi);
        let inner = -self.theta_c * x + 2.0 * self.w * y * x;
        (
            (-self.theta_c + 2.0 * self.w * y) * x1 * x1 + inner * x2,
            2.0 * self.w * x * x1 * y1,
            -self.w * (1.0 - x * x) * y2,
        )
    }

    /// `(G(a, c) - G(b, c)) / (a - b)`, or `dG/dphi (a, c)` when `a` and `b` coincide.
    pub fn secant_phi(&self, a: f64, b: f64, c: f64) -> f64 {
        if in_phi_box(a) && in_phi_box(b) {
            // polynomial in phi on the box: divide out exactly
            let y = Self::clamp_psi(c).0;
            return (-0.5 * self.theta_c + self.w * y) * (a + b);
        }
        if secant_gap_is_small(a, b, SECANT_BRANCH) {
            return self.d_phi(a, c);
        }
        (self.value(a, c) - self.value(b, c)) / (a - b)
    }

    /// `d/da` of [`Coupling::secant_phi`].
    pub fn secant_phi_da(&self, a: f64, b: f64, c: f64) -> f64 {
        if in_phi_box(a) && in_phi_box(b) {
            let y = Self::clamp_psi(c).0;
            return -0.5 * self.theta_c + self.w * y;
        }
        if secant_gap_is_small(a, b, SECANT_SLOPE_BRANCH) {
            return 0.5 * self.hessian(a, c).0;
        }
        (self.d_phi(a, c) - self.secant_phi(a, b, c)) / (a - b)
    }

    /// `d/dc` of [`Coupling::secant_phi`] (dependence on the surfactant slot).
    pub fn secant_phi_dc(&self, a: f64, b: f64, c: f64) -> f64 {
        if in_phi_box(a) && in_phi_box(b) {
            let y1 = Self::clamp_psi(c).1;
            return self.w * y1 * (a + b);
        }
        if secant_gap_is_small(a, b, SECANT_BRANCH) {
            return self.hessian(a, c).1;
        }
        (self.d_psi(a, c) - self.d_psi(b, c)) / (a - b)
    }

    /// `(G(c, a) - G(c, b)) / (a - b)`, or `dG/dpsi (c, a)` when `a` and `b` coincide.
    pub fn secant_psi(&self, c: f64, a: f64, b: f64) -> f64 {
        if in_psi_box(a) && in_psi_box(b) {
            let x = Self::clamp_phi(c).0;
            return -self.w * (1.0 - x * x);
        }
        if secant_gap_is_small(a, b, SECANT_BRANCH) {
            return self.d_psi(c, a);
        }
        (self.value(c, a) - self.value(c, b)) / (a - b)
    }

    /// `d/da` of [`Coupling::secant_psi`].
    pub fn secant_psi_da(&self, c: f64, a: f64, b: f64) -> f64 {
        if in_psi_box(a) && in_psi_box(b) {
            return 0.0;
        }
        if secant_gap_is_small(a, b, SECANT_SLOPE_BRANCH) {
            return 0.5 * self.hessian(c, a).2;
        }
        (self.d_psi(c, a) - self.secant_psi(c, a, b)) / (a - b)
    }
}

/// Secant quotient in the phase slot.
pub fn secant_g_phi(params: &ModelParams, a: f64, b: f64, c_arg: f64) -> f64 {
    params.coupling().secant_phi(a, b, c_arg)
}

/// Secant quotient in the surfactant slot.
pub fn secant_g_psi(params: &ModelParams, c_arg: f64, a: f64, b: f64) -> f64 {
    params.coupling().secant_psi(c_arg, a, b)
}

/// Individual contributions to the free energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FreeEnergyParts {
    pub gradient_phi: f64,
    pub potential_phi: f64,
    pub nonlocal: f64,
    pub gradient_psi: f64,
    pub potential_psi: f64,
    pub coupling: f64,
}

impl FreeEnergyParts {
    pub fn total(&self) -> f64 {
        self.gradient_phi
            + self.potential_phi
            + self.nonlocal
            + self.gradient_psi
            + self.potential_psi
            + self.coupling
    }
}

pub fn free_energy_parts(
    phi: &ScalarField,
    psi: &ScalarField,
    params: &ModelParams,
) -> Result<FreeEnergyParts> {
    phi.grid().same_as(psi.grid())?;
    let da = phi.grid().cell_area();
    let g = params.coupling();
    let (mut fp, mut fs, mut gc) = (0.0, 0.0, 0.0);
    for (&p, &s) in phi.values().iter().zip(psi.values()) {
        fp += params.f_phi(p)?.value;
        fs += params.f_psi(s)?.value;
        gc += g.value(p, s);
    }
    let nonlocal = if params.sigma2 > 0.0 {
        0.5 * params.sigma2 * phi.zero_mean().hminus1_norm_sq_unchecked()
    } else {
        0.0
    };
    Ok(FreeEnergyParts {
        gradient_phi: 0.5 * phi.gradient().l2_norm_sq(),
        potential_phi: da * fp,
        nonlocal,
        gradient_psi: 0.5 * params.beta * psi.gradient().l2_norm_sq(),
        potential_psi: da * fs,
        coupling: da * gc,
    })
}

/// Free energy by midpoint quadrature.
pub fn free_energy(phi: &ScalarField, psi: &ScalarField, params: &ModelParams) -> Result<f64> {
    Ok(free_energy_parts(phi, psi, params)?.total())
}

/// Kinetic part `(alpha/2) ||u||^2`.
pub fn kinetic_energy(state: &State, params: &ModelParams) -> f64 {
    if params.alpha == 0.0 {
        0.0
    } else {
        0.5 * params.alpha * state.u.l2_norm_sq()
    }
}

/// Free energy plus kinetic energy.
pub fn total_energy(state: &State, params: &ModelParams) -> Result<f64> {
    Ok(free_energy(&state.phi, &state.psi, params)? + kinetic_energy(state, params))
}
