//! One implicit-explicit time step of the coupled flow / phase / surfactant system.
//!
//! Each step freezes the zero-mean potentials, solves the velocity subproblem, then
//! the surfactant subsystem (which only sees the velocity and the old fields) and the
//! phase subsystem (which sees the new surfactant through the coupling secant), and
//! repeats until the velocity, fields and potentials stop changing.

use crate::darcy::{self, VelocitySettings, VelocitySolveReport};
use crate::error::{Error, Result};
use crate::grid::{compensated_sum, Basis, Grid2D, ScalarField, VectorField};
use crate::krylov::{gmres, GmresSettings};
use crate::model::{self, ModelParams};

/// Minimum distance kept between Newton iterates and the ends of the admissible range.
pub const BOUND_MARGIN: f64 = 1e-13;

const MAX_HALVINGS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub u: VectorField,
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub time: f64,
    pub step_index: u64,
}

impl State {
    pub fn homogeneous(grid: &Grid2D, phi: f64, psi: f64) -> Self {
        State {
            u: VectorField::zeros(grid),
            phi: ScalarField::constant(grid, phi),
            psi: ScalarField::constant(grid, psi),
            time: 0.0,
            step_index: 0,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        self.phi.grid()
    }

    /// Checks shapes and the pointwise bounds `|phi| < 1`, `0 < psi < 1`.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.phi.grid().same_as(self.psi.grid())?;
        self.phi.grid().same_as(self.u.grid())?;
        let finite = |f: &ScalarField| f.values().iter().all(|v| v.is_finite());
        if !(finite(&self.phi) && finite(&self.psi) && finite(&self.u.x) && finite(&self.u.y)) {
            return Err(Error::validation("state", "non-finite field entry"));
        }
        let (lo, hi) = (self.phi.min(), self.phi.max());
        if !(lo > -1.0 && hi < 1.0) {
            return Err(Error::OutOfDomain {
                what: "phase field",
                value: if lo <= -1.0 { lo } else { hi },
            });
        }
        let (lo, hi) = (self.psi.min(), self.psi.max());
        if !(lo > 0.0 && hi < 1.0) {
            return Err(Error::OutOfDomain {
                what: "surfactant field",
                value: if lo <= 0.0 { lo } else { hi },
            });
        }
        if !(self.time >= 0.0) {
            return Err(Error::validation("time", "must be >= 0"));
        }
        Ok(())
    }
}

/// Physical chemical potentials and the zero-mean variables the solver works with.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemicalPotentials {
    pub mu_phi: ScalarField,
    pub mu_psi: ScalarField,
    pub mu_phi_hat: ScalarField,
    pub mu_psi_hat: ScalarField,
}

impl ChemicalPotentials {
    pub fn zeros(grid: &Grid2D) -> Self {
        ChemicalPotentials {
            mu_phi: ScalarField::zeros(grid),
            mu_psi: ScalarField::zeros(grid),
            mu_phi_hat: ScalarField::zeros(grid),
            mu_psi_hat: ScalarField::zeros(grid),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverTolerances {
    /// Max-norm bound on `h` times the discrete equation residual.
    pub newton_tol: f64,
    pub picard_tol: f64,
    /// Relative tolerance on the energy-inequality slack.
    pub energy_tol: f64,
    pub velocity_tol: f64,
    pub max_newton: usize,
    pub max_picard: usize,
    pub newton_damping_min: f64,
    pub velocity_max_outer: usize,
    pub uzawa_relaxation: f64,
    /// Apply the two-thirds rule to the explicit gradients.
    pub dealias: bool,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances {
            newton_tol: 1e-10,
            picard_tol: 1e-10,
            energy_tol: 1e-9,
            velocity_tol: 1e-11,
            max_newton: 50,
            max_picard: 100,
            newton_damping_min: 1.0 / 1024.0,
            velocity_max_outer: 500,
            uzawa_relaxation: 1.0,
            dealias: false,
        }
    }
}

impl SolverTolerances {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("newton_tol", self.newton_tol),
            ("picard_tol", self.picard_tol),
            ("energy_tol", self.energy_tol),
            ("velocity_tol", self.velocity_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(key, format!("{key} must be > 0 (got {v})")));
            }
        }
        for (key, v) in [
            ("max_newton", self.max_newton),
            ("max_picard", self.max_picard),
            ("velocity_max_outer", self.velocity_max_outer),
        ] {
            if v == 0 {
                return Err(Error::validation(key, format!("{key} must be >= 1")));
            }
        }
        if !(self.newton_damping_min > 0.0 && self.newton_damping_min <= 1.0) {
            return Err(Error::validation(
                "newton_damping_min",
                format!("must lie in (0, 1] (got {})", self.newton_damping_min),
            ));
        }
        if !(self.uzawa_relaxation > 0.0 && self.uzawa_relaxation < 2.0) {
            return Err(Error::validation(
                "uzawa_relaxation",
                format!("must lie in (0, 2) (got {})", self.uzawa_relaxation),
            ));
        }
        Ok(())
    }

    fn velocity(&self) -> VelocitySettings {
        VelocitySettings {
            tol: self.velocity_tol,
            max_outer: self.velocity_max_outer,
            relaxation: self.uzawa_relaxation,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations_phi: usize,
    pub iterations_psi: usize,
    pub residual_phi: f64,
    pub residual_psi: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub picard_iterations: usize,
    pub newton_iterations_phi: usize,
    pub newton_iterations_psi: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `h` times the dissipation and reaction terms, summed over substeps.
    pub dissipation_h: f64,
    pub inequality_slack: f64,
    pub mass_target_a: f64,
    pub mass_target_b: f64,
    pub mass_achieved_phi: f64,
    pub mass_achieved_psi: f64,
    pub max_phi: f64,
    pub min_phi: f64,
    pub max_psi: f64,
    pub min_psi: f64,
    pub halvings: usize,
    pub substeps: usize,
    pub velocity: VelocitySolveReport,
}

impl StepReport {
    /// Whether the slack meets `slack >= -energy_tol (1 + |E_before|)`.
    pub fn slack_ok(&self, energy_tol: f64) -> bool {
        self.inequality_slack >= -energy_tol * (1.0 + self.energy_before.abs())
    }
}

/// Prescribed means `(a, b)` of the new phase and surfactant fields.
pub fn mean_targets(
    phi_prev: &ScalarField,
    psi_prev: &ScalarField,
    h: f64,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let sigma_bar = params.sigma1_field(phi_prev).mean();
    if h * sigma_bar >= 1.0 {
        return Err(Error::StepTooLarge {
            h,
            sigma1: sigma_bar,
        });
    }
    let m = phi_prev.mean();
    Ok((m - h * sigma_bar * (m - params.c), psi_prev.mean()))
}

/// Gradient of an old field used in the explicit convection and forcing terms.
pub fn explicit_gradient(f: &ScalarField, dealias: bool) -> VectorField {
    if dealias {
        f.two_thirds_filtered().gradient()
    } else {
        f.gradient()
    }
}

type Pointwise<'a> = dyn Fn(usize, f64) -> Result<(f64, f64)> + 'a;

/// One Cahn-Hilliard type subsystem with the potential eliminated:
/// `(x - x_prev)/h + e = -m A mu`, `mu = P0[N(x)] + sigma Ninv(x - a) + kappa A x`.
struct Subsystem<'a> {
    name: &'static str,
    grid: &'a Grid2D,
    h: f64,
    mobility: f64,
    kappa: f64,
    sigma: f64,
    target: f64,
    lo: f64,
    hi: f64,
    /// Cosine coefficients of `e - x_prev/h`, mean mode removed.
    offset_hat: Vec<f64>,
    nonlinear: &'a Pointwise<'a>,
}

struct Evaluation {
    residual: Vec<f64>,
    mu_hat_coeffs: Vec<f64>,
    slope: Vec<f64>,
}

impl Subsystem<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let n = x.len();
        let mut nl = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for i in 0..n {
            let (v, d) = (self.nonlinear)(i, x[i])?;
            nl[i] = v;
            slope[i] = d;
        }
        let grid = self.grid;
        let lam = grid.eigenvalues();
        grid.forward_in_place(&mut nl, Basis::CosCos);
        let mut x_hat = x.to_vec();
        grid.forward_in_place(&mut x_hat, Basis::CosCos);
        let mut mu = nl;
        mu[0] = 0.0;
        let mut res = vec![0.0; n];
        for k in 1..n {
            mu[k] += self.sigma * x_hat[k] / lam[k] + self.kappa * lam[k] * x_hat[k];
            res[k] = x_hat[k] / self.h + self.offset_hat[k] + self.mobility * lam[k] * mu[k];
        }
        grid.inverse_in_place(&mut res, Basis::CosCos);
        Ok(Evaluation {
            residual: res,
            mu_hat_coeffs: mu,
            slope,
        })
    }

    fn jacobian_apply(&self, slope: &[f64], v: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let lam = grid.eigenvalues();
        let mut v_hat = v.to_vec();
        grid.forward_in_place(&mut v_hat, Basis::CosCos);
        let mut dv: Vec<f64> = slope.iter().zip(v).map(|(d, v)| d * v).collect();
        grid.forward_in_place(&mut dv, Basis::CosCos);
        out[0] = v_hat[0] / self.h;
        for k in 1..v.len() {
            let mu = dv[k] + self.sigma * v_hat[k] / lam[k] + self.kappa * lam[k] * v_hat[k];
            out[k] = v_hat[k] / self.h + self.mobility * lam[k] * mu;
        }
        grid.inverse_in_place(out, Basis::CosCos);
    }

    fn precondition(&self, mean_slope: f64, v: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let lam = grid.eigenvalues();
        out.copy_from_slice(v);
        grid.forward_in_place(out, Basis::CosCos);
        out[0] *= self.h;
        for k in 1..v.len() {
            let l = lam[k];
            let diag = 1.0 / self.h
                + self.mobility * (self.kappa * l * l + self.sigma + mean_slope * l);
            out[k] /= diag;
        }
        grid.inverse_in_place(out, Basis::CosCos);
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let (lo, hi) = (self.lo + BOUND_MARGIN, self.hi - BOUND_MARGIN);
        x.iter().all(|&v| v >= lo && v <= hi)
    }

    fn recentre(&self, x: &mut [f64]) {
        let mean = compensated_sum(x) / x.len() as f64;
        let shift = self.target - mean;
        x.iter_mut().for_each(|v| *v += shift);
    }

    fn scaled_residual(&self, ev: &Evaluation) -> f64 {
        self.h * ev.residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Damped Newton; returns the solution, its zero-mean potential and the number of passes.
    fn solve(&self, guess: &[f64], tol: &SolverTolerances) -> Result<(Vec<f64>, ScalarField, usize, f64)> {
        let n = guess.len();
        let mut x = guess.to_vec();
        self.recentre(&mut x);
        if !self.admissible(&x) {
            // fall back to the constant state, which is always admissible
            x.iter_mut().for_each(|v| *v = self.target);
        }
        let mut ev = self.evaluate(&x)?;
        let l2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut merit = l2(&ev.residual);
        let mut scaled = self.scaled_residual(&ev);
        for pass in 1..=tol.max_newton {
            if scaled <= tol.newton_tol {
                let mu = ScalarField::from_cos_coeffs(self.grid, ev.mu_hat_coeffs);
                return Ok((x, mu, pass, scaled));
            }
            let rhs: Vec<f64> = ev.residual.iter().map(|v| -v).collect();
            let mean_slope = (ev.slope.iter().sum::<f64>() / n as f64).max(0.0);
            let mut delta = vec![0.0; n];
            let settings = GmresSettings {
                rtol: 1e-9,
                atol: 1e-3 * tol.newton_tol / self.h,
                restart: 40,
                max_iter: 400,
            };
            let slope = &ev.slope;
            gmres(
                |v, out| self.jacobian_apply(slope, v, out),
                |v, out| self.precondition(mean_slope, v, out),
                &rhs,
                &mut delta,
                &settings,
            );
            let dmean = delta.iter().sum::<f64>() / n as f64;
            delta.iter_mut().for_each(|v| *v -= dmean);

            let mut step = 1.0;
            let (nx, nev, nm, ns) = loop {
                let mut trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                self.recentre(&mut trial);
                let out_of_bounds = !self.admissible(&trial);
                if !out_of_bounds {
                    let trial_ev = self.evaluate(&trial)?;
                    let trial_merit = l2(&trial_ev.residual);
                    let trial_scaled = self.scaled_residual(&trial_ev);
                    if trial_merit <= (1.0 - 1e-4 * step) * merit || trial_scaled <= tol.newton_tol {
                        break (trial, trial_ev, trial_merit, trial_scaled);
                    }
                }
                step *= 0.5;
                if step < tol.newton_damping_min {
                    return Err(if out_of_bounds {
                        Error::BoundViolation { field: self.name }
                    } else {
                        Error::NewtonDivergence {
                            field: self.name,
                            iterations: pass,
                            residual: scaled,
                        }
                    });
                }
            };
            x = nx;
            ev = nev;
            merit = nm;
            scaled = ns;
        }
        if scaled <= tol.newton_tol {
            let mu = ScalarField::from_cos_coeffs(self.grid, ev.mu_hat_coeffs);
            return Ok((x, mu, tol.max_newton, scaled));
        }
        Err(Error::NewtonDivergence {
            field: self.name,
            iterations: tol.max_newton,
            residual: scaled,
        })
    }
}

fn offset_coeffs(grid: &Grid2D, explicit: &[f64], prev: &ScalarField, h: f64) -> Vec<f64> {
    let mut v: Vec<f64> = explicit
        .iter()
        .zip(prev.values())
        .map(|(e, p)| e - p / h)
        .collect();
    grid.forward_in_place(&mut v, Basis::CosCos);
    v[0] = 0.0;
    v
}

/// Solution of the two Cahn-Hilliard subsystems for a frozen velocity.
#[derive(Clone, Debug)]
pub struct SubsystemSolution {
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub mu_phi_hat: ScalarField,
    pub mu_psi_hat: ScalarField,
    pub report: NewtonReport,
}

/// Old-step quantities shared by every Picard sweep of one step.
struct StepContext<'a> {
    prev: &'a State,
    h: f64,
    params: &'a ModelParams,
    targets: (f64, f64),
    grad_phi_prev: VectorField,
    grad_psi_prev: VectorField,
    reaction: ScalarField,
}

impl<'a> StepContext<'a> {
    fn new(prev: &'a State, h: f64, params: &'a ModelParams, tol: &SolverTolerances) -> Result<Self> {
        let targets = mean_targets(&prev.phi, &prev.psi, h, params)?;
        let phi_bar = prev.phi.mean();
        let reaction = params.sigma1_field(&prev.phi).scale(phi_bar - params.c);
        Ok(StepContext {
            prev,
            h,
            params,
            targets,
            grad_phi_prev: explicit_gradient(&prev.phi, tol.dealias),
            grad_psi_prev: explicit_gradient(&prev.psi, tol.dealias),
            reaction,
        })
    }

    fn initial_guesses(&self) -> (ScalarField, ScalarField) {
        let p = self.params;
        let sigma_bar = p.sigma1_field(&self.prev.phi).mean();
        let factor = 1.0 - self.h * sigma_bar;
        let phi = self.prev.phi.map(|v| p.c + factor * (v - p.c));
        (phi, self.prev.psi.clone())
    }

    fn force(&self, mu_phi_hat: &ScalarField, mu_psi_hat: &ScalarField) -> VectorField {
        self.grad_phi_prev
            .mul_scalar_field(mu_phi_hat)
            .add(&self.grad_psi_prev.mul_scalar_field(mu_psi_hat))
    }

    fn solve_subsystems(
        &self,
        u: &VectorField,
        guess_phi: &ScalarField,
        guess_psi: &ScalarField,
        tol: &SolverTolerances,
    ) -> Result<SubsystemSolution> {
        let p = self.params;
        let grid = self.prev.grid();
        let g = p.coupling();
        let h = self.h;

        // surfactant first: it sees only u and the old fields
        let conv_psi = u.pointwise_dot(&self.grad_psi_prev);
        let phi_prev = self.prev.phi.values();
        let psi_prev = self.prev.psi.values();
        let nl_psi = |i: usize, s: f64| -> Result<(f64, f64)> {
            let f = p.f_psi(s)?;
            Ok((
                f.first_derivative + g.secant_psi(phi_prev[i], s, psi_prev[i]),
                f.second_derivative + g.secant_psi_da(phi_prev[i], s, psi_prev[i]),
            ))
        };
        let sub_psi = Subsystem {
            name: "surfactant",
            grid,
            h,
            mobility: p.m_psi,
            kappa: p.beta,
            sigma: 0.0,
            target: self.targets.1,
            lo: 0.0,
            hi: 1.0,
            offset_hat: offset_coeffs(grid, conv_psi.values(), &self.prev.psi, h),
            nonlinear: &nl_psi,
        };
        let (psi, mu_psi_hat, it_psi, res_psi) = sub_psi.solve(guess_psi.values(), tol)?;

        let conv_phi = u.pointwise_dot(&self.grad_phi_prev);
        let explicit_phi: Vec<f64> = conv_phi
            .values()
            .iter()
            .zip(self.reaction.values())
            .map(|(a, b)| a + b)
            .collect();
        let psi_new = &psi;
        let nl_phi = |i: usize, s: f64| -> Result<(f64, f64)> {
            let f = p.f_phi(s)?;
            Ok((
                f.first_derivative + g.secant_phi(s, phi_prev[i], psi_new[i]),
                f.second_derivative + g.secant_phi_da(s, phi_prev[i], psi_new[i]),
            ))
        };
        let sub_phi = Subsystem {
            name: "phase",
            grid,
            h,
            mobility: p.m_phi,
            kappa: 1.0,
            sigma: p.sigma2,
            target: self.targets.0,
            lo: -1.0,
            hi: 1.0,
            offset_hat: offset_coeffs(grid, &explicit_phi, &self.prev.phi, h),
            nonlinear: &nl_phi,
        };
        let (phi, mu_phi_hat, it_phi, res_phi) = sub_phi.solve(guess_phi.values(), tol)?;

        Ok(SubsystemSolution {
            phi: ScalarField::from_vec(grid, phi),
            psi: ScalarField::from_vec(grid, psi),
            mu_phi_hat,
            mu_psi_hat,
            report: NewtonReport {
                iterations_phi: it_phi,
                iterations_psi: it_psi,
                residual_phi: res_phi,
                residual_psi: res_psi,
            },
        })
    }
}

/// Solves both Cahn-Hilliard subsystems for the velocity `u`, with means `targets`.
///
/// Initial guesses default to the contraction of the old fields toward the targets.
pub fn ch_subsystem_solve(
    prev: &State,
    u: &VectorField,
    targets: (f64, f64),
    h: f64,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> Result<SubsystemSolution> {
    let mut ctx = StepContext::new(prev, h, params, tol)?;
    ctx.targets = targets;
    let (gp, gs) = ctx.initial_guesses();
    ctx.solve_subsystems(u, &gp, &gs, tol)
}

/// Shifts the zero-mean potentials to the physical ones.
pub fn recover_physical_potentials(
    phi: &ScalarField,
    psi: &ScalarField,
    phi_prev: &ScalarField,
    psi_prev: &ScalarField,
    mu_phi_hat: ScalarField,
    mu_psi_hat: ScalarField,
    params: &ModelParams,
) -> Result<ChemicalPotentials> {
    let g = params.coupling();
    let n = phi.grid().len();
    let (mut s_phi, mut s_psi) = (0.0, 0.0);
    for i in 0..n {
        let (p, s) = (phi.values()[i], psi.values()[i]);
        let (pp, sp) = (phi_prev.values()[i], psi_prev.values()[i]);
        s_phi += params.f_phi(p)?.first_derivative + g.secant_phi(p, pp, s);
        s_psi += params.f_psi(s)?.first_derivative + g.secant_psi(pp, s, sp);
    }
    let shift_phi = s_phi / n as f64;
    let shift_psi = s_psi / n as f64;
    Ok(ChemicalPotentials {
        mu_phi: mu_phi_hat.add_scalar(shift_phi),
        mu_psi: mu_psi_hat.add_scalar(shift_psi),
        mu_phi_hat,
        mu_psi_hat,
    })
}

/// Rates entering the discrete energy inequality at the new time level.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DissipationTerms {
    pub d2: f64,
    pub dr: f64,
    /// `||grad mu_phi||^2` (mobility not included).
    pub grad_mu_phi_sq: f64,
    pub grad_mu_psi_sq: f64,
    /// `(mean(phi_prev) - c) * int sigma1 mu_phi`.
    pub reaction: f64,
}

impl DissipationTerms {
    pub fn compute(
        prev: &State,
        next: &State,
        potentials: &ChemicalPotentials,
        params: &ModelParams,
    ) -> Self {
        let (d2, dr) = darcy::dissipation_integrands(&next.u, params);
        let sigma = params.sigma1_field(&prev.phi);
        DissipationTerms {
            d2,
            dr,
            grad_mu_phi_sq: potentials.mu_phi.gradient().l2_norm_sq(),
            grad_mu_psi_sq: potentials.mu_psi.gradient().l2_norm_sq(),
            reaction: (prev.phi.mean() - params.c) * sigma.dot(&potentials.mu_phi),
        }
    }

    /// `h` times everything that the energy decrease must pay for.
    pub fn budget(&self, h: f64, params: &ModelParams) -> f64 {
        h * (self.d2
            + self.dr
            + params.m_phi * self.grad_mu_phi_sq
            + params.m_psi * self.grad_mu_psi_sq
            + self.reaction)
    }
}

/// `E(prev) - [E(next) + budget]`; nonnegative for the exact discrete solution.
pub fn inequality_slack(energy_prev: f64, energy_next: f64, h: f64, terms: &DissipationTerms, params: &ModelParams) -> f64 {
    energy_prev - (energy_next + terms.budget(h, params))
}

/// Result of one (possibly subdivided) coupled step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: State,
    pub potentials: ChemicalPotentials,
    pub report: StepReport,
}

fn max_change(a: &ScalarField, b: &ScalarField) -> f64 {
    a.sub(b).max_abs()
}

fn single_step(
    prev: &State,
    warm: Option<&ChemicalPotentials>,
    h: f64,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> Result<StepOutcome> {
    let ctx = StepContext::new(prev, h, params, tol)?;
    let grid = prev.grid();
    let (mut phi_it, mut psi_it) = ctx.initial_guesses();
    let (mut mu_phi_hat, mut mu_psi_hat) = match warm {
        Some(w) => (w.mu_phi_hat.clone(), w.mu_psi_hat.clone()),
        None => (ScalarField::zeros(grid), ScalarField::zeros(grid)),
    };
    let mut u_it = prev.u.clone();
    let mut newton_phi = 0;
    let mut newton_psi = 0;
    let mut change = f64::INFINITY;
    let vel_settings = tol.velocity();

    for sweep in 1..=tol.max_picard {
        let force = ctx.force(&mu_phi_hat, &mu_psi_hat);
        let (u, _pi, vrep) = darcy::velocity_solve(&prev.u, &force, h, params, &vel_settings)?;
        let sol = ctx.solve_subsystems(&u, &phi_it, &psi_it, tol)?;
        newton_phi += sol.report.iterations_phi;
        newton_psi += sol.report.iterations_psi;

        let field_change = max_change(&u.x, &u_it.x)
            .max(max_change(&u.y, &u_it.y))
            .max(max_change(&sol.phi, &phi_it))
            .max(max_change(&sol.psi, &psi_it));
        let mu_scale = 1.0 + sol.mu_phi_hat.max_abs().max(sol.mu_psi_hat.max_abs());
        let mu_change = max_change(&sol.mu_phi_hat, &mu_phi_hat)
            .max(max_change(&sol.mu_psi_hat, &mu_psi_hat))
            / mu_scale;
        change = field_change.max(mu_change);

        u_it = u;
        phi_it = sol.phi;
        psi_it = sol.psi;
        mu_phi_hat = sol.mu_phi_hat;
        mu_psi_hat = sol.mu_psi_hat;

        if change <= tol.picard_tol {
            let next = State {
                u: u_it,
                phi: phi_it,
                psi: psi_it,
                time: prev.time + h,
                step_index: prev.step_index + 1,
            };
            let potentials = recover_physical_potentials(
                &next.phi,
                &next.psi,
                &prev.phi,
                &prev.psi,
                mu_phi_hat,
                mu_psi_hat,
                params,
            )?;
            let e_prev = model::total_energy(prev, params)?;
            let e_next = model::total_energy(&next, params)?;
            let terms = DissipationTerms::compute(prev, &next, &potentials, params);
            let report = StepReport {
                picard_iterations: sweep,
                newton_iterations_phi: newton_phi,
                newton_iterations_psi: newton_psi,
                energy_before: e_prev,
                energy_after: e_next,
                dissipation_h: terms.budget(h, params),
                inequality_slack: inequality_slack(e_prev, e_next, h, &terms, params),
                mass_target_a: ctx.targets.0,
                mass_target_b: ctx.targets.1,
                mass_achieved_phi: next.phi.mean(),
                mass_achieved_psi: next.psi.mean(),
                max_phi: next.phi.max(),
                min_phi: next.phi.min(),
                max_psi: next.psi.max(),
                min_psi: next.psi.min(),
                halvings: 0,
                substeps: 1,
                velocity: vrep,
            };
            return Ok(StepOutcome {
                next,
                potentials,
                report,
            });
        }
    }
    Err(Error::PicardStall {
        iterations: tol.max_picard,
        change,
        halvings: 0,
    })
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::PicardStall { .. }
            | Error::NewtonDivergence { .. }
            | Error::BoundViolation { .. }
            | Error::NonConvergence { .. }
    )
}

/// Advances `prev` by `h` with a cold Picard start.
pub fn coupled_time_step(
    prev: &State,
    h: f64,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> Result<StepOutcome> {
    coupled_time_step_warm(prev, None, h, params, tol)
}

/// Advances `prev` by `h`, seeding the Picard loop with `warm` potentials.
///
/// When the coupled solve fails, the interval is retried as 2, 4, ... equal
/// substeps, at most five times.
pub fn coupled_time_step_warm(
    prev: &State,
    warm: Option<&ChemicalPotentials>,
    h: f64,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> Result<StepOutcome> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::validation("h", format!("time step must be > 0 (got {h})")));
    }
    mean_targets(&prev.phi, &prev.psi, h, params)?;
    let mut last_err = None;
    for halvings in 0..=MAX_HALVINGS {
        let substeps = 1usize << halvings;
        let hs = h / substeps as f64;
        match run_substeps(prev, warm, hs, substeps, params, tol) {
            Ok(mut out) => {
                out.report.halvings = halvings;
                out.next.time = prev.time + h;
                out.next.step_index = prev.step_index + 1;
                return Ok(out);
            }
            Err(e) if retryable(&e) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(match last_err {
        Some(Error::PicardStall { iterations, change, .. }) => Error::PicardStall {
            iterations,
            change,
            halvings: MAX_HALVINGS,
        },
        Some(e) => e,
        None => unreachable!("at least one attempt is made"),
    })
}

fn run_substeps(
    prev: &State,
    warm: Option<&ChemicalPotentials>,
    hs: f64,
    substeps: usize,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> Result<StepOutcome> {
    let mut out = single_step(prev, warm, hs, params, tol)?;
    for _ in 1..substeps {
        let step = single_step(&out.next, Some(&out.potentials), hs, params, tol)?;
        let r = &mut out.report;
        let s = step.report;
        r.picard_iterations += s.picard_iterations;
        r.newton_iterations_phi += s.newton_iterations_phi;
        r.newton_iterations_psi += s.newton_iterations_psi;
        r.energy_after = s.energy_after;
        r.dissipation_h += s.dissipation_h;
        r.inequality_slack += s.inequality_slack;
        r.mass_target_a = s.mass_target_a;
        r.mass_target_b = s.mass_target_b;
        r.mass_achieved_phi = s.mass_achieved_phi;
        r.mass_achieved_psi = s.mass_achieved_psi;
        r.max_phi = s.max_phi;
        r.min_phi = s.min_phi;
        r.max_psi = s.max_psi;
        r.min_psi = s.min_psi;
        r.velocity = s.velocity;
        out.next = step.next;
        out.potentials = step.potentials;
    }
    out.report.substeps = substeps;
    Ok(out)
}
