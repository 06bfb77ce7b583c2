//! Energy ledger, equilibrium detection and the stationary problem.

use std::fmt::Write as _;

use crate::darcy;
use crate::error::{Error, Result};
use crate::grid::{apply_inverse_eigenvalues, compensated_sum, Basis, Grid2D, ScalarField};
use crate::krylov::{gmres, GmresSettings};
use crate::model::{self, ModelParams};
use crate::step::{inequality_slack, ChemicalPotentials, DissipationTerms, State, BOUND_MARGIN};

/// Default threshold on [`equilibrium_residual`] for declaring equilibrium.
pub const EQUILIBRIUM_THRESHOLD: f64 = 1e-6;

/// One row of the per-step energy ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LedgerRow {
    pub time: f64,
    pub energy_total: f64,
    pub energy_free: f64,
    pub kinetic: f64,
    pub dissipation_d2: f64,
    pub dissipation_dr: f64,
    pub grad_mu_phi_sq: f64,
    pub grad_mu_psi_sq: f64,
    pub reaction_term: f64,
    pub slack: f64,
    pub mean_phi: f64,
    pub mean_psi: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    pub min_psi: f64,
    pub max_psi: f64,
    pub u_l2: f64,
    pub u_lr: f64,
}

impl LedgerRow {
    pub const HEADER: [&'static str; 18] = [
        "time",
        "energy_total",
        "energy_free",
        "kinetic",
        "dissipation_d2",
        "dissipation_dr",
        "grad_mu_phi_sq",
        "grad_mu_psi_sq",
        "reaction_term",
        "slack",
        "mean_phi",
        "mean_psi",
        "min_phi",
        "max_phi",
        "min_psi",
        "max_psi",
        "u_l2",
        "u_lr",
    ];

    pub fn values(&self) -> [f64; 18] {
        [
            self.time,
            self.energy_total,
            self.energy_free,
            self.kinetic,
            self.dissipation_d2,
            self.dissipation_dr,
            self.grad_mu_phi_sq,
            self.grad_mu_psi_sq,
            self.reaction_term,
            self.slack,
            self.mean_phi,
            self.mean_psi,
            self.min_phi,
            self.max_phi,
            self.min_psi,
            self.max_psi,
            self.u_l2,
            self.u_lr,
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 18 {
            return Err(Error::validation("ledger", format!("expected 18 columns, got {}", v.len())));
        }
        Ok(LedgerRow {
            time: v[0],
            energy_total: v[1],
            energy_free: v[2],
            kinetic: v[3],
            dissipation_d2: v[4],
            dissipation_dr: v[5],
            grad_mu_phi_sq: v[6],
            grad_mu_psi_sq: v[7],
            reaction_term: v[8],
            slack: v[9],
            mean_phi: v[10],
            mean_psi: v[11],
            min_phi: v[12],
            max_phi: v[13],
            min_psi: v[14],
            max_psi: v[15],
            u_l2: v[16],
            u_lr: v[17],
        })
    }

    pub fn csv_header() -> String {
        Self::HEADER.join(",")
    }

    /// Values with 17 significant digits, comma separated.
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.values().iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s
    }

    /// Ledger entry for the step `prev -> next`; `energy_prev` is the total energy of `prev`.
    pub fn build(
        energy_prev: f64,
        prev: &State,
        next: &State,
        potentials: &ChemicalPotentials,
        h: f64,
        params: &ModelParams,
    ) -> Result<Self> {
        let free = model::free_energy(&next.phi, &next.psi, params)?;
        let kinetic = model::kinetic_energy(next, params);
        let terms = DissipationTerms::compute(prev, next, potentials, params);
        Ok(LedgerRow {
            time: next.time,
            energy_total: free + kinetic,
            energy_free: free,
            kinetic,
            dissipation_d2: terms.d2,
            dissipation_dr: terms.dr,
            grad_mu_phi_sq: terms.grad_mu_phi_sq,
            grad_mu_psi_sq: terms.grad_mu_psi_sq,
            reaction_term: terms.reaction,
            slack: inequality_slack(energy_prev, free + kinetic, h, &terms, params),
            mean_phi: next.phi.mean(),
            mean_psi: next.psi.mean(),
            min_phi: next.phi.min(),
            max_phi: next.phi.max(),
            min_psi: next.psi.min(),
            max_psi: next.psi.max(),
            u_l2: next.u.l2_norm(),
            u_lr: darcy::lr_norm(&next.u, params.r),
        })
    }
}

/// `max(||grad mu_phi||, ||grad mu_psi||, ||u||, |mean(sigma1) (mean(phi) - c)|)`.
pub fn equilibrium_residual(state: &State, potentials: &ChemicalPotentials, params: &ModelParams) -> f64 {
    let sigma = params.sigma1_field(&state.phi).mean();
    potentials
        .mu_phi
        .gradient()
        .l2_norm()
        .max(potentials.mu_psi.gradient().l2_norm())
        .max(state.u.l2_norm())
        .max((sigma * (state.phi.mean() - params.c)).abs())
}

/// Indices of rows with `time >= t_min` and `grad_mu_phi_sq + grad_mu_psi_sq <= m^2`.
pub fn classify_good_times(ledger: &[LedgerRow], m: f64, t_min: f64) -> Vec<usize> {
    let bound = m * m;
    ledger
        .iter()
        .enumerate()
        .filter(|(_, row)| row.time >= t_min && row.grad_mu_phi_sq + row.grad_mu_psi_sq <= bound)
        .map(|(i, _)| i)
        .collect()
}

/// `(1 - max|phi|, 1/2 - max|psi - 1/2|)`.
pub fn separation_margin(phi: &ScalarField, psi: &ScalarField) -> (f64, f64) {
    let dphi = 1.0 - phi.max_abs();
    let dpsi = 0.5 - psi.values().iter().fold(0.0_f64, |m, v| m.max((v - 0.5).abs()));
    (dphi, dpsi)
}

/// Phase mean at time `t` for a constant reaction rate.
pub fn mass_closed_form(t: f64, params: &ModelParams, phi_bar_0: f64) -> f64 {
    params.c + (phi_bar_0 - params.c) * (-params.sigma1 * t).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarySettings {
    pub tol: f64,
    pub max_newton: usize,
    pub damping_min: f64,
}

impl Default for StationarySettings {
    fn default() -> Self {
        StationarySettings {
            tol: 1e-10,
            max_newton: 50,
            damping_min: 1.0 / 1024.0,
        }
    }
}

/// A stationary state with its constant chemical potentials.
#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    pub phi_inf: ScalarField,
    pub psi_inf: ScalarField,
    pub mu_phi_inf: f64,
    pub mu_psi_inf: f64,
    pub newton_iterations: usize,
    pub residual: f64,
}

/// Pointwise chemical potentials of the stationary problem,
/// `A phi + sigma2 Ninv(phi - mean) + F'(phi) + dG/dphi` and its surfactant analogue.
pub fn stationary_potentials(
    phi: &ScalarField,
    psi: &ScalarField,
    params: &ModelParams,
) -> Result<(ScalarField, ScalarField)> {
    let g = params.coupling();
    let mut mu_phi = phi.neumann_laplacian();
    if params.sigma2 > 0.0 {
        let mut a = phi.cos_coeffs().coeffs;
        apply_inverse_eigenvalues(&mut a, phi.grid().eigenvalues());
        mu_phi = mu_phi.add(&ScalarField::from_cos_coeffs(phi.grid(), a).scale(params.sigma2));
    }
    let mut mu_psi = psi.neumann_laplacian().scale(params.beta);
    for (i, (&p, &s)) in phi.values().iter().zip(psi.values()).enumerate() {
        let e = g.eval(p, s);
        mu_phi.values_mut()[i] += params.f_phi(p)?.first_derivative + e.d_phi;
        mu_psi.values_mut()[i] += params.f_psi(s)?.first_derivative + e.d_psi;
    }
    Ok((mu_phi, mu_psi))
}

struct Stationary<'a> {
    grid: &'a Grid2D,
    params: &'a ModelParams,
    masses: (f64, f64),
}

struct StationaryEval {
    residual: Vec<f64>,
    mu: (f64, f64),
    /// `(F''_phi + G_phiphi, G_phipsi, F''_psi + G_psipsi)` per cell.
    hess: Vec<(f64, f64, f64)>,
}

impl Stationary<'_> {
    fn n(&self) -> usize {
        self.grid.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<StationaryEval> {
        let n = self.n();
        let phi = ScalarField::from_vec(self.grid, x[..n].to_vec());
        let psi = ScalarField::from_vec(self.grid, x[n..].to_vec());
        let (mu_phi, mu_psi) = stationary_potentials(&phi, &psi, self.params)?;
        let (m1, m2) = (mu_phi.mean(), mu_psi.mean());
        let mut residual = Vec::with_capacity(2 * n);
        residual.extend(mu_phi.values().iter().map(|v| v - m1));
        residual.extend(mu_psi.values().iter().map(|v| v - m2));
        let g = self.params.coupling();
        let mut hess = Vec::with_capacity(n);
        for i in 0..n {
            let (p, s) = (x[i], x[n + i]);
            let (gpp, gps, gss) = g.hessian(p, s);
            hess.push((
                self.params.f_phi(p)?.second_derivative + gpp,
                gps,
                self.params.f_psi(s)?.second_derivative + gss,
            ));
        }
        Ok(StationaryEval { residual, mu: (m1, m2), hess })
    }

    fn apply(&self, hess: &[(f64, f64, f64)], v: &[f64], out: &mut [f64]) {
        let n = self.n();
        let lam = self.grid.eigenvalues();
        let mut a = v[..n].to_vec();
        let mut b = v[n..].to_vec();
        let mut pa: Vec<f64> = (0..n).map(|i| hess[i].0 * v[i] + hess[i].1 * v[n + i]).collect();
        let mut pb: Vec<f64> = (0..n).map(|i| hess[i].1 * v[i] + hess[i].2 * v[n + i]).collect();
        for f in [&mut a, &mut b, &mut pa, &mut pb] {
            self.grid.forward_in_place(f, Basis::CosCos);
        }
        // the mean modes carry the (already satisfied) mass constraints
        let mean_a = a[0];
        let mean_b = b[0];
        for k in 1..n {
            let nonlocal = if self.params.sigma2 > 0.0 { self.params.sigma2 / lam[k] } else { 0.0 };
            pa[k] += (lam[k] + nonlocal) * a[k];
            pb[k] += self.params.beta * lam[k] * b[k];
        }
        pa[0] = mean_a;
        pb[0] = mean_b;
        self.grid.inverse_in_place(&mut pa, Basis::CosCos);
        self.grid.inverse_in_place(&mut pb, Basis::CosCos);
        out[..n].copy_from_slice(&pa);
        out[n..].copy_from_slice(&pb);
    }

    fn precondition(&self, shifts: (f64, f64), v: &[f64], out: &mut [f64]) {
        let n = self.n();
        let lam = self.grid.eigenvalues();
        let mut a = v[..n].to_vec();
        let mut b = v[n..].to_vec();
        self.grid.forward_in_place(&mut a, Basis::CosCos);
        self.grid.forward_in_place(&mut b, Basis::CosCos);
        for k in 1..n {
            let nonlocal = if self.params.sigma2 > 0.0 { self.params.sigma2 / lam[k] } else { 0.0 };
            a[k] /= lam[k] + nonlocal + shifts.0;
            b[k] /= self.params.beta * lam[k] + shifts.1;
        }
        self.grid.inverse_in_place(&mut a, Basis::CosCos);
        self.grid.inverse_in_place(&mut b, Basis::CosCos);
        out[..n].copy_from_slice(&a);
        out[n..].copy_from_slice(&b);
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let n = self.n();
        x[..n].iter().all(|&p| p > -1.0 + BOUND_MARGIN && p < 1.0 - BOUND_MARGIN)
            && x[n..].iter().all(|&s| s > BOUND_MARGIN && s < 1.0 - BOUND_MARGIN)
    }

    fn recentre(&self, x: &mut [f64]) {
        let n = self.n();
        for (part, target) in [(0..n, self.masses.0), (n..2 * n, self.masses.1)] {
            let mean = compensated_sum(&x[part.clone()]) / n as f64;
            x[part].iter_mut().for_each(|v| *v += target - mean);
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Damped Newton for the stationary problem with prescribed means, seeded by `seed`.
pub fn stationary_solve(
    phi_mass: f64,
    psi_mass: f64,
    seed_phi: &ScalarField,
    seed_psi: &ScalarField,
    params: &ModelParams,
    settings: &StationarySettings,
) -> Result<EquilibriumSolution> {
    if !(phi_mass > -1.0 && phi_mass < 1.0) {
        return Err(Error::validation("phi_mass", format!("must lie in (-1, 1) (got {phi_mass})")));
    }
    if !(psi_mass > 0.0 && psi_mass < 1.0) {
        return Err(Error::validation("psi_mass", format!("must lie in (0, 1) (got {psi_mass})")));
    }
    if params.sigma1 > 0.0 && (phi_mass - params.c).abs() > 1e-12 {
        return Err(Error::validation(
            "phi_mass",
            format!("with sigma1 > 0 an equilibrium needs phi_mass = c = {}", params.c),
        ));
    }
    seed_phi.grid().same_as(seed_psi.grid())?;
    let grid = seed_phi.grid();
    let n = grid.len();
    let sys = Stationary {
        grid,
        params,
        masses: (phi_mass, psi_mass),
    };
    let mut x: Vec<f64> = seed_phi.values().iter().chain(seed_psi.values()).copied().collect();
    sys.recentre(&mut x);
    if !sys.admissible(&x) {
        return Err(Error::BoundViolation { field: "stationary seed" });
    }
    let mut ev = sys.evaluate(&x)?;
    let l2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    for pass in 1..=settings.max_newton {
        let res = max_abs(&ev.residual);
        if res <= settings.tol {
            return Ok(EquilibriumSolution {
                phi_inf: ScalarField::from_vec(grid, x[..n].to_vec()),
                psi_inf: ScalarField::from_vec(grid, x[n..].to_vec()),
                mu_phi_inf: ev.mu.0,
                mu_psi_inf: ev.mu.1,
                newton_iterations: pass - 1,
                residual: res,
            });
        }
        let shifts = {
            let (mut s1, mut s2) = (0.0, 0.0);
            for h in &ev.hess {
                s1 += h.0;
                s2 += h.2;
            }
            ((s1 / n as f64).max(0.0), (s2 / n as f64).max(0.0))
        };
        let rhs: Vec<f64> = ev.residual.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; 2 * n];
        let hess = &ev.hess;
        gmres(
            |v, out| sys.apply(hess, v, out),
            |v, out| sys.precondition(shifts, v, out),
            &rhs,
            &mut delta,
            &GmresSettings {
                rtol: 1e-10,
                atol: 1e-3 * settings.tol,
                restart: 60,
                max_iter: 600,
            },
        );
        let merit = l2(&ev.residual);
        let mut step = 1.0;
        loop {
            let mut trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            sys.recentre(&mut trial);
            let out_of_bounds = !sys.admissible(&trial);
            if !out_of_bounds {
                let tev = sys.evaluate(&trial)?;
                let tm = l2(&tev.residual);
                if tm <= (1.0 - 1e-4 * step) * merit || max_abs(&tev.residual) <= settings.tol {
                    x = trial;
                    ev = tev;
                    break;
                }
            }
            step *= 0.5;
            if step < settings.damping_min {
                return Err(if out_of_bounds {
                    Error::BoundViolation { field: "stationary" }
                } else {
                    Error::NewtonDivergence {
                        field: "stationary",
                        iterations: pass,
                        residual: res,
                    }
                });
            }
        }
    }
    let res = max_abs(&ev.residual);
    if res <= settings.tol {
        return Ok(EquilibriumSolution {
            phi_inf: ScalarField::from_vec(grid, x[..n].to_vec()),
            psi_inf: ScalarField::from_vec(grid, x[n..].to_vec()),
            mu_phi_inf: ev.mu.0,
            mu_psi_inf: ev.mu.1,
            newton_iterations: settings.max_newton,
            residual: res,
        });
    }
    Err(Error::NewtonDivergence {
        field: "stationary",
        iterations: settings.max_newton,
        residual: res,
    })
}
