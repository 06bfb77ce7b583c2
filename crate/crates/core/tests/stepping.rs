use std::f64::consts::PI;

use chdf_core::diagnostics::{self, LedgerRow, StationarySettings};
use chdf_core::initial::{initial_condition, InitialSpec, Preset};
use chdf_core::model;
use chdf_core::step::{coupled_time_step, coupled_time_step_warm, ChemicalPotentials, StepOutcome};
use chdf_core::{Error, Grid2D, ModelParams, ScalarField, SolverTolerances, State};

fn grid() -> Grid2D {
    Grid2D::new(32, 32, 2.0 * PI, 2.0 * PI).unwrap()
}

fn spinodal(grid: &Grid2D, seed: u64, phi_mean: f64) -> State {
    let spec = InitialSpec {
        preset: Preset::RandomSpinodal,
        phi_mean,
        psi_mean: 0.4,
        amplitude: 0.05,
        ..InitialSpec::default()
    };
    initial_condition(&spec, grid, &ModelParams::default(), seed).unwrap()
}

fn run(
    mut s: State,
    h: f64,
    steps: usize,
    params: &ModelParams,
    tol: &SolverTolerances,
) -> (State, Vec<LedgerRow>, Vec<StepOutcome>) {
    let mut e = model::total_energy(&s, params).unwrap();
    let mut rows = Vec::new();
    let mut outs = Vec::new();
    let mut warm: Option<ChemicalPotentials> = None;
    for _ in 0..steps {
        let out = coupled_time_step_warm(&s, warm.as_ref(), h, params, tol).unwrap();
        let row = LedgerRow::build(e, &s, &out.next, &out.potentials, h, params).unwrap();
        e = row.energy_total;
        rows.push(row);
        s = out.next.clone();
        warm = Some(out.potentials.clone());
        outs.push(out);
    }
    (s, rows, outs)
}

#[test]
fn ledger_agrees_with_step_report() {
    let g = grid();
    let params = ModelParams { alpha: 0.5, sigma2: 0.3, ..ModelParams::default() };
    let tol = SolverTolerances::default();
    let (_, rows, outs) = run(spinodal(&g, 1, 0.1), 1e-3, 20, &params, &tol);
    for (row, out) in rows.iter().zip(&outs) {
        let r = &out.report;
        assert!((row.slack - r.inequality_slack).abs() <= 1e-12 * (1.0 + r.energy_before.abs()));
        assert!(row.slack >= -tol.energy_tol * (1.0 + r.energy_before.abs()));
        assert_eq!(row.energy_total, r.energy_after);
        assert!((row.kinetic - 0.25 * out.next.u.l2_norm_sq()).abs() < 1e-14);
    }
    for w in rows.windows(2) {
        assert!(w[1].time > w[0].time);
        assert!(w[1].energy_total <= w[0].energy_total + 1e-10 * w[0].energy_total.abs());
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let g = grid();
    let params = ModelParams::default();
    let tol = SolverTolerances::default();
    let s0 = spinodal(&g, 3, 0.0);
    let first = coupled_time_step(&s0, 1e-3, &params, &tol).unwrap();
    let cold = coupled_time_step(&first.next, 1e-3, &params, &tol).unwrap();
    let warm = coupled_time_step_warm(&first.next, Some(&first.potentials), 1e-3, &params, &tol).unwrap();
    assert!(cold.next.phi.sub(&warm.next.phi).max_abs() < 1e-9);
    assert!(cold.next.psi.sub(&warm.next.psi).max_abs() < 1e-9);
    assert!(warm.report.picard_iterations <= cold.report.picard_iterations);
}

#[test]
fn nonlocal_and_inertial_terms_keep_the_inequality() {
    let g = grid();
    let tol = SolverTolerances::default();
    for params in [
        ModelParams { sigma2: 2.0, ..ModelParams::default() },
        ModelParams { alpha: 1.0, eta: 3.0, r: 4.5, ..ModelParams::default() },
        ModelParams { sigma1: 0.8, c: -0.2, sigma2: 0.5, ..ModelParams::default() },
        ModelParams { beta: 0.2, w: 2.0, theta_c: 5.0, ..ModelParams::default() },
    ] {
        let (s, rows, _) = run(spinodal(&g, 5, 0.2), 2e-3, 15, &params, &tol);
        for row in &rows {
            assert!(row.slack >= -1e-9 * (1.0 + row.energy_total.abs()), "{params:?}: {}", row.slack);
        }
        s.validate().unwrap();
    }
}

#[test]
fn dealiased_gradients_keep_the_inequality() {
    let g = grid();
    let tol = SolverTolerances { dealias: true, ..SolverTolerances::default() };
    let (_, rows, _) = run(spinodal(&g, 8, -0.1), 1e-3, 10, &ModelParams::default(), &tol);
    assert!(rows.iter().all(|r| r.slack >= -1e-9 * (1.0 + r.energy_total.abs())));
}

#[test]
fn reaction_pulls_the_mean_to_its_target() {
    let g = grid();
    let params = ModelParams { sigma1: 2.0, c: -0.25, ..ModelParams::default() };
    let tol = SolverTolerances::default();
    let s0 = spinodal(&g, 2, 0.3);
    let m0 = s0.phi.mean();
    let (s, _, _) = run(s0, 5e-3, 40, &params, &tol);
    let expected = params.c + (1.0 - 5e-3 * 2.0_f64).powi(40) * (m0 - params.c);
    assert!((s.phi.mean() - expected).abs() < 1e-12);
    assert!((s.psi.mean() - 0.4).abs() < 1e-13);
}

#[test]
fn relaxation_reaches_the_stationary_solution() {
    // only the lowest mode is unstable on this box, so the quench settles quickly
    let g = Grid2D::new(16, 16, PI, PI).unwrap();
    let params = ModelParams { theta_c: 4.0, m_phi: 10.0, m_psi: 10.0, ..ModelParams::default() };
    let tol = SolverTolerances::default();
    let s0 = State {
        phi: ScalarField::from_fn(&g, |x, _| 0.2 * x.cos()),
        ..State::homogeneous(&g, 0.0, 0.5)
    };
    let mut s = s0;
    let mut warm: Option<ChemicalPotentials> = None;
    let mut residuals = Vec::new();
    for k in 1..=3000 {
        let out = coupled_time_step_warm(&s, warm.as_ref(), 2e-3, &params, &tol).unwrap();
        if k % 10 == 0 {
            residuals.push(diagnostics::equilibrium_residual(&out.next, &out.potentials, &params));
        }
        s = out.next;
        warm = Some(out.potentials);
        if residuals.last().is_some_and(|&r| r < 1e-8) {
            break;
        }
    }
    let last = *residuals.last().unwrap();
    assert!(last < 1e-8, "residual {last}");
    // the residual grows with the unstable mode first; the relaxation tail is monotone
    let tail = residuals.iter().position(|&r| r < 1e-2).unwrap();
    for w in residuals[tail..].windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "residual rose from {} to {}", w[0], w[1]);
    }
    let sol = diagnostics::stationary_solve(
        s.phi.mean(),
        s.psi.mean(),
        &s.phi,
        &s.psi,
        &params,
        &StationarySettings::default(),
    )
    .unwrap();
    assert!(sol.newton_iterations <= 10);
    assert!(sol.phi_inf.sub(&s.phi).max_abs() < 1e-6);
    assert!(sol.psi_inf.sub(&s.psi).max_abs() < 1e-6);
    let (mu_phi, mu_psi) = diagnostics::stationary_potentials(&sol.phi_inf, &sol.psi_inf, &params).unwrap();
    assert!(mu_phi.max() - mu_phi.min() <= 10.0 * 1e-10);
    assert!(mu_psi.max() - mu_psi.min() <= 10.0 * 1e-10);
    // the nontrivial profile is not the homogeneous state
    assert!(sol.phi_inf.max_abs() > 0.1);
}

#[test]
fn reaction_step_too_large_is_not_retried() {
    let g = grid();
    let params = ModelParams { sigma1: 10.0, ..ModelParams::default() };
    let err = coupled_time_step(&spinodal(&g, 0, 0.0), 0.2, &params, &SolverTolerances::default()).unwrap_err();
    assert!(matches!(err, Error::StepTooLarge { .. }));
}
