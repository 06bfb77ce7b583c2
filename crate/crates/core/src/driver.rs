//! Time loop, output writing, the invariant-check harness and the stationary solve.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::darcy::{self, VelocitySettings};
use crate::diagnostics::{self, EquilibriumSolution, LedgerRow};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::initial::initial_condition;
use crate::model::{self, ModelParams};
use crate::snapshot;
use crate::step::{self, ChemicalPotentials, State};

/// Allowed drift of the means away from their prescribed values before a run aborts.
pub const MASS_TOL: f64 = 1e-10;

/// Sizes the global thread pool from `CHDF_THREADS` (unset or 0 = one thread per core).
pub fn configure_threads() {
    let n = std::env::var("CHDF_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    // a second call keeps the existing pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

pub fn snapshot_path(dir: &Path, prefix: &str, tag: &str, field: &str) -> PathBuf {
    dir.join(format!("{prefix}_{tag}_{field}.chdf"))
}

fn write_state(dir: &Path, prefix: &str, tag: &str, state: &State) -> Result<()> {
    for (name, f) in [("phi", &state.phi), ("psi", &state.psi), ("ux", &state.u.x), ("uy", &state.u.y)] {
        snapshot::write_snapshot(&snapshot_path(dir, prefix, tag, name), f, state.time, name)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub final_state: State,
    pub rows: Vec<LedgerRow>,
    pub series_path: PathBuf,
}

/// Runs the configured simulation, see [`run_with_hook`].
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    run_with_hook(cfg, |_, _| {})
}

/// Runs the configured simulation. `hook(step, state)` may modify each accepted state
/// before it is checked and logged.
///
/// A violated invariant (slack, bounds or mass) writes the offending ledger row and
/// aborts with [`Error::InvariantViolation`].
pub fn run_with_hook(cfg: &RunConfig, mut hook: impl FnMut(u64, &mut State)) -> Result<RunSummary> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let params = &cfg.model;
    let tol = &cfg.tolerances;
    let h = cfg.time.h;
    let mut state = initial_condition(&cfg.initial, &grid, params, cfg.seed)?;
    let psi_mass = state.psi.mean();

    let dir = &cfg.output.directory;
    fs::create_dir_all(dir)?;
    let series_path = dir.join(&cfg.output.series);
    let mut series = BufWriter::new(File::create(&series_path)?);
    writeln!(series, "{}", LedgerRow::csv_header())?;
    series.flush()?;
    let prefix = &cfg.output.snapshot_prefix;
    let every = cfg.time.output_every;
    if every > 0 {
        write_state(dir, prefix, &format!("{:06}", 0), &state)?;
    }

    let steps = cfg.steps();
    let mut energy_prev = model::total_energy(&state, params)?;
    let mut warm: Option<ChemicalPotentials> = None;
    let mut rows = Vec::with_capacity(steps as usize);
    for k in 1..=steps {
        let out = step::coupled_time_step_warm(&state, warm.as_ref(), h, params, tol)
            .map_err(|e| Error::AtStep { step: k, source: Box::new(e) })?;
        let mut next = out.next;
        hook(k, &mut next);
        let at = |e: Error| Error::AtStep { step: k, source: Box::new(e) };
        let mut row = LedgerRow::build(energy_prev, &state, &next, &out.potentials, h, params).map_err(at)?;
        if out.report.substeps > 1 {
            row.slack = energy_prev - row.energy_total - out.report.dissipation_h;
        }
        writeln!(series, "{}", row.csv_line())?;
        series.flush()?;
        let violation = check_row(&row, energy_prev, out.report.mass_target_a, psi_mass, tol.energy_tol);
        rows.push(row);
        if let Some(what) = violation {
            return Err(Error::InvariantViolation { step: k, what });
        }
        energy_prev = row.energy_total;
        state = next;
        warm = Some(out.potentials);
        if (every > 0 && k % every == 0) || k == steps {
            write_state(dir, prefix, &format!("{k:06}"), &state)?;
        }
    }
    if steps == 0 {
        write_state(dir, prefix, &format!("{:06}", 0), &state)?;
    }
    Ok(RunSummary {
        steps,
        final_state: state,
        rows,
        series_path,
    })
}

fn check_row(row: &LedgerRow, energy_prev: f64, phi_target: f64, psi_mass: f64, energy_tol: f64) -> Option<String> {
    if row.values().iter().any(|v| !v.is_finite()) {
        return Some("non-finite ledger entry".into());
    }
    let allowed = energy_tol * (1.0 + energy_prev.abs());
    if row.slack < -allowed {
        return Some(format!("energy slack {:e} below -{allowed:e}", row.slack));
    }
    if !(row.min_phi > -1.0 && row.max_phi < 1.0 && row.min_psi > 0.0 && row.max_psi < 1.0) {
        return Some(format!(
            "bounds: phi in [{}, {}], psi in [{}, {}]",
            row.min_phi, row.max_phi, row.min_psi, row.max_psi
        ));
    }
    if (row.mean_phi - phi_target).abs() > MASS_TOL || (row.mean_psi - psi_mass).abs() > MASS_TOL {
        return Some(format!(
            "mass drift: mean phi {} (target {phi_target}), mean psi {} (target {psi_mass})",
            row.mean_phi, row.mean_psi
        ));
    }
    None
}

#[derive(Clone, Debug)]
pub struct SteadySummary {
    pub solution: EquilibriumSolution,
    pub delta_phi: f64,
    pub delta_psi: f64,
    pub snapshot_paths: [PathBuf; 2],
}

/// Solves the stationary problem seeded by the configured initial condition and writes
/// the result as `{prefix}_steady_{phi,psi}.chdf`.
pub fn steady(cfg: &RunConfig) -> Result<SteadySummary> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let seed = initial_condition(&cfg.initial, &grid, &cfg.model, cfg.seed)?;
    let phi_mass = cfg.steady.phi_mass.unwrap_or_else(|| seed.phi.mean());
    let psi_mass = cfg.steady.psi_mass.unwrap_or_else(|| seed.psi.mean());
    let solution =
        diagnostics::stationary_solve(phi_mass, psi_mass, &seed.phi, &seed.psi, &cfg.model, &cfg.steady.settings)?;
    let (delta_phi, delta_psi) = diagnostics::separation_margin(&solution.phi_inf, &solution.psi_inf);
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir)?;
    let prefix = &cfg.output.snapshot_prefix;
    let paths = [
        snapshot_path(dir, prefix, "steady", "phi"),
        snapshot_path(dir, prefix, "steady", "psi"),
    ];
    snapshot::write_snapshot(&paths[0], &solution.phi_inf, 0.0, "phi")?;
    snapshot::write_snapshot(&paths[1], &solution.psi_inf, 0.0, "psi")?;
    Ok(SteadySummary {
        solution,
        delta_phi,
        delta_psi,
        snapshot_paths: paths,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn record(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn within(value: f64, bound: f64) -> (bool, String) {
    (value <= bound, format!("{value:.3e} <= {bound:.0e}"))
}

/// Runs the invariant suite on the configured grid and parameters.
pub fn check(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let params = &cfg.model;
    let tol = &cfg.tolerances;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lx, ly) = (grid.lx(), grid.ly());
    let (kx, ky) = (1.0_f64.min((grid.nx() / 2) as f64), 2.0_f64.min((grid.ny() / 2) as f64));
    let (ax, ay) = (kx * std::f64::consts::PI / lx, ky * std::f64::consts::PI / ly);
    let mode = ScalarField::from_fn(&grid, |x, y| (ax * x).cos() * (ay * y).cos());
    let lambda = ax * ax + ay * ay;
    let mut out = Vec::new();

    out.push(record("laplacian eigenmode", {
        let err = mode.neumann_laplacian().sub(&mode.scale(lambda)).max_abs();
        Ok(within(err, 1e-11 * (1.0 + lambda)))
    }));
    out.push(record("inverse laplacian eigenmode", {
        mode.inverse_neumann_laplacian().map(|g| within(g.sub(&mode.scale(1.0 / lambda)).max_abs(), 1e-11))
    }));
    let noise = |rng: &mut ChaCha8Rng| {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ScalarField::new(&grid, v).expect("length matches grid")
    };
    out.push(record("gradient/divergence adjoint", {
        let f = noise(&mut rng);
        let v = VectorField::new(noise(&mut rng), noise(&mut rng))?;
        let lhs = f.gradient().dot(&v);
        let rhs = -f.dot(&v.divergence());
        Ok(within((lhs - rhs).abs(), 1e-11 * (1.0 + lhs.abs())))
    }));
    out.push(record("helmholtz projection", {
        let v = VectorField::new(noise(&mut rng), noise(&mut rng))?;
        let (p, _) = v.helmholtz_project();
        let (pp, _) = p.helmholtz_project();
        let idem = pp.sub(&p).max_abs();
        let (pg, _) = noise(&mut rng).gradient().helmholtz_project();
        let div = p.divergence().max_abs();
        Ok(within(idem.max(pg.max_abs()).max(div), 1e-10))
    }));
    out.push(record("forchheimer scalar roots", {
        let a = darcy::forchheimer_scalar_root(1.0, 1.0, 3.0, 2.0)?;
        let b = darcy::forchheimer_scalar_root(1.0, 1.0, 4.0, 10.0)?;
        Ok(within((a - 1.0).abs().max((b - 2.0).abs()), 1e-12))
    }));
    out.push(record("velocity of gradient forcing", {
        let force = mode.gradient();
        let vs = VelocitySettings {
            tol: tol.velocity_tol,
            max_outer: tol.velocity_max_outer,
            relaxation: tol.uzawa_relaxation,
        };
        darcy::velocity_solve(&VectorField::zeros(&grid), &force, cfg.time.h, params, &vs)
            .map(|(u, _, _)| within(u.l2_norm(), 1e-9))
    }));
    out.push(record("secant identities", {
        let g = params.coupling();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let a = rng.random_range(-0.999..0.999);
            let b = rng.random_range(-0.999..0.999);
            let c = rng.random_range(0.001..0.999);
            let d = rng.random_range(0.001..0.999);
            let e1 = (g.secant_phi(a, b, c) * (a - b) - (g.value(a, c) - g.value(b, c))).abs();
            let e2 = (g.secant_psi(a, c, d) * (c - d) - (g.value(a, c) - g.value(a, d))).abs();
            worst = worst.max(e1).max(e2);
        }
        Ok(within(worst, 1e-13 * (1.0 + params.theta_c + params.w)))
    }));

    let state = initial_condition(&cfg.initial, &grid, params, cfg.seed)?;
    match step::coupled_time_step(&state, cfg.time.h, params, tol) {
        Ok(o) => {
            let allowed = tol.energy_tol * (1.0 + o.report.energy_before.abs());
            out.push(CheckResult {
                name: "one-step energy slack",
                passed: o.report.slack_ok(tol.energy_tol),
                detail: format!("slack {:.3e} >= -{allowed:.0e}", o.report.inequality_slack),
            });
            let expected = params.c + (1.0 - cfg.time.h * params.sigma1) * (state.phi.mean() - params.c);
            let err = (o.next.phi.mean() - expected).abs().max((o.next.psi.mean() - state.psi.mean()).abs());
            out.push(record("one-step mass laws", Ok(within(err, 1e-12))));
        }
        Err(e) => {
            for name in ["one-step energy slack", "one-step mass laws"] {
                out.push(CheckResult {
                    name,
                    passed: false,
                    detail: format!("error: {e}"),
                });
            }
        }
    }
    out.push(record("homogeneous stationary state", {
        homogeneous_stationary_error(&grid, params, cfg).map(|e| within(e, 1e-10))
    }));
    Ok(out)
}

fn homogeneous_stationary_error(grid: &crate::grid::Grid2D, params: &ModelParams, cfg: &RunConfig) -> Result<f64> {
    let m = if params.sigma1 > 0.0 { params.c } else { cfg.initial.phi_mean };
    let s = cfg.initial.psi_mean;
    let sol = diagnostics::stationary_solve(
        m,
        s,
        &ScalarField::constant(grid, m),
        &ScalarField::constant(grid, s),
        params,
        &cfg.steady.settings,
    )?;
    let g = params.coupling().eval(m, s);
    let mu_phi = params.f_phi(m)?.first_derivative + g.d_phi;
    let mu_psi = params.f_psi(s)?.first_derivative + g.d_psi;
    Ok((sol.mu_phi_inf - mu_phi).abs().max((sol.mu_psi_inf - mu_psi).abs()))
}
