//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chdf_core::config::{load_config, parse_config};
use chdf_core::darcy::{self, VelocitySettings};
use chdf_core::diagnostics::{self, StationarySettings};
use chdf_core::driver;
use chdf_core::initial::{initial_condition, InitialSpec, Preset};
use chdf_core::snapshot;
use chdf_core::step::{coupled_time_step_warm, ChemicalPotentials, StepOutcome};
use chdf_core::{Error, Grid2D, ModelParams, ScalarField, SolverTolerances, State, VectorField};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

/// Smallest distance to the admissible bounds seen so far, over every acceptance run.
#[derive(Default)]
struct Margins {
    phi: f64,
    psi: f64,
    runs: usize,
    violated: bool,
}

impl Margins {
    fn new() -> Self {
        Margins { phi: f64::INFINITY, psi: f64::INFINITY, ..Default::default() }
    }

    fn observe(&mut self, s: &State) {
        let dphi = (1.0 - s.phi.max()).min(1.0 + s.phi.min());
        let dpsi = s.psi.min().min(1.0 - s.psi.max());
        if !(dphi > 0.0 && dpsi > 0.0) {
            self.violated = true;
        }
        self.phi = self.phi.min(dphi);
        self.psi = self.psi.min(dpsi);
    }
}

/// Steps `state` `steps` times, calling `visit(prev, outcome)` after each step.
fn march(
    mut state: State,
    h: f64,
    steps: usize,
    params: &ModelParams,
    tol: &SolverTolerances,
    margins: &mut Margins,
    mut visit: impl FnMut(&State, &StepOutcome) -> bool,
) -> Result<State, Error> {
    margins.runs += 1;
    margins.observe(&state);
    let mut warm: Option<ChemicalPotentials> = None;
    for _ in 0..steps {
        let out = coupled_time_step_warm(&state, warm.as_ref(), h, params, tol)?;
        margins.observe(&out.next);
        let go_on = visit(&state, &out);
        state = out.next;
        warm = Some(out.potentials);
        if !go_on {
            break;
        }
    }
    Ok(state)
}

fn stripe_grid() -> Grid2D {
    Grid2D::new(64, 64, 2.0 * PI, 2.0 * PI).unwrap()
}

fn stripe_spec(phi_mean: f64) -> InitialSpec {
    InitialSpec {
        preset: Preset::Stripe,
        phi_mean,
        psi_mean: 0.5,
        amplitude: 0.6,
        width: 0.6,
        ..InitialSpec::default()
    }
}

fn stripe_params(alpha: f64) -> ModelParams {
    ModelParams { alpha, w: 1.0, sigma1: 0.0, r: 3.0, ..ModelParams::default() }
}

fn operator_exactness() -> Outcome {
    let start = Instant::now();
    let grid = Grid2D::new(64, 64, 1.0, 1.0).unwrap();
    let mut eig: f64 = 0.0;
    for (k, l) in [(1, 0), (0, 3), (2, 5), (17, 9), (40, 63)] {
        let (a, b) = (k as f64 * PI, l as f64 * PI);
        let lam = a * a + b * b;
        let f = ScalarField::from_fn(&grid, |x, y| (a * x).cos() * (b * y).cos());
        eig = eig.max(f.neumann_laplacian().sub(&f.scale(lam)).max_abs() / lam);
        eig = eig.max(f.inverse_neumann_laplacian().unwrap().sub(&f.scale(1.0 / lam)).max_abs());
        let g = f.gradient();
        let gx = ScalarField::from_fn(&grid, |x, y| -a * (a * x).sin() * (b * y).cos());
        let gy = ScalarField::from_fn(&grid, |x, y| -b * (a * x).cos() * (b * y).sin());
        eig = eig.max(g.x.sub(&gx).max_abs().max(g.y.sub(&gy).max_abs()) / (1.0 + a.max(b)));
        // divergence of a sine-cosine pair against its closed form
        let v = VectorField::new(
            ScalarField::from_fn(&grid, |x, y| (a.max(PI) * x).sin() * (b * y).cos()),
            ScalarField::from_fn(&grid, |x, y| (a * x).cos() * (b.max(PI) * y).sin()),
        )
        .unwrap();
        let (ka, lb) = (a.max(PI), b.max(PI));
        let div = ScalarField::from_fn(&grid, |x, y| {
            ka * (ka * x).cos() * (b * y).cos() + lb * (a * x).cos() * (lb * y).cos()
        });
        eig = eig.max(v.divergence().sub(&div).max_abs() / (1.0 + ka.max(lb)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut noise = || ScalarField::new(&grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let v = VectorField::new(noise(), noise()).unwrap();
    let (u, _) = v.helmholtz_project();
    let (uu, _) = u.helmholtz_project();
    let idem = uu.sub(&u).max_abs() / v.max_abs();
    let q = ScalarField::from_fn(&grid, |x, y| (2.0 * PI * x).cos() * (3.0 * PI * y).cos() + x * x * y);
    let (ug, _) = q.gradient().helmholtz_project();
    let kill = ug.max_abs() / q.gradient().max_abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        eig <= 1e-11 && idem <= 1e-10 && kill <= 1e-10 && secs < 1.0,
        format!("eigenmode error {eig:.2e}, idempotence {idem:.2e}, gradient residue {kill:.2e}, {secs:.2}s"),
    )
}

struct StripeRuns {
    energy: Outcome,
    psi_mass: f64,
}

fn swirl(grid: &Grid2D) -> VectorField {
    let (ax, ay) = (PI / grid.lx(), PI / grid.ly());
    VectorField::new(
        ScalarField::from_fn(grid, |x, y| ay * (ax * x).sin() * (ay * y).cos()),
        ScalarField::from_fn(grid, |x, y| -ax * (ax * x).cos() * (ay * y).sin()),
    )
    .unwrap()
}

fn energy_inequality(margins: &mut Margins) -> StripeRuns {
    let start = Instant::now();
    let grid = stripe_grid();
    let tol = SolverTolerances::default();
    let mut worst_slack = f64::INFINITY;
    let mut increases = 0;
    let mut psi_drift: f64 = 0.0;
    let mut details = Vec::new();
    let mut failure = None;
    for alpha in [0.0, 1.0] {
        let params = stripe_params(alpha);
        let mut s0 = initial_condition(&stripe_spec(0.0), &grid, &params, 0).unwrap();
        if alpha > 0.0 {
            // the flat stripe drives no flow, so start the inertial run with a swirl
            s0.u = swirl(&grid);
        }
        let psi0 = s0.psi.mean();
        let e0 = chdf_core::model::total_energy(&s0, &params).unwrap();
        let allowed = 1e-9 * (1.0 + e0.abs());
        let mut run_worst = f64::INFINITY;
        let res = march(s0, 1e-3, 500, &params, &tol, margins, |_, out| {
            let r = &out.report;
            run_worst = run_worst.min(r.inequality_slack / allowed);
            if r.energy_after > r.energy_before {
                increases += 1;
            }
            psi_drift = psi_drift.max((out.next.psi.mean() - psi0).abs());
            true
        });
        match res {
            Ok(s) => details.push(format!("alpha={alpha}: min slack/tol {run_worst:.2e}, final |u| {:.2e}", s.u.l2_norm())),
            Err(e) => failure = Some(format!("alpha={alpha}: {e}")),
        }
        worst_slack = worst_slack.min(run_worst);
    }
    let secs = start.elapsed().as_secs_f64();
    let energy = match failure {
        Some(f) => outcome(false, f),
        None => outcome(
            worst_slack >= -1.0 && increases == 0 && secs < 120.0,
            format!("{}; energy increases {increases}; {secs:.1}s", details.join("; ")),
        ),
    };
    StripeRuns { energy, psi_mass: psi_drift }
}

fn mass_laws(psi_drift: f64, margins: &mut Margins) -> Outcome {
    let grid = Grid2D::new(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
    let params = ModelParams { sigma1: 0.5, c: 0.0, ..stripe_params(0.0) };
    let tol = SolverTolerances::default();
    let t_end: f64 = 0.2;
    let mut product_err: f64 = 0.0;
    let mut errors = Vec::new();
    for h in [2e-3, 1e-3, 5e-4] {
        let s0 = initial_condition(&stripe_spec(0.3), &grid, &params, 0).unwrap();
        assert_eq!(s0.phi.mean(), 0.3);
        let steps = (t_end / h).round() as usize;
        let mut k = 0;
        let res = march(s0, h, steps, &params, &tol, margins, |_, out| {
            k += 1;
            let discrete = (1.0 - h * params.sigma1).powi(k) * 0.3;
            product_err = product_err.max((out.next.phi.mean() - discrete).abs());
            true
        });
        match res {
            Ok(s) => errors.push((s.phi.mean() - diagnostics::mass_closed_form(s.time, &params, 0.3)).abs()),
            Err(e) => return outcome(false, format!("h={h}: {e}")),
        }
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        psi_drift <= 1e-12 && product_err <= 1e-10 && min_order >= 0.9,
        format!(
            "surfactant drift {psi_drift:.1e}, product-formula error {product_err:.1e}, closed-form errors {:.2e}/{:.2e}/{:.2e}, orders {:.3}/{:.3}",
            errors[0], errors[1], errors[2], orders[0], orders[1]
        ),
    )
}

fn bound_preservation(margins: &Margins) -> Outcome {
    outcome(
        !margins.violated && margins.phi > 0.0 && margins.psi > 0.0,
        format!("{} runs, min distance to bounds: phase {:.3e}, surfactant {:.3e}", margins.runs, margins.phi, margins.psi),
    )
}

fn forchheimer_solver() -> Outcome {
    let a = darcy::forchheimer_scalar_root(1.0, 1.0, 3.0, 2.0).unwrap();
    let b = darcy::forchheimer_scalar_root(1.0, 1.0, 4.0, 10.0).unwrap();
    let root_err = (a - 1.0).abs().max((b - 2.0).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..50.0)).collect();
    g.sort_by(f64::total_cmp);
    let roots: Vec<f64> = g.iter().map(|&v| darcy::forchheimer_scalar_root(0.7, 2.3, 3.5, v).unwrap()).collect();
    let monotone = roots.windows(2).zip(g.windows(2)).all(|(r, g)| r[1] > r[0] || g[1] == g[0]);
    let grid = stripe_grid();
    let q = ScalarField::from_fn(&grid, |x, y| (x / 2.0).cos() * (1.5 * y).cos() + 0.3 * (2.0 * x).cos());
    let (u, _, _) = darcy::velocity_solve(
        &VectorField::zeros(&grid),
        &q.gradient(),
        1e-3,
        &stripe_params(1.0),
        &VelocitySettings::default(),
    )
    .unwrap();
    let un = u.l2_norm();
    outcome(
        root_err <= 1e-12 && monotone && un <= 1e-9,
        format!("root error {root_err:.1e}, monotone over 1000 samples: {monotone}, |u| for gradient forcing {un:.1e}"),
    )
}

fn secant_identities() -> Outcome {
    let p = ModelParams::default();
    let g = p.coupling();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let a = rng.random_range(-1.0..1.0);
        let b = rng.random_range(-1.0..1.0);
        let c = rng.random_range(0.0..1.0);
        let d = rng.random_range(0.0..1.0);
        let e1 = chdf_core::model::secant_g_phi(&p, a, b, c) * (a - b) - (g.value(a, c) - g.value(b, c));
        let e2 = chdf_core::model::secant_g_psi(&p, a, c, d) * (c - d) - (g.value(a, c) - g.value(a, d));
        worst = worst.max(e1.abs()).max(e2.abs());
    }
    // analytic partials of -theta_c/2 a^2 - w c (1 - a^2) inside the box
    let mut branch: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let c: f64 = rng.random_range(0.0..1.0);
        let dphi = -p.theta_c * a + 2.0 * p.w * c * a;
        let dpsi = -p.w * (1.0 - a * a);
        branch = branch
            .max((chdf_core::model::secant_g_phi(&p, a, a, c) - dphi).abs())
            .max((chdf_core::model::secant_g_psi(&p, a, c, c) - dpsi).abs());
    }
    outcome(
        worst <= 1e-13 && branch <= 1e-10,
        format!("identity error {worst:.1e} over 1e5 triples, equal-argument error {branch:.1e}"),
    )
}

fn convergence_to_equilibrium(margins: &mut Margins) -> Outcome {
    let start = Instant::now();
    let grid = Grid2D::new(64, 64, PI, PI).unwrap();
    let params = ModelParams { theta_c: 4.0, m_phi: 10.0, m_psi: 10.0, ..ModelParams::default() };
    let tol = SolverTolerances::default();
    let spec = InitialSpec {
        preset: Preset::RandomSpinodal,
        phi_mean: 0.0,
        psi_mean: 0.5,
        amplitude: 0.05,
        ..InitialSpec::default()
    };
    let s0 = initial_condition(&spec, &grid, &params, 2024).unwrap();
    let h = 1e-3;
    let mut residual = f64::INFINITY;
    let mut grad_mu = f64::INFINITY;
    let mut k = 0usize;
    let res = march(s0, h, 50_000, &params, &tol, margins, |_, out| {
        k += 1;
        if !k.is_multiple_of(10) {
            return true;
        }
        residual = diagnostics::equilibrium_residual(&out.next, &out.potentials, &params);
        grad_mu = out.potentials.mu_phi.gradient().l2_norm() + out.potentials.mu_psi.gradient().l2_norm();
        residual >= 1e-6
    });
    let state = match res {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("step {}: {e}", k + 1)),
    };
    let u = state.u.l2_norm();
    let settings = StationarySettings::default();
    let (dphi, dpsi) = diagnostics::separation_margin(&state.phi, &state.psi);
    let resolve = diagnostics::stationary_solve(state.phi.mean(), state.psi.mean(), &state.phi, &state.psi, &params, &settings);
    let (agree, iters) = match &resolve {
        Ok(sol) => (sol.phi_inf.sub(&state.phi).max_abs().max(sol.psi_inf.sub(&state.psi).max_abs()), sol.newton_iterations),
        Err(_) => (f64::INFINITY, 0),
    };
    let secs = start.elapsed().as_secs_f64();
    outcome(
        residual < 1e-6 && u < 1e-5 && grad_mu < 1e-5 && agree <= 1e-6 && dphi > 0.0 && dpsi > 0.0 && secs < 600.0,
        format!(
            "t={:.3}: residual {residual:.1e}, |u| {u:.1e}, grad mu {grad_mu:.1e}, re-solve change {agree:.1e} in {iters} Newton steps, margins {dphi:.3}/{dpsi:.3}, {secs:.1}s",
            state.time
        ),
    )
}

fn time_self_convergence(margins: &mut Margins) -> Outcome {
    let grid = stripe_grid();
    let params = stripe_params(0.0);
    let tol = SolverTolerances::default();
    let mut finals = Vec::new();
    for h in [4e-3_f64, 2e-3, 1e-3] {
        let s0 = initial_condition(&stripe_spec(0.0), &grid, &params, 0).unwrap();
        let steps = (0.1 / h).round() as usize;
        match march(s0, h, steps, &params, &tol, margins, |_, _| true) {
            Ok(s) => finals.push(s.phi),
            Err(e) => return outcome(false, format!("h={h}: {e}")),
        }
    }
    let d1 = finals[0].sub(&finals[1]).max_abs();
    let d2 = finals[1].sub(&finals[2]).max_abs();
    let order = (d1 / d2).log2();
    outcome(order >= 0.9, format!("successive differences {d1:.3e}, {d2:.3e}, observed order {order:.3}"))
}

fn determinism_and_formats(dir: &Path) -> Outcome {
    let body = "seed = 77\n[grid]\nnx = 32\nny = 32\nlx = 6.283185307179586\nly = 3.141592653589793\n[time]\nh = 1e-3\nt_end = 0.02\noutput_every = 10\n[initial]\npreset = random_spinodal\namplitude = 0.04\nphi_mean = 0.1\npsi_mean = 0.4\n";
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let cfg_path = dir.join(format!("{tag}.cfg"));
        fs::write(&cfg_path, format!("{body}[output]\ndirectory = {tag}\n")).unwrap();
        let cfg = load_config(&cfg_path).unwrap();
        if let Err(e) = driver::run(&cfg) {
            return outcome(false, format!("run {tag}: {e}"));
        }
        let mut files: Vec<_> = fs::read_dir(dir.join(tag)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        outputs.push(files.iter().map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap())).collect::<Vec<_>>());
    }
    let identical = outputs[0] == outputs[1] && outputs[0].len() == 13;

    let grid = Grid2D::new(16, 32, 0.3, 7.1).unwrap();
    let f = ScalarField::from_fn(&grid, |x, y| (x * 1e3).sin() / 3.0 + y);
    let path = dir.join("round.chdf");
    snapshot::write_snapshot(&path, &f, 0.1 + 0.2, "phi").unwrap();
    let (header, back) = snapshot::read_snapshot(&path, &grid).unwrap();
    let bitwise = back.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits())
        && header.time == 0.1 + 0.2
        && snapshot::SnapshotHeader::parse(&header.to_line()).unwrap() == header;

    let bounds = [
        ("[model]\nbeta = 0", "beta"),
        ("[model]\nsigma2 = -1", "sigma2"),
        ("[model]\nc = 1.5", "c"),
        ("[model]\nalpha = -0.5", "alpha"),
        ("[model]\nr = 2.0", "r"),
        ("[model]\ntheta_phi = 0", "theta_phi"),
        ("[model]\ntheta_psi = 0", "theta_psi"),
        ("[model]\nsigma1 = -1", "sigma1"),
        ("[model]\nnu = 0", "nu"),
        ("[model]\neta = -1", "eta"),
        ("[model]\nm_phi = 0", "m_phi"),
        ("[model]\nm_psi = 0", "m_psi"),
        ("[initial]\nphi_mean = -1", "phi_mean"),
        ("[initial]\npsi_mean = 1", "psi_mean"),
    ];
    let mut wrong = Vec::new();
    for (text, key) in bounds {
        match parse_config(text, dir) {
            Err(Error::Validation { key: k, .. }) if k == key => {}
            other => wrong.push(format!("{key}: {:?}", other.err().map(|e| e.to_string()))),
        }
    }
    outcome(
        identical && bitwise && wrong.is_empty(),
        format!(
            "repeat runs identical: {identical}, snapshot round trip bitwise: {bitwise}, bound violations named: {}/{}{}",
            bounds.len() - wrong.len(),
            bounds.len(),
            if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join("; ")) }
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let mut margins = Margins::new();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "operator exactness", operator_exactness());
    let stripe = energy_inequality(&mut margins);
    report(2, "discrete energy inequality", stripe.energy);
    report(3, "mass laws", mass_laws(stripe.psi_mass, &mut margins));
    let equilibrium = convergence_to_equilibrium(&mut margins);
    let richardson = time_self_convergence(&mut margins);
    report(4, "bound preservation", bound_preservation(&margins));
    report(5, "Forchheimer scalar solver", forchheimer_solver());
    report(6, "secant identities", secant_identities());
    report(7, "convergence to equilibrium", equilibrium);
    report(8, "time self-convergence", richardson);
    report(9, "determinism and formats", determinism_and_formats(dir.path()));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
