//! The property battery: dense-oracle transpose exactness, gradient and
//! duality identities, the discrete mass law, upwind positivity, the
//! energy-balance rate, eps-regularization behavior, admissible seeding and
//! the exponent table. The CLI `verify` command and the acceptance suite
//! both run these functions; thresholds live in `Tolerances`.

use crate::adjoint::{adjoint_step, solve_adjoint, AdjointSources};
use crate::cost::{
    cost_state_derivative, eval_cost, optimality_residual, pgd, reduced_cost_and_gradient,
    vi_check, AdmissibleBox, CostParams, PgdOptions, PgdOutcome,
};
use crate::diagnostics::{energy_report, exponent_table, mass_report};
use crate::error::Result;
use crate::forward::{
    seed_admissible, solve_state, solve_state_regularized, Control, ModelParams, StateTrajectory,
};
use crate::grid::{build_grid, ControlBox, DriftScheme, Field, Grid, TimeGrid, Trajectory};
use crate::linearized::{control_axpy, linearize_at, solve_tangent, tangent_step};
use crate::rng::Rng;

/// Thresholds of the battery, pinned to the documented acceptance values.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub transpose: f64,
    pub gradient: f64,
    pub duality: f64,
    pub mass_step: f64,
    pub mass_drift: f64,
    pub k0_slack: f64,
    pub energy_rate: f64,
    pub opt_residual: f64,
    pub vi_slack: f64,
    pub seed_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            transpose: 1e-10,
            gradient: 1e-5,
            duality: 1e-9,
            mass_step: 1e-10,
            mass_drift: 1e-10,
            k0_slack: 1e-8,
            energy_rate: 0.9,
            opt_residual: 1e-4,
            vi_slack: 1e-6,
            seed_residual: 1e-10,
        }
    }
}

/// One named pass/fail entry of the battery.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    /// whether `value` must stay below (`true`) or above the threshold
    pub upper_bound: bool,
}

impl CheckResult {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult { name: name.into(), pass: value <= threshold, value, threshold, upper_bound: true }
    }

    fn above(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult { name: name.into(), pass: value >= threshold, value, threshold, upper_bound: false }
    }
}

/// Smooth strictly positive random field: a short cosine series keeps face
/// gradients inside the upwind CFL budget.
pub fn smooth_positive_field(grid: &Grid, rng: &mut Rng, base: f64, amp: f64) -> Field {
    let pi = std::f64::consts::PI;
    let dim = grid.dim();
    let mut coef = Vec::new();
    for _ in 0..dim {
        coef.push((rng.uniform(-amp, amp), rng.uniform(-amp / 2.0, amp / 2.0)));
    }
    grid.field_from_fn(move |x| {
        let mut v = base;
        for (a, (c1, c2)) in coef.iter().enumerate() {
            v += c1 * (pi * x[a]).cos() + c2 * (2.0 * pi * x[a]).cos();
        }
        v.max(0.0)
    })
}

fn random_control(grid: &Grid, rng: &mut Rng, steps: usize, scale: f64) -> Control {
    Control::from_fields(
        grid,
        (0..steps)
            .map(|_| Field {
                values: (0..grid.ncells()).map(|_| rng.uniform(-scale, scale)).collect(),
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// transpose exactness (dense oracle)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TransposeStudy {
    /// worst relative entry deviation between the per-step tangent matrix
    /// and the transposed adjoint matrix
    pub step_matrix_dev: f64,
    /// same for the global control-to-observation map
    pub global_matrix_dev: f64,
    /// worst relative inner-product mismatch over random pairs
    pub pairing_dev: f64,
}

fn oracle_scenario(grid: &Grid, tg: &TimeGrid) -> (StateTrajectory, Control, ModelParams) {
    let pi = std::f64::consts::PI;
    let params = ModelParams::with_logistic(2.0, 0.3, 0.5, DriftScheme::Upwind).unwrap();
    let u0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 0.9 + 0.2 * (2.0 * pi * x[0]).cos());
    let f = Control::from_fn(grid, tg, |t, x| 0.2 * (pi * x[0]).sin() * (1.0 - t));
    let traj = solve_state(grid, &u0, &v0, &f, &params, tg).unwrap();
    (traj, f, params)
}

/// Build the dense per-step and global tangent/adjoint matrices on the
/// 8-cell, 4-step oracle scenario and measure transpose exactness.
pub fn transpose_study(seed: u64) -> Result<TransposeStudy> {
    let grid = build_grid(1, &[1.0], &[8], &ControlBox::All)?;
    let tg = TimeGrid::new(0.2, 4)?;
    let dt = tg.dt();
    let m = grid.ncells();
    let (traj, f, params) = oracle_scenario(&grid, &tg);
    let coeffs = linearize_at(&grid, &traj, &f, &params)?;

    // per-step matrices: tangent (2m x 3m) vs adjoint (3m x 2m)
    let mut step_matrix_dev = 0.0f64;
    for n in 0..tg.steps {
        let mut tan = vec![vec![0.0; 3 * m]; 2 * m];
        for j in 0..3 * m {
            let mut zu = grid.zero_field();
            let mut zv = grid.zero_field();
            let mut zf = grid.zero_field();
            match j / m {
                0 => zu.values[j % m] = 1.0,
                1 => zv.values[j % m] = 1.0,
                _ => zf.values[j % m] = 1.0,
            }
            let (tu, tv) = tangent_step(&grid, &zu, &zv, &zf, &coeffs, n, dt)?;
            for i in 0..m {
                tan[i][j] = tu.values[i];
                tan[m + i][j] = tv.values[i];
            }
        }
        let mut adj = vec![vec![0.0; 2 * m]; 3 * m];
        for j in 0..2 * m {
            let mut ws = grid.zero_field();
            let mut we = grid.zero_field();
            if j < m {
                ws.values[j] = 1.0;
            } else {
                we.values[j - m] = 1.0;
            }
            let (s, e, pull) = adjoint_step(
                &grid,
                &ws,
                &we,
                &grid.zero_field(),
                &grid.zero_field(),
                &coeffs,
                n,
                dt,
            )?;
            for i in 0..m {
                adj[i][j] = s.values[i];
                adj[m + i][j] = e.values[i];
                adj[2 * m + i][j] = pull.values[i];
            }
        }
        let scale = tan
            .iter()
            .flatten()
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
            .max(1e-300);
        for i in 0..2 * m {
            for j in 0..3 * m {
                step_matrix_dev = step_matrix_dev.max((tan[i][j] - adj[j][i]).abs() / scale);
            }
        }
    }

    // global map: control direction -> (U, V) nodes 0..N-1, against
    // sources -> control kernel; uniform dt and cell volume cancel, so the
    // plain matrices must be exact transposes
    let nm = tg.steps * m;
    let mut g_tan = vec![vec![0.0; nm]; 2 * nm];
    for j in 0..nm {
        let mut fields = vec![grid.zero_field(); tg.steps];
        fields[j / m].values[j % m] = 1.0;
        let dir = Control { steps: fields };
        let out = solve_tangent(&grid, &coeffs, &dir, &tg)?;
        for n in 0..tg.steps {
            for i in 0..m {
                g_tan[n * m + i][j] = out.u[n].values[i];
                g_tan[nm + n * m + i][j] = out.v[n].values[i];
            }
        }
    }
    let mut g_adj = vec![vec![0.0; 2 * nm]; nm];
    for j in 0..2 * nm {
        let mut sources = AdjointSources::zeros(&grid, tg.steps);
        if j < nm {
            sources.su[j / m].values[j % m] = 1.0;
        } else {
            let k = j - nm;
            sources.sv[k / m].values[k % m] = 1.0;
        }
        let pair = solve_adjoint(&grid, &coeffs, &sources, &tg)?;
        for n in 0..tg.steps {
            for i in 0..m {
                g_adj[n * m + i][j] = pair.control_kernel[n].values[i];
            }
        }
    }
    let scale = g_tan
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
        .max(1e-300);
    let mut global_matrix_dev = 0.0f64;
    for i in 0..2 * nm {
        for j in 0..nm {
            global_matrix_dev = global_matrix_dev.max((g_tan[i][j] - g_adj[j][i]).abs() / scale);
        }
    }

    // random-pair inner-product identity
    let mut rng = Rng::new(seed);
    let mut pairing_dev = 0.0f64;
    for _ in 0..100 {
        let dir = random_control(&grid, &mut rng, tg.steps, 1.0);
        let sources = AdjointSources {
            su: random_control(&grid, &mut rng, tg.steps, 1.0).steps,
            sv: random_control(&grid, &mut rng, tg.steps, 1.0).steps,
        };
        let tangent = solve_tangent(&grid, &coeffs, &dir, &tg)?;
        let pair = solve_adjoint(&grid, &coeffs, &sources, &tg)?;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for n in 0..tg.steps {
            lhs += dt
                * (grid.inner(&tangent.u[n], &sources.su[n])
                    + grid.inner(&tangent.v[n], &sources.sv[n]));
            rhs += dt * grid.inner(&dir.steps[n], &pair.control_kernel[n]);
        }
        let scale = lhs.abs().max(rhs.abs()).max(1e-6);
        pairing_dev = pairing_dev.max((lhs - rhs).abs() / scale);
    }
    Ok(TransposeStudy { step_matrix_dev, global_matrix_dev, pairing_dev })
}

// ---------------------------------------------------------------------------
// gradient and duality identities
// ---------------------------------------------------------------------------

/// One tracking scenario of the gradient/duality studies.
pub struct GradScenario {
    pub grid: Grid,
    pub tg: TimeGrid,
    pub params: ModelParams,
    pub u0: Field,
    pub v0: Field,
    pub f: Control,
    pub cost: CostParams,
}

/// The three exponent scenarios (`p` = 1.5, 2 logistic-free, 2.5 logistic);
/// the middle one uses a half-domain control region.
pub fn gradient_scenarios() -> Result<Vec<GradScenario>> {
    let pi = std::f64::consts::PI;
    let mut out = Vec::new();
    for (p, logistic, half_mask) in [(1.5, false, false), (2.0, false, true), (2.5, true, false)] {
        let control_box = if half_mask {
            ControlBox::Box { lo: vec![0.0], hi: vec![0.5] }
        } else {
            ControlBox::All
        };
        let grid = build_grid(1, &[1.0], &[16], &control_box)?;
        let tg = TimeGrid::new(0.25, 20)?;
        let params = if logistic {
            ModelParams::with_logistic(p, 0.4, 0.8, DriftScheme::Central)?
        } else {
            ModelParams::non_logistic(p, DriftScheme::Central)?
        };
        let u0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let v0 = grid.field_from_fn(|x| 0.8 + 0.2 * (2.0 * pi * x[0]).cos());
        let f = Control::from_fn(&grid, &tg, |t, x| 0.25 * (pi * x[0]).cos() * (1.0 - 0.5 * t));
        let nodes = tg.steps + 1;
        let cost = CostParams::new(
            1.0,
            0.5,
            0.1,
            0.0,
            Trajectory { fields: vec![grid.constant_field(0.8); nodes] },
            Trajectory { fields: vec![grid.constant_field(0.5); nodes] },
        )?;
        out.push(GradScenario { grid, tg, params, u0, v0, f, cost });
    }
    Ok(out)
}

/// Central finite differences of the discrete reduced cost against the
/// adjoint gradient; returns the worst relative error over all scenarios
/// and directions.
pub fn gradient_study(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for sc in gradient_scenarios()? {
        let dt = sc.tg.dt();
        let (_, grad, _, _) = reduced_cost_and_gradient(
            &sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.cost, &sc.tg,
        )?;
        for _ in 0..10 {
            let dir = random_control(&sc.grid, &mut rng, sc.tg.steps, 1.0);
            let pairing = grad.inner(&sc.grid, &dir, dt);
            let eps = 1e-4;
            let plus = solve_state(
                &sc.grid,
                &sc.u0,
                &sc.v0,
                &control_axpy(&sc.f, eps, &dir),
                &sc.params,
                &sc.tg,
            )?;
            let minus = solve_state(
                &sc.grid,
                &sc.u0,
                &sc.v0,
                &control_axpy(&sc.f, -eps, &dir),
                &sc.params,
                &sc.tg,
            )?;
            let jp = eval_cost(
                &sc.grid,
                &plus,
                &control_axpy(&sc.f, eps, &dir),
                &sc.cost,
                sc.params.p,
                &sc.tg,
            )?
            .total;
            let jm = eval_cost(
                &sc.grid,
                &minus,
                &control_axpy(&sc.f, -eps, &dir),
                &sc.cost,
                sc.params.p,
                &sc.tg,
            )?
            .total;
            let fd = (jp - jm) / (2.0 * eps);
            let rel = (fd - pairing).abs() / pairing.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// The duality identity: cost-source pairing with the tangent response
/// equals the control pairing with the adjoint kernel.
pub fn duality_study(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for sc in gradient_scenarios()? {
        let dt = sc.tg.dt();
        let traj = solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg)?;
        let coeffs = linearize_at(&sc.grid, &traj, &sc.f, &sc.params)?;
        let sources = cost_state_derivative(&sc.grid, &traj, &sc.cost, sc.params.p, &sc.tg)?;
        let pair = solve_adjoint(&sc.grid, &coeffs, &sources, &sc.tg)?;
        for _ in 0..20 {
            let dir = random_control(&sc.grid, &mut rng, sc.tg.steps, 1.0);
            let tangent = solve_tangent(&sc.grid, &coeffs, &dir, &sc.tg)?;
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for n in 0..sc.tg.steps {
                lhs += dt
                    * (sc.grid.inner(&tangent.u[n], &sources.su[n])
                        + sc.grid.inner(&tangent.v[n], &sources.sv[n]));
                rhs += dt * sc.grid.inner(&dir.steps[n], &pair.control_kernel[n]);
            }
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// mass law, positivity, energy rate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MassStudy {
    pub max_step_defect: f64,
    pub conservation_drift: f64,
    pub k0_excess: f64,
}

/// Per-step mass identity on a batch of forward runs, total-mass drift over
/// 200 conservative steps, and the equilibrium bound with its slack.
pub fn mass_study() -> Result<MassStudy> {
    let pi = std::f64::consts::PI;
    let mut max_step_defect = 0.0f64;
    let mut k0_excess = f64::NEG_INFINITY;

    for sc in gradient_scenarios()? {
        let traj = solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg)?;
        let rep = mass_report(&sc.grid, &traj, &sc.params, &sc.tg)?;
        max_step_defect = max_step_defect.max(rep.residual_max);
        if rep.k0.is_finite() {
            let peak = rep.series.iter().cloned().fold(f64::MIN, f64::max);
            k0_excess = k0_excess.max(peak - rep.k0);
        }
    }

    // logistic upwind run, equilibrium bound active
    let grid = build_grid(1, &[1.0], &[20], &ControlBox::All)?;
    let tg = TimeGrid::new(0.5, 100)?;
    let params = ModelParams::with_logistic(2.0, 0.8, 0.5, DriftScheme::Upwind)?;
    let u0 = grid.field_from_fn(|x| 1.6 + 0.3 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 0.8 + 0.2 * (pi * x[0]).cos());
    let f = Control::constant(&grid, tg.steps, 0.2);
    let traj = solve_state(&grid, &u0, &v0, &f, &params, &tg)?;
    let rep = mass_report(&grid, &traj, &params, &tg)?;
    max_step_defect = max_step_defect.max(rep.residual_max);
    let peak = rep.series.iter().cloned().fold(f64::MIN, f64::max);
    k0_excess = k0_excess.max(peak - rep.k0);

    // r = mu = 0: relative drift over 200 steps
    let tg200 = TimeGrid::new(1.0, 200)?;
    let params0 = ModelParams::non_logistic(2.0, DriftScheme::Central)?;
    let f0 = Control::constant(&grid, tg200.steps, 0.3);
    let traj0 = solve_state(&grid, &u0, &v0, &f0, &params0, &tg200)?;
    let m0 = grid.integrate(&traj0.u[0]);
    let drift = traj0
        .u
        .iter()
        .map(|un| ((grid.integrate(un) - m0) / m0).abs())
        .fold(0.0, f64::max);
    let rep0 = mass_report(&grid, &traj0, &params0, &tg200)?;
    max_step_defect = max_step_defect.max(rep0.residual_max);

    Ok(MassStudy { max_step_defect, conservation_drift: drift, k0_excess })
}

/// 50 randomized upwind scenarios under the CFL preconditions; returns the
/// global minimum of every state value seen.
pub fn positivity_study(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut global_min = f64::INFINITY;
    for k in 0..50 {
        let dim = if k % 3 == 2 { 2 } else { 1 };
        let n = if dim == 1 { 16 + (k % 5) * 2 } else { 8 };
        let grid = build_grid(dim, &vec![1.0; dim], &vec![n; dim], &ControlBox::All)?;
        let tg = TimeGrid::new(0.3, 60)?;
        let p = rng.uniform(1.3, 2.8);
        let params = if k % 2 == 0 {
            ModelParams::with_logistic(p, rng.uniform(0.1, 0.8), rng.uniform(0.2, 1.0), DriftScheme::Upwind)?
        } else {
            ModelParams::non_logistic(p, DriftScheme::Upwind)?
        };
        let base_u = rng.uniform(0.4, 1.0);
        let base_v = rng.uniform(0.4, 1.0);
        let u0 = smooth_positive_field(&grid, &mut rng, base_u, 0.3);
        let v0 = smooth_positive_field(&grid, &mut rng, base_v, 0.3);
        let f = Control::constant(&grid, tg.steps, rng.uniform(-0.4, 0.4));
        let traj = solve_state(&grid, &u0, &v0, &f, &params, &tg)?;
        for fld in traj.u.iter().chain(traj.v.iter()) {
            global_min = global_min.min(fld.min());
        }
    }
    Ok(global_min)
}

/// Energy-balance residual rates under joint (dt, h^2) refinement for the
/// standard smooth scenario: p = 1.5 plain and p = 2.5 logistic.
pub fn energy_rate_study() -> Result<(f64, f64)> {
    let pi = std::f64::consts::PI;
    let run = |p: f64, logistic: bool, n: usize, steps: usize| -> Result<f64> {
        let grid = build_grid(1, &[1.0], &[n], &ControlBox::All)?;
        let tg = TimeGrid::new(0.2, steps)?;
        let params = if logistic {
            ModelParams::with_logistic(p, 0.5, 0.8, DriftScheme::Central)?
        } else {
            ModelParams::non_logistic(p, DriftScheme::Central)?
        };
        let u0 = grid.field_from_fn(|x| 1.0 + 0.5 * (pi * x[0]).cos());
        let v0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let f = Control::constant(&grid, tg.steps, 0.15);
        let traj = solve_state(&grid, &u0, &v0, &f, &params, &tg)?;
        Ok(energy_report(&grid, &traj, &f, &params, &tg)?.residual_max)
    };
    // three joint levels; the asymptotic (finest-pair) rate is reported
    let mut rates = [0.0f64; 2];
    for (i, (p, logistic)) in [(1.5, false), (2.5, true)].into_iter().enumerate() {
        let mid = run(p, logistic, 32, 100)?;
        let fine = run(p, logistic, 64, 400)?;
        rates[i] = (mid / fine).ln() / 4.0f64.ln();
    }
    Ok((rates[0], rates[1]))
}

// ---------------------------------------------------------------------------
// eps regularization, seeding, exponents, optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpsStudy {
    pub deviations: Vec<f64>,
    pub monotone: bool,
    pub bitwise_at_zero: bool,
}

/// Halve eps over four levels and track `max_n ||v_eps - v_0||_{L2}`; also
/// confirm the eps = 0 mode equals the plain stepper bitwise.
pub fn eps_study() -> Result<EpsStudy> {
    let pi = std::f64::consts::PI;
    let grid = build_grid(1, &[1.0], &[24], &ControlBox::All)?;
    let tg = TimeGrid::new(0.25, 25)?;
    let u0 = grid.field_from_fn(|x| 1.0 + 0.5 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
    let f = Control::constant(&grid, tg.steps, 0.3);
    let plain_params = ModelParams::non_logistic(2.0, DriftScheme::Central)?;
    let base = solve_state(&grid, &u0, &v0, &f, &plain_params, &tg)?;

    let zero_mode = solve_state_regularized(&grid, &u0, &v0, &f, &plain_params, &tg)?;
    let bitwise_at_zero = zero_mode == base;

    let mut deviations = Vec::new();
    for level in 0..4 {
        let eps = 0.1 / 2.0f64.powi(level);
        let params = ModelParams::new(2.0, 0.0, 0.0, eps, false, DriftScheme::Central)?;
        let reg = solve_state_regularized(&grid, &u0, &v0, &f, &params, &tg)?;
        let mut dev = 0.0f64;
        for n in 0..=tg.steps {
            let diff = reg.v[n].zip(&base.v[n], |a, b| a - b);
            dev = dev.max(grid.lq_norm(&diff, 2.0)?);
        }
        deviations.push(dev);
    }
    let monotone = deviations.windows(2).all(|w| w[1] < w[0]);
    Ok(EpsStudy { deviations, monotone, bitwise_at_zero })
}

#[derive(Debug, Clone)]
pub struct SeedStudy {
    pub residual: f64,
    pub constant_case_dev: f64,
}

/// Admissible seeding: the returned triple satisfies the discrete v-equation
/// and the constant-data case reproduces `f = 1 - c^p`.
pub fn seed_study() -> Result<SeedStudy> {
    let pi = std::f64::consts::PI;
    let grid = build_grid(1, &[1.0], &[16], &ControlBox::All)?;
    let tg = TimeGrid::new(0.2, 16)?;
    let params = ModelParams::non_logistic(2.0, DriftScheme::Central)?;
    let u0 = grid.field_from_fn(|x| 0.6 + 0.2 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
    let (f, traj) = seed_admissible(&grid, &u0, &v0, &params, &tg)?;
    let residual = crate::cost::residual_check(&grid, &traj, &f, &params, &tg)?;

    let c = 0.7;
    let (fc, _) = seed_admissible(&grid, &grid.constant_field(c), &grid.constant_field(1.0), &params, &tg)?;
    let expect = 1.0 - c.powf(params.p);
    let mut dev = 0.0f64;
    for step in &fc.steps {
        for &x in &step.values {
            dev = dev.max((x - expect).abs());
        }
    }
    Ok(SeedStudy { residual, constant_case_dev: dev })
}

/// Worst deviation of the exponent table from the pinned rational values.
pub fn exponent_check() -> Result<f64> {
    let cases: [(f64, [f64; 4]); 5] = [
        (1.5, [5.0 / 3.0, 3.0, 5.0, 10.0 / 3.0]),
        (2.0, [2.0, 3.0, 5.0, 2.5]),
        (2.2, [55.0 / 29.0, 3.6, 6.0, 2.5]),
        (2.4, [2.0, 4.2, 7.0, 2.5]),
        (3.0, [2.0, 6.0, 10.0, 2.5]),
    ];
    let mut worst = 0.0f64;
    for (p, expect) in cases {
        let t = exponent_table(p)?;
        worst = worst.max((t.gamma - expect[0]).abs());
        worst = worst.max((t.alpha - expect[1]).abs());
        worst = worst.max((t.beta - expect[2]).abs());
        worst = worst.max((t.mu - expect[3]).abs());
    }
    // continuity at the genuine branch points
    let mu_left = 10.0 * 2.0 / (7.0 * 2.0 - 6.0);
    worst = worst.max((mu_left - 2.5f64).abs());
    let gamma_mid_end = 25.0 * 2.4 / (18.0 + 5.0 * 2.4);
    worst = worst.max((gamma_mid_end - 2.0f64).abs());
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct OptimizerStudy {
    pub monotone: bool,
    pub final_residual: f64,
    pub vi_min: f64,
    pub grad_norm: f64,
    pub outcome: PgdOutcome,
    pub iterations: usize,
}

/// The tracking scenario of the optimizer check: targets are a slightly
/// perturbed uncontrolled run, the control starts from zero.
pub fn optimizer_study(seed: u64) -> Result<OptimizerStudy> {
    let pi = std::f64::consts::PI;
    let grid = build_grid(1, &[1.0], &[16], &ControlBox::All)?;
    let tg = TimeGrid::new(0.4, 20)?;
    let dt = tg.dt();
    let params = ModelParams::non_logistic(2.0, DriftScheme::Central)?;
    let u0 = grid.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
    let v0 = grid.field_from_fn(|x| 0.8 + 0.2 * (pi * x[0]).cos());
    let f0 = Control::zeros(&grid, tg.steps);
    let uncontrolled = solve_state(&grid, &u0, &v0, &f0, &params, &tg)?;
    let bump = grid.field_from_fn(|x| 0.02 * (pi * x[0]).cos());
    let u_d: Vec<Field> = uncontrolled
        .u
        .iter()
        .map(|f| {
            let mut g = f.clone();
            g.axpy(1.0, &bump);
            g
        })
        .collect();
    let v_d: Vec<Field> = uncontrolled
        .v
        .iter()
        .map(|f| {
            let mut g = f.clone();
            g.axpy(1.0, &bump);
            g
        })
        .collect();
    let cost = CostParams::new(
        1.0,
        1.0,
        1e-3,
        0.0,
        Trajectory { fields: u_d },
        Trajectory { fields: v_d },
    )?;
    let bx = AdmissibleBox::new(-0.8, 0.8)?;
    let opts = PgdOptions { max_iters: 400, tol_j: 1e-15, tol_opt: 1e-4, s_init: 8.0 };
    let out = pgd(&grid, &u0, &v0, &f0, &params, &cost, &bx, &opts, &tg)?;

    let monotone = out
        .history
        .windows(2)
        .all(|w| w[1].cost.total <= w[0].cost.total + 1e-15);
    let (_, grad, _, _) =
        reduced_cost_and_gradient(&grid, &u0, &v0, &out.control, &params, &cost, &tg)?;
    let final_residual = optimality_residual(&grid, &out.control, &grad, &bx, dt);
    let grad_norm = grad.l2q_norm(&grid, dt);
    let mut rng = Rng::new(seed);
    let vi = vi_check(&grid, &out.control, &grad, &bx, 100, &mut rng, dt);
    Ok(OptimizerStudy {
        monotone,
        final_residual,
        vi_min: vi.min_pairing,
        grad_norm,
        outcome: out.outcome,
        iterations: out.history.len(),
    })
}

// ---------------------------------------------------------------------------
// the CLI battery
// ---------------------------------------------------------------------------

/// Run the named property battery (transpose, gradient, mass, positivity,
/// duality, energy-rate) and return one result per check.
pub fn run_battery(tols: &Tolerances, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let ts = transpose_study(seed)?;
    out.push(CheckResult::below("transpose_step_matrix", ts.step_matrix_dev, tols.transpose));
    out.push(CheckResult::below("transpose_global_matrix", ts.global_matrix_dev, tols.transpose));
    out.push(CheckResult::below("transpose_pairings", ts.pairing_dev, tols.transpose));
    out.push(CheckResult::below("gradient_fd", gradient_study(seed)?, tols.gradient));
    out.push(CheckResult::below("duality_identity", duality_study(seed)?, tols.duality));
    let ms = mass_study()?;
    out.push(CheckResult::below("mass_step_defect", ms.max_step_defect, tols.mass_step));
    out.push(CheckResult::below("mass_conservation_drift", ms.conservation_drift, tols.mass_drift));
    out.push(CheckResult::below("mass_k0_excess", ms.k0_excess, tols.k0_slack));
    out.push(CheckResult::above("positivity_min", positivity_study(seed)?, 0.0));
    let (r1, r2) = energy_rate_study()?;
    out.push(CheckResult::above("energy_rate_p1.5", r1, tols.energy_rate));
    out.push(CheckResult::above("energy_rate_p2.5_logistic", r2, tols.energy_rate));
    Ok(out)
}

/// Deterministic JSON for the battery outcome.
pub fn battery_json(results: &[CheckResult]) -> String {
    let mut s = String::from("{\n  \"checks\": [\n");
    for (i, r) in results.iter().enumerate() {
        s += &format!(
            "    {{\"name\": \"{}\", \"pass\": {}, \"value\": {:.6e}, \"threshold\": {:.6e}, \"bound\": \"{}\"}}{}\n",
            r.name,
            r.pass,
            r.value,
            r.threshold,
            if r.upper_bound { "upper" } else { "lower" },
            if i + 1 < results.len() { "," } else { "" }
        );
    }
    let all = results.iter().all(|r| r.pass);
    s += &format!("  ],\n  \"pass\": {all}\n}}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_check_is_exact() {
        assert!(exponent_check().unwrap() < 1e-14);
    }

    #[test]
    fn seed_study_within_tolerance() {
        let s = seed_study().unwrap();
        assert!(s.residual <= 1e-10);
        assert!(s.constant_case_dev <= 1e-10);
    }

    #[test]
    fn eps_study_monotone_and_bitwise() {
        let s = eps_study().unwrap();
        assert!(s.bitwise_at_zero);
        assert!(s.monotone, "{:?}", s.deviations);
    }
}
