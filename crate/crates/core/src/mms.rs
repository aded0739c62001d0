//! Manufactured-solution convergence studies.
//!
//! Each target plants an analytic solution with zero normal derivative on
//! the unit box, derives the forcing in closed form, runs the matching
//! solver over a refinement ladder and reports observed orders: second in h
//! (space study at tiny fixed dt) and first in dt (time study at fine fixed
//! h, with a strongly time-dependent solution so the dt error dominates).

use crate::error::{Error, Result};
use crate::forward::{solve_state_with_sources, Control, ModelParams};
use crate::grid::{build_grid, ControlBox, DriftScheme, Field, Grid, TimeGrid};
use crate::linearized::{solve_coupled_linear, LinCoeffs};

/// Which manufactured problem to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsTarget {
    /// scalar diffusion-convection-reaction with divergence sources
    A1,
    /// scalar diffusion-reaction
    A11,
    /// the coupled linear system
    A19,
    /// the forced nonlinear state system
    Nonlinear,
}

impl MmsTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a1" => Ok(MmsTarget::A1),
            "a11" => Ok(MmsTarget::A11),
            "a19" => Ok(MmsTarget::A19),
            "nonlinear" => Ok(MmsTarget::Nonlinear),
            other => Err(Error::InvalidParameter(format!(
                "unknown mms target '{other}' (expected a1|a11|a19|nonlinear)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MmsTarget::A1 => "a1",
            MmsTarget::A11 => "a11",
            MmsTarget::A19 => "a19",
            MmsTarget::Nonlinear => "nonlinear",
        }
    }
}

/// Refinement direction of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyAxis {
    Space,
    Time,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub target: MmsTarget,
    pub dim: usize,
    pub axis: StudyAxis,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h,dt,error,rate\n");
        for r in &self.rows {
            let rate = r.rate.map_or(String::new(), |v| format!("{v:.6}"));
            s += &format!("{},{:.10e},{:.10e},{:.10e},{}\n", r.level, r.h, r.dt, r.error, rate);
        }
        s
    }

    /// Observed order on the last refinement step.
    pub fn final_rate(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.rate)
    }

    pub fn min_rate(&self) -> Option<f64> {
        let rates: Vec<f64> = self.rows.iter().filter_map(|r| r.rate).collect();
        if rates.is_empty() {
            None
        } else {
            Some(rates.iter().cloned().fold(f64::INFINITY, f64::min))
        }
    }
}

// decay rates of the manufactured time factor: gentle for space studies
// (so the tiny fixed dt contributes nothing) and steep for time studies
// (so the dt error dominates the fine fixed grid's spatial floor)
const RATE_SPACE: f64 = 1.0;
const RATE_TIME: f64 = 3.0;

fn cos_prod(x: &[f64; 3], dim: usize, k: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (0..dim).map(|a| (k * pi * x[a]).cos()).product()
}

/// unit-box grid of the requested resolution, full control mask
fn unit_grid(dim: usize, n: usize) -> Result<Grid> {
    build_grid(dim, &vec![1.0; dim], &vec![n; dim], &ControlBox::All)
}

/// L2(Q)-style error of a node sequence against an exact function.
fn node_error(
    grid: &Grid,
    tg: &TimeGrid,
    fields: &[Field],
    exact: impl Fn(f64, &[f64; 3]) -> f64,
) -> f64 {
    let dt = tg.dt();
    let mut acc = 0.0;
    for n in 1..=tg.steps {
        let t = tg.time(n);
        let mut sq = 0.0;
        for c in 0..grid.ncells() {
            let e = fields[n].values[c] - exact(t, &grid.center(c));
            sq += e * e;
        }
        acc += sq * grid.cell_volume() * dt;
    }
    acc.sqrt()
}

/// A11: `w_t - Lap w + a w = g`, exact `w = e^{-kt} prod cos(pi x_a)`.
fn run_a11(dim: usize, n: usize, tg: &TimeGrid, k: f64) -> Result<f64> {
    let grid = unit_grid(dim, n)?;
    let pi = std::f64::consts::PI;
    let g = move |t: f64| (-k * t).exp();
    let a_coef = 1.0;
    let exact = move |t: f64, x: &[f64; 3]| g(t) * cos_prod(x, dim, 1.0);
    let lap_factor = dim as f64 * pi * pi;
    let mut coeffs = LinCoeffs::zeros(&grid, tg.steps);
    for s in 0..tg.steps {
        let t = tg.time(s);
        coeffs.a[s] = grid.constant_field(a_coef);
        coeffs.g_u0[s] =
            grid.field_from_fn(|x| (-k + lap_factor + a_coef) * g(t) * cos_prod(x, dim, 1.0));
    }
    let u0 = grid.field_from_fn(|x| exact(0.0, x));
    let out = solve_coupled_linear(&grid, &coeffs, &u0, &grid.zero_field(), tg)?;
    Ok(node_error(&grid, tg, &out.u, exact))
}

/// A1: adds the drift `div(w c)` with `c_a = c0 sin(pi x_a)` and a
/// divergence source `g1_a = b sin(pi x_a)` (zero normal component).
fn run_a1(dim: usize, n: usize, tg: &TimeGrid, k: f64) -> Result<f64> {
    let grid = unit_grid(dim, n)?;
    let pi = std::f64::consts::PI;
    let g = move |t: f64| (-k * t).exp();
    let a_coef = 1.0;
    let c0 = 0.4;
    let b = 0.3;
    let exact = move |t: f64, x: &[f64; 3]| g(t) * cos_prod(x, dim, 1.0);
    let lap_factor = dim as f64 * pi * pi;

    // div(w c): sum over axes of d/dx_a [ w * c0 sin(pi x_a) ]
    let div_wc = move |t: f64, x: &[f64; 3]| -> f64 {
        let mut acc = 0.0;
        for a in 0..dim {
            let others: f64 = (0..dim)
                .filter(|&b_| b_ != a)
                .map(|b_| (pi * x[b_]).cos())
                .product();
            // d/dx [cos(pi x) sin(pi x)] = pi cos(2 pi x)
            acc += c0 * pi * (2.0 * pi * x[a]).cos() * others;
        }
        g(t) * acc
    };
    // div(g1) with g1_a = b sin(pi x_a): sum of b pi cos(pi x_a)
    let div_g1 = move |x: &[f64; 3]| -> f64 {
        (0..dim).map(|a| b * pi * (pi * x[a]).cos()).sum()
    };

    let mut coeffs = LinCoeffs::zeros(&grid, tg.steps);
    for s in 0..tg.steps {
        let t = tg.time(s);
        coeffs.a[s] = grid.constant_field(a_coef);
        for axis in 0..dim {
            for c in 0..grid.ncells() {
                let xf = grid.face_center(axis, c);
                coeffs.c[s].axis[axis][c] = c0 * (pi * xf[axis]).sin();
                // the equation is stated with +div g1 on the right; the
                // solver takes the A.19 sign, hence the flip
                coeffs.g_u1[s].axis[axis][c] = -b * (pi * xf[axis]).sin();
            }
        }
        coeffs.g_u0[s] = grid.field_from_fn(|x| {
            (-k + lap_factor + a_coef) * g(t) * cos_prod(x, dim, 1.0) + div_wc(t, x)
                - div_g1(x)
        });
    }
    let u0 = grid.field_from_fn(|x| exact(0.0, x));
    let out = solve_coupled_linear(&grid, &coeffs, &u0, &grid.zero_field(), tg)?;
    Ok(node_error(&grid, tg, &out.u, exact))
}

/// A19: coupled system with constant `a`, `d`, `beta1`, `beta2`; exact
/// `U = e^{-kt} prod cos(pi x)`, `V = e^{-kt} prod cos(2 pi x)`.
fn run_a19(dim: usize, n: usize, tg: &TimeGrid, k: f64) -> Result<f64> {
    let grid = unit_grid(dim, n)?;
    let pi = std::f64::consts::PI;
    let g = move |t: f64| (-k * t).exp();
    let (a_coef, d_coef, b1, b2) = (1.0, 0.3, 0.8, 0.5);
    let exact_u = move |t: f64, x: &[f64; 3]| g(t) * cos_prod(x, dim, 1.0);
    let exact_v = move |t: f64, x: &[f64; 3]| g(t) * cos_prod(x, dim, 2.0);
    let lap_u = dim as f64 * pi * pi;
    let lap_v = dim as f64 * 4.0 * pi * pi;

    let mut coeffs = LinCoeffs::zeros(&grid, tg.steps);
    for s in 0..tg.steps {
        let t = tg.time(s);
        coeffs.a[s] = grid.constant_field(a_coef);
        coeffs.d[s] = grid.constant_field(d_coef);
        coeffs.beta1[s] = grid.constant_field(b1);
        coeffs.beta2[s] = grid.constant_field(b2);
        coeffs.g_u0[s] = grid.field_from_fn(|x| {
            (-k + lap_u + a_coef) * g(t) * cos_prod(x, dim, 1.0)
                - d_coef * lap_v * g(t) * cos_prod(x, dim, 2.0)
        });
        coeffs.g_v[s] = grid.field_from_fn(|x| {
            (-k + lap_v + b1) * g(t) * cos_prod(x, dim, 2.0)
                + b2 * g(t) * cos_prod(x, dim, 1.0)
        });
    }
    let u0 = grid.field_from_fn(|x| exact_u(0.0, x));
    let v0 = grid.field_from_fn(|x| exact_v(0.0, x));
    let out = solve_coupled_linear(&grid, &coeffs, &u0, &v0, tg)?;
    let eu = node_error(&grid, tg, &out.u, exact_u);
    let ev = node_error(&grid, tg, &out.v, exact_v);
    Ok((eu * eu + ev * ev).sqrt())
}

/// Forced nonlinear state system with positive manufactured states and a
/// constant bilinear control.
fn run_nonlinear(dim: usize, n: usize, tg: &TimeGrid, k: f64) -> Result<f64> {
    let grid = unit_grid(dim, n)?;
    let pi = std::f64::consts::PI;
    let g = move |t: f64| (-k * t).exp();
    let params = ModelParams::with_logistic(2.0, 0.5, 0.8, DriftScheme::Central).unwrap();
    let fval = 0.25;
    let (au, bu) = (1.1, 0.5);
    let (av, bv) = (1.0, 0.4);

    let u_ex = move |t: f64, x: &[f64; 3]| g(t) * (au + bu * cos_prod(x, dim, 1.0));
    let v_ex = move |t: f64, x: &[f64; 3]| g(t) * (av + bv * cos_prod(x, dim, 2.0));
    // partials of the cosine products
    let du_ax = move |t: f64, x: &[f64; 3], a: usize| -> f64 {
        let others: f64 = (0..dim).filter(|&b_| b_ != a).map(|b_| (pi * x[b_]).cos()).product();
        -g(t) * bu * pi * (pi * x[a]).sin() * others
    };
    let dv_ax = move |t: f64, x: &[f64; 3], a: usize| -> f64 {
        let others: f64 =
            (0..dim).filter(|&b_| b_ != a).map(|b_| (2.0 * pi * x[b_]).cos()).product();
        -g(t) * bv * 2.0 * pi * (2.0 * pi * x[a]).sin() * others
    };
    let lap_u = move |t: f64, x: &[f64; 3]| -g(t) * bu * dim as f64 * pi * pi * cos_prod(x, dim, 1.0);
    let lap_v =
        move |t: f64, x: &[f64; 3]| -g(t) * bv * dim as f64 * 4.0 * pi * pi * cos_prod(x, dim, 2.0);

    let p = params.p;
    let (r, mu) = (params.r, params.mu);
    let src_u: Vec<Field> = (0..tg.steps)
        .map(|s| {
            let t = tg.time(s);
            grid.field_from_fn(|x| {
                let u = u_ex(t, x);
                let grad_dot: f64 = (0..dim).map(|a| du_ax(t, x, a) * dv_ax(t, x, a)).sum();
                let drift = grad_dot + u * lap_v(t, x);
                -k * u - lap_u(t, x) - drift - r * u + mu * u.powf(p)
            })
        })
        .collect();
    let src_v: Vec<Field> = (0..tg.steps)
        .map(|s| {
            let t = tg.time(s);
            grid.field_from_fn(|x| {
                let u = u_ex(t, x);
                let v = v_ex(t, x);
                -k * v - lap_v(t, x) + v - u.powf(p) - fval * v
            })
        })
        .collect();

    let f = Control::constant(&grid, tg.steps, fval);
    let u0 = grid.field_from_fn(|x| u_ex(0.0, x));
    let v0 = grid.field_from_fn(|x| v_ex(0.0, x));
    let traj = solve_state_with_sources(
        &grid,
        &u0,
        &v0,
        &f,
        &params,
        tg,
        Some(&src_u),
        Some(&src_v),
    )?;
    let eu = node_error(&grid, tg, &traj.u, u_ex);
    let ev = node_error(&grid, tg, &traj.v, v_ex);
    Ok((eu * eu + ev * ev).sqrt())
}

fn run_target(target: MmsTarget, dim: usize, n: usize, tg: &TimeGrid, k: f64) -> Result<f64> {
    match target {
        MmsTarget::A1 => run_a1(dim, n, tg, k),
        MmsTarget::A11 => run_a11(dim, n, tg, k),
        MmsTarget::A19 => run_a19(dim, n, tg, k),
        MmsTarget::Nonlinear => run_nonlinear(dim, n, tg, k),
    }
}

/// Three-level refinement study for one target.
///
/// Space: halve h at a tiny fixed dt. Time: halve dt at a fine fixed h.
pub fn convergence_study(
    target: MmsTarget,
    dim: usize,
    axis: StudyAxis,
) -> Result<ConvergenceTable> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidParameter(
            "convergence studies are wired for 1D and 2D".into(),
        ));
    }
    let mut rows = Vec::new();
    match axis {
        StudyAxis::Space => {
            let (base_n, steps, horizon) =
                if dim == 1 { (12, 12800, 0.2) } else { (8, 6400, 0.2) };
            let tg = TimeGrid::new(horizon, steps)?;
            let mut prev: Option<f64> = None;
            for level in 0..3 {
                let n = base_n << level;
                let err = run_target(target, dim, n, &tg, RATE_SPACE)?;
                let rate = prev.map(|e_prev| (e_prev / err).ln() / 2.0f64.ln());
                rows.push(ConvergenceRow { level, h: 1.0 / n as f64, dt: tg.dt(), error: err, rate });
                prev = Some(err);
            }
        }
        StudyAxis::Time => {
            // modest fixed grid: the steep time factor keeps the spatial
            // floor around a percent of the dt error, and the implicit
            // systems stay well conditioned for the plain CG solver
            let (n, base_steps, horizon) = (40, 10, 0.4);
            let mut prev: Option<f64> = None;
            for level in 0..3 {
                let steps = base_steps << level;
                let tg = TimeGrid::new(horizon, steps)?;
                let err = run_target(target, dim, n, &tg, RATE_TIME)?;
                let rate = prev.map(|e_prev| (e_prev / err).ln() / 2.0f64.ln());
                rows.push(ConvergenceRow { level, h: 1.0 / n as f64, dt: tg.dt(), error: err, rate });
                prev = Some(err);
            }
        }
    }
    Ok(ConvergenceTable { target, dim, axis, rows })
}
