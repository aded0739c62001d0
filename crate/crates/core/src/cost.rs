//! Tracking cost, reduced gradient, projected gradient descent and the
//! first-order optimality diagnostics.
//!
//! The time quadrature everywhere is the left-endpoint rule shared with the
//! steppers, so the reduced gradient assembled from the discrete adjoint is
//! the exact gradient of the discrete cost.

use crate::adjoint::{solve_adjoint, AdjointPair, AdjointSources};
use crate::error::{Error, Result};
use crate::forward::{pow_p, pow_pm1, solve_state, Control, ModelParams, StateTrajectory};
use crate::grid::{DriftStencil, Field, Grid, TimeGrid, Trajectory};
use crate::linearized::{control_axpy, linearize_at};
use crate::linsolve::{HelmholtzOp};
use crate::rng::Rng;

/// Weights, exponent shift and target trajectories of the tracking cost.
#[derive(Debug, Clone)]
pub struct CostParams {
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub gamma_f: f64,
    /// the small positive shift in `L^{5/2+delta}`; 0 selects the clean form
    pub delta: f64,
    pub u_d: Trajectory,
    pub v_d: Trajectory,
}

impl CostParams {
    pub fn new(
        gamma_u: f64,
        gamma_v: f64,
        gamma_f: f64,
        delta: f64,
        u_d: Trajectory,
        v_d: Trajectory,
    ) -> Result<Self> {
        if !(gamma_u > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma_u must be positive, got {gamma_u}")));
        }
        if gamma_v < 0.0 || gamma_f < 0.0 || delta < 0.0 {
            return Err(Error::InvalidParameter(
                "gamma_v, gamma_f and delta must be nonnegative".into(),
            ));
        }
        Ok(CostParams { gamma_u, gamma_v, gamma_f, delta, u_d, v_d })
    }
}

/// Pointwise box of admissible controls; infinite bounds are allowed when
/// the control cost is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleBox {
    pub f_min: f64,
    pub f_max: f64,
}

impl AdmissibleBox {
    pub fn new(f_min: f64, f_max: f64) -> Result<Self> {
        if !(f_min <= f_max) {
            return Err(Error::InvalidParameter(format!(
                "admissible box needs f_min <= f_max, got [{f_min}, {f_max}]"
            )));
        }
        Ok(AdmissibleBox { f_min, f_max })
    }

    pub fn unbounded() -> Self {
        AdmissibleBox { f_min: f64::NEG_INFINITY, f_max: f64::INFINITY }
    }

    pub fn is_bounded(&self) -> bool {
        self.f_min.is_finite() && self.f_max.is_finite()
    }
}

/// The four cost terms before weighting, plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub term_u_5p2: f64,
    pub term_u_103: f64,
    pub term_v: f64,
    pub term_f: f64,
    pub total: f64,
}

fn powsum(grid: &Grid, w: &Field, q: f64) -> f64 {
    w.values.iter().map(|x| x.abs().powf(q)).sum::<f64>() * grid.cell_volume()
}

/// Evaluate the tracking cost with the left-endpoint time rule.
pub fn eval_cost(
    grid: &Grid,
    traj: &StateTrajectory,
    f: &Control,
    cost: &CostParams,
    p: f64,
    tg: &TimeGrid,
) -> Result<CostBreakdown> {
    let steps = tg.steps;
    if traj.nodes() < steps || f.len() != steps {
        return Err(Error::GridMismatch("trajectory/control shorter than the time grid".into()));
    }
    if cost.u_d.fields.len() < steps || cost.v_d.fields.len() < steps {
        return Err(Error::GridMismatch("target trajectories shorter than the time grid".into()));
    }
    let dt = tg.dt();
    let q_f = 2.5 + cost.delta;
    let mut t_u1 = 0.0;
    let mut t_u2 = 0.0;
    let mut t_v = 0.0;
    let mut t_f = 0.0;
    for n in 0..steps {
        let du = traj.u[n].zip(&cost.u_d.fields[n], |a, b| a - b);
        t_u1 += powsum(grid, &du, 2.5 * p) * dt;
        t_u2 += powsum(grid, &du, 10.0 / 3.0) * dt;
        let dv = traj.v[n].zip(&cost.v_d.fields[n], |a, b| a - b);
        t_v += powsum(grid, &dv, 2.0) * dt;
        // ||f(t)||_{L^{5/2+delta}(control region)}^{5/2}
        let slice_norm = powsum(grid, &f.steps[n], q_f).powf(1.0 / q_f);
        t_f += slice_norm.powf(2.5) * dt;
    }
    let term_u_5p2 = t_u1 * 2.0 / (5.0 * p);
    let term_u_103 = t_u2 * 3.0 / 10.0;
    let term_v = t_v / 2.0;
    let term_f = t_f * 2.0 / 5.0;
    let total = cost.gamma_u * (term_u_5p2 + term_u_103)
        + cost.gamma_v * term_v
        + cost.gamma_f * term_f;
    Ok(CostBreakdown { term_u_5p2, term_u_103, term_v, term_f, total })
}

/// Derivative of the state terms of the cost: the adjoint sources
/// `su = gamma_u (sgn(w)|w|^{(5p-2)/2} + sgn(w)|w|^{7/3})` with `w = u - u_d`
/// and `sv = gamma_v (v - v_d)`.
pub fn cost_state_derivative(
    grid: &Grid,
    traj: &StateTrajectory,
    cost: &CostParams,
    p: f64,
    tg: &TimeGrid,
) -> Result<AdjointSources> {
    let steps = tg.steps;
    if cost.u_d.fields.len() < steps || cost.v_d.fields.len() < steps {
        return Err(Error::GridMismatch("target trajectories shorter than the time grid".into()));
    }
    let e1 = (5.0 * p - 2.0) / 2.0;
    let mut su = Vec::with_capacity(steps);
    let mut sv = Vec::with_capacity(steps);
    for n in 0..steps {
        let du = traj.u[n].zip(&cost.u_d.fields[n], |a, b| a - b);
        su.push(du.map(|w| {
            if w == 0.0 {
                0.0
            } else {
                cost.gamma_u * w.signum() * (w.abs().powf(e1) + w.abs().powf(7.0 / 3.0))
            }
        }));
        sv.push(traj.v[n].zip(&cost.v_d.fields[n], |a, b| cost.gamma_v * (a - b)));
    }
    let _ = grid;
    Ok(AdjointSources { su, sv })
}

/// Assemble the reduced gradient
/// `g = gamma_f ||f(t)||^{-delta} sgn(f)|f|^{3/2+delta} + v* eta` on the
/// control region; the second summand is the adjoint's control kernel.
pub fn reduced_gradient(
    grid: &Grid,
    f: &Control,
    adjoint: &AdjointPair,
    cost: &CostParams,
) -> Result<Control> {
    if adjoint.control_kernel.len() != f.len() {
        return Err(Error::GridMismatch("adjoint kernel and control disagree on steps".into()));
    }
    let q_f = 2.5 + cost.delta;
    let mut steps = Vec::with_capacity(f.len());
    for n in 0..f.len() {
        let prefactor = if cost.delta == 0.0 {
            1.0
        } else {
            let slice_norm = powsum(grid, &f.steps[n], q_f).powf(1.0 / q_f);
            if slice_norm == 0.0 {
                0.0
            } else {
                slice_norm.powf(-cost.delta)
            }
        };
        let mut g = f.steps[n].zip(&adjoint.control_kernel[n], |fc, kc| {
            let penalty = if fc == 0.0 {
                0.0
            } else {
                fc.signum() * fc.abs().powf(1.5 + cost.delta)
            };
            cost.gamma_f * prefactor * penalty + kc
        });
        grid.apply_mask(&mut g);
        steps.push(g);
    }
    Ok(Control { steps })
}

/// One full evaluation of the reduced problem: forward solve, cost, exact
/// adjoint, gradient.
pub fn reduced_cost_and_gradient(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    f: &Control,
    params: &ModelParams,
    cost: &CostParams,
    tg: &TimeGrid,
) -> Result<(CostBreakdown, Control, StateTrajectory, AdjointPair)> {
    let traj = solve_state(grid, u0, v0, f, params, tg)?;
    let breakdown = eval_cost(grid, &traj, f, cost, params.p, tg)?;
    let coeffs = linearize_at(grid, &traj, f, params)?;
    let sources = cost_state_derivative(grid, &traj, cost, params.p, tg)?;
    let pair = solve_adjoint(grid, &coeffs, &sources, tg)?;
    let grad = reduced_gradient(grid, f, &pair, cost)?;
    Ok((breakdown, grad, traj, pair))
}

/// Pointwise clamp to the admissible box, zeroed off the control region.
pub fn project(grid: &Grid, f: &Control, bx: &AdmissibleBox) -> Control {
    let steps = f
        .steps
        .iter()
        .map(|fld| {
            let mut g = fld.map(|x| x.clamp(bx.f_min, bx.f_max));
            grid.apply_mask(&mut g);
            g
        })
        .collect();
    Control { steps }
}

/// Fixed-step projected-gradient residual
/// `||f - project(f - s0 grad)||_{L2(Q)} / s0` with `s0 = 1`.
pub fn optimality_residual(
    grid: &Grid,
    f: &Control,
    grad: &Control,
    bx: &AdmissibleBox,
    dt: f64,
) -> f64 {
    let trial = project(grid, &control_axpy(f, -1.0, grad), bx);
    let diff = control_axpy(f, -1.0, &trial);
    diff.l2q_norm(grid, dt)
}

/// Result of sampling the variational inequality pairing.
#[derive(Debug, Clone)]
pub struct ViReport {
    pub min_pairing: f64,
    pub samples: usize,
}

/// Evaluate `<grad, f_sample - f>` for random admissible samples and report
/// the minimum; at a stationary point it should not be meaningfully negative.
/// Unbounded box edges are sampled within a finite window around `f`.
pub fn vi_check(
    grid: &Grid,
    f: &Control,
    grad: &Control,
    bx: &AdmissibleBox,
    samples: usize,
    rng: &mut Rng,
    dt: f64,
) -> ViReport {
    let mut fmax = 0.0f64;
    for s in &f.steps {
        fmax = fmax.max(s.max().abs()).max(s.min().abs());
    }
    let window = 1.0 + 2.0 * fmax;
    let lo = bx.f_min.max(-window);
    let hi = bx.f_max.min(window);
    let mut min_pairing = f64::INFINITY;
    for _ in 0..samples {
        let sample = Control::from_fields(
            grid,
            (0..f.len())
                .map(|_| Field {
                    values: (0..grid.ncells()).map(|_| rng.uniform(lo, hi)).collect(),
                })
                .collect(),
        );
        let diff = control_axpy(&sample, -1.0, f);
        min_pairing = min_pairing.min(grad.inner(grid, &diff, dt));
    }
    ViReport { min_pairing, samples }
}

/// Options of the projected gradient loop.
#[derive(Debug, Clone, Copy)]
pub struct PgdOptions {
    pub max_iters: usize,
    pub tol_j: f64,
    pub tol_opt: f64,
    pub s_init: f64,
}

impl Default for PgdOptions {
    fn default() -> Self {
        PgdOptions { max_iters: 200, tol_j: 1e-12, tol_opt: 1e-4, s_init: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdOutcome {
    ResidualConverged,
    SmallDecrease,
    MaxIters,
}

/// One row of the optimizer history.
#[derive(Debug, Clone, Copy)]
pub struct PgdRecord {
    pub iter: usize,
    pub cost: CostBreakdown,
    pub residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct PgdResult {
    pub control: Control,
    pub trajectory: StateTrajectory,
    pub history: Vec<PgdRecord>,
    pub outcome: PgdOutcome,
}

const ARMIJO_C1: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_MAX_SHRINKS: usize = 60;

/// Projected gradient descent with Armijo backtracking along the projection
/// arc. Every accepted step satisfies
/// `J(trial) <= J(f) - c1 <grad, f - trial>`.
#[allow(clippy::too_many_arguments)]
pub fn pgd(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    f0: &Control,
    params: &ModelParams,
    cost: &CostParams,
    bx: &AdmissibleBox,
    opts: &PgdOptions,
    tg: &TimeGrid,
) -> Result<PgdResult> {
    if cost.gamma_f == 0.0 && !bx.is_bounded() {
        return Err(Error::InvalidParameter(
            "gamma_f = 0 requires a bounded admissible box".into(),
        ));
    }
    let dt = tg.dt();
    let mut f = project(grid, f0, bx);
    let mut history = Vec::new();
    let mut outcome = PgdOutcome::MaxIters;
    let (mut breakdown, mut grad, mut traj, _) =
        reduced_cost_and_gradient(grid, u0, v0, &f, params, cost, tg)?;
    for iter in 0..=opts.max_iters {
        let residual = optimality_residual(grid, &f, &grad, bx, dt);
        if residual <= opts.tol_opt {
            history.push(PgdRecord { iter, cost: breakdown, residual, step: 0.0 });
            outcome = PgdOutcome::ResidualConverged;
            break;
        }
        if iter == opts.max_iters {
            history.push(PgdRecord { iter, cost: breakdown, residual, step: 0.0 });
            outcome = PgdOutcome::MaxIters;
            break;
        }

        // Armijo backtracking along the projection arc
        let mut s = opts.s_init;
        let mut accepted = None;
        for _ in 0..ARMIJO_MAX_SHRINKS {
            let trial = project(grid, &control_axpy(&f, -s, &grad), bx);
            let move_pairing = grad.inner(grid, &control_axpy(&f, -1.0, &trial), dt);
            let trial_traj = solve_state(grid, u0, v0, &trial, params, tg)?;
            let trial_cost = eval_cost(grid, &trial_traj, &trial, cost, params.p, tg)?;
            if trial_cost.total <= breakdown.total - ARMIJO_C1 * move_pairing {
                accepted = Some((trial, trial_traj, trial_cost, s));
                break;
            }
            s *= ARMIJO_SHRINK;
        }
        let Some((new_f, new_traj, new_cost, used_s)) = accepted else {
            history.push(PgdRecord { iter, cost: breakdown, residual, step: 0.0 });
            return Err(Error::LineSearchFailure { iter });
        };
        history.push(PgdRecord { iter, cost: breakdown, residual, step: used_s });
        let decrease = breakdown.total - new_cost.total;
        f = new_f;
        traj = new_traj;
        breakdown = new_cost;
        let coeffs = linearize_at(grid, &traj, &f, params)?;
        let sources = cost_state_derivative(grid, &traj, cost, params.p, tg)?;
        let pair = solve_adjoint(grid, &coeffs, &sources, tg)?;
        grad = reduced_gradient(grid, &f, &pair, cost)?;
        if decrease < opts.tol_j {
            let residual = optimality_residual(grid, &f, &grad, bx, dt);
            history.push(PgdRecord {
                iter: history.len(),
                cost: breakdown,
                residual,
                step: 0.0,
            });
            outcome = PgdOutcome::SmallDecrease;
            break;
        }
    }
    Ok(PgdResult { control: f, trajectory: traj, history, outcome })
}

/// Maximum relative residual of the two discrete state equations along a
/// trajectory; output of `solve_state` stays at solver tolerance.
pub fn residual_check(
    grid: &Grid,
    traj: &StateTrajectory,
    f: &Control,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<f64> {
    if traj.nodes() != tg.steps + 1 || f.len() != tg.steps {
        return Err(Error::GridMismatch("trajectory/control do not match the time grid".into()));
    }
    let dt = tg.dt();
    let mut worst = 0.0f64;
    for n in 0..tg.steps {
        let (u_n, v_n) = (&traj.u[n], &traj.v[n]);
        let (u_np1, v_np1) = (&traj.u[n + 1], &traj.v[n + 1]);
        let stencil = DriftStencil::new(grid, v_n, params.drift_scheme);
        let drift = stencil.apply_to_u(grid, u_n);

        let diag_u: Vec<f64> = u_n
            .values
            .iter()
            .map(|&uc| 1.0 / dt + params.mu * pow_pm1(uc, params.p))
            .collect();
        let au = HelmholtzOp::new(grid, diag_u, 1.0).apply(u_np1);
        let mut res_u = 0.0;
        let mut scale_u = 0.0;
        for c in 0..grid.ncells() {
            let b = u_n.values[c] / dt + drift.values[c] + params.r * u_n.values[c];
            res_u += (au.values[c] - b) * (au.values[c] - b);
            scale_u += b * b;
        }
        worst = worst.max((res_u.sqrt()) / (1.0 + scale_u.sqrt()));

        let diag_v: Vec<f64> =
            f.steps[n].values.iter().map(|&fc| 1.0 / dt + 1.0 - fc).collect();
        let av = HelmholtzOp::new(grid, diag_v, 1.0).apply(v_np1);
        let mut res_v = 0.0;
        let mut scale_v = 0.0;
        for c in 0..grid.ncells() {
            let b = v_n.values[c] / dt + pow_p(u_np1.values[c], params.p);
            res_v += (av.values[c] - b) * (av.values[c] - b);
            scale_v += b * b;
        }
        worst = worst.max((res_v.sqrt()) / (1.0 + scale_v.sqrt()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::h_source;
    use crate::forward::seed_admissible;
    use crate::grid::{build_grid, ControlBox, DriftScheme};

    fn grid1(n: usize) -> Grid {
        build_grid(1, &[1.0], &[n], &ControlBox::All).unwrap()
    }

    fn const_targets(g: &Grid, nodes: usize, cu: f64, cv: f64) -> (Trajectory, Trajectory) {
        (
            Trajectory { fields: vec![g.constant_field(cu); nodes] },
            Trajectory { fields: vec![g.constant_field(cv); nodes] },
        )
    }

    #[test]
    fn cost_zero_at_targets() {
        let g = grid1(8);
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.7, 0.4);
        let cost = CostParams::new(1.0, 1.0, 1.0, 0.0, u_d, v_d).unwrap();
        let traj = StateTrajectory {
            u: vec![g.constant_field(0.7); tg.steps + 1],
            v: vec![g.constant_field(0.4); tg.steps + 1],
            w: None,
        };
        let b = eval_cost(&g, &traj, &Control::zeros(&g, tg.steps), &cost, 2.0, &tg).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn cost_constant_deviation_closed_form() {
        // |u - u_d| = 1 on the unit space-time box, p = 2, gamma_u = 1:
        // total = 1/5 + 3/10 = 0.5
        let g = grid1(8);
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.0, 0.0);
        let cost = CostParams::new(1.0, 0.0, 0.0, 0.0, u_d, v_d).unwrap();
        let traj = StateTrajectory {
            u: vec![g.constant_field(1.0); tg.steps + 1],
            v: vec![g.zero_field(); tg.steps + 1],
            w: None,
        };
        let b = eval_cost(&g, &traj, &Control::zeros(&g, tg.steps), &cost, 2.0, &tg).unwrap();
        assert!((b.total - 0.5).abs() < 1e-13, "{}", b.total);
        assert!((b.term_u_5p2 - 0.2).abs() < 1e-13);
        assert!((b.term_u_103 - 0.3).abs() < 1e-13);
    }

    #[test]
    fn control_term_is_homogeneous_of_degree_5_2() {
        let g = grid1(8);
        let tg = TimeGrid::new(1.0, 5).unwrap();
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.0, 0.0);
        let cost = CostParams::new(1.0, 0.0, 1.0, 0.0, u_d, v_d).unwrap();
        let traj = StateTrajectory {
            u: vec![g.zero_field(); tg.steps + 1],
            v: vec![g.zero_field(); tg.steps + 1],
            w: None,
        };
        let f1 = Control::from_fn(&g, &tg, |t, x| 0.3 + x[0] + t);
        let f2 = control_axpy(&f1, 1.0, &f1);
        let b1 = eval_cost(&g, &traj, &f1, &cost, 2.0, &tg).unwrap();
        let b2 = eval_cost(&g, &traj, &f2, &cost, 2.0, &tg).unwrap();
        let ratio = b2.term_f / b1.term_f;
        assert!((ratio - 2.0f64.powf(2.5)).abs() < 1e-10, "{ratio}");
    }

    #[test]
    fn state_derivative_matches_h_source_route() {
        let g = grid1(16);
        let tg = TimeGrid::new(0.5, 6).unwrap();
        let pi = std::f64::consts::PI;
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.5, 0.2);
        let cost = CostParams::new(1.3, 0.8, 0.0, 0.0, u_d, v_d).unwrap();
        let traj = StateTrajectory {
            u: (0..=tg.steps)
                .map(|n| g.field_from_fn(|x| 0.5 + 0.4 * (pi * x[0]).cos() - 0.1 * n as f64))
                .collect(),
            v: vec![g.constant_field(0.3); tg.steps + 1],
            w: None,
        };
        for p in [1.5, 2.0, 2.5] {
            let sources = cost_state_derivative(&g, &traj, &cost, p, &tg).unwrap();
            for n in 0..tg.steps {
                let du = traj.u[n].zip(&cost.u_d.fields[n], |a, b| a - b);
                let mut via_h = h_source(&du, p).unwrap();
                via_h.scale(1.3);
                for c in 0..g.ncells() {
                    let a = sources.su[n].values[c];
                    let b = via_h.values[c];
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn state_derivative_directional_check() {
        let g = grid1(10);
        let tg = TimeGrid::new(0.4, 8).unwrap();
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.4, 0.3);
        let cost = CostParams::new(1.0, 0.7, 0.0, 0.0, u_d, v_d).unwrap();
        let pi = std::f64::consts::PI;
        let base = StateTrajectory {
            u: (0..=tg.steps)
                .map(|_| g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos()))
                .collect(),
            v: (0..=tg.steps)
                .map(|_| g.field_from_fn(|x| 0.8 + 0.2 * (pi * x[0]).sin()))
                .collect(),
            w: None,
        };
        let p = 2.0;
        let sources = cost_state_derivative(&g, &base, &cost, p, &tg).unwrap();
        let mut rng = Rng::new(3);
        let f0 = Control::zeros(&g, tg.steps);
        let j0 = eval_cost(&g, &base, &f0, &cost, p, &tg).unwrap().total;
        let dt = tg.dt();
        for _ in 0..10 {
            let dir_u: Vec<Field> = (0..=tg.steps)
                .map(|_| Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() })
                .collect();
            let dir_v: Vec<Field> = (0..=tg.steps)
                .map(|_| Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() })
                .collect();
            let mut pairing = 0.0;
            for n in 0..tg.steps {
                pairing += dt * (g.inner(&sources.su[n], &dir_u[n]) + g.inner(&sources.sv[n], &dir_v[n]));
            }
            let mut prev_err = f64::INFINITY;
            for eps in [1e-4, 1e-5] {
                let pert = StateTrajectory {
                    u: base
                        .u
                        .iter()
                        .zip(&dir_u)
                        .map(|(b, d)| {
                            let mut f = b.clone();
                            f.axpy(eps, d);
                            f
                        })
                        .collect(),
                    v: base
                        .v
                        .iter()
                        .zip(&dir_v)
                        .map(|(b, d)| {
                            let mut f = b.clone();
                            f.axpy(eps, d);
                            f
                        })
                        .collect(),
                    w: None,
                };
                let j_eps = eval_cost(&g, &pert, &f0, &cost, p, &tg).unwrap().total;
                let fd = (j_eps - j0) / eps;
                let err = (fd - pairing).abs() / (1.0 + pairing.abs());
                assert!(err < prev_err || err < 1e-7, "eps {eps}: err {err} prev {prev_err}");
                prev_err = err;
            }
        }
    }

    #[test]
    fn project_clamps_and_is_idempotent() {
        let g = grid1(8);
        let bx = AdmissibleBox::new(-1.0, 1.0).unwrap();
        let f = Control::constant(&g, 3, 5.0);
        let p1 = project(&g, &f, &bx);
        assert!(p1.steps.iter().all(|s| s.values.iter().all(|&x| x == 1.0)));
        let p2 = project(&g, &p1, &bx);
        assert_eq!(p1, p2);
        let inside = Control::constant(&g, 3, 0.3);
        assert_eq!(project(&g, &inside, &bx), inside);
        assert!(AdmissibleBox::new(1.0, -1.0).is_err());
    }

    #[test]
    fn optimality_residual_interior_equals_gradient_norm() {
        let g = grid1(8);
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let dt = tg.dt();
        let bx = AdmissibleBox::new(-10.0, 10.0).unwrap();
        let f = Control::zeros(&g, tg.steps);
        let zero = Control::zeros(&g, tg.steps);
        assert_eq!(optimality_residual(&g, &f, &zero, &bx, dt), 0.0);
        let grad = Control::constant(&g, tg.steps, 0.25);
        let res = optimality_residual(&g, &f, &grad, &bx, dt);
        assert!((res - grad.l2q_norm(&g, dt)).abs() < 1e-14);
    }

    #[test]
    fn residual_check_on_solver_output_and_perturbation() {
        let g = grid1(16);
        let tg = TimeGrid::new(0.3, 20).unwrap();
        let params = ModelParams::with_logistic(2.0, 0.2, 0.4, DriftScheme::Upwind).unwrap();
        let pi = std::f64::consts::PI;
        let u0 = g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 0.9 + 0.2 * (pi * x[0]).cos());
        let f = Control::constant(&g, tg.steps, 0.2);
        let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
        let res = residual_check(&g, &traj, &f, &params, &tg).unwrap();
        assert!(res <= 1e-10, "residual {res:e}");
        let mut bad = traj.clone();
        for fld in &mut bad.u {
            fld.values.iter_mut().for_each(|x| *x += 0.1);
        }
        let res_bad = residual_check(&g, &bad, &f, &params, &tg).unwrap();
        assert!(res_bad > 1e-3);
    }

    #[test]
    fn seed_output_passes_residual_check() {
        let g = grid1(12);
        let tg = TimeGrid::new(0.2, 10).unwrap();
        let params = ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap();
        let pi = std::f64::consts::PI;
        let u0 = g.field_from_fn(|x| 0.5 + 0.2 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let (f, traj) = seed_admissible(&g, &u0, &v0, &params, &tg).unwrap();
        let res = residual_check(&g, &traj, &f, &params, &tg).unwrap();
        assert!(res <= 1e-10, "seeded residual {res:e}");
    }

    #[test]
    fn pgd_stationary_start_stops_immediately() {
        // gamma_u tracking the uncontrolled trajectory itself, gamma_v = gamma_f = 0
        let g = grid1(12);
        let tg = TimeGrid::new(0.2, 10).unwrap();
        let params = ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap();
        let pi = std::f64::consts::PI;
        let u0 = g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 0.8 + 0.2 * (pi * x[0]).cos());
        let f0 = Control::zeros(&g, tg.steps);
        let traj = solve_state(&g, &u0, &v0, &f0, &params, &tg).unwrap();
        let cost = CostParams::new(
            1.0,
            0.0,
            0.0,
            0.0,
            Trajectory { fields: traj.u.clone() },
            Trajectory { fields: traj.v.clone() },
        )
        .unwrap();
        let bx = AdmissibleBox::new(-1.0, 1.0).unwrap();
        let out = pgd(&g, &u0, &v0, &f0, &params, &cost, &bx, &PgdOptions::default(), &tg)
            .unwrap();
        assert_eq!(out.outcome, PgdOutcome::ResidualConverged);
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].residual <= 1e-12);
    }

    #[test]
    fn pgd_rejects_unbounded_box_without_control_cost() {
        let g = grid1(8);
        let tg = TimeGrid::new(0.1, 2).unwrap();
        let params = ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap();
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.5, 0.5);
        let cost = CostParams::new(1.0, 0.0, 0.0, 0.0, u_d, v_d).unwrap();
        let err = pgd(
            &g,
            &g.constant_field(0.5),
            &g.constant_field(0.5),
            &Control::zeros(&g, tg.steps),
            &params,
            &cost,
            &AdmissibleBox::unbounded(),
            &PgdOptions::default(),
            &tg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn pgd_descends_strictly_and_more_iterations_never_hurt() {
        // v-tracking toward a shifted chemical; every accepted step must
        // strictly lower J, and doubling the budget cannot raise the final J
        let g = grid1(12);
        let tg = TimeGrid::new(0.2, 8).unwrap();
        let params = ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap();
        let u0 = g.constant_field(1.0);
        let v0 = g.constant_field(0.8);
        let nodes = tg.steps + 1;
        let cost = CostParams::new(
            1e-12,
            1.0,
            0.0,
            0.0,
            Trajectory { fields: vec![u0.clone(); nodes] },
            Trajectory { fields: vec![g.constant_field(0.9); nodes] },
        )
        .unwrap();
        let bx = AdmissibleBox::new(-0.6, 0.6).unwrap();
        let f0 = Control::zeros(&g, tg.steps);
        let run = |iters: usize| {
            let opts = PgdOptions { max_iters: iters, tol_j: 0.0, tol_opt: 1e-12, s_init: 4.0 };
            pgd(&g, &u0, &v0, &f0, &params, &cost, &bx, &opts, &tg).unwrap()
        };
        let short = run(4);
        for w in short.history.windows(2) {
            assert!(
                w[1].cost.total < w[0].cost.total,
                "accepted step failed to decrease J: {} -> {}",
                w[0].cost.total,
                w[1].cost.total
            );
        }
        let long = run(8);
        let j_short = short.history.last().unwrap().cost.total;
        let j_long = long.history.last().unwrap().cost.total;
        assert!(j_long <= j_short + 1e-15, "{j_long} vs {j_short}");
    }

    #[test]
    fn reduced_gradient_penalty_summand_at_unit_control() {
        // f = 1, delta = 0: the penalty summand is gamma_f on the mask,
        // and with gamma_f = 0 only the adjoint kernel remains
        let g = grid1(8);
        let steps = 4;
        let f = Control::constant(&g, steps, 1.0);
        let kernel: Vec<Field> = (0..steps).map(|n| g.constant_field(0.1 * n as f64)).collect();
        let pair = AdjointPair {
            sigma: vec![g.zero_field(); steps + 1],
            eta: vec![g.zero_field(); steps + 1],
            control_kernel: kernel.clone(),
        };
        let (u_d, v_d) = const_targets(&g, steps + 1, 0.0, 0.0);
        let gamma_f = 0.7;
        let cp = CostParams::new(1.0, 0.0, gamma_f, 0.0, u_d.clone(), v_d.clone()).unwrap();
        let grad = reduced_gradient(&g, &f, &pair, &cp).unwrap();
        for n in 0..steps {
            for c in 0..g.ncells() {
                let expect = gamma_f + kernel[n].values[c];
                assert!((grad.steps[n].values[c] - expect).abs() < 1e-15);
            }
        }
        let cp0 = CostParams::new(1.0, 0.0, 0.0, 0.0, u_d, v_d).unwrap();
        let grad0 = reduced_gradient(&g, &f, &pair, &cp0).unwrap();
        for n in 0..steps {
            assert_eq!(grad0.steps[n], kernel[n]);
        }
    }

    #[test]
    fn reduced_gradient_delta_continuity() {
        let g = grid1(10);
        let tg = TimeGrid::new(0.5, 5).unwrap();
        let f = Control::from_fn(&g, &tg, |t, x| 0.5 + 0.3 * x[0] + 0.1 * t);
        let kernel = vec![g.zero_field(); tg.steps];
        let pair = AdjointPair {
            sigma: vec![g.zero_field(); tg.steps + 1],
            eta: vec![g.zero_field(); tg.steps + 1],
            control_kernel: kernel,
        };
        let (u_d, v_d) = const_targets(&g, tg.steps + 1, 0.0, 0.0);
        let base = CostParams::new(1.0, 0.0, 1.0, 0.0, u_d.clone(), v_d.clone()).unwrap();
        let g0 = reduced_gradient(&g, &f, &pair, &base).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-2, 1e-4, 1e-6] {
            let cp = CostParams::new(1.0, 0.0, 1.0, delta, u_d.clone(), v_d.clone()).unwrap();
            let gd = reduced_gradient(&g, &f, &pair, &cp).unwrap();
            let mut dev = 0.0f64;
            for n in 0..tg.steps {
                for c in 0..g.ncells() {
                    dev = dev.max((gd.steps[n].values[c] - g0.steps[n].values[c]).abs());
                }
            }
            assert!(dev < prev, "delta {delta}: dev {dev} prev {prev}");
            prev = dev;
        }
        assert!(prev < 1e-5);
    }
}
