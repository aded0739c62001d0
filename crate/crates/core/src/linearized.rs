//! Exact Jacobian of the discrete forward stepper, plus a generic coupled
//! linear parabolic solver used as a manufactured-solution target.
//!
//! The tangent stepper differentiates every term of the discrete scheme,
//! including the lagged logistic coefficient and the frozen upwind donor
//! choice, so `F -> solve_tangent(F)` is the derivative of
//! `f -> solve_state(f)` to solver precision rather than a separate
//! discretization of the continuous linearized system.

use crate::error::{Error, Result};
use crate::forward::{pow_p_prime, pow_pm1, pow_pm1_prime, Control, ModelParams, StateTrajectory};
use crate::grid::{DriftStencil, FaceField, Field, Grid, TimeGrid};
use crate::linsolve::{pcg, HelmholtzOp, CG_TOL};

/// Coefficient bundle of the coupled linear system
/// `dU/dt - Lap U + a U + div(U c) + div(d grad V) = g_u0 - div(g_u1)`,
/// `dV/dt - Lap V + beta1 V + beta2 U = g_v`,
/// with homogeneous total-flux boundaries. All series are step-indexed
/// (coefficients enter at the left endpoint of each step).
#[derive(Debug, Clone)]
pub struct LinCoeffs {
    /// reaction on U, units 1/time
    pub a: Vec<Field>,
    /// drift velocity on U, per interior face
    pub c: Vec<FaceField>,
    /// cross-diffusion coefficient coupling grad V into the U equation
    pub d: Vec<Field>,
    /// reaction on V
    pub beta1: Vec<Field>,
    /// coupling of U into the V equation
    pub beta2: Vec<Field>,
    /// cell source of the U equation
    pub g_u0: Vec<Field>,
    /// face-vector source of the U equation (enters as `-div g_u1`)
    pub g_u1: Vec<FaceField>,
    /// source of the V equation
    pub g_v: Vec<Field>,
    /// base-trajectory data for the exact tangent of the forward stepper;
    /// present when the bundle came from `linearize_at`
    pub lag: Option<LagData>,
}

/// Snapshot of the base trajectory the tangent stepper differentiates.
#[derive(Debug, Clone)]
pub struct LagData {
    pub u: Vec<Field>,
    pub v: Vec<Field>,
    pub f: Control,
    pub params: ModelParams,
}

/// Perturbation trajectory with homogeneous initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPair {
    pub u: Vec<Field>,
    pub v: Vec<Field>,
}

impl LinCoeffs {
    pub fn zeros(grid: &Grid, steps: usize) -> Self {
        LinCoeffs {
            a: vec![grid.zero_field(); steps],
            c: vec![grid.zero_faces(); steps],
            d: vec![grid.zero_field(); steps],
            beta1: vec![grid.zero_field(); steps],
            beta2: vec![grid.zero_field(); steps],
            g_u0: vec![grid.zero_field(); steps],
            g_u1: vec![grid.zero_faces(); steps],
            g_v: vec![grid.zero_field(); steps],
            lag: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }
}

/// Evaluate the linearization coefficients along a discrete trajectory.
///
/// The exported series carry the coefficient values of the continuous
/// linearized system (`a = -r + mu p u^{p-1}`, `c = -grad v`, `d = -u`,
/// `beta1 = -f 1_c`, `beta2 = -p u^{p-1}`); the attached `lag` data is what
/// `tangent_step` differentiates exactly.
pub fn linearize_at(
    grid: &Grid,
    traj: &StateTrajectory,
    f: &Control,
    params: &ModelParams,
) -> Result<LinCoeffs> {
    let steps = f.len();
    if traj.nodes() != steps + 1 {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} nodes, control has {} steps",
            traj.nodes(),
            steps
        )));
    }
    for fld in traj.u.iter().chain(traj.v.iter()) {
        grid.assert_compatible(fld)?;
    }
    let p = params.p;
    let mut coeffs = LinCoeffs::zeros(grid, steps);
    for n in 0..steps {
        coeffs.a[n] = traj.u[n].map(|uc| -params.r + params.mu * p * pow_pm1(uc, p));
        coeffs.c[n] = {
            let mut g = grid.face_gradients(&traj.v[n]);
            for axis in &mut g.axis {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            g
        };
        coeffs.d[n] = traj.u[n].map(|uc| -uc);
        coeffs.beta1[n] = f.steps[n].map(|fc| -fc);
        coeffs.beta2[n] = traj.u[n].map(|uc| -p * pow_pm1(uc, p));
    }
    coeffs.lag = Some(LagData {
        u: traj.u.clone(),
        v: traj.v.clone(),
        f: f.clone(),
        params: *params,
    });
    Ok(coeffs)
}

fn lag_of(coeffs: &LinCoeffs) -> Result<&LagData> {
    coeffs.lag.as_ref().ok_or_else(|| {
        Error::InvalidParameter("tangent stepping needs coefficients from linearize_at".into())
    })
}

/// One tangent step: the exact derivative of `step_state` at the base
/// trajectory, with upwind donors frozen at the base gradient signs.
pub fn tangent_step(
    grid: &Grid,
    u_pert: &Field,
    v_pert: &Field,
    f_dir: &Field,
    coeffs: &LinCoeffs,
    n: usize,
    dt: f64,
) -> Result<(Field, Field)> {
    let lag = lag_of(coeffs)?;
    let params = &lag.params;
    let p = params.p;
    let (u_n, v_n) = (&lag.u[n], &lag.v[n]);
    let (u_np1, v_np1) = (&lag.u[n + 1], &lag.v[n + 1]);
    let f_n = &lag.f.steps[n];

    let stencil = DriftStencil::new(grid, v_n, params.drift_scheme);
    // d/du of the drift: same flux form applied to the perturbation
    let drift_u = stencil.apply_to_u(grid, u_pert);
    // d/dv of the drift: div(u_face * grad V) with base face values of u
    let k = stencil.face_values(grid, u_n);
    let drift_v = grid.weighted_laplacian(&k, v_pert);

    // u equation: [1/dt + mu u_n^{p-1} - L] U1
    //   = U/dt + dDrift + r U - mu (p-1) u_n^{p-2} u_{n+1} U
    let diag_u: Vec<f64> = u_n
        .values
        .iter()
        .map(|&uc| 1.0 / dt + params.mu * pow_pm1(uc, p))
        .collect();
    let b_u = Field {
        values: (0..grid.ncells())
            .map(|c| {
                let lagged = params.mu * pow_pm1_prime(u_n.values[c], p) * u_np1.values[c];
                u_pert.values[c] / dt
                    + drift_u.values[c]
                    + drift_v.values[c]
                    + (params.r - lagged) * u_pert.values[c]
            })
            .collect(),
    };
    let u_next = pcg(&HelmholtzOp::new(grid, diag_u, 1.0), &b_u, CG_TOL)?;

    // v equation: [1/dt + 1 - f_n - L] V1 = V/dt + p u_{n+1}^{p-1} U1 + F v_{n+1}
    let diag_v: Vec<f64> = f_n.values.iter().map(|&fc| 1.0 / dt + 1.0 - fc).collect();
    let b_v = Field {
        values: (0..grid.ncells())
            .map(|c| {
                v_pert.values[c] / dt
                    + pow_p_prime(u_np1.values[c], p) * u_next.values[c]
                    + f_dir.values[c] * v_np1.values[c]
            })
            .collect(),
    };
    let v_next = pcg(&HelmholtzOp::new(grid, diag_v, 1.0), &b_v, CG_TOL)?;
    Ok((u_next, v_next))
}

/// March the tangent system from homogeneous initial data.
pub fn solve_tangent(
    grid: &Grid,
    coeffs: &LinCoeffs,
    f_dir: &Control,
    tg: &TimeGrid,
) -> Result<TangentPair> {
    if f_dir.len() != tg.steps || coeffs.steps() != tg.steps {
        return Err(Error::GridMismatch(format!(
            "direction has {} steps, coefficients {}, time grid {}",
            f_dir.len(),
            coeffs.steps(),
            tg.steps
        )));
    }
    let dt = tg.dt();
    let mut u = vec![grid.zero_field()];
    let mut v = vec![grid.zero_field()];
    for n in 0..tg.steps {
        let (u1, v1) = tangent_step(grid, &u[n], &v[n], &f_dir.steps[n], coeffs, n, dt)?;
        u.push(u1);
        v.push(v1);
    }
    Ok(TangentPair { u, v })
}

fn face_mean(grid: &Grid, w: &Field) -> FaceField {
    let mut k = grid.zero_faces();
    let n = grid.cells_per_axis();
    for a in 0..grid.dim() {
        if n[a] < 2 {
            continue;
        }
        for c in 0..grid.ncells() {
            if axis_index(n, c, a) + 1 < n[a] {
                let hi = c + stride(n, a);
                k.axis[a][c] = 0.5 * (w.values[c] + w.values[hi]);
            }
        }
    }
    k
}

fn stride(n: &[usize; 3], a: usize) -> usize {
    match a {
        0 => n[1] * n[2],
        1 => n[2],
        _ => 1,
    }
}

fn axis_index(n: &[usize; 3], flat: usize, a: usize) -> usize {
    match a {
        0 => flat / (n[1] * n[2]),
        1 => (flat / n[2]) % n[1],
        _ => flat % n[2],
    }
}

/// Semi-implicit solver for the generic coupled linear system: diffusion and
/// the non-coupling reactions implicit, drift / cross terms / sources
/// explicit at the left endpoint, U advanced before V. Scalar problems are
/// run by zeroing `d`, `beta2` and `g_v`.
pub fn solve_coupled_linear(
    grid: &Grid,
    coeffs: &LinCoeffs,
    u0: &Field,
    v0: &Field,
    tg: &TimeGrid,
) -> Result<TangentPair> {
    if coeffs.steps() != tg.steps {
        return Err(Error::GridMismatch(format!(
            "coefficients have {} steps, time grid has {}",
            coeffs.steps(),
            tg.steps
        )));
    }
    grid.assert_compatible(u0)?;
    grid.assert_compatible(v0)?;
    let dt = tg.dt();
    let mut u = vec![u0.clone()];
    let mut v = vec![v0.clone()];
    for n in 0..tg.steps {
        // implicit reaction must keep the matrix positive definite
        let a_min = coeffs.a[n].min();
        if 1.0 / dt + a_min <= 0.0 {
            return Err(Error::StabilityViolation {
                step: n,
                detail: format!("1/dt + min(a) = {:e} <= 0", 1.0 / dt + a_min),
            });
        }
        let b1_min = coeffs.beta1[n].min();
        if 1.0 / dt + b1_min <= 0.0 {
            return Err(Error::StabilityViolation {
                step: n,
                detail: format!("1/dt + min(beta1) = {:e} <= 0", 1.0 / dt + b1_min),
            });
        }

        // U update
        let u_face = face_mean(grid, &u[n]);
        let mut adv_flux = grid.zero_faces();
        for axis in 0..grid.dim() {
            for i in 0..grid.ncells() {
                adv_flux.axis[axis][i] = u_face.axis[axis][i] * coeffs.c[n].axis[axis][i];
            }
        }
        let adv_div = grid.flux_divergence(&adv_flux);
        let d_face = face_mean(grid, &coeffs.d[n]);
        let cross = grid.weighted_laplacian(&d_face, &v[n]);
        let g1_div = grid.flux_divergence(&coeffs.g_u1[n]);
        let diag_u: Vec<f64> = coeffs.a[n].values.iter().map(|&ac| 1.0 / dt + ac).collect();
        let b_u = Field {
            values: (0..grid.ncells())
                .map(|c| {
                    u[n].values[c] / dt - adv_div.values[c] - cross.values[c]
                        + coeffs.g_u0[n].values[c]
                        - g1_div.values[c]
                })
                .collect(),
        };
        let u1 = pcg(&HelmholtzOp::new(grid, diag_u, 1.0), &b_u, CG_TOL)?;

        // V update, coupled through the fresh U
        let diag_v: Vec<f64> =
            coeffs.beta1[n].values.iter().map(|&bc| 1.0 / dt + bc).collect();
        let b_v = Field {
            values: (0..grid.ncells())
                .map(|c| {
                    v[n].values[c] / dt - coeffs.beta2[n].values[c] * u1.values[c]
                        + coeffs.g_v[n].values[c]
                })
                .collect(),
        };
        let v1 = pcg(&HelmholtzOp::new(grid, diag_v, 1.0), &b_v, CG_TOL)?;
        u.push(u1);
        v.push(v1);
    }
    Ok(TangentPair { u, v })
}

/// Control arithmetic used by the finite-difference oracles.
pub fn control_axpy(base: &Control, alpha: f64, dir: &Control) -> Control {
    Control {
        steps: base
            .steps
            .iter()
            .zip(&dir.steps)
            .map(|(b, d)| {
                let mut f = b.clone();
                f.axpy(alpha, d);
                f
            })
            .collect(),
    }
}
