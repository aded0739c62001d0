//! Semi-implicit time stepping for the chemo-repulsion state system.
//!
//! Per step: diffusion implicit, drift explicit at the old level, logistic
//! damping with the lagged coefficient `mu * u_n^{p-1} * u_{n+1}`, chemical
//! production explicit in the freshly advanced `u_{n+1}`, and the bilinear
//! control implicit in `v_{n+1}`. Each equation costs one SPD solve and the
//! implicit matrices stay M-matrices under the documented step bounds, which
//! is what preserves positivity.

use crate::error::{Error, Result};
use crate::grid::{DriftScheme, DriftStencil, Field, Grid, TimeGrid};
use crate::linsolve::{pcg, HelmholtzOp, CG_TOL};

/// Exponents, reaction coefficients and scheme switches of the state system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// production / logistic exponent, > 1
    pub p: f64,
    /// proliferation rate (zero in the non-logistic system)
    pub r: f64,
    /// competition coefficient (zero in the non-logistic system)
    pub mu: f64,
    /// elliptic regularization parameter; 0 disables the auxiliary system
    pub eps: f64,
    pub logistic: bool,
    pub drift_scheme: DriftScheme,
}

impl ModelParams {
    pub fn new(
        p: f64,
        r: f64,
        mu: f64,
        eps: f64,
        logistic: bool,
        drift_scheme: DriftScheme,
    ) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::InvalidParameter(format!("exponent p must exceed 1, got {p}")));
        }
        if r < 0.0 || mu < 0.0 || eps < 0.0 {
            return Err(Error::InvalidParameter(
                "r, mu and eps must be nonnegative".into(),
            ));
        }
        if !logistic && (r != 0.0 || mu != 0.0) {
            return Err(Error::InvalidParameter(
                "non-logistic system requires r = mu = 0".into(),
            ));
        }
        Ok(ModelParams { p, r, mu, eps, logistic, drift_scheme })
    }

    pub fn non_logistic(p: f64, drift_scheme: DriftScheme) -> Result<Self> {
        Self::new(p, 0.0, 0.0, 0.0, false, drift_scheme)
    }

    pub fn with_logistic(p: f64, r: f64, mu: f64, drift_scheme: DriftScheme) -> Result<Self> {
        Self::new(p, r, mu, 0.0, true, drift_scheme)
    }
}

/// `max(u,0)^(p-1)`, the lagged logistic coefficient; 0 at u <= 0.
pub fn pow_pm1(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u.powf(p - 1.0)
    }
}

/// Derivative of `pow_pm1`; 0 at u <= 0 by the same limit convention.
pub fn pow_pm1_prime(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (p - 1.0) * u.powf(p - 2.0)
    }
}

/// Production term `max(u,0)^p`.
pub fn pow_p(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u.powf(p)
    }
}

/// Derivative of `pow_p`: `p * max(u,0)^(p-1)`.
pub fn pow_p_prime(u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        p * u.powf(p - 1.0)
    }
}

/// Control values at the time steps `t_0 .. t_{N-1}`, zero off the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub steps: Vec<Field>,
}

impl Control {
    pub fn zeros(grid: &Grid, steps: usize) -> Self {
        Control { steps: vec![grid.zero_field(); steps] }
    }

    pub fn constant(grid: &Grid, steps: usize, c: f64) -> Self {
        let mut f = grid.constant_field(c);
        grid.apply_mask(&mut f);
        Control { steps: vec![f; steps] }
    }

    /// Build from raw fields, zeroing every off-mask entry.
    pub fn from_fields(grid: &Grid, mut fields: Vec<Field>) -> Self {
        for f in &mut fields {
            grid.apply_mask(f);
        }
        Control { steps: fields }
    }

    pub fn from_fn(grid: &Grid, tg: &TimeGrid, f: impl Fn(f64, &[f64; 3]) -> f64) -> Self {
        let fields = (0..tg.steps)
            .map(|n| {
                let t = tg.time(n);
                let mut fld = grid.field_from_fn(|x| f(t, x));
                grid.apply_mask(&mut fld);
                fld
            })
            .collect();
        Control { steps: fields }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// L2(Q) inner product with the shared left-endpoint time rule.
    pub fn inner(&self, grid: &Grid, other: &Control, dt: f64) -> f64 {
        self.steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| grid.inner(a, b))
            .sum::<f64>()
            * dt
    }

    pub fn l2q_norm(&self, grid: &Grid, dt: f64) -> f64 {
        self.inner(grid, self, dt).sqrt()
    }
}

/// State nodes produced by a forward solve; `w` is present only for the
/// eps-regularized system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub u: Vec<Field>,
    pub v: Vec<Field>,
    pub w: Option<Vec<Field>>,
}

impl StateTrajectory {
    pub fn nodes(&self) -> usize {
        self.u.len()
    }
}

fn check_bilinear_bound(f_n: &Field, dt: f64, step: usize) -> Result<()> {
    let fmax = f_n.max();
    if 1.0 / dt + 1.0 - fmax <= 0.0 {
        return Err(Error::StabilityViolation {
            step,
            detail: format!("1/dt + 1 - max(f) = {:e} <= 0", 1.0 / dt + 1.0 - fmax),
        });
    }
    Ok(())
}

fn check_cfl(grid: &Grid, stencil: &DriftStencil, dt: f64, step: usize) -> Result<()> {
    let outflow = stencil.outflow(grid);
    let worst = outflow.max();
    if dt * worst > 1.0 + 1e-12 {
        return Err(Error::StabilityViolation {
            step,
            detail: format!("donor-cell CFL violated: dt * outflow = {:.3e} > 1", dt * worst),
        });
    }
    Ok(())
}

/// Advance u given the drift stencil of the current v; shared by the plain,
/// regularized and seeding paths.
fn advance_u(
    grid: &Grid,
    u: &Field,
    stencil: &DriftStencil,
    params: &ModelParams,
    dt: f64,
    src: Option<&Field>,
) -> Result<Field> {
    let drift = stencil.apply_to_u(grid, u);
    let diag: Vec<f64> = u
        .values
        .iter()
        .map(|&uc| 1.0 / dt + params.mu * pow_pm1(uc, params.p))
        .collect();
    let mut b = Field {
        values: u
            .values
            .iter()
            .zip(&drift.values)
            .map(|(&uc, &dc)| uc / dt + dc + params.r * uc)
            .collect(),
    };
    if let Some(s) = src {
        b.axpy(1.0, s);
    }
    pcg(&HelmholtzOp::new(grid, diag, 1.0), &b, CG_TOL)
}

fn advance_v(
    grid: &Grid,
    v: &Field,
    u_next: &Field,
    f_n: &Field,
    params: &ModelParams,
    dt: f64,
    src: Option<&Field>,
) -> Result<Field> {
    let diag: Vec<f64> = f_n.values.iter().map(|&fc| 1.0 / dt + 1.0 - fc).collect();
    let mut b = Field {
        values: v
            .values
            .iter()
            .zip(&u_next.values)
            .map(|(&vc, &uc)| vc / dt + pow_p(uc, params.p))
            .collect(),
    };
    if let Some(s) = src {
        b.axpy(1.0, s);
    }
    pcg(&HelmholtzOp::new(grid, diag, 1.0), &b, CG_TOL)
}

/// One step of the coupled state scheme: u first, then v against `u_{n+1}`.
pub fn step_state(
    grid: &Grid,
    u: &Field,
    v: &Field,
    f_n: &Field,
    params: &ModelParams,
    dt: f64,
) -> Result<(Field, Field)> {
    step_state_at(grid, u, v, f_n, params, dt, 0, None, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn step_state_at(
    grid: &Grid,
    u: &Field,
    v: &Field,
    f_n: &Field,
    params: &ModelParams,
    dt: f64,
    step: usize,
    src_u: Option<&Field>,
    src_v: Option<&Field>,
) -> Result<(Field, Field)> {
    check_bilinear_bound(f_n, dt, step)?;
    let stencil = DriftStencil::new(grid, v, params.drift_scheme);
    if params.drift_scheme == DriftScheme::Upwind {
        check_cfl(grid, &stencil, dt, step)?;
    }
    let u_next = advance_u(grid, u, &stencil, params, dt, src_u)?;
    let v_next = advance_v(grid, v, &u_next, f_n, params, dt, src_v)?;
    Ok((u_next, v_next))
}

/// March the state system over the whole time grid.
pub fn solve_state(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    f: &Control,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<StateTrajectory> {
    solve_state_with_sources(grid, u0, v0, f, params, tg, None, None)
}

/// Forward solve with extra per-step sources in both equations (manufactured
/// solution runs). Sources are evaluated at the step's left endpoint.
#[allow(clippy::too_many_arguments)]
pub fn solve_state_with_sources(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    f: &Control,
    params: &ModelParams,
    tg: &TimeGrid,
    src_u: Option<&[Field]>,
    src_v: Option<&[Field]>,
) -> Result<StateTrajectory> {
    grid.assert_compatible(u0)?;
    grid.assert_compatible(v0)?;
    if f.len() != tg.steps {
        return Err(Error::GridMismatch(format!(
            "control has {} steps, time grid has {}",
            f.len(),
            tg.steps
        )));
    }
    if u0.min() < 0.0 || v0.min() < 0.0 {
        return Err(Error::NegativeInitialData { min_u: u0.min(), min_v: v0.min() });
    }
    let dt = tg.dt();
    let mut u_nodes = Vec::with_capacity(tg.steps + 1);
    let mut v_nodes = Vec::with_capacity(tg.steps + 1);
    u_nodes.push(u0.clone());
    v_nodes.push(v0.clone());
    for n in 0..tg.steps {
        let (u1, v1) = step_state_at(
            grid,
            &u_nodes[n],
            &v_nodes[n],
            &f.steps[n],
            params,
            dt,
            n,
            src_u.map(|s| &s[n]),
            src_v.map(|s| &s[n]),
        )?;
        u_nodes.push(u1);
        v_nodes.push(v1);
    }
    Ok(StateTrajectory { u: u_nodes, v: v_nodes, w: None })
}

/// Initial auxiliary variable of the regularized system:
/// `w_0 = v_0 - eps * L_h v_0` (a direct operator application, no solve).
pub fn regularized_initial_w(grid: &Grid, v0: &Field, eps: f64) -> Field {
    let lap = grid.laplacian(v0);
    let mut w = v0.clone();
    w.axpy(-eps, &lap);
    w
}

/// Solve the elliptic relation `(I - eps L_h) v = w`.
pub fn elliptic_v_of_w(grid: &Grid, w: &Field, eps: f64) -> Result<Field> {
    if eps == 0.0 {
        return Ok(w.clone());
    }
    pcg(&HelmholtzOp::uniform(grid, 1.0, eps), w, CG_TOL)
}

/// One step of the eps-regularized scheme.
///
/// For eps > 0: solve `(I - eps L) v = w_n`, advance u with drift against
/// that v, then advance w with the production and the explicit positive-part
/// coupling `f_n * max(v, 0) * 1_c`; the returned `v_{n+1}` is the elliptic
/// image of `w_{n+1}`. At eps = 0 the elliptic relation is the identity and
/// the step delegates to `step_state`, so both paths agree bitwise.
pub fn step_state_regularized(
    grid: &Grid,
    u: &Field,
    w: &Field,
    f_n: &Field,
    params: &ModelParams,
    dt: f64,
) -> Result<(Field, Field, Field)> {
    step_state_regularized_at(grid, u, w, f_n, params, dt, 0)
}

pub(crate) fn step_state_regularized_at(
    grid: &Grid,
    u: &Field,
    w: &Field,
    f_n: &Field,
    params: &ModelParams,
    dt: f64,
    step: usize,
) -> Result<(Field, Field, Field)> {
    if params.eps == 0.0 {
        let (u1, v1) = step_state_at(grid, u, w, f_n, params, dt, step, None, None)?;
        return Ok((u1, v1.clone(), v1));
    }
    check_bilinear_bound(f_n, dt, step)?;
    let v = elliptic_v_of_w(grid, w, params.eps)?;
    let stencil = DriftStencil::new(grid, &v, params.drift_scheme);
    if params.drift_scheme == DriftScheme::Upwind {
        check_cfl(grid, &stencil, dt, step)?;
    }
    let u_next = advance_u(grid, u, &stencil, params, dt, None)?;
    let diag = vec![1.0 / dt + 1.0; grid.ncells()];
    let b = Field {
        values: w
            .values
            .iter()
            .zip(u_next.values.iter().zip(f_n.values.iter().zip(&v.values)))
            .map(|(&wc, (&uc, (&fc, &vc)))| {
                wc / dt + pow_p(uc, params.p) + fc * vc.max(0.0)
            })
            .collect(),
    };
    let w_next = pcg(&HelmholtzOp::new(grid, diag, 1.0), &b, CG_TOL)?;
    let v_next = elliptic_v_of_w(grid, &w_next, params.eps)?;
    Ok((u_next, w_next, v_next))
}

/// March the regularized system; records (u, v, w) at every node.
pub fn solve_state_regularized(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    f: &Control,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<StateTrajectory> {
    if params.eps == 0.0 {
        return solve_state(grid, u0, v0, f, params, tg);
    }
    grid.assert_compatible(u0)?;
    grid.assert_compatible(v0)?;
    if u0.min() < 0.0 || v0.min() < 0.0 {
        return Err(Error::NegativeInitialData { min_u: u0.min(), min_v: v0.min() });
    }
    if f.len() != tg.steps {
        return Err(Error::GridMismatch(format!(
            "control has {} steps, time grid has {}",
            f.len(),
            tg.steps
        )));
    }
    let dt = tg.dt();
    let mut u_nodes = vec![u0.clone()];
    let mut v_nodes = vec![v0.clone()];
    let mut w_nodes = vec![regularized_initial_w(grid, v0, params.eps)];
    for n in 0..tg.steps {
        let (u1, w1, v1) =
            step_state_regularized_at(grid, &u_nodes[n], &w_nodes[n], &f.steps[n], params, dt, n)?;
        u_nodes.push(u1);
        w_nodes.push(w1);
        v_nodes.push(v1);
    }
    Ok(StateTrajectory { u: u_nodes, v: v_nodes, w: Some(w_nodes) })
}

/// Construct an admissible control by the pointwise identity `v = u^p + f v`.
///
/// Requires the control region to cover the whole domain and `v0` bounded
/// below by some kappa > 0. The chemical solves the pure heat equation, the
/// cells solve the usual u-equation against that chemical, and then
/// `f = 1 - u^p / v` makes the discrete v-equation hold exactly.
pub fn seed_admissible(
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<(Control, StateTrajectory)> {
    if !grid.mask_is_full() {
        return Err(Error::InvalidParameter(
            "seed_admissible requires the control region to be the whole domain".into(),
        ));
    }
    grid.assert_compatible(u0)?;
    grid.assert_compatible(v0)?;
    if u0.min() < 0.0 {
        return Err(Error::NegativeInitialData { min_u: u0.min(), min_v: v0.min() });
    }
    let kappa = v0.min();
    if !(kappa > 0.0) {
        return Err(Error::KappaViolation { step: 0, min_v: kappa, kappa });
    }
    let dt = tg.dt();

    // chemical: pure heat equation (no +v, no production, no control)
    let mut v_nodes = vec![v0.clone()];
    for n in 0..tg.steps {
        let b = v_nodes[n].map(|x| x / dt);
        let v1 = pcg(&HelmholtzOp::uniform(grid, 1.0 / dt, 1.0), &b, CG_TOL)?;
        if v1.min() < kappa / 2.0 {
            return Err(Error::KappaViolation { step: n + 1, min_v: v1.min(), kappa });
        }
        v_nodes.push(v1);
    }

    // cells: same u-update as the coupled scheme, driven by the heat chemical
    let mut u_nodes = vec![u0.clone()];
    for n in 0..tg.steps {
        let stencil = DriftStencil::new(grid, &v_nodes[n], params.drift_scheme);
        if params.drift_scheme == DriftScheme::Upwind {
            check_cfl(grid, &stencil, dt, n)?;
        }
        let u1 = advance_u(grid, &u_nodes[n], &stencil, params, dt, None)?;
        u_nodes.push(u1);
    }

    // pointwise control: the discrete v-equation residual vanishes because
    // (1/dt + 1 - f) v_{n+1} = v_{n+1}/dt + u_{n+1}^p when f = 1 - u^p/v
    let f_fields: Vec<Field> = (0..tg.steps)
        .map(|n| {
            Field {
                values: u_nodes[n + 1]
                    .values
                    .iter()
                    .zip(&v_nodes[n + 1].values)
                    .map(|(&uc, &vc)| 1.0 - pow_p(uc, params.p) / vc)
                    .collect(),
            }
        })
        .collect();
    Ok((
        Control { steps: f_fields },
        StateTrajectory { u: u_nodes, v: v_nodes, w: None },
    ))
}
