//! Adjoint stepping: the exact transpose of the discrete tangent map.
//!
//! The backward recursion is derived by transposing each linear sub-step of
//! `tangent_step` rather than by discretizing the continuous adjoint system;
//! that is what buys machine-precision gradients of the discrete cost. The
//! continuous system is recovered asymptotically, which
//! `adjoint_residual_check` reports (never asserts).

use crate::error::{Error, Result};
use crate::forward::{pow_p_prime, pow_pm1, pow_pm1_prime};
use crate::grid::{DriftStencil, Field, Grid, TimeGrid};
use crate::linearized::{LagData, LinCoeffs};
use crate::linsolve::{pcg, HelmholtzOp, CG_TOL};

/// Backward trajectory of the adjoint pair plus the per-step control kernel.
///
/// `sigma`/`eta` hold nodes `0..=N` with the terminal nodes exactly zero.
/// `control_kernel[n]` is the discrete realization of `v* eta` on step `n`:
/// the L2(Q) representer of the state part of the reduced gradient, already
/// restricted to the control region.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    pub sigma: Vec<Field>,
    pub eta: Vec<Field>,
    pub control_kernel: Vec<Field>,
}

/// Right-hand sides of the adjoint system at the cost's quadrature steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSources {
    pub su: Vec<Field>,
    pub sv: Vec<Field>,
}

impl AdjointSources {
    pub fn zeros(grid: &Grid, steps: usize) -> Self {
        AdjointSources {
            su: vec![grid.zero_field(); steps],
            sv: vec![grid.zero_field(); steps],
        }
    }

    /// Tracking sources `su = gamma_u h(u - u_d)`, `sv = gamma_v (v - v_d)`
    /// at the left-endpoint nodes `0..N-1`.
    pub fn tracking(
        grid: &Grid,
        u: &[Field],
        v: &[Field],
        u_d: &[Field],
        v_d: &[Field],
        gamma_u: f64,
        gamma_v: f64,
        p: f64,
    ) -> Result<Self> {
        let steps = u.len() - 1;
        if u_d.len() < steps || v_d.len() < steps {
            return Err(Error::GridMismatch(
                "target trajectories are shorter than the cost quadrature".into(),
            ));
        }
        let mut su = Vec::with_capacity(steps);
        let mut sv = Vec::with_capacity(steps);
        for n in 0..steps {
            let du = u[n].zip(&u_d[n], |a, b| a - b);
            let mut h = h_source(&du, p)?;
            h.scale(gamma_u);
            su.push(h);
            sv.push(v[n].zip(&v_d[n], |a, b| gamma_v * (a - b)));
        }
        let _ = grid;
        Ok(AdjointSources { su, sv })
    }
}

/// Pointwise source nonlinearity `h(w) = |w|^{(5p-4)/2} w + |w|^{4/3} w`.
pub fn h_source(w: &Field, p: f64) -> Result<Field> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("h_source needs p > 1, got {p}")));
    }
    let e1 = (5.0 * p - 2.0) / 2.0;
    Ok(w.map(|x| {
        if x == 0.0 {
            0.0
        } else {
            x.signum() * (x.abs().powf(e1) + x.abs().powf(7.0 / 3.0))
        }
    }))
}

fn lag_of(coeffs: &LinCoeffs) -> Result<&LagData> {
    coeffs.lag.as_ref().ok_or_else(|| {
        Error::InvalidParameter("adjoint stepping needs coefficients from linearize_at".into())
    })
}

/// One backward step: applies the exact transpose of the step-`n` tangent
/// map to `(sigma_{n+1}, eta_{n+1})`, injects `dt`-weighted sources, and
/// returns `(sigma_n, eta_n, pullback_n)` where `pullback_n` is the raw
/// transpose image of the control direction slot (no `1/dt` scaling).
#[allow(clippy::too_many_arguments)]
pub fn adjoint_step(
    grid: &Grid,
    sigma_next: &Field,
    eta_next: &Field,
    su_n: &Field,
    sv_n: &Field,
    coeffs: &LinCoeffs,
    n: usize,
    dt: f64,
) -> Result<(Field, Field, Field)> {
    let lag = lag_of(coeffs)?;
    let params = &lag.params;
    let p = params.p;
    let (u_n, v_n) = (&lag.u[n], &lag.v[n]);
    let (u_np1, v_np1) = (&lag.u[n + 1], &lag.v[n + 1]);
    let f_n = &lag.f.steps[n];

    // eta_star = A_v^{-1} eta_{n+1}
    let diag_v: Vec<f64> = f_n.values.iter().map(|&fc| 1.0 / dt + 1.0 - fc).collect();
    let eta_star = pcg(&HelmholtzOp::new(grid, diag_v, 1.0), eta_next, CG_TOL)?;

    // sigma_star = A_u^{-1} (sigma_{n+1} + p u_{n+1}^{p-1} .* eta_star)
    let diag_u: Vec<f64> = u_n
        .values
        .iter()
        .map(|&uc| 1.0 / dt + params.mu * pow_pm1(uc, p))
        .collect();
    let rhs_u = Field {
        values: sigma_next
            .values
            .iter()
            .zip(u_np1.values.iter().zip(&eta_star.values))
            .map(|(&sc, (&uc, &ec))| sc + pow_p_prime(uc, p) * ec)
            .collect(),
    };
    let sigma_star = pcg(&HelmholtzOp::new(grid, diag_u, 1.0), &rhs_u, CG_TOL)?;

    // sigma_n = M_uu^T sigma_star + dt su_n
    let stencil = DriftStencil::new(grid, v_n, params.drift_scheme);
    let drift_t = stencil.apply_to_u_transpose(grid, &sigma_star);
    let sigma_prev = Field {
        values: (0..grid.ncells())
            .map(|c| {
                let m = 1.0 / dt + params.r
                    - params.mu * pow_pm1_prime(u_n.values[c], p) * u_np1.values[c];
                m * sigma_star.values[c] + drift_t.values[c] + dt * su_n.values[c]
            })
            .collect(),
    };

    // eta_n = Dv(sigma_star) + eta_star/dt + dt sv_n  (Dv is symmetric)
    let k = stencil.face_values(grid, u_n);
    let dv_t = grid.weighted_laplacian(&k, &sigma_star);
    let eta_prev = Field {
        values: (0..grid.ncells())
            .map(|c| dv_t.values[c] + eta_star.values[c] / dt + dt * sv_n.values[c])
            .collect(),
    };

    // control pullback: v_{n+1} .* eta_star on the control region
    let mut pullback = v_np1.zip(&eta_star, |a, b| a * b);
    grid.apply_mask(&mut pullback);
    Ok((sigma_prev, eta_prev, pullback))
}

/// March the adjoint backward from homogeneous terminal data.
pub fn solve_adjoint(
    grid: &Grid,
    coeffs: &LinCoeffs,
    sources: &AdjointSources,
    tg: &TimeGrid,
) -> Result<AdjointPair> {
    let steps = tg.steps;
    if coeffs.steps() != steps || sources.su.len() != steps || sources.sv.len() != steps {
        return Err(Error::GridMismatch(format!(
            "coefficients have {} steps, sources {}, time grid {}",
            coeffs.steps(),
            sources.su.len(),
            steps
        )));
    }
    let dt = tg.dt();
    let mut sigma = vec![grid.zero_field(); steps + 1];
    let mut eta = vec![grid.zero_field(); steps + 1];
    let mut kernel = vec![grid.zero_field(); steps];
    for n in (0..steps).rev() {
        let (s_prev, e_prev, pull) = adjoint_step(
            grid,
            &sigma[n + 1],
            &eta[n + 1],
            &sources.su[n],
            &sources.sv[n],
            coeffs,
            n,
            dt,
        )?;
        sigma[n] = s_prev;
        eta[n] = e_prev;
        // L2(Q) representer of v* eta on step n
        let mut k = pull;
        k.scale(1.0 / dt);
        kernel[n] = k;
    }
    Ok(AdjointPair { sigma, eta, control_kernel: kernel })
}

/// Discrete norms of an adjoint pair, reported (never asserted) as the
/// regularity diagnostic: sigma in the weak energy norm
/// `max_n ||.|| + (sum dt ||.||_H1^2)^{1/2}`, eta in L^{5/3}(Q) and L^2(Q).
#[derive(Debug, Clone, Copy)]
pub struct AdjointNorms {
    pub sigma_linf_l2: f64,
    pub sigma_l2_h1: f64,
    pub eta_l53: f64,
    pub eta_l2: f64,
}

impl AdjointPair {
    pub fn norms(&self, grid: &Grid, tg: &TimeGrid) -> Result<AdjointNorms> {
        let dt = tg.dt();
        let mut sup = 0.0f64;
        let mut h1 = 0.0;
        for (n, s) in self.sigma.iter().enumerate() {
            sup = sup.max(grid.lq_norm(s, 2.0)?);
            if n < tg.steps {
                h1 += grid.h1_norm_sq(s) * dt;
            }
        }
        Ok(AdjointNorms {
            sigma_linf_l2: sup,
            sigma_l2_h1: h1.sqrt(),
            eta_l53: crate::grid::bochner_norm(grid, &self.eta, dt, 5.0 / 3.0, 5.0 / 3.0)?,
            eta_l2: crate::grid::bochner_norm(grid, &self.eta, dt, 2.0, 2.0)?,
        })
    }
}

/// Interior-node residuals of the continuous adjoint equations evaluated on
/// a discrete adjoint pair, under centered differencing. Diagnostic only.
#[derive(Debug, Clone)]
pub struct AdjointResidualReport {
    pub eq_sigma: Vec<f64>,
    pub eq_eta: Vec<f64>,
    pub max_sigma: f64,
    pub max_eta: f64,
}

/// Evaluate how well `(sigma, eta)` satisfies the continuous backward system
/// at interior time nodes. The discrete adjoint is defined by transposition,
/// so this is a consistency indicator, not a correctness gate.
pub fn adjoint_residual_check(
    grid: &Grid,
    pair: &AdjointPair,
    coeffs: &LinCoeffs,
    sources: &AdjointSources,
    tg: &TimeGrid,
) -> Result<AdjointResidualReport> {
    let lag = lag_of(coeffs)?;
    let params = &lag.params;
    let p = params.p;
    let dt = tg.dt();
    let mut eq_sigma = Vec::new();
    let mut eq_eta = Vec::new();
    for n in 1..tg.steps {
        let sig = &pair.sigma[n];
        let eta = &pair.eta[n];
        let u_n = &lag.u[n];
        let v_n = &lag.v[n];
        let f_n = &lag.f.steps[n];

        // -d sigma/dt (centered), -Lap sigma, grad sigma . grad v*, couplings
        let dt_sig = pair.sigma[n + 1].zip(&pair.sigma[n - 1], |a, b| (a - b) / (2.0 * dt));
        let lap_sig = grid.laplacian(sig);
        let gdot = grad_dot(grid, sig, v_n);
        let mut res1 = Vec::with_capacity(grid.ncells());
        for c in 0..grid.ncells() {
            let phi = pow_pm1(u_n.values[c], p);
            res1.push(
                -dt_sig.values[c] - lap_sig.values[c] + gdot.values[c]
                    - p * phi * eta.values[c]
                    - params.r * sig.values[c]
                    + p * params.mu * phi * sig.values[c]
                    - sources.su[n].values[c],
            );
        }
        eq_sigma.push(grid.lq_norm(&Field { values: res1 }, 2.0)?);

        // -d eta/dt - Lap eta - div(u* grad sigma) + eta - f* eta 1_c
        let dt_eta = pair.eta[n + 1].zip(&pair.eta[n - 1], |a, b| (a - b) / (2.0 * dt));
        let lap_eta = grid.laplacian(eta);
        let u_face = DriftStencil::new(grid, v_n, crate::grid::DriftScheme::Central)
            .face_values(grid, u_n);
        let div_usig = grid.weighted_laplacian(&u_face, sig);
        let mut res2 = Vec::with_capacity(grid.ncells());
        for c in 0..grid.ncells() {
            res2.push(
                -dt_eta.values[c] - lap_eta.values[c] - div_usig.values[c] + eta.values[c]
                    - f_n.values[c] * eta.values[c]
                    - sources.sv[n].values[c],
            );
        }
        eq_eta.push(grid.lq_norm(&Field { values: res2 }, 2.0)?);
    }
    let max_sigma = eq_sigma.iter().cloned().fold(0.0, f64::max);
    let max_eta = eq_eta.iter().cloned().fold(0.0, f64::max);
    Ok(AdjointResidualReport { eq_sigma, eq_eta, max_sigma, max_eta })
}

/// Cellwise `grad a . grad b` from face gradients, averaging the two faces
/// per axis (one-sided at boundaries).
fn grad_dot(grid: &Grid, a: &Field, b: &Field) -> Field {
    let ga = grid.face_gradients(a);
    let gb = grid.face_gradients(b);
    let n = grid.cells_per_axis();
    let mut out = grid.zero_field();
    for c in 0..grid.ncells() {
        for ax in 0..grid.dim() {
            if n[ax] < 2 {
                continue;
            }
            let ia = axis_index(n, c, ax);
            let stride = stride_of(n, ax);
            let mut acc = 0.0;
            let mut cnt = 0.0;
            if ia + 1 < n[ax] {
                acc += ga.axis[ax][c] * gb.axis[ax][c];
                cnt += 1.0;
            }
            if ia > 0 {
                let lo = c - stride;
                acc += ga.axis[ax][lo] * gb.axis[ax][lo];
                cnt += 1.0;
            }
            if cnt > 0.0 {
                out.values[c] += acc / cnt;
            }
        }
    }
    out
}

fn stride_of(n: &[usize; 3], a: usize) -> usize {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_state, Control, ModelParams};
    use crate::grid::{build_grid, ControlBox, DriftScheme};
    use crate::linearized::{linearize_at, solve_tangent, tangent_step};
    use crate::rng::Rng;

    fn grid1(n: usize) -> Grid {
        build_grid(1, &[1.0], &[n], &ControlBox::All).unwrap()
    }

    #[test]
    fn h_source_values() {
        let g = grid1(4);
        let zero = h_source(&g.zero_field(), 1.7).unwrap();
        assert!(zero.values.iter().all(|&x| x == 0.0));
        let one = h_source(&g.constant_field(1.0), 2.3).unwrap();
        assert!(one.values.iter().all(|&x| (x - 2.0).abs() < 1e-15));
        let neg = h_source(&g.constant_field(-1.0), 1.5).unwrap();
        assert!(neg.values.iter().all(|&x| (x + 2.0).abs() < 1e-15));
        // p = 2, w = 4: |4|^3 * 4 + |4|^{4/3} * 4 = 256 + 4^{7/3}
        let four = h_source(&g.constant_field(4.0), 2.0).unwrap();
        let expect = 256.0 + 4.0f64.powf(7.0 / 3.0);
        assert!(four.values.iter().all(|&x| (x - expect).abs() < 1e-12 * expect));
        assert!(h_source(&g.zero_field(), 1.0).is_err());
    }

    #[test]
    fn h_source_is_odd() {
        let g = grid1(16);
        let mut rng = Rng::new(9);
        for p in [1.5, 2.0, 2.5] {
            let w = Field { values: (0..g.ncells()).map(|_| rng.uniform(-3.0, 3.0)).collect() };
            let hw = h_source(&w, p).unwrap();
            let hneg = h_source(&w.map(|x| -x), p).unwrap();
            for c in 0..g.ncells() {
                assert!((hw.values[c] + hneg.values[c]).abs() < 1e-12 * (1.0 + hw.values[c].abs()));
            }
        }
    }

    fn scenario(
        g: &Grid,
        tg: &TimeGrid,
        scheme: DriftScheme,
    ) -> (crate::forward::StateTrajectory, Control, ModelParams) {
        let pi = std::f64::consts::PI;
        let params = ModelParams::with_logistic(2.0, 0.3, 0.5, scheme).unwrap();
        let u0 = g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 0.9 + 0.2 * (2.0 * pi * x[0]).cos());
        let f = Control::from_fn(g, tg, |t, x| 0.2 * (pi * x[0]).sin() * (1.0 - t));
        let traj = solve_state(g, &u0, &v0, &f, &params, tg).unwrap();
        (traj, f, params)
    }

    #[test]
    fn zero_sources_give_zero_adjoint() {
        let g = grid1(12);
        let tg = TimeGrid::new(0.2, 8).unwrap();
        let (traj, f, params) = scenario(&g, &tg, DriftScheme::Central);
        let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
        let pair =
            solve_adjoint(&g, &coeffs, &AdjointSources::zeros(&g, tg.steps), &tg).unwrap();
        assert!(pair.sigma.iter().all(|f| f.values.iter().all(|&x| x == 0.0)));
        assert!(pair.eta.iter().all(|f| f.values.iter().all(|&x| x == 0.0)));
        assert!(pair.control_kernel.iter().all(|f| f.values.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_step_transpose_matches_scalar_formula() {
        // constant-in-space scenario: every operator collapses to scalars
        let g = grid1(8);
        let dt = 0.1;
        let (c_u, c_f, p, r, mu) = (1.4, 0.25, 2.0, 0.3, 0.5);
        let params = ModelParams::with_logistic(p, r, mu, DriftScheme::Central).unwrap();
        let tg = TimeGrid::new(dt, 1).unwrap();
        let f = Control::constant(&g, 1, c_f);
        let traj = solve_state(&g, &g.constant_field(c_u), &g.constant_field(0.8), &f, &params, &tg)
            .unwrap();
        let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
        let u1 = traj.u[1].values[0];

        let au = 1.0 / dt + mu * pow_pm1(c_u, p);
        let av = 1.0 / dt + 1.0 - c_f;
        let m = 1.0 / dt + r - mu * pow_pm1_prime(c_u, p) * u1;
        let pp = pow_p_prime(u1, p);
        // hand-transposed 2x2 update
        let t11 = m / au;
        let t21 = pp * t11 / av;
        let t22 = (1.0 / dt) / av;

        let (sig, eta, _) = adjoint_step(
            &g,
            &g.constant_field(1.0),
            &g.constant_field(2.0),
            &g.zero_field(),
            &g.zero_field(),
            &coeffs,
            0,
            dt,
        )
        .unwrap();
        for c in 0..g.ncells() {
            let expect_sig = t11 * 1.0 + t21 * 2.0;
            let expect_eta = t22 * 2.0;
            assert!((sig.values[c] - expect_sig).abs() < 1e-11, "{}", sig.values[c]);
            assert!((eta.values[c] - expect_eta).abs() < 1e-11, "{}", eta.values[c]);
        }
    }

    #[test]
    fn step_transpose_identity_random_pairs() {
        let g = grid1(8);
        let tg = TimeGrid::new(0.2, 4).unwrap();
        let dt = tg.dt();
        for scheme in [DriftScheme::Central, DriftScheme::Upwind] {
            let (traj, f, params) = scenario(&g, &tg, scheme);
            let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
            let mut rng = Rng::new(31);
            for n in 0..tg.steps {
                for _ in 0..25 {
                    let zu = Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() };
                    let zv = Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() };
                    let mut zf = Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() };
                    g.apply_mask(&mut zf);
                    let ws = Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() };
                    let we = Field { values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect() };

                    let (tu, tv) = tangent_step(&g, &zu, &zv, &zf, &coeffs, n, dt).unwrap();
                    let lhs = g.inner(&tu, &ws) + g.inner(&tv, &we);

                    let (asu, asv, apf) = adjoint_step(
                        &g,
                        &ws,
                        &we,
                        &g.zero_field(),
                        &g.zero_field(),
                        &coeffs,
                        n,
                        dt,
                    )
                    .unwrap();
                    let rhs = g.inner(&zu, &asu) + g.inner(&zv, &asv) + g.inner(&zf, &apf);
                    let scale = lhs.abs().max(rhs.abs()).max(1e-3);
                    assert!(
                        (lhs - rhs).abs() / scale <= 1e-10,
                        "scheme {scheme:?} step {n}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn global_transpose_identity() {
        let g = grid1(8);
        let tg = TimeGrid::new(0.2, 4).unwrap();
        let dt = tg.dt();
        let (traj, f, params) = scenario(&g, &tg, DriftScheme::Upwind);
        let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let dir = Control::from_fields(
                &g,
                (0..tg.steps)
                    .map(|_| Field {
                        values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    })
                    .collect(),
            );
            let sources = AdjointSources {
                su: (0..tg.steps)
                    .map(|_| Field {
                        values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    })
                    .collect(),
                sv: (0..tg.steps)
                    .map(|_| Field {
                        values: (0..g.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    })
                    .collect(),
            };
            let tangent = solve_tangent(&g, &coeffs, &dir, &tg).unwrap();
            let pair = solve_adjoint(&g, &coeffs, &sources, &tg).unwrap();
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for n in 0..tg.steps {
                lhs += dt
                    * (g.inner(&tangent.u[n], &sources.su[n])
                        + g.inner(&tangent.v[n], &sources.sv[n]));
                rhs += dt * g.inner(&dir.steps[n], &pair.control_kernel[n]);
            }
            let scale = lhs.abs().max(rhs.abs()).max(1e-6);
            assert!((lhs - rhs).abs() / scale <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn residual_check_zero_on_zero_adjoint() {
        let g = grid1(8);
        let tg = TimeGrid::new(0.2, 6).unwrap();
        let (traj, f, params) = scenario(&g, &tg, DriftScheme::Central);
        let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
        let sources = AdjointSources::zeros(&g, tg.steps);
        let pair = solve_adjoint(&g, &coeffs, &sources, &tg).unwrap();
        let report = adjoint_residual_check(&g, &pair, &coeffs, &sources, &tg).unwrap();
        assert!(report.max_sigma == 0.0 && report.max_eta == 0.0);
    }

    #[test]
    fn constant_in_space_residual_is_first_order_in_dt() {
        // spatial terms vanish; what remains is the backward ODE mismatch
        let run = |steps: usize| -> f64 {
            let g = grid1(8);
            let tg = TimeGrid::new(0.2, steps).unwrap();
            let params = ModelParams::with_logistic(2.0, 0.3, 0.5, DriftScheme::Central).unwrap();
            let f = Control::constant(&g, tg.steps, 0.2);
            let traj = solve_state(&g, &g.constant_field(1.2), &g.constant_field(0.7), &f, &params, &tg)
                .unwrap();
            let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
            let u_d = vec![g.constant_field(0.5); tg.steps + 1];
            let v_d = vec![g.constant_field(0.4); tg.steps + 1];
            let sources =
                AdjointSources::tracking(&g, &traj.u, &traj.v, &u_d, &v_d, 1.0, 1.0, params.p)
                    .unwrap();
            let pair = solve_adjoint(&g, &coeffs, &sources, &tg).unwrap();
            let rep = adjoint_residual_check(&g, &pair, &coeffs, &sources, &tg).unwrap();
            rep.max_sigma.max(rep.max_eta)
        };
        let coarse = run(20);
        let fine = run(40);
        let rate = (coarse / fine).ln() / 2.0f64.ln();
        assert!(rate > 0.8, "expected O(dt) decay, rate {rate:.2} ({coarse:e} -> {fine:e})");
    }

    #[test]
    fn residual_decreases_under_refinement() {
        let rate_at = |n: usize, steps: usize| -> f64 {
            let g = grid1(n);
            let tg = TimeGrid::new(0.2, steps).unwrap();
            let (traj, f, params) = scenario(&g, &tg, DriftScheme::Central);
            let coeffs = linearize_at(&g, &traj, &f, &params).unwrap();
            let u_d = vec![g.constant_field(0.5); tg.steps + 1];
            let v_d = vec![g.constant_field(0.4); tg.steps + 1];
            let sources =
                AdjointSources::tracking(&g, &traj.u, &traj.v, &u_d, &v_d, 1.0, 1.0, params.p)
                    .unwrap();
            let pair = solve_adjoint(&g, &coeffs, &sources, &tg).unwrap();
            let rep = adjoint_residual_check(&g, &pair, &coeffs, &sources, &tg).unwrap();
            rep.max_sigma + rep.max_eta
        };
        let coarse = rate_at(32, 64);
        let fine = rate_at(64, 256);
        let ratio = coarse / fine;
        let rate = ratio.ln() / 4.0f64.ln();
        assert!(ratio >= 1.7, "residual ratio {ratio:.2} below 1.7 ({coarse:e} -> {fine:e})");
        assert!(rate >= 0.8, "residual dt-rate {rate:.2} below 0.8");
    }
}
