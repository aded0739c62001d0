//! Quantitative checks tying finished runs back to the model's conservation
//! and energy structure: the discrete mass identity with its equilibrium
//! bound, the energy-balance residual, the integrability (Serrin) norms and
//! the piecewise exponent table.

use crate::error::{Error, Result};
use crate::forward::{pow_pm1, Control, ModelParams, StateTrajectory};
use crate::grid::{bochner_norm, bochner_norm_steps, Field, Grid, TimeGrid};

/// The p-dependent exponents, exactly as the piecewise formulas print them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentTable {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

/// gamma(p): 5p/(3+p) on (1,2], 25p/(18+5p) on (2,12/5), 2 from 12/5 on.
/// alpha(p) = max(3, 3(p-1)), beta(p) = max(5, 5(p-1)).
/// mu(p): 10p/(7p-6) on (1,2], 5/2 beyond.
pub fn exponent_table(p: f64) -> Result<ExponentTable> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent table needs p > 1, got {p}")));
    }
    let gamma = if p <= 2.0 {
        5.0 * p / (3.0 + p)
    } else if p < 12.0 / 5.0 {
        25.0 * p / (18.0 + 5.0 * p)
    } else {
        2.0
    };
    let mu = if p <= 2.0 { 10.0 * p / (7.0 * p - 6.0) } else { 2.5 };
    Ok(ExponentTable {
        gamma,
        alpha: 3.0f64.max(3.0 * (p - 1.0)),
        beta: 5.0f64.max(5.0 * (p - 1.0)),
        mu,
    })
}

/// Mass series and the per-step defect of the discrete identity
/// `(m_{n+1} - m_n)/dt + mu <u_n^{p-1}, u_{n+1}> = r m_n`.
#[derive(Debug, Clone)]
pub struct MassReport {
    pub series: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_max: f64,
    pub k0: f64,
}

pub fn mass_report(
    grid: &Grid,
    traj: &StateTrajectory,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<MassReport> {
    if traj.nodes() != tg.steps + 1 {
        return Err(Error::GridMismatch("trajectory does not match the time grid".into()));
    }
    let dt = tg.dt();
    let series: Vec<f64> = traj.u.iter().map(|f| grid.integrate(f)).collect();
    let mut residuals = Vec::with_capacity(tg.steps);
    for n in 0..tg.steps {
        let lagged = traj.u[n].zip(&traj.u[n + 1], |a, b| pow_pm1(a, params.p) * b);
        let defect = (series[n + 1] - series[n]) / dt + params.mu * grid.integrate(&lagged)
            - params.r * series[n];
        residuals.push(defect.abs());
    }
    let residual_max = residuals.iter().cloned().fold(0.0, f64::max);
    let k0 = if params.r == 0.0 && params.mu == 0.0 {
        series[0]
    } else if params.mu > 0.0 && params.r > 0.0 {
        series[0].max((params.r / params.mu).powf(1.0 / (params.p - 1.0)) * grid.domain_volume())
    } else if params.mu > 0.0 {
        // pure competition only shrinks the mass
        series[0]
    } else {
        // r > 0 with no competition: no a-priori bound
        f64::INFINITY
    };
    Ok(MassReport { series, residuals, residual_max, k0 })
}

/// `E = 1/(p(p-1)) ||u_+^{p/2}||^2 + 1/(2p) ||v||_{H1}^2`.
pub fn energy(grid: &Grid, u: &Field, v: &Field, p: f64) -> f64 {
    let up = u.map(|x| if x <= 0.0 { 0.0 } else { x.powf(p / 2.0) });
    let cell = grid.inner(&up, &up);
    cell / (p * (p - 1.0)) + grid.h1_norm_sq(v) / (2.0 * p)
}

/// Energy series and the per-step balance residual
/// `R_n = (E_{n+1} - E_n)/dt + D_{n+1} - S_{n+1}`, where D collects the
/// dissipation terms (gradient of u^{p/2}, the discrete-Laplacian H2
/// surrogate of v, the logistic L^{2p-1} term) and S the computable sources.
/// The defect measures how far the discrete trajectory is from the
/// continuous identity and should shrink at first order in dt under joint
/// (dt, h^2) refinement.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub series: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_max: f64,
}

pub fn energy_report(
    grid: &Grid,
    traj: &StateTrajectory,
    f: &Control,
    params: &ModelParams,
    tg: &TimeGrid,
) -> Result<EnergyReport> {
    if traj.nodes() != tg.steps + 1 || f.len() != tg.steps {
        return Err(Error::GridMismatch("trajectory/control do not match the time grid".into()));
    }
    let p = params.p;
    let dt = tg.dt();
    let series: Vec<f64> =
        (0..=tg.steps).map(|n| energy(grid, &traj.u[n], &traj.v[n], p)).collect();
    let mut residuals = Vec::with_capacity(tg.steps);
    for n in 0..tg.steps {
        let u = &traj.u[n + 1];
        let v = &traj.v[n + 1];
        let up = u.map(|x| if x <= 0.0 { 0.0 } else { x.powf(p / 2.0) });
        let lap_v = grid.laplacian(v);
        let mean_v = grid.integrate(v);

        let mut dissipation = 4.0 / (p * p) * grid.grad_norm_sq(&up);
        dissipation += (grid.inner(&lap_v, &lap_v) + grid.grad_norm_sq(v) + mean_v * mean_v) / p;
        if params.mu > 0.0 {
            let l2pm1 = u.map(|x| if x <= 0.0 { 0.0 } else { x.powf(2.0 * p - 1.0) });
            dissipation += params.mu / (p - 1.0) * grid.integrate(&l2pm1);
        }

        let upow = u.map(|x| if x <= 0.0 { 0.0 } else { x.powf(p) });
        let int_upow = grid.integrate(&upow);
        let mut fv = f.steps[n].zip(v, |a, b| a * b);
        grid.apply_mask(&mut fv);
        let int_fv = grid.integrate(&fv);
        let mut source = 0.0;
        if params.r > 0.0 {
            source += params.r / (p - 1.0) * int_upow;
        }
        source += -grid.inner(&fv, &lap_v) / p;
        source += (int_upow * mean_v + int_fv * mean_v) / p;

        residuals.push(((series[n + 1] - series[n]) / dt + dissipation - source).abs());
    }
    let residual_max = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(EnergyReport { series, residuals, residual_max })
}

/// Space-time integrability norms of a run (negative undershoots clamped).
#[derive(Debug, Clone, Copy)]
pub struct SerrinReport {
    /// L^{5p/2}(Q)
    pub u_l5p2: f64,
    /// L^{10/3}(Q)
    pub u_l103: f64,
    /// L^inf(L^p)
    pub u_linf_lp: f64,
    /// L^{5p/3}(Q)
    pub u_l5p3: f64,
    /// L^{2p-1}(Q)
    pub u_l2pm1: f64,
    /// L^{5/2}(L^{5/2+delta}) norm of the control, when one is supplied
    pub f_norm: Option<f64>,
}

pub fn serrin_report(
    grid: &Grid,
    traj: &StateTrajectory,
    f: Option<&Control>,
    p: f64,
    delta: f64,
    tg: &TimeGrid,
) -> Result<SerrinReport> {
    let dt = tg.dt();
    let clamped: Vec<Field> = traj.u.iter().map(|fld| fld.map(|x| x.max(0.0))).collect();
    let u_l5p2 = bochner_norm(grid, &clamped, dt, 2.5 * p, 2.5 * p)?;
    let u_l103 = bochner_norm(grid, &clamped, dt, 10.0 / 3.0, 10.0 / 3.0)?;
    let u_linf_lp = bochner_norm(grid, &clamped, dt, f64::INFINITY, p)?;
    let u_l5p3 = bochner_norm(grid, &clamped, dt, 5.0 * p / 3.0, 5.0 * p / 3.0)?;
    let u_l2pm1 = bochner_norm(grid, &clamped, dt, 2.0 * p - 1.0, 2.0 * p - 1.0)?;
    let f_norm = match f {
        Some(ctrl) => Some(bochner_norm_steps(grid, &ctrl.steps, dt, 2.5, 2.5 + delta)?),
        None => None,
    };
    Ok(SerrinReport { u_l5p2, u_l103, u_linf_lp, u_l5p3, u_l2pm1, f_norm })
}

/// Everything the `simulate` command reports for one run.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub mass_series: Vec<f64>,
    pub mass_residual_max: f64,
    pub k0: f64,
    pub energy_series: Vec<f64>,
    pub energy_residual_series: Vec<f64>,
    pub energy_residual_max: f64,
    /// populated by refinement studies; empty for a single run
    pub energy_residual_rates: Vec<f64>,
    pub serrin: SerrinReport,
    pub logistic_norm: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub exponents: ExponentTable,
}

pub fn diagnostics_report(
    grid: &Grid,
    traj: &StateTrajectory,
    f: &Control,
    params: &ModelParams,
    delta: f64,
    tg: &TimeGrid,
) -> Result<DiagnosticsReport> {
    let mass = mass_report(grid, traj, params, tg)?;
    let en = energy_report(grid, traj, f, params, tg)?;
    let serrin = serrin_report(grid, traj, Some(f), params.p, delta, tg)?;
    let min_u = traj.u.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    let min_v = traj.v.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    Ok(DiagnosticsReport {
        mass_series: mass.series,
        mass_residual_max: mass.residual_max,
        k0: mass.k0,
        energy_series: en.series,
        energy_residual_series: en.residuals,
        energy_residual_max: en.residual_max,
        energy_residual_rates: Vec::new(),
        serrin,
        logistic_norm: serrin.u_l2pm1,
        min_u,
        min_v,
        exponents: exponent_table(params.p)?,
    })
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.17e}")
    } else if x.is_infinite() && x > 0.0 {
        "\"inf\"".into()
    } else if x.is_infinite() {
        "\"-inf\"".into()
    } else {
        "\"nan\"".into()
    }
}

fn fmt_series(xs: &[f64]) -> String {
    let body: Vec<String> = xs.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", body.join(","))
}

impl DiagnosticsReport {
    /// Deterministic JSON rendering (fixed key order, fixed float format).
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        s += &format!("  \"mass_series\": {},\n", fmt_series(&self.mass_series));
        s += &format!("  \"mass_residual_max\": {},\n", fmt_f64(self.mass_residual_max));
        s += &format!("  \"k0\": {},\n", fmt_f64(self.k0));
        s += &format!("  \"energy_series\": {},\n", fmt_series(&self.energy_series));
        s += &format!(
            "  \"energy_residual_series\": {},\n",
            fmt_series(&self.energy_residual_series)
        );
        s += &format!("  \"energy_residual_max\": {},\n", fmt_f64(self.energy_residual_max));
        s += &format!(
            "  \"energy_residual_rates\": {},\n",
            fmt_series(&self.energy_residual_rates)
        );
        s += "  \"serrin_norms\": {\n";
        s += &format!("    \"u_l5p2\": {},\n", fmt_f64(self.serrin.u_l5p2));
        s += &format!("    \"u_l103\": {},\n", fmt_f64(self.serrin.u_l103));
        s += &format!("    \"u_linf_lp\": {},\n", fmt_f64(self.serrin.u_linf_lp));
        s += &format!("    \"u_l5p3\": {},\n", fmt_f64(self.serrin.u_l5p3));
        s += &format!("    \"u_l2pm1\": {},\n", fmt_f64(self.serrin.u_l2pm1));
        s += &format!(
            "    \"f_norm\": {}\n",
            self.serrin.f_norm.map_or("null".into(), fmt_f64)
        );
        s += "  },\n";
        s += &format!("  \"logistic_norm\": {},\n", fmt_f64(self.logistic_norm));
        s += &format!("  \"min_u\": {},\n", fmt_f64(self.min_u));
        s += &format!("  \"min_v\": {},\n", fmt_f64(self.min_v));
        s += "  \"exponents\": {\n";
        s += &format!("    \"gamma\": {},\n", fmt_f64(self.exponents.gamma));
        s += &format!("    \"alpha\": {},\n", fmt_f64(self.exponents.alpha));
        s += &format!("    \"beta\": {},\n", fmt_f64(self.exponents.beta));
        s += &format!("    \"mu\": {}\n", fmt_f64(self.exponents.mu));
        s += "  }\n}\n";
        s
    }

    /// Time series as CSV rows `t, mass, energy, energy_residual`
    /// (the residual of the final node repeats the last step's value).
    pub fn series_csv(&self, tg: &TimeGrid) -> String {
        let mut s = String::from("t,mass,energy,energy_residual\n");
        for n in 0..self.mass_series.len() {
            let r = if n < self.energy_residual_series.len() {
                self.energy_residual_series[n]
            } else {
                *self.energy_residual_series.last().unwrap_or(&0.0)
            };
            s += &format!(
                "{:.17e},{},{},{}\n",
                tg.time(n),
                fmt_f64(self.mass_series[n]),
                fmt_f64(self.energy_series[n]),
                fmt_f64(r)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_state;
    use crate::grid::{build_grid, ControlBox, DriftScheme};

    fn grid1(n: usize) -> Grid {
        build_grid(1, &[1.0], &[n], &ControlBox::All).unwrap()
    }

    #[test]
    fn exponent_table_pinned_values() {
        let t = exponent_table(2.0).unwrap();
        assert_eq!((t.gamma, t.alpha, t.beta, t.mu), (2.0, 3.0, 5.0, 2.5));
        let t = exponent_table(1.5).unwrap();
        assert!((t.gamma - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!((t.alpha, t.beta), (3.0, 5.0));
        assert!((t.mu - 10.0 / 3.0).abs() < 1e-15);
        let t = exponent_table(3.0).unwrap();
        assert_eq!((t.gamma, t.alpha, t.beta, t.mu), (2.0, 6.0, 10.0, 2.5));
        let t = exponent_table(2.2).unwrap();
        assert!((t.gamma - 55.0 / 29.0).abs() < 1e-15);
        assert!((t.alpha - 3.6).abs() < 1e-15);
        assert!((t.beta - 6.0).abs() < 1e-15);
        assert_eq!(t.mu, 2.5);
        assert!(exponent_table(1.0).is_err());
    }

    #[test]
    fn exponent_table_branch_continuity() {
        // mu at p = 2 from both branches, gamma at p = 12/5, alpha/beta kinks
        let left: f64 = 10.0 * 2.0 / (7.0 * 2.0 - 6.0);
        assert!((left - 2.5).abs() < 1e-15);
        let mid: f64 = 25.0 * (12.0 / 5.0) / (18.0 + 5.0 * (12.0 / 5.0));
        assert!((mid - 2.0).abs() < 1e-15);
        assert!((3.0f64.max(3.0 * (2.0 - 1.0)) - 3.0).abs() < 1e-15);
        assert!((5.0f64.max(5.0 * (2.0 - 1.0)) - 5.0).abs() < 1e-15);
        let just_below = exponent_table(12.0 / 5.0 - 1e-12).unwrap();
        let just_above = exponent_table(12.0 / 5.0).unwrap();
        assert!((just_below.gamma - just_above.gamma).abs() < 1e-10);
    }

    #[test]
    fn mass_identity_holds_per_step() {
        let g = grid1(20);
        let tg = TimeGrid::new(0.5, 50).unwrap();
        let pi = std::f64::consts::PI;
        let u0 = g.field_from_fn(|x| 1.0 + 0.4 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 0.8 + 0.3 * (pi * x[0]).cos());
        for params in [
            ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap(),
            ModelParams::with_logistic(1.6, 0.5, 0.7, DriftScheme::Upwind).unwrap(),
        ] {
            let f = Control::constant(&g, tg.steps, 0.2);
            let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
            let report = mass_report(&g, &traj, &params, &tg).unwrap();
            assert!(report.residual_max <= 1e-10, "mass defect {:e}", report.residual_max);
            // L1 bound with the documented slack
            let worst = report.series.iter().cloned().fold(f64::MIN, f64::max);
            assert!(worst <= report.k0 + 1e-8, "mass {worst} above K0 {}", report.k0);
        }
    }

    #[test]
    fn k0_branches() {
        let g = grid1(8);
        let tg = TimeGrid::new(0.1, 4).unwrap();
        let u0 = g.constant_field(0.5);
        let v0 = g.constant_field(0.5);
        let f = Control::zeros(&g, tg.steps);
        // r = mu = 0: K0 = initial mass
        let params = ModelParams::non_logistic(2.0, DriftScheme::Central).unwrap();
        let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
        let rep = mass_report(&g, &traj, &params, &tg).unwrap();
        assert!((rep.k0 - 0.5).abs() < 1e-14);
        // r = mu = 1, p = 2, |domain| = 1: K0 = max(mass0, 1)
        let params = ModelParams::with_logistic(2.0, 1.0, 1.0, DriftScheme::Central).unwrap();
        let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
        let rep = mass_report(&g, &traj, &params, &tg).unwrap();
        assert!((rep.k0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_zero_state() {
        let g = grid1(10);
        let tg = TimeGrid::new(0.2, 5).unwrap();
        let params = ModelParams::non_logistic(1.5, DriftScheme::Central).unwrap();
        let f = Control::zeros(&g, tg.steps);
        let traj = solve_state(&g, &g.zero_field(), &g.zero_field(), &f, &params, &tg).unwrap();
        let rep = energy_report(&g, &traj, &f, &params, &tg).unwrap();
        assert!(rep.series.iter().all(|&e| e == 0.0));
        assert!(rep.residual_max == 0.0);
    }

    #[test]
    fn energy_constant_state_closed_form() {
        // u = c, v constant per node: E = c^p |O| / (p(p-1)) + (v |O|)^2 / (2p)
        let g = grid1(12);
        let p = 2.0;
        let c = 1.3;
        let vbar = 0.7;
        let e = energy(&g, &g.constant_field(c), &g.constant_field(vbar), p);
        let expect = c.powf(p) / (p * (p - 1.0)) + vbar * vbar / (2.0 * p);
        assert!((e - expect).abs() < 1e-12, "{e} vs {expect}");
    }

    #[test]
    fn energy_residual_first_order_in_dt() {
        // joint (dt, h^2) refinement must shrink the balance defect at rate
        // close to one in dt
        let run = |n: usize, steps: usize| -> f64 {
            let g = grid1(n);
            let tg = TimeGrid::new(0.2, steps).unwrap();
            let pi = std::f64::consts::PI;
            let u0 = g.field_from_fn(|x| 1.0 + 0.5 * (pi * x[0]).cos());
            let v0 = g.field_from_fn(|x| 1.0 + 0.3 * (pi * x[0]).cos());
            let params = ModelParams::non_logistic(1.5, DriftScheme::Central).unwrap();
            let f = Control::zeros(&g, tg.steps);
            let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
            energy_report(&g, &traj, &f, &params, &tg).unwrap().residual_max
        };
        let coarse = run(16, 25);
        let fine = run(32, 100);
        let rate = (coarse / fine).ln() / 4.0f64.ln();
        assert!(rate >= 0.9, "energy residual rate {rate:.2} ({coarse:e} -> {fine:e})");
    }

    #[test]
    fn serrin_constant_trajectory() {
        let g = grid1(8);
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let traj = StateTrajectory {
            u: vec![g.constant_field(2.0); tg.steps + 1],
            v: vec![g.zero_field(); tg.steps + 1],
            w: None,
        };
        let rep = serrin_report(&g, &traj, None, 2.0, 0.0, &tg).unwrap();
        // constants on the unit space-time box report their own value
        assert!((rep.u_l5p2 - 2.0).abs() < 1e-12);
        assert!((rep.u_l103 - 2.0).abs() < 1e-12);
        assert!((rep.u_linf_lp - 2.0).abs() < 1e-12);
        let ones = StateTrajectory {
            u: vec![g.constant_field(1.0); tg.steps + 1],
            v: vec![g.zero_field(); tg.steps + 1],
            w: None,
        };
        let rep = serrin_report(&g, &ones, None, 1.7, 0.0, &tg).unwrap();
        for val in [rep.u_l5p2, rep.u_l103, rep.u_linf_lp, rep.u_l5p3, rep.u_l2pm1] {
            assert!((val - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn report_json_is_deterministic() {
        let g = grid1(10);
        let tg = TimeGrid::new(0.2, 8).unwrap();
        let pi = std::f64::consts::PI;
        let u0 = g.field_from_fn(|x| 1.0 + 0.2 * (pi * x[0]).cos());
        let v0 = g.field_from_fn(|x| 0.9 + 0.1 * (pi * x[0]).cos());
        let params = ModelParams::non_logistic(2.0, DriftScheme::Upwind).unwrap();
        let f = Control::constant(&g, tg.steps, 0.1);
        let traj = solve_state(&g, &u0, &v0, &f, &params, &tg).unwrap();
        let rep1 = diagnostics_report(&g, &traj, &f, &params, 0.0, &tg).unwrap();
        let rep2 = diagnostics_report(&g, &traj, &f, &params, 0.0, &tg).unwrap();
        assert_eq!(rep1.to_json(), rep2.to_json());
        assert!(rep1.to_json().contains("\"mass_residual_max\""));
        assert!(rep1.min_u >= 0.0 && rep1.min_v >= 0.0);
    }
}
