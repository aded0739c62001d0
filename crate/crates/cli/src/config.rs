//! Flat `key = value` configuration with `[block]` headers.
//!
//! Blocks: `[scenario]` (model, grid and initial data), `[cost]` (optimizer
//! weights, box and targets), `[run]` (output knobs), `[verify]` (battery
//! tolerance overrides). `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chemoctl_core::cost::{AdmissibleBox, CostParams, PgdOptions};
use chemoctl_core::forward::{solve_state, Control, ModelParams};
use chemoctl_core::grid::{build_grid, ControlBox, DriftScheme, Field, Grid, TimeGrid, Trajectory};
use chemoctl_core::snapshot::read_field;
use chemoctl_core::verify::Tolerances;
use chemoctl_core::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), String>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::InvalidParameter(format!("line {}: malformed section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key = value", lineno + 1))
            })?;
            entries.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(RawConfig { entries, base_dir: base_dir.to_path_buf() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidParameter(format!("[{section}] {key} = '{v}' is not a number"))
            }),
        }
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidParameter(format!("[{section}] {key} = '{v}' is not an integer"))
            }),
        }
    }

    fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::InvalidParameter(format!(
                "[{section}] {key} = '{v}' is not true/false"
            ))),
        }
    }

    fn f64_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::InvalidParameter(format!("[{section}] {key}: bad number '{t}'"))
                    })
                })
                .collect(),
        }
    }

    fn usize_list(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::InvalidParameter(format!("[{section}] {key}: bad integer '{t}'"))
                    })
                })
                .collect(),
        }
    }
}

/// Everything the forward commands need, assembled from `[scenario]`.
pub struct Scenario {
    pub grid: Grid,
    pub tg: TimeGrid,
    pub params: ModelParams,
    pub u0: Field,
    pub v0: Field,
    pub f: Control,
    pub delta: f64,
}

/// A parsed initial-condition or control spec.
fn parse_field_spec(
    spec: &str,
    grid: &Grid,
    base_dir: &Path,
    what: &str,
) -> Result<Field> {
    let tokens: Vec<&str> = spec.split_whitespace().collect();
    match tokens.first().copied() {
        Some("constant") => {
            let c: f64 = tokens
                .get(1)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("{what}: constant needs a value")))?;
            Ok(grid.constant_field(c))
        }
        Some("gaussian") => {
            let dim = grid.dim();
            if tokens.len() != 1 + dim + 2 {
                return Err(Error::InvalidParameter(format!(
                    "{what}: gaussian needs {dim} center coordinates, width, amp"
                )));
            }
            let mut nums = Vec::with_capacity(dim + 2);
            for t in &tokens[1..] {
                nums.push(t.parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!("{what}: bad gaussian number '{t}'"))
                })?);
            }
            let center = nums[..dim].to_vec();
            let width = nums[dim];
            let amp = nums[dim + 1];
            if !(width > 0.0) {
                return Err(Error::InvalidParameter(format!("{what}: gaussian width must be positive")));
            }
            Ok(grid.field_from_fn(|x| {
                let r2: f64 = (0..dim).map(|a| (x[a] - center[a]) * (x[a] - center[a])).sum();
                amp * (-r2 / (2.0 * width * width)).exp()
            }))
        }
        Some("file") => {
            let rel = tokens
                .get(1)
                .ok_or_else(|| Error::InvalidParameter(format!("{what}: file needs a path")))?;
            let path = base_dir.join(rel);
            read_field(&path)?.into_field_on(grid)
        }
        _ => Err(Error::InvalidParameter(format!(
            "{what}: expected 'constant C' | 'gaussian c.. width amp' | 'file PATH', got '{spec}'"
        ))),
    }
}

impl RawConfig {
    pub fn scenario(&self) -> Result<Scenario> {
        let dim = self.usize_or("scenario", "dim", 1)?;
        let lengths = self.f64_list("scenario", "lengths", &vec![1.0; dim])?;
        let cells = self.usize_list("scenario", "cells", &vec![32; dim])?;
        let control_box = match self.get("scenario", "control_box").unwrap_or("all") {
            "all" => ControlBox::All,
            spec => {
                let tokens: Vec<&str> = spec.split_whitespace().collect();
                if tokens.first() != Some(&"box") || tokens.len() != 1 + 2 * dim {
                    return Err(Error::InvalidParameter(format!(
                        "[scenario] control_box: expected 'all' or 'box lo.. hi..' with {dim} bounds each"
                    )));
                }
                let nums: Vec<f64> = tokens[1..]
                    .iter()
                    .map(|t| {
                        t.parse().map_err(|_| {
                            Error::InvalidParameter(format!("control_box: bad number '{t}'"))
                        })
                    })
                    .collect::<Result<_>>()?;
                ControlBox::Box { lo: nums[..dim].to_vec(), hi: nums[dim..].to_vec() }
            }
        };
        let grid = build_grid(dim, &lengths, &cells, &control_box)?;

        let horizon = self.f64_or("scenario", "T", 0.5)?;
        let steps = self.usize_or("scenario", "N", 50)?;
        let tg = TimeGrid::new(horizon, steps)?;

        let drift = match self.get("scenario", "drift_scheme").unwrap_or("central") {
            "central" => DriftScheme::Central,
            "upwind" => DriftScheme::Upwind,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "[scenario] drift_scheme must be central or upwind, got '{other}'"
                )))
            }
        };
        let logistic = self.bool_or("scenario", "logistic", false)?;
        let params = ModelParams::new(
            self.f64_or("scenario", "p", 2.0)?,
            self.f64_or("scenario", "r", 0.0)?,
            self.f64_or("scenario", "mu", 0.0)?,
            self.f64_or("scenario", "eps", 0.0)?,
            logistic,
            drift,
        )?;

        let u0 = parse_field_spec(
            self.get("scenario", "u0_spec").unwrap_or("constant 0.0"),
            &grid,
            &self.base_dir,
            "u0_spec",
        )?;
        let v0 = parse_field_spec(
            self.get("scenario", "v0_spec").unwrap_or("constant 0.0"),
            &grid,
            &self.base_dir,
            "v0_spec",
        )?;
        let f = match self.get("scenario", "f_spec") {
            None => Control::zeros(&grid, tg.steps),
            Some(spec) => {
                let fld = parse_field_spec(spec, &grid, &self.base_dir, "f_spec")?;
                Control::from_fields(&grid, vec![fld; tg.steps])
            }
        };
        let delta = self.f64_or("cost", "delta", 0.0)?;
        Ok(Scenario { grid, tg, params, u0, v0, f, delta })
    }

    /// Optimizer setup from `[cost]`; needs the scenario for grids and the
    /// uncontrolled-run target option.
    pub fn cost_setup(&self, sc: &Scenario) -> Result<(CostParams, AdmissibleBox, Control, PgdOptions)> {
        let nodes = sc.tg.steps + 1;
        let (u_d, v_d) = match self.get("cost", "target_spec").unwrap_or("uncontrolled") {
            "uncontrolled" => {
                let zero = Control::zeros(&sc.grid, sc.tg.steps);
                let traj = solve_state(&sc.grid, &sc.u0, &sc.v0, &zero, &sc.params, &sc.tg)?;
                (Trajectory { fields: traj.u }, Trajectory { fields: traj.v })
            }
            spec => {
                let tokens: Vec<&str> = spec.split_whitespace().collect();
                match tokens.first().copied() {
                    Some("constant") if tokens.len() == 3 => {
                        let cu: f64 = tokens[1].parse().map_err(|_| {
                            Error::InvalidParameter("target_spec constant: bad number".into())
                        })?;
                        let cv: f64 = tokens[2].parse().map_err(|_| {
                            Error::InvalidParameter("target_spec constant: bad number".into())
                        })?;
                        (
                            Trajectory { fields: vec![sc.grid.constant_field(cu); nodes] },
                            Trajectory { fields: vec![sc.grid.constant_field(cv); nodes] },
                        )
                    }
                    Some("file") if tokens.len() == 3 => {
                        let fu = read_field(&self.base_dir.join(tokens[1]))?
                            .into_field_on(&sc.grid)?;
                        let fv = read_field(&self.base_dir.join(tokens[2]))?
                            .into_field_on(&sc.grid)?;
                        (
                            Trajectory { fields: vec![fu; nodes] },
                            Trajectory { fields: vec![fv; nodes] },
                        )
                    }
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "target_spec: expected 'uncontrolled' | 'constant CU CV' | 'file PU PV', got '{spec}'"
                        )))
                    }
                }
            }
        };
        let cost = CostParams::new(
            self.f64_or("cost", "gamma_u", 1.0)?,
            self.f64_or("cost", "gamma_v", 0.0)?,
            self.f64_or("cost", "gamma_f", 0.0)?,
            self.f64_or("cost", "delta", 0.0)?,
            u_d,
            v_d,
        )?;
        let bx = AdmissibleBox::new(
            self.f64_or("cost", "f_min", f64::NEG_INFINITY)?,
            self.f64_or("cost", "f_max", f64::INFINITY)?,
        )?;
        let f0 = match self.get("cost", "f0_spec") {
            None => Control::zeros(&sc.grid, sc.tg.steps),
            Some(spec) => {
                let fld = parse_field_spec(spec, &sc.grid, &self.base_dir, "f0_spec")?;
                Control::from_fields(&sc.grid, vec![fld; sc.tg.steps])
            }
        };
        let opts = PgdOptions {
            max_iters: self.usize_or("cost", "max_iters", 200)?,
            tol_j: self.f64_or("cost", "tol_J", 1e-12)?,
            tol_opt: self.f64_or("cost", "tol_opt", 1e-4)?,
            s_init: self.f64_or("cost", "s_init", 1.0)?,
        };
        Ok((cost, bx, f0, opts))
    }

    /// Battery tolerances with `[verify]` overrides.
    pub fn tolerances(&self) -> Result<Tolerances> {
        let d = Tolerances::default();
        Ok(Tolerances {
            transpose: self.f64_or("verify", "tol_transpose", d.transpose)?,
            gradient: self.f64_or("verify", "tol_gradient", d.gradient)?,
            duality: self.f64_or("verify", "tol_duality", d.duality)?,
            mass_step: self.f64_or("verify", "tol_mass", d.mass_step)?,
            mass_drift: self.f64_or("verify", "tol_mass_drift", d.mass_drift)?,
            k0_slack: self.f64_or("verify", "tol_k0_slack", d.k0_slack)?,
            energy_rate: self.f64_or("verify", "min_energy_rate", d.energy_rate)?,
            opt_residual: self.f64_or("verify", "tol_opt_residual", d.opt_residual)?,
            vi_slack: self.f64_or("verify", "tol_vi_slack", d.vi_slack)?,
            seed_residual: self.f64_or("verify", "tol_seed_residual", d.seed_residual)?,
        })
    }

    pub fn snapshot_stride(&self) -> Result<usize> {
        let s = self.usize_or("run", "snapshot_stride", 0)?;
        Ok(s)
    }

    /// Optional `[scenario] eps_sweep = e1 e2 ..` list.
    pub fn eps_sweep(&self) -> Result<Option<Vec<f64>>> {
        match self.get("scenario", "eps_sweep") {
            None => Ok(None),
            Some(_) => Ok(Some(self.f64_list("scenario", "eps_sweep", &[])?)),
        }
    }
}

/// One reference page listing every config key with its default.
pub fn reference_page() -> String {
    let rows: &[(&str, &str, &str, &str)] = &[
        ("scenario", "p", "2.0", "production/logistic exponent, > 1"),
        ("scenario", "r", "0.0", "proliferation rate (logistic only)"),
        ("scenario", "mu", "0.0", "competition coefficient (logistic only)"),
        ("scenario", "eps", "0.0", "elliptic regularization parameter"),
        ("scenario", "logistic", "false", "enable the logistic reaction"),
        ("scenario", "drift_scheme", "central", "central | upwind"),
        ("scenario", "T", "0.5", "time horizon"),
        ("scenario", "N", "50", "number of time steps"),
        ("scenario", "dim", "1", "spatial dimension, 1..3"),
        ("scenario", "lengths", "1.0 per axis", "domain edge lengths"),
        ("scenario", "cells", "32 per axis", "cells per axis, >= 3"),
        ("scenario", "control_box", "all", "all | box lo.. hi.."),
        ("scenario", "u0_spec", "constant 0.0", "constant C | gaussian c.. width amp | file PATH"),
        ("scenario", "v0_spec", "constant 0.0", "same forms as u0_spec"),
        ("scenario", "f_spec", "(zero control)", "fixed control for simulate, same forms"),
        ("scenario", "eps_sweep", "(unset)", "extra eps values -> eps_sweep.csv"),
        ("cost", "gamma_u", "1.0", "cell-tracking weight, > 0"),
        ("cost", "gamma_v", "0.0", "chemical-tracking weight"),
        ("cost", "gamma_f", "0.0", "control-cost weight"),
        ("cost", "delta", "0.0", "exponent shift of the control norm"),
        ("cost", "f_min", "-inf", "lower control bound"),
        ("cost", "f_max", "+inf", "upper control bound"),
        ("cost", "f0_spec", "(zero control)", "optimizer start, u0_spec forms"),
        ("cost", "max_iters", "200", "projected-gradient iteration cap"),
        ("cost", "tol_J", "1e-12", "stop when the cost decrease drops below"),
        ("cost", "tol_opt", "1e-4", "stop at this optimality residual"),
        ("cost", "s_init", "1.0", "initial Armijo step"),
        ("cost", "target_spec", "uncontrolled", "uncontrolled | constant CU CV | file PU PV"),
        ("run", "snapshot_stride", "0", "node stride for snapshots (0 = final only)"),
        ("verify", "tol_transpose", "1e-10", "transpose exactness bound"),
        ("verify", "tol_gradient", "1e-5", "gradient-vs-FD bound"),
        ("verify", "tol_duality", "1e-9", "duality identity bound"),
        ("verify", "tol_mass", "1e-10", "per-step mass defect bound"),
        ("verify", "tol_mass_drift", "1e-10", "conservative-run drift bound"),
        ("verify", "tol_k0_slack", "1e-8", "allowed excess over the K0 bound"),
        ("verify", "min_energy_rate", "0.9", "energy-balance rate floor"),
        ("verify", "tol_opt_residual", "1e-4", "optimizer residual bound"),
        ("verify", "tol_vi_slack", "1e-6", "variational-inequality slack"),
        ("verify", "tol_seed_residual", "1e-10", "seeded-control residual bound"),
    ];
    let mut s = String::from("configuration reference (key = value under [block] headers)\n\n");
    let mut block = "";
    for (sec, key, default, doc) in rows {
        if *sec != block {
            s += &format!("[{sec}]\n");
            block = sec;
        }
        s += &format!("  {key:16} default {default:16} {doc}\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_defaults() {
        let text = "\
[scenario]
p = 1.5            # exponent
dim = 1
cells = 16
N = 10
T = 0.25
u0_spec = constant 1.0
v0_spec = gaussian 0.5 0.2 1.0
";
        let cfg = RawConfig::parse(text, Path::new(".")).unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.grid.ncells(), 16);
        assert_eq!(sc.tg.steps, 10);
        assert!((sc.params.p - 1.5).abs() < 1e-15);
        assert!(sc.u0.values.iter().all(|&x| x == 1.0));
        let mid = sc.v0.values[8];
        assert!(mid > sc.v0.values[0]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(RawConfig::parse("[scenario\np = 2", Path::new(".")).is_err());
        assert!(RawConfig::parse("p 2.0", Path::new(".")).is_err());
        let cfg = RawConfig::parse("[scenario]\np = banana", Path::new(".")).unwrap();
        assert!(cfg.scenario().is_err());
    }

    #[test]
    fn control_box_parsing() {
        let cfg = RawConfig::parse(
            "[scenario]\ndim = 1\ncells = 8\ncontrol_box = box 0.0 0.5\n",
            Path::new("."),
        )
        .unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.grid.control_mask().iter().filter(|&&m| m).count(), 4);
    }
}
