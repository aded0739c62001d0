//! `chemoctl`: batch driver for the chemo-repulsion solver.
//!
//! Subcommands: `simulate`, `optimize`, `verify`, `mms`, `seed`.
//! Flags: `--config PATH`, `--out DIR`, `--seed N`, `--check-gradient`,
//! `--mms {a1|a11|a19|nonlinear}`. Outputs are deterministic: rerunning a
//! command with the same config and seed reproduces every file bitwise.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chemoctl_core::cost::{optimality_residual, pgd, reduced_cost_and_gradient, vi_check, PgdOptions};
use chemoctl_core::diagnostics::diagnostics_report;
use chemoctl_core::forward::{seed_admissible, solve_state, solve_state_regularized, Control};
use chemoctl_core::grid::{Field, Grid};
use chemoctl_core::linearized::control_axpy;
use chemoctl_core::mms::{convergence_study, MmsTarget, StudyAxis};
use chemoctl_core::rng::Rng;
use chemoctl_core::snapshot::write_field;
use chemoctl_core::verify::{battery_json, run_battery};
use chemoctl_core::{Error, Result};

use config::RawConfig;

const USAGE: &str = "\
usage: chemoctl <simulate|optimize|verify|mms|seed> --config PATH
                [--out DIR] [--seed N] [--check-gradient]
                [--mms a1|a11|a19|nonlinear]

simulate  run the forward solver and write snapshots plus diagnostics
optimize  run projected gradient descent on the tracking problem
verify    run the property battery and write pass/fail JSON
mms       emit manufactured-solution convergence tables for one target
seed      construct an admissible control from positive initial data

`chemoctl config-reference` prints every config key with its default.
";

struct Cli {
    command: String,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    check_gradient: bool,
    mms_target: Option<String>,
}

fn parse_args() -> std::result::Result<Cli, String> {
    let mut args = std::env::args().skip(1);
    let command = args.next().ok_or_else(|| USAGE.to_string())?;
    if command == "--help" || command == "-h" || command == "help" {
        return Err(USAGE.to_string());
    }
    let mut cli = Cli {
        command,
        config: None,
        out: PathBuf::from("out"),
        seed: 0,
        check_gradient: false,
        mms_target: None,
    };
    while let Some(flag) = args.next() {
        match flag.as_str() {
            "--config" => {
                cli.config = Some(PathBuf::from(
                    args.next().ok_or("--config needs a path")?,
                ))
            }
            "--out" => cli.out = PathBuf::from(args.next().ok_or("--out needs a directory")?),
            "--seed" => {
                cli.seed = args
                    .next()
                    .ok_or("--seed needs an integer")?
                    .parse()
                    .map_err(|_| "--seed needs an integer".to_string())?
            }
            "--check-gradient" => cli.check_gradient = true,
            "--mms" => cli.mms_target = Some(args.next().ok_or("--mms needs a target")?),
            other => return Err(format!("unknown flag '{other}'\n{USAGE}")),
        }
    }
    Ok(cli)
}

fn load_config(cli: &Cli) -> Result<RawConfig> {
    match &cli.config {
        Some(path) => RawConfig::load(path),
        None => Err(Error::InvalidParameter("--config PATH is required".into())),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(())
}

fn write_tagged(dir: &Path, grid: &Grid, tag: &str, node: usize, field: &Field) -> Result<()> {
    write_field(&dir.join(format!("{tag}_{node:06}.dat")), grid, field)
}

fn snapshot_nodes(total: usize, stride: usize) -> Vec<usize> {
    if stride == 0 {
        return vec![total - 1];
    }
    let mut nodes: Vec<usize> = (0..total).step_by(stride).collect();
    if *nodes.last().unwrap() != total - 1 {
        nodes.push(total - 1);
    }
    nodes
}

fn cmd_simulate(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let sc = cfg.scenario()?;
    ensure_out(&cli.out)?;
    let traj = if sc.params.eps > 0.0 {
        solve_state_regularized(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg)?
    } else {
        solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg)?
    };
    let stride = cfg.snapshot_stride()?;
    for n in snapshot_nodes(traj.u.len(), stride) {
        write_tagged(&cli.out, &sc.grid, "u", n, &traj.u[n])?;
        write_tagged(&cli.out, &sc.grid, "v", n, &traj.v[n])?;
        if let Some(w) = &traj.w {
            write_tagged(&cli.out, &sc.grid, "w", n, &w[n])?;
        }
    }
    let report = diagnostics_report(&sc.grid, &traj, &sc.f, &sc.params, sc.delta, &sc.tg)?;
    fs::write(cli.out.join("report.json"), report.to_json())?;
    fs::write(cli.out.join("series.csv"), report.series_csv(&sc.tg))?;

    // optional eps sweep: deviation of each regularized run from eps = 0
    if let Some(sweep) = cfg.eps_sweep()? {
        let mut zero_params = sc.params;
        zero_params.eps = 0.0;
        let base = solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &zero_params, &sc.tg)?;
        let mut csv = String::from("eps,deviation_linf_l2\n");
        for eps in sweep {
            let mut params = sc.params;
            params.eps = eps;
            let reg =
                solve_state_regularized(&sc.grid, &sc.u0, &sc.v0, &sc.f, &params, &sc.tg)?;
            let mut dev = 0.0f64;
            for n in 0..=sc.tg.steps {
                let diff = reg.v[n].zip(&base.v[n], |a, b| a - b);
                dev = dev.max(sc.grid.lq_norm(&diff, 2.0)?);
            }
            csv += &format!("{eps:.10e},{dev:.10e}\n");
        }
        fs::write(cli.out.join("eps_sweep.csv"), csv)?;
    }
    println!(
        "simulate: {} nodes, mass defect {:.3e}, min_u {:.3e}, min_v {:.3e}",
        traj.u.len(),
        report.mass_residual_max,
        report.min_u,
        report.min_v
    );
    Ok(())
}

fn history_csv(history: &[chemoctl_core::cost::PgdRecord]) -> String {
    let mut s =
        String::from("iter,J,term_u_5p2,term_u_103,term_v,term_f,residual,step\n");
    for rec in history {
        s += &format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            rec.iter,
            rec.cost.total,
            rec.cost.term_u_5p2,
            rec.cost.term_u_103,
            rec.cost.term_v,
            rec.cost.term_f,
            rec.residual,
            rec.step
        );
    }
    s
}

fn cmd_optimize(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let sc = cfg.scenario()?;
    let (cost, bx, f0, opts) = cfg.cost_setup(&sc)?;
    ensure_out(&cli.out)?;
    let dt = sc.tg.dt();

    let (result, pending_error) =
        match pgd(&sc.grid, &sc.u0, &sc.v0, &f0, &sc.params, &cost, &bx, &opts, &sc.tg) {
            Ok(r) => (r, None),
            Err(Error::LineSearchFailure { iter }) => {
                // save the last accepted iterate before surfacing: rerun the
                // deterministic loop capped right where the search stalled
                let capped = PgdOptions { max_iters: iter, ..opts };
                let r = pgd(&sc.grid, &sc.u0, &sc.v0, &f0, &sc.params, &cost, &bx, &capped, &sc.tg)?;
                (r, Some(Error::LineSearchFailure { iter }))
            }
            Err(e) => return Err(e),
        };

    fs::write(cli.out.join("history.csv"), history_csv(&result.history))?;
    let stride = cfg.snapshot_stride()?;
    for n in snapshot_nodes(result.trajectory.u.len(), stride) {
        write_tagged(&cli.out, &sc.grid, "u", n, &result.trajectory.u[n])?;
        write_tagged(&cli.out, &sc.grid, "v", n, &result.trajectory.v[n])?;
    }
    for (n, step) in result.control.steps.iter().enumerate() {
        write_tagged(&cli.out, &sc.grid, "f", n, step)?;
    }

    let (_, grad, _, adjoint) = reduced_cost_and_gradient(
        &sc.grid, &sc.u0, &sc.v0, &result.control, &sc.params, &cost, &sc.tg,
    )?;
    for n in snapshot_nodes(adjoint.sigma.len(), stride) {
        write_tagged(&cli.out, &sc.grid, "sigma", n, &adjoint.sigma[n])?;
        write_tagged(&cli.out, &sc.grid, "eta", n, &adjoint.eta[n])?;
    }
    let residual = optimality_residual(&sc.grid, &result.control, &grad, &bx, dt);
    let grad_norm = grad.l2q_norm(&sc.grid, dt);
    let mut rng = Rng::new(cli.seed);
    let vi = vi_check(&sc.grid, &result.control, &grad, &bx, 100, &mut rng, dt);
    let vi_floor = -1e-6 * (1.0 + grad_norm);
    let final_j = result.history.last().map(|r| r.cost.total).unwrap_or(f64::NAN);
    let norms = adjoint.norms(&sc.grid, &sc.tg)?;
    fs::write(
        cli.out.join("vi.json"),
        format!(
            "{{\n  \"outcome\": \"{:?}\",\n  \"iterations\": {},\n  \"final_cost\": {:.17e},\n  \"optimality_residual\": {:.17e},\n  \"grad_norm\": {:.17e},\n  \"vi_min_pairing\": {:.17e},\n  \"vi_floor\": {:.17e},\n  \"vi_pass\": {},\n  \"adjoint_norms\": {{\n    \"sigma_linf_l2\": {:.17e},\n    \"sigma_l2_h1\": {:.17e},\n    \"eta_l53\": {:.17e},\n    \"eta_l2\": {:.17e}\n  }}\n}}\n",
            result.outcome,
            result.history.len(),
            final_j,
            residual,
            grad_norm,
            vi.min_pairing,
            vi_floor,
            vi.min_pairing >= vi_floor,
            norms.sigma_linf_l2,
            norms.sigma_l2_h1,
            norms.eta_l53,
            norms.eta_l2
        ),
    )?;

    if cli.check_gradient {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let dir = Control::from_fields(
                &sc.grid,
                (0..sc.tg.steps)
                    .map(|_| Field {
                        values: (0..sc.grid.ncells()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    })
                    .collect(),
            );
            let pairing = grad.inner(&sc.grid, &dir, dt);
            let eps = 1e-4;
            let eval = |ctrl: &Control| -> Result<f64> {
                let t = solve_state(&sc.grid, &sc.u0, &sc.v0, ctrl, &sc.params, &sc.tg)?;
                Ok(chemoctl_core::cost::eval_cost(&sc.grid, &t, ctrl, &cost, sc.params.p, &sc.tg)?
                    .total)
            };
            let jp = eval(&control_axpy(&result.control, eps, &dir))?;
            let jm = eval(&control_axpy(&result.control, -eps, &dir))?;
            let fd = (jp - jm) / (2.0 * eps);
            let rel = (fd - pairing).abs() / pairing.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
        fs::write(
            cli.out.join("gradient_check.json"),
            format!("{{\n  \"directions\": 5,\n  \"worst_relative_error\": {worst:.6e}\n}}\n"),
        )?;
    }
    println!(
        "optimize: {:?} after {} iterates, J = {:.6e}, residual = {:.3e}",
        result.outcome,
        result.history.len(),
        final_j,
        residual
    );
    match pending_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_verify(cli: &Cli) -> Result<bool> {
    let tols = match &cli.config {
        Some(_) => load_config(cli)?.tolerances()?,
        None => chemoctl_core::verify::Tolerances::default(),
    };
    ensure_out(&cli.out)?;
    let results = run_battery(&tols, cli.seed)?;
    for r in &results {
        println!(
            "{:28} {}  value {:.3e} vs {} {:.3e}",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.value,
            if r.upper_bound { "<=" } else { ">=" },
            r.threshold
        );
    }
    fs::write(cli.out.join("verify.json"), battery_json(&results))?;
    Ok(results.iter().all(|r| r.pass))
}

fn cmd_mms(cli: &Cli) -> Result<bool> {
    let target = MmsTarget::parse(
        cli.mms_target
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("mms requires --mms TARGET".into()))?,
    )?;
    ensure_out(&cli.out)?;
    let mut all_pass = true;
    for dim in [1usize, 2] {
        for (axis, label, floor) in
            [(StudyAxis::Space, "space", 1.9), (StudyAxis::Time, "time", 0.9)]
        {
            let table = convergence_study(target, dim, axis)?;
            let rate = table.min_rate().unwrap_or(f64::NAN);
            let pass = rate >= floor;
            all_pass &= pass;
            fs::write(
                cli.out.join(format!("convergence_{}_{}d_{}.csv", target.name(), dim, label)),
                table.to_csv(),
            )?;
            println!(
                "mms {} {}d {}: observed order {:.3} (floor {:.1}) {}",
                target.name(),
                dim,
                label,
                rate,
                floor,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(all_pass)
}

fn cmd_seed(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let sc = cfg.scenario()?;
    ensure_out(&cli.out)?;
    let (f, traj) = seed_admissible(&sc.grid, &sc.u0, &sc.v0, &sc.params, &sc.tg)?;
    let residual =
        chemoctl_core::cost::residual_check(&sc.grid, &traj, &f, &sc.params, &sc.tg)?;
    for (n, step) in f.steps.iter().enumerate() {
        write_tagged(&cli.out, &sc.grid, "f", n, step)?;
    }
    let last = traj.u.len() - 1;
    write_tagged(&cli.out, &sc.grid, "u", last, &traj.u[last])?;
    write_tagged(&cli.out, &sc.grid, "v", last, &traj.v[last])?;
    fs::write(
        cli.out.join("seed.json"),
        format!(
            "{{\n  \"state_residual\": {:.17e},\n  \"kappa\": {:.17e},\n  \"steps\": {}\n}}\n",
            residual,
            sc.v0.min(),
            f.len()
        ),
    )?;
    println!("seed: control built, state residual {residual:.3e}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    let outcome: Result<bool> = match cli.command.as_str() {
        "simulate" => cmd_simulate(&cli).map(|_| true),
        "optimize" => cmd_optimize(&cli).map(|_| true),
        "verify" => cmd_verify(&cli),
        "mms" => cmd_mms(&cli),
        "seed" => cmd_seed(&cli).map(|_| true),
        "config-reference" => {
            print!("{}", config::reference_page());
            Ok(true)
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{{\"error\": \"ChecksFailed\", \"message\": \"one or more checks failed\"}}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!(
                "{{\"error\": \"{}\", \"message\": \"{}\"}}",
                e.kind(),
                e.to_string().replace('"', "'")
            );
            ExitCode::FAILURE
        }
    }
}
