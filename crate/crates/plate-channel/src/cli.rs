//! Command-line driver: run, convergence ladders, scheme comparison, and
//! the energy-ledger audit.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure
//! (contact, Newton breakdown, singular matrix, I/O), 4 a verification
//! subcommand ran fine but the quantity it checks is out of tolerance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::assembly::UStar;
use crate::config::SimConfig;
use crate::diagnostics::{self, energy, energy_identity, error_norms, fit_rate, NormSet};
use crate::error::{Error, Result};
use crate::mesh::build_reference_mesh;
use crate::stepper::{Scheme, Stepper};
use crate::vtk;

#[derive(Parser)]
#[command(
    name = "plate-channel",
    version,
    about = "FEM simulator for a viscous channel flow coupled to an elastic plate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation; write per-step diagnostics and VTK snapshots.
    Run(RunArgs),
    /// Refinement ladder in mesh size or time step, with fitted rates.
    Convergence(ConvArgs),
    /// Run both schemes on the same configuration and measure their gap.
    Compare(CompareArgs),
    /// Audit the discrete energy ledger step by step.
    EnergyCheck(EnergyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Semi,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum UstarArg {
    /// Extrapolated transport compensation 2u^k − u^{k−1}.
    Appendix,
    /// Shifted variant 2u^{k−1} − u^k; closes the energy ledger exactly.
    #[value(name = "scheme_r")]
    SchemeR,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    H,
    Tau,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the configured scheme.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Override the configured transport compensation.
    #[arg(long, value_enum)]
    ustar: Option<UstarArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for diag.csv and snapshots.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Replace existing output files.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ConvArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Refine the mesh (h) or the time step (tau).
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Ladder levels, not counting the reference run.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EnergyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Optional directory for the per-step ledger CSV.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Largest acceptable relative ledger residual.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    overwrite: bool,
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 3,
            }
        }
    }
}

/// Honor FSI_THREADS before the first parallel region.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FSI_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("FSI_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config("FSI_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.cmd {
        Command::Run(a) => run_cmd(a),
        Command::Convergence(a) => convergence_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::EnergyCheck(a) => energy_cmd(a),
    }
}

fn load_config(common: &CommonArgs) -> Result<SimConfig> {
    let mut cfg = SimConfig::read(&common.config)?;
    if let Some(s) = common.scheme {
        cfg.scheme = match s {
            SchemeArg::Semi => Scheme::SemiImplicit,
            SchemeArg::Full => Scheme::FullyImplicit,
        };
    }
    if let Some(u) = common.ustar {
        cfg.ustar = match u {
            UstarArg::Appendix => UStar::TwoNewMinusOld,
            UstarArg::SchemeR => UStar::TwoOldMinusNew,
        };
    }
    Ok(cfg)
}

fn guard(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Config(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn make_stepper(cfg: &SimConfig) -> Result<Stepper> {
    let mesh = Arc::new(build_reference_mesh(2.0, cfg.nx, cfg.ny)?);
    Stepper::new(mesh, cfg.params, cfg.controls())
}

fn run_cmd(a: &RunArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    std::fs::create_dir_all(&a.out)?;
    let diag_path = a.out.join("diag.csv");
    guard(&diag_path, a.overwrite)?;

    let mut stepper = make_stepper(&cfg)?;
    let load = cfg.load_fn();
    let load_ref = load.as_deref();
    let mut state = stepper.initial_state(None, None, None)?;
    let n = stepper.num_steps()?;

    let mut csv = String::from(
        "step,t,E,E_fluid,E_plate,E_stretch,E_bend,identity_res,identity_rel,gcl,p_ext,newton_iters,backward_error,assembly_s,factor_s,solve_s\n",
    );
    let wall = Instant::now();
    let mut tot = [0.0f64; 3];
    while state.step < n {
        let (next, rep) = stepper.advance(&state, load_ref)?;
        let asm = stepper.assembler();
        let ops = stepper.trace_ops();
        let eb = energy(asm, ops, stepper.params(), cfg.tau, &next);
        let id = energy_identity(asm, ops, stepper.params(), cfg.tau, &state, &next, rep.p_ext)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            next.step,
            next.t,
            eb.total(),
            eb.fluid,
            eb.plate_kinetic,
            eb.stretch,
            eb.bend,
            id.residual,
            id.relative(),
            rep.gcl,
            rep.p_ext,
            rep.newton_iters,
            rep.backward_error,
            rep.assembly_s,
            rep.factor_s,
            rep.solve_s
        );
        if rep.pivot_alarm {
            eprintln!("warning: extreme pivot growth at step {}", next.step);
        }
        tot[0] += rep.assembly_s;
        tot[1] += rep.factor_s;
        tot[2] += rep.solve_s;
        if cfg.snap_every > 0 && next.step % cfg.snap_every == 0 {
            let snap = a.out.join(format!("snap_{:06}.vtk", next.step));
            guard(&snap, a.overwrite)?;
            vtk::write_snapshot(&snap, &stepper.assembler().mesh, &next)?;
        }
        state = next;
    }
    std::fs::write(&diag_path, csv)?;

    let eb = energy(
        stepper.assembler(),
        stepper.trace_ops(),
        stepper.params(),
        cfg.tau,
        &state,
    );
    let max_d = state.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "ran {} steps to t = {}; E = {:.6e}, max |d| = {:.4e}",
        state.step, state.t, eb.total(), max_d
    );
    println!(
        "wall {:.2}s (assembly {:.2}s, factorization {:.2}s, solves {:.2}s); diagnostics in {}",
        wall.elapsed().as_secs_f64(),
        tot[0],
        tot[1],
        tot[2],
        diag_path.display()
    );
    Ok(0)
}

const NORM_HEADER: &str = "uLiL2,xiLiL2,etaLiL2,gradetaLiL2,LapetaLiL2,graduL2L2";

fn norm_row(n: &NormSet) -> String {
    format!(
        "{},{},{},{},{},{}",
        n.u_linf_l2, n.xi_linf_l2, n.eta_linf_l2, n.grad_eta_linf_l2, n.lap_eta_linf_l2, n.grad_u_l2_l2
    )
}

fn norm_cols(n: &NormSet) -> [f64; 6] {
    [
        n.u_linf_l2,
        n.xi_linf_l2,
        n.eta_linf_l2,
        n.grad_eta_linf_l2,
        n.lap_eta_linf_l2,
        n.grad_u_l2_l2,
    ]
}

fn convergence_cmd(a: &ConvArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    if a.levels < 2 {
        return Err(Error::Config("need at least 2 ladder levels to fit a rate".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    let data_path = a.out.join("convergence.csv");
    let rates_path = a.out.join("rates.csv");
    guard(&data_path, a.overwrite)?;
    guard(&rates_path, a.overwrite)?;

    let load = cfg.load_fn();
    let load_ref = load.as_deref();

    // One run of the ladder: mesh scale and time step relative to the
    // configured base; trajectories are sampled on a grid every run shares.
    let run_level = |mesh_scale: usize, tau_div: usize, every: usize| -> Result<diagnostics::Trajectory> {
        let mut c = cfg.clone();
        c.nx = cfg.nx * mesh_scale;
        c.ny = cfg.ny * mesh_scale;
        c.tau = cfg.tau / tau_div as f64;
        let mut stepper = make_stepper(&c)?;
        let s0 = stepper.initial_state(None, None, None)?;
        diagnostics::sample_run(&mut stepper, s0, load_ref, every)
    };

    let n0 = (cfg.t_end / cfg.tau).round() as usize;
    let stride = n0.div_ceil(50).max(1);

    let (xs, runs, reference) = match a.axis {
        AxisArg::H => {
            let mut xs = Vec::new();
            let mut runs = Vec::new();
            for k in 0..a.levels {
                let scale = 1usize << k;
                println!(
                    "level {k}: mesh {}x{}, tau {}",
                    cfg.nx * scale,
                    cfg.ny * scale,
                    cfg.tau
                );
                xs.push(2.0 / (cfg.nx * scale) as f64);
                runs.push(run_level(scale, 1, stride)?);
            }
            let scale = 1usize << a.levels;
            println!("reference: mesh {}x{}, tau {}", cfg.nx * scale, cfg.ny * scale, cfg.tau);
            let reference = run_level(scale, 1, stride)?;
            (xs, runs, reference)
        }
        AxisArg::Tau => {
            let mut xs = Vec::new();
            let mut runs = Vec::new();
            for k in 0..a.levels {
                let div = 1usize << k;
                println!("level {k}: mesh {}x{}, tau {}", cfg.nx, cfg.ny, cfg.tau / div as f64);
                xs.push(cfg.tau / div as f64);
                runs.push(run_level(1, div, stride * div)?);
            }
            let div = 1usize << (a.levels + 1);
            println!("reference: mesh {}x{}, tau {}", cfg.nx, cfg.ny, cfg.tau / div as f64);
            let reference = run_level(1, div, stride * div)?;
            (xs, runs, reference)
        }
    };

    let axis_name = match a.axis {
        AxisArg::H => "h",
        AxisArg::Tau => "dt",
    };
    let mut csv = format!("{axis_name},{NORM_HEADER}\n");
    let mut cols: Vec<[f64; 6]> = Vec::new();
    for (x, run) in xs.iter().zip(&runs) {
        let norms = error_norms(run, &reference)?;
        let _ = writeln!(csv, "{},{}", x, norm_row(&norms));
        println!("{axis_name} = {x:.6e}: u {:.4e}, eta {:.4e}", norms.u_linf_l2, norms.eta_linf_l2);
        cols.push(norm_cols(&norms));
    }
    std::fs::write(&data_path, csv)?;

    let mut rates = [0.0f64; 6];
    for j in 0..6 {
        let errs: Vec<f64> = cols.iter().map(|c| c[j]).collect();
        rates[j] = fit_rate(&xs, &errs);
    }
    let mut rcsv = format!("{NORM_HEADER}\n");
    let _ = writeln!(
        rcsv,
        "{},{},{},{},{},{}",
        rates[0], rates[1], rates[2], rates[3], rates[4], rates[5]
    );
    std::fs::write(&rates_path, rcsv)?;
    println!(
        "fitted rates: u {:.2}, xi {:.2}, eta {:.2}, grad eta {:.2}, curvature {:.2}, grad u {:.2}",
        rates[0], rates[1], rates[2], rates[3], rates[4], rates[5]
    );
    Ok(0)
}

fn compare_cmd(a: &CompareArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("compare.csv");
    guard(&path, a.overwrite)?;

    let load = cfg.load_fn();
    let load_ref = load.as_deref();
    let n0 = (cfg.t_end / cfg.tau).round() as usize;
    let stride = n0.div_ceil(50).max(1);

    let run_with = |scheme: Scheme| -> Result<(diagnostics::Trajectory, f64)> {
        let mut c = cfg.clone();
        c.scheme = scheme;
        let mut stepper = make_stepper(&c)?;
        let s0 = stepper.initial_state(None, None, None)?;
        let wall = Instant::now();
        let traj = diagnostics::sample_run(&mut stepper, s0, load_ref, stride)?;
        Ok((traj, wall.elapsed().as_secs_f64()))
    };
    let (semi, semi_s) = run_with(Scheme::SemiImplicit)?;
    let (full, full_s) = run_with(Scheme::FullyImplicit)?;

    let norms = error_norms(&semi, &full)?;
    let csv = format!("uL2L2,semi_wall_s,full_wall_s\n{},{},{}\n", norms.u_l2_l2, semi_s, full_s);
    std::fs::write(&path, csv)?;
    println!(
        "|u_semi - u_full| (L2 in time and space) = {:.6e}; wall semi {:.2}s, full {:.2}s",
        norms.u_l2_l2, semi_s, full_s
    );
    Ok(0)
}

fn energy_cmd(a: &EnergyArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    let csv_path = match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let p = dir.join("energy.csv");
            guard(&p, a.overwrite)?;
            Some(p)
        }
        None => None,
    };

    let mut stepper = make_stepper(&cfg)?;
    let load = cfg.load_fn();
    let load_ref = load.as_deref();
    let mut state = stepper.initial_state(None, None, None)?;
    let n = stepper.num_steps()?;

    let mut csv = String::from("step,t,E,residual,relative\n");
    let mut worst_all = 0.0f64;
    let mut worst_window = 0.0f64;
    let window = (0.2, 0.4);
    while state.step < n {
        let (next, rep) = stepper.advance(&state, load_ref)?;
        let id = energy_identity(
            stepper.assembler(),
            stepper.trace_ops(),
            stepper.params(),
            cfg.tau,
            &state,
            &next,
            rep.p_ext,
        )?;
        let rel = id.relative();
        worst_all = worst_all.max(rel);
        if next.t > window.0 && next.t <= window.1 {
            worst_window = worst_window.max(rel);
        }
        let _ = writeln!(csv, "{},{},{},{},{}", next.step, next.t, id.e_cur, id.residual, rel);
        state = next;
    }
    if let Some(p) = csv_path {
        std::fs::write(&p, csv)?;
        println!("per-step ledger in {}", p.display());
    }

    println!(
        "max relative ledger residual: {worst_all:.3e} overall, {worst_window:.3e} in ({}, {}]",
        window.0, window.1
    );
    if state.t <= window.0 {
        return Err(Error::Config(format!(
            "t_end = {} never reaches the audit window ({}, {}]",
            cfg.t_end, window.0, window.1
        )));
    }
    if worst_window > a.tol {
        println!("FAIL: ledger residual exceeds tolerance {:.1e}", a.tol);
        return Ok(4);
    }
    println!("OK: ledger residual within tolerance {:.1e}", a.tol);
    Ok(0)
}
