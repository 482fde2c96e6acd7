//! Command-line front end: operator assembly + identity suite, the linear
//! and nonlinear solves, and verification of stored artifacts.
//!
//! Exit codes: 0 all checks pass; 1 a required identity or contraction
//! failed; 2 invalid configuration.

mod artifacts;
mod config;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};

use knudsen_core::diagnostics::{moment_identity_suite, IdentityReport};
use knudsen_core::gamma::GammaOperator;
use knudsen_core::linear::{extend_domain, LinearProblem, LinearSolution};
use knudsen_core::nonlinear::{check_smallness, picard_solve, NonlinearProblem};
use knudsen_core::opcache;
use knudsen_core::operator::{OperatorSet, WeightSpec, KERNEL_VERSION};
use knudsen_core::report::{GridReport, OperatorReport, RunReport};
use knudsen_core::velocity::{maxwellian_mass_defect, QuadRule, VelocityGrid};
use knudsen_core::{Error as CoreError, Scalar};

use config::Config;

#[derive(Parser)]
#[command(name = "knudsen", about = "Steady kinetic boundary-layer solver (hard spheres, specular wall)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, env = "KNUDSEN_OUT", default_value = "out")]
    out: PathBuf,
    /// Operator cache directory.
    #[arg(long, env = "KNUDSEN_CACHE", default_value = "cache")]
    cache: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the collision operator, cache it, run the identity suite.
    Operator(CommonArgs),
    /// Solve the linearized half-space problem.
    Linear(CommonArgs),
    /// Solve the nonlinear problem by Picard iteration.
    Nonlinear(CommonArgs),
    /// Re-run diagnostics against stored artifacts.
    Verify(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&Config, &CommonArgs) -> anyhow::Result<i32>) =
        match &cli.command {
            Command::Operator(a) => (a, run_operator),
            Command::Linear(a) => (a, run_linear),
            Command::Nonlinear(a) => (a, run_nonlinear),
            Command::Verify(a) => (a, run_verify),
        };

    let cfg = match Config::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e:#}");
            std::process::exit(2);
        }
    };

    rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.max(1))
        .build_global()
        .ok();

    match run(&cfg, args) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            // solver-level failures carry exit 1; anything else is a setup
            // problem reported as configuration/runtime failure
            if e.downcast_ref::<CoreError>().is_some() {
                eprintln!("run failed: {e:#}");
                std::process::exit(1);
            }
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn grid_report(grid: &VelocityGrid<Scalar>) -> GridReport {
    GridReport {
        hash: format!("{:016x}", grid.hash()),
        rule: match grid.spec().rule {
            QuadRule::Hermite => "hermite".into(),
            QuadRule::Uniform => "uniform".into(),
        },
        n_per_axis: grid.n_per_axis(),
        n_nodes: grid.len(),
        v_max: grid.spec().v_max,
        drift: grid.drift(),
        tail_mass: grid.gaussian_tail_mass(),
        mass_defect: maxwellian_mass_defect(grid),
    }
}

fn operator_report(op: &OperatorSet<Scalar>) -> OperatorReport {
    OperatorReport {
        kernel_version: KERNEL_VERSION,
        nu0: op.nu0(),
        nu1: op.nu1(),
        c0: op.c0(),
        cbar0: op.cbar0(),
        kappa1: op.kappa1(),
        kappa2: op.kappa2(),
        lambda6: op.lambda6(),
        null_residuals: op.null_residuals(),
        kernel_row_const: op.kernel_row_const(),
    }
}

/// Build or load the operator through the cache.
fn obtain_operator(
    args: &CommonArgs,
    grid: Arc<VelocityGrid<Scalar>>,
    weight: &WeightSpec<Scalar>,
    timings: &mut Vec<(String, f64)>,
) -> anyhow::Result<OperatorSet<Scalar>> {
    let t0 = Instant::now();
    if let Some(op) = opcache::load(&args.cache, grid.clone(), weight)? {
        timings.push(("operator_cache_load".into(), t0.elapsed().as_secs_f64()));
        return Ok(op);
    }
    let op = OperatorSet::build(grid)?;
    timings.push(("operator_assembly".into(), t0.elapsed().as_secs_f64()));
    let t1 = Instant::now();
    opcache::save(&args.cache, &op, weight)?;
    timings.push(("operator_cache_save".into(), t1.elapsed().as_secs_f64()));
    Ok(op)
}

fn print_identities(identities: &[IdentityReport]) -> bool {
    let mut all_pass = true;
    for r in identities {
        println!(
            "identity {:<32} computed {:+.9e} target {:+.3e} tol {:.1e} [{}]",
            r.name,
            r.computed,
            r.target,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
        all_pass &= r.pass;
    }
    all_pass
}

fn run_operator(cfg: &Config, args: &CommonArgs) -> anyhow::Result<i32> {
    let mut timings = Vec::new();
    let grid = cfg.build_grid()?;
    let weight = cfg.weight_spec()?;
    let op = obtain_operator(args, grid.clone(), &weight, &mut timings)?;

    let identities = moment_identity_suite(&grid, 1e-6);
    let all_pass = print_identities(&identities);
    println!(
        "operator: nu0 {:.4} nu1 {:.4} c0 {:.5} kappa1 {:.6} kappa2 {:.6} lambda6 {:.5}",
        op.nu0(),
        op.nu1(),
        op.c0(),
        op.kappa1(),
        op.kappa2(),
        op.lambda6()
    );

    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        subcommand: "operator".into(),
        grid: grid_report(&grid),
        operator: Some(operator_report(&op)),
        identities,
        linear: None,
        nonlinear: None,
        timings,
    };
    emit_report(cfg, args, &report)?;
    Ok(if all_pass { 0 } else { 1 })
}

fn solve_linear(
    cfg: &Config,
    args: &CommonArgs,
) -> anyhow::Result<(Arc<VelocityGrid<Scalar>>, OperatorSet<Scalar>, WeightSpec<Scalar>, LinearSolution<Scalar>, Vec<(String, f64)>)> {
    let mut timings = Vec::new();
    let grid = cfg.build_grid()?;
    let weight = cfg.weight_spec()?;
    let op = obtain_operator(args, grid.clone(), &weight, &mut timings)?;
    let problem = LinearProblem {
        f_b: cfg.boundary_data(&grid, &weight)?,
        source: cfg.source_spec(&grid)?,
        weight,
        sigma0: cfg.solver.sigma0,
    };
    let t0 = Instant::now();
    let solution = extend_domain(&op, &problem, &cfg.solve_config())?;
    timings.push(("linear_pipeline".into(), t0.elapsed().as_secs_f64()));
    Ok((grid, op, weight, solution, timings))
}

fn run_linear(cfg: &Config, args: &CommonArgs) -> anyhow::Result<i32> {
    let (grid, op, weight, solution, timings) = solve_linear(cfg, args)?;
    let rep = &solution.report;
    println!(
        "linear: d_final {} sigma_fit {:?} discrepancies {:?} sup_wf {:.3e}",
        solution.slab.d(),
        rep.sigma_final,
        rep.d_discrepancies,
        rep.final_sup_w
    );
    let mut all_pass = true;
    for dom in &rep.domains {
        for c in &dom.conservation {
            all_pass &= c.pass;
        }
    }
    for dom in &rep.domains {
        println!(
            "  d {:>5}: eps diffs {:?} unpenalized residual {:.3e}",
            dom.d, dom.eps_diffs, dom.unpenalized_residual
        );
    }

    write_solution_artifacts(cfg, args, &grid, &op, &weight, &solution)?;
    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        subcommand: "linear".into(),
        grid: grid_report(&grid),
        operator: Some(operator_report(&op)),
        identities: moment_identity_suite(&grid, 1e-6),
        linear: Some(rep.clone()),
        nonlinear: None,
        timings,
    };
    let id_pass = report.identities.iter().all(|r| r.pass);
    emit_report(cfg, args, &report)?;
    Ok(if all_pass && id_pass { 0 } else { 1 })
}

fn run_nonlinear(cfg: &Config, args: &CommonArgs) -> anyhow::Result<i32> {
    let mut timings = Vec::new();
    let grid = cfg.build_grid()?;
    let weight = cfg.weight_spec()?;
    let op = obtain_operator(args, grid.clone(), &weight, &mut timings)?;
    let gamma = GammaOperator::build_with(&grid, cfg.gamma.n_phi, cfg.gamma.n_polar);
    let problem = NonlinearProblem {
        f_b: cfg.boundary_data(&grid, &weight)?,
        source: cfg.source_spec(&grid)?,
        weight,
        sigma0: cfg.solver.sigma0,
    };
    let (delta, _) = check_smallness(&op, &problem, f64::INFINITY);
    println!("nonlinear: delta = {delta:.4e}");

    // the compatibility gate reports its moments before refusing to run
    if let Err(CoreError::Incompatible { moments }) =
        knudsen_core::linear::check_compatibility(&grid, &problem.f_b)
    {
        eprintln!("boundary data incompatible; flux moments: {moments:?}");
        return Ok(1);
    }

    let t0 = Instant::now();
    let (solution, nl_report) = picard_solve(&op, &gamma, &problem, &cfg.solve_config(), &cfg.picard_options())?;
    timings.push(("picard".into(), t0.elapsed().as_secs_f64()));
    println!(
        "picard: iters {} terminal ratio {:?} residual {:.3e} boundary defect {:.3e}",
        nl_report.iters, nl_report.terminal_ratio, nl_report.residual, nl_report.boundary_defect
    );
    let converged = nl_report.converged;

    write_solution_artifacts(cfg, args, &grid, &op, &problem.weight, &solution)?;
    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        subcommand: "nonlinear".into(),
        grid: grid_report(&grid),
        operator: Some(operator_report(&op)),
        identities: moment_identity_suite(&grid, 1e-6),
        linear: None,
        nonlinear: Some(nl_report),
        timings,
    };
    let id_pass = report.identities.iter().all(|r| r.pass);
    emit_report(cfg, args, &report)?;
    Ok(if converged && id_pass { 0 } else { 1 })
}

fn write_solution_artifacts(
    cfg: &Config,
    args: &CommonArgs,
    grid: &VelocityGrid<Scalar>,
    op: &OperatorSet<Scalar>,
    weight: &WeightSpec<Scalar>,
    solution: &LinearSolution<Scalar>,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    if cfg.outputs.write_csv {
        artifacts::write_profiles_csv(
            &args.out.join("profiles.csv"),
            op,
            weight,
            &solution.slab,
            &solution.field,
        )?;
    }
    if cfg.outputs.write_field {
        artifacts::write_field_bin(
            &args.out.join("field_final.bin"),
            grid.hash(),
            &solution.slab,
            &solution.field,
        )?;
    }
    Ok(())
}

fn emit_report(cfg: &Config, args: &CommonArgs, report: &RunReport) -> anyhow::Result<()> {
    if cfg.outputs.write_report {
        std::fs::create_dir_all(&args.out)?;
        artifacts::write_report_json(&args.out.join("report.json"), report)?;
    }
    Ok(())
}

fn run_verify(cfg: &Config, args: &CommonArgs) -> anyhow::Result<i32> {
    let grid = cfg.build_grid()?;
    let weight = cfg.weight_spec()?;
    let mut timings = Vec::new();
    let op = obtain_operator(args, grid.clone(), &weight, &mut timings)?;

    let report = artifacts::read_report_json(&args.out.join("report.json"))?;
    if report.grid.hash != format!("{:016x}", grid.hash()) {
        eprintln!(
            "stored grid hash {} does not match configured grid {:016x}",
            report.grid.hash,
            grid.hash()
        );
        return Ok(1);
    }

    let mut all_pass = print_identities(&moment_identity_suite(&grid, 1e-6));

    // recompute profile quantities from the stored field snapshot and check
    // they reproduce the stored CSV byte-for-byte
    let field_path = args.out.join("field_final.bin");
    if field_path.exists() {
        let (_, _, d, field) = artifacts::read_field_bin(&field_path, grid.hash())?;
        let slab = knudsen_core::transport::SlabGrid::build(d)?;
        if slab.len() != field.n_x() {
            eprintln!("stored field has {} slab nodes, rebuilt slab has {}", field.n_x(), slab.len());
            return Ok(1);
        }
        let csv_path = args.out.join("profiles.csv");
        if csv_path.exists() {
            let tmp = args.out.join("profiles.recomputed.csv");
            artifacts::write_profiles_csv(&tmp, &op, &weight, &slab, &field)?;
            let stored = std::fs::read(&csv_path)?;
            let recomputed = std::fs::read(&tmp)?;
            std::fs::remove_file(&tmp).ok();
            let reproducible = stored == recomputed;
            println!(
                "profiles reproduce from snapshot: {}",
                if reproducible { "pass" } else { "FAIL" }
            );
            all_pass &= reproducible;
        }

        // stage-appropriate conservation identities on the stored field
        let tol = cfg.solver.tol_cauchy;
        let suite = knudsen_core::diagnostics::conservation_suite(
            &op,
            &slab,
            &field,
            knudsen_core::diagnostics::SolveStage::Unpenalized,
            tol,
        )?;
        all_pass &= print_identities(&suite);
    }

    Ok(if all_pass { 0 } else { 1 })
}
