//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Tolerances are fixed here, not configurable.
//!
//! The heavy criteria run serially behind a shared lock so their wall-time
//! budgets are measured honestly.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use std::sync::Arc;

use knudsen_core::diagnostics::{
    classify_history, moment_identity_suite, sequence_bound, SequenceMonitor,
};
use knudsen_core::gamma::GammaOperator;
use knudsen_core::linear::{extend_domain, LinearProblem, SolveConfig, SourceSpec};
use knudsen_core::nonlinear::{picard_solve, NonlinearProblem, PicardOptions};
use knudsen_core::operator::{sqrt_mu_vec, OperatorSet, WeightSpec};
use knudsen_core::transport::{sweep_mild, SlabGrid};
use knudsen_core::velocity::{build_grid, GridSpec, QuadRule, VelocityGrid};

fn lock() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|p| p.into_inner())
}

fn hermite_grid(n: usize) -> Arc<VelocityGrid<f64>> {
    Arc::new(build_grid(&GridSpec::new(6.0, n, QuadRule::Hermite, [0.0, 0.0])).unwrap())
}

fn shear_boundary_data(grid: &VelocityGrid<f64>, weight: &WeightSpec<f64>, sup_w: f64) -> Vec<f64> {
    let w = weight.values(grid);
    let mut fb: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|v| {
            if v[2] < 0.0 {
                v[0] * v[1] * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
            } else {
                0.0
            }
        })
        .collect();
    let cur = fb.iter().zip(&w).fold(0.0f64, |m, (&f, &wi)| m.max((wi * f).abs()));
    let s = sup_w / cur;
    for x in fb.iter_mut() {
        *x *= s;
    }
    fb
}

fn seeded(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed;
    move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }
}

fn verdict(n: usize, label: &str, pass: bool, detail: &str) {
    println!(
        "acceptance criterion {n:>2} ({label}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

/// Criterion 1: moment identity suite at reference resolution.
#[test]
fn criterion_01_moment_identities() {
    let _g = lock();
    let t0 = Instant::now();
    let grid = Arc::new(
        build_grid(&GridSpec::new(6.0, 24, QuadRule::Hermite, [0.0, 0.0])).unwrap(),
    );
    let reports = moment_identity_suite(&grid, 1e-6);
    let elapsed = t0.elapsed().as_secs_f64();
    let targets = [10.0, 0.0, 1.0, 1.0, 1.0, 0.0];
    let values_ok = reports.iter().zip(targets).all(|(r, t)| r.target == t && r.pass);
    let detail = format!(
        "values {:?} in {:.2}s",
        reports.iter().map(|r| r.computed).collect::<Vec<_>>(),
        elapsed
    );
    verdict(1, "moment identities", values_ok && elapsed < 10.0, &detail);
}

/// Criterion 2: projector idempotence, invariance of sqrt(mu), and the
/// five-dimensional null space with a spectral gap.
#[test]
fn criterion_02_projector_and_null_space() {
    let _g = lock();
    let grid = hermite_grid(12);
    let op = OperatorSet::build(grid.clone()).unwrap();

    let mut rand = seeded(101);
    let mut p2_defect = 0.0f64;
    for _ in 0..10 {
        let f: Vec<f64> = (0..grid.len()).map(|_| rand()).collect();
        let pf = op.project_p(&f);
        let ppf = op.project_p(&pf);
        let num: f64 = ppf.iter().zip(&pf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        p2_defect = p2_defect.max(num / den);
    }

    let sm = sqrt_mu_vec(&grid);
    let psm = op.project_p(&sm);
    let fix_defect = psm
        .iter()
        .zip(&sm)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let null_max = op.null_residuals().iter().cloned().fold(0.0, f64::max);
    let pass = p2_defect <= 1e-10
        && fix_defect <= 1e-10
        && null_max < 1e-8
        && op.c0() > 0.0
        && op.lambda6() >= op.c0();
    let detail = format!(
        "|P^2-P| {p2_defect:.2e}, |P sqrt(mu)-sqrt(mu)| {fix_defect:.2e}, null residuals max {null_max:.2e}, sixth eigenvalue {:.4} >= c0 {:.4}",
        op.lambda6(),
        op.c0()
    );
    verdict(2, "projector / null space", pass, &detail);
}

/// Criterion 3: self-adjointness, nonnegativity, and stability of the
/// kappa constants across two grid resolutions.
#[test]
fn criterion_03_operator_structure() {
    let _g = lock();
    let op12 = OperatorSet::build(hermite_grid(12)).unwrap();
    let op16 = OperatorSet::build(hermite_grid(16)).unwrap();

    let grid = op12.grid().clone();
    let mut rand = seeded(202);
    let mut adj = 0.0f64;
    let mut min_quad = f64::INFINITY;
    for _ in 0..20 {
        let f: Vec<f64> = (0..grid.len()).map(|_| rand()).collect();
        let g: Vec<f64> = (0..grid.len()).map(|_| rand()).collect();
        let lf = op12.apply_l(&f);
        let lg = op12.apply_l(&g);
        let s1 = grid.inner(&lf, &g);
        let s2 = grid.inner(&f, &lg);
        let scale = grid.norm_quad(&f) * grid.norm_quad(&g) * op12.nu1();
        adj = adj.max((s1 - s2).abs() / scale);
        let q = grid.inner(&lf, &f) / scale;
        min_quad = min_quad.min(q);
    }

    let k1_drift = (op12.kappa1() - op16.kappa1()).abs() / op16.kappa1();
    let k2_drift = (op12.kappa2() - op16.kappa2()).abs() / op16.kappa2();
    let pass = adj <= 1e-10
        && min_quad >= -1e-8
        && op12.kappa1() > 0.0
        && op12.kappa2() > 0.0
        && op16.kappa1() > 0.0
        && op16.kappa2() > 0.0
        && k1_drift <= 5e-2
        && k2_drift <= 5e-2;
    let detail = format!(
        "adjointness {adj:.2e}, min quad form {min_quad:.2e}, kappa1 {:.6}/{:.6} (drift {k1_drift:.2e}), kappa2 {:.5}/{:.5} (drift {k2_drift:.2e})",
        op12.kappa1(),
        op16.kappa1(),
        op12.kappa2(),
        op16.kappa2()
    );
    verdict(3, "operator structure", pass, &detail);
}

/// Criterion 4: the bilinear term lands in the orthogonal complement of the
/// collision invariants, and vanishes exactly on zero input.
#[test]
fn criterion_04_gamma_orthogonality() {
    let _g = lock();
    let grid = hermite_grid(10);
    let op = OperatorSet::build(grid.clone()).unwrap();
    let gam = GammaOperator::build(&grid);

    let zero = vec![0.0; grid.len()];
    let gz = gam.apply(&op, &zero, &zero);
    let zero_exact = gz.iter().all(|&x| x == 0.0);

    let mut rand = seeded(303);
    let mut worst_rel = 0.0f64;
    for _ in 0..10 {
        let coeffs: Vec<f64> = (0..6).map(|_| rand()).collect();
        let f: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|v| {
                let b = (-0.25 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp();
                b * (coeffs[0]
                    + coeffs[1] * v[0]
                    + coeffs[2] * v[1]
                    + coeffs[3] * v[2]
                    + coeffs[4] * v[0] * v[2]
                    + coeffs[5] * (v[1] * v[1] - 1.0))
            })
            .collect();
        let gff = gam.apply(&op, &f, &f);
        let p = op.project_p(&gff);
        let p_norm = grid.norm_quad(&p);
        let nu_norm = {
            let s: Vec<f64> = gff.iter().zip(op.nu()).map(|(&x, &nu)| nu * x * x).collect();
            grid.quad(&s).unwrap().sqrt()
        };
        worst_rel = worst_rel.max(p_norm / nu_norm.max(1e-300));
    }
    let pass = zero_exact && worst_rel <= 1e-5;
    let detail = format!("Gamma(0,0) exact zero: {zero_exact}, max |P Gamma| / |Gamma|_nu = {worst_rel:.2e}");
    verdict(4, "bilinear term orthogonality", pass, &detail);
}

/// Criterion 5: transport oracle — exact constant solution and the observed
/// convergence order of the manufactured solution.
#[test]
fn criterion_05_transport_oracle() {
    let _g = lock();
    let t0 = Instant::now();
    let grid = hermite_grid(8);
    let nu = knudsen_core::operator::collision_frequency(&grid).unwrap();

    // constant solution
    let slab = SlabGrid::build(2.0).unwrap();
    let eps = 0.25;
    let c = 0.7;
    let mut rhs = knudsen_core::ndarray::Array2::<f64>::zeros((grid.len(), slab.len()));
    for j in 0..grid.len() {
        for i in 0..slab.len() {
            rhs[(j, i)] = (eps + nu[j]) * c;
        }
    }
    let src = vec![0.0; grid.len()];
    let h = sweep_mild(&grid, &nu, eps, 1.0, &rhs, &src, &slab).unwrap();
    let const_defect = h.iter().fold(0.0f64, |m, &x| m.max((x - c).abs()));

    // manufactured solution under x refinement
    let d = 2.0;
    let h_star = |v: [f64; 3], x: f64| {
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        (-x).exp() / ((1.0 + v2) * (1.0 + v2))
    };
    let mut errs = Vec::new();
    for lvl in 0..3 {
        let n_cells = 20 << lvl;
        let dx = d / n_cells as f64;
        let interior: Vec<f64> = (1..n_cells).map(|i| i as f64 * dx).collect();
        let slab = SlabGrid::from_interior(d, interior).unwrap();
        let mut rhs = knudsen_core::ndarray::Array2::<f64>::zeros((grid.len(), slab.len()));
        for j in 0..grid.len() {
            let v = grid.node(j);
            for (i, &x) in slab.x_all().iter().enumerate() {
                rhs[(j, i)] = (eps + nu[j] - v[2]) * h_star(v, x);
            }
        }
        let h = sweep_mild(&grid, &nu, eps, 1.0, &rhs, &src, &slab).unwrap();
        let mut err = 0.0f64;
        for j in 0..grid.len() {
            for (i, &x) in slab.x_all().iter().enumerate() {
                err = err.max((h[(j, i)] - h_star(grid.node(j), x)).abs());
            }
        }
        errs.push(err);
    }
    let order1 = (errs[0] / errs[1]).log2();
    let order2 = (errs[1] / errs[2]).log2();
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = const_defect <= 1e-12 && order1 >= 1.8 && order2 >= 1.8 && elapsed < 60.0;
    let detail = format!(
        "constant defect {const_defect:.2e}, observed orders {order1:.2}/{order2:.2}, {elapsed:.1}s"
    );
    verdict(5, "transport oracle", pass, &detail);
}

/// Criteria 6 and 7: the full linear pipeline at production resolution, with
/// the penalty/damping limit sequences it reports.
#[test]
fn criterion_06_07_linear_pipeline_and_limits() {
    let _g = lock();
    let t0 = Instant::now();
    let grid = hermite_grid(16);
    let op = OperatorSet::build(grid.clone()).unwrap();
    let weight = WeightSpec::default();
    let problem = LinearProblem {
        f_b: shear_boundary_data(&grid, &weight, 0.05),
        source: SourceSpec::Zero,
        weight,
        sigma0: 0.3,
    };
    let cfg = SolveConfig::<f64>::default();
    let sol = extend_domain(&op, &problem, &cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let rep = &sol.report;

    // b3 and flux constancy of the unpenalized solve on the final slab
    let max_b3 = sol.macro_profile.b3.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let flux_drift = rep
        .domains
        .last()
        .unwrap()
        .conservation
        .iter()
        .find(|c| c.name == "flux_constant_in_x")
        .unwrap()
        .computed
        .abs();
    let shift_res = rep
        .domains
        .iter()
        .flat_map(|d| d.shift_residuals_after.iter().map(|r| r.abs()))
        .fold(0.0f64, f64::max);

    let sigma = rep.sigma_final.unwrap_or(-1.0);
    let sigma_drift = rep.sigma_drift.unwrap_or(1.0);

    // slab-doubling discrepancies decrease (or sit at the rounding floor)
    let dd = &rep.d_discrepancies;
    let floor = 1e-13 * rep.final_sup_w;
    let dd_ok = dd.len() == 2 && (dd[1] < dd[0] || dd[1] <= floor);

    let pass6 = max_b3 <= 1e-6
        && flux_drift <= 1e-8
        && shift_res <= 1e-6
        && sigma > 0.0
        && sigma_drift <= 0.10
        && dd_ok
        && elapsed < 600.0;
    let detail6 = format!(
        "b3 {max_b3:.2e}, flux drift {flux_drift:.2e}, shift residuals {shift_res:.2e}, sigma {sigma:.3} (drift {sigma_drift:.2e}), discrepancies {dd:?}, {elapsed:.0}s"
    );
    verdict(6, "linear pipeline", pass6, &detail6);

    // criterion 7: limit sequences measured on the same run
    let strictly_dec = |v: &[f64]| v.windows(2).all(|p| p[1] < p[0]);
    let mut eps_ok = true;
    let mut n_ok = true;
    for dom in &rep.domains {
        if dom.eps_half_diffs.len() >= 2 {
            eps_ok &= strictly_dec(&dom.eps_half_diffs);
        }
        if !dom.n_diffs.is_empty() {
            n_ok &= strictly_dec(&dom.n_diffs);
        }
    }
    let have_n = rep.domains.iter().any(|d| d.n_diffs.len() >= 2);
    let pass7 = eps_ok && n_ok && have_n;
    let detail7 = format!(
        "half-penalty diffs {:?}, damping diffs {:?}",
        rep.domains.last().unwrap().eps_half_diffs,
        rep.domains.first().unwrap().n_diffs
    );
    verdict(7, "penalty and damping limits", pass7, &detail7);
}

/// Criterion 8: Picard contraction at delta = 0.05, its trend under halved
/// data, the converged residual and the wall relation.
#[test]
fn criterion_08_nonlinear_contraction() {
    let _g = lock();
    let grid = hermite_grid(8);
    let op = OperatorSet::build(grid.clone()).unwrap();
    // a coarser angular rule keeps the run short; the contraction and
    // consistency checks are discrete-internal and do not depend on it
    let gam = GammaOperator::build_with(&grid, 12, 6);
    let weight = WeightSpec::default();
    let cfg = SolveConfig {
        eps_schedule: vec![1e-1, 1e-2, 1e-3],
        d_schedule: vec![4.0],
        measure_eps_halving: false,
        measure_n_limit: false,
        anderson_depth: 160,
        max_inner_iters: 800,
        ..SolveConfig::default()
    };
    let opts = PicardOptions::default();

    let run = |sup_w: f64| {
        let problem = NonlinearProblem {
            f_b: shear_boundary_data(&grid, &weight, sup_w),
            source: SourceSpec::Zero,
            weight,
            sigma0: 0.3,
        };
        picard_solve(&op, &gam, &problem, &cfg, &opts).unwrap()
    };
    let (_, rep) = run(0.05);
    let (_, rep_half) = run(0.025);

    let ratio = rep.terminal_ratio.unwrap_or(f64::INFINITY);
    let ratio_half = rep_half.terminal_ratio.unwrap_or(f64::INFINITY);
    let pass = ratio < 1.0
        && ratio_half < ratio
        && rep.residual <= 1e-7
        && rep.boundary_defect <= 1e-6
        && rep.converged;
    let detail = format!(
        "terminal ratio {ratio:.3e} (halved data: {ratio_half:.3e}), residual {:.2e}, wall relation {:.2e}",
        rep.residual, rep.boundary_defect
    );
    verdict(8, "nonlinear contraction", pass, &detail);
}

/// Criterion 9: the window-max contraction monitor on its two synthetic
/// clauses and on a measured solver history.
#[test]
fn criterion_09_sequence_monitor() {
    let _g = lock();
    // clause 1 with zero drift: exact geometric sequence
    let hist: Vec<f64> = (0..12).map(|i| 8.0f64.powi(-i)).collect();
    let c1 = sequence_bound(&SequenceMonitor { k: 0, history: hist, drift: 0.0, eta: None }).unwrap();
    // clause 1 at the drift fixed point 8/7 D
    let c1b = sequence_bound(&SequenceMonitor {
        k: 0,
        history: vec![8.0 / 7.0; 10],
        drift: 1.0,
        eta: None,
    })
    .unwrap();
    // clause 2 with geometric drift
    let hist: Vec<f64> = (0..14).map(|i| 0.8f64.powi(i)).collect();
    let c2 = sequence_bound(&SequenceMonitor { k: 1, history: hist, drift: 1.0, eta: Some(0.8) }).unwrap();

    // measured history: Picard differences of a small nonlinear solve
    let grid = hermite_grid(6);
    let op = OperatorSet::build(grid.clone()).unwrap();
    let gam = GammaOperator::build_with(&grid, 8, 4);
    let weight = WeightSpec::default();
    let cfg = SolveConfig {
        eps_schedule: vec![1e-1, 1e-2, 1e-3],
        d_schedule: vec![4.0],
        measure_eps_halving: false,
        measure_n_limit: false,
        anderson_depth: 160,
        max_inner_iters: 700,
        ..SolveConfig::default()
    };
    let problem = NonlinearProblem {
        f_b: shear_boundary_data(&grid, &weight, 0.05),
        source: SourceSpec::Zero,
        weight,
        sigma0: 0.3,
    };
    let (_, rep) = picard_solve(&op, &gam, &problem, &cfg, &PicardOptions::default()).unwrap();
    let solver = classify_history(&rep.diff_norms, 10);
    let solver_ok = matches!(&solver, Some((_, c)) if c.contractive);

    let pass = c1.contractive && c1b.contractive && c2.contractive && solver_ok;
    let detail = format!(
        "clause-1 geometric: {}, clause-1 drift level: {}, clause-2: {}, solver history window {:?}",
        c1.contractive,
        c1b.contractive,
        c2.contractive,
        solver.map(|(k, _)| k)
    );
    verdict(9, "contraction monitor", pass, &detail);
}

/// Criterion 10: byte-identical artifacts for repeated runs with the same
/// configuration and thread count.
#[test]
fn criterion_10_determinism() {
    let _g = lock();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(
        &cfg_path,
        r#"
[grid]
n_per_axis = 8

[solver]
eps_schedule = [1e-1, 1e-2, 1e-3]
d_schedule = [4.0, 8.0]
"#,
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_knudsen"))
            .args([
                "linear",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--cache",
                cache.to_str().unwrap(),
                "--threads",
                "1",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    let csv_same = std::fs::read(out_a.join("profiles.csv")).unwrap()
        == std::fs::read(out_b.join("profiles.csv")).unwrap();
    let bin_same = std::fs::read(out_a.join("field_final.bin")).unwrap()
        == std::fs::read(out_b.join("field_final.bin")).unwrap();
    let pass = csv_same && bin_same;
    let detail = format!("profiles identical: {csv_same}, field snapshots identical: {bin_same}");
    verdict(10, "determinism", pass, &detail);
}
