//! End-to-end checks of the linear solver chain at small resolution.

use std::sync::Arc;

use knudsen_core::linear::{
    check_compatibility, compute_shift_phi, cutoff, cutoff_prime, energy_identity, extract_macro,
    extend_domain, far_end_orthogonality, fit_decay, lift_boundary, limit_eps_n, solve_truncated,
    LinearProblem, SolveConfig, SourceSpec,
};
use knudsen_core::field::KineticField;
use knudsen_core::operator::{maxwellian, sqrt_mu_vec, OperatorSet, WeightSpec};
use knudsen_core::transport::SlabGrid;
use knudsen_core::velocity::{build_grid, GridSpec, QuadRule, VelocityGrid};
use knudsen_core::Error;

fn setup(n: usize) -> (Arc<VelocityGrid<f64>>, OperatorSet<f64>) {
    let grid = Arc::new(build_grid(&GridSpec::new(6.0, n, QuadRule::Hermite, [0.0, 0.0])).unwrap());
    let op = OperatorSet::build(grid.clone()).unwrap();
    (grid, op)
}

/// v1 v2 exp(-|v|^2) on incoming velocities, scaled to a weighted sup.
fn compatible_fb(grid: &VelocityGrid<f64>, weight: &WeightSpec<f64>, target_sup: f64) -> Vec<f64> {
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
    let sup = fb.iter().zip(&w).fold(0.0f64, |m, (&f, &wi)| m.max((wi * f).abs()));
    let s = target_sup / sup;
    for x in fb.iter_mut() {
        *x *= s;
    }
    fb
}

#[test]
fn compatibility_gate() {
    let (grid, _) = setup(8);
    // zero data passes with zero moments
    let zero = vec![0.0; grid.len()];
    assert_eq!(check_compatibility(&grid, &zero).unwrap(), [0.0; 4]);

    // v1 v2 family passes by parity
    let fb = compatible_fb(&grid, &WeightSpec::default(), 0.05);
    let m = check_compatibility(&grid, &fb).unwrap();
    for x in m {
        assert!(x.abs() < 1e-14, "moment {x}");
    }

    // v1-only family fails through its second moment; the half-range kink
    // converges slowly, so the oracle comparison runs at a finer grid
    let fine: Arc<VelocityGrid<f64>> =
        Arc::new(build_grid(&GridSpec::new(6.0, 20, QuadRule::Hermite, [0.0, 0.0])).unwrap());
    let bad: Vec<f64> = fine
        .nodes()
        .iter()
        .map(|v| {
            if v[2] < 0.0 {
                v[0] * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
            } else {
                0.0
            }
        })
        .collect();
    match check_compatibility(&fine, &bad) {
        Err(Error::Incompatible { moments }) => {
            assert!(moments[1].abs() > 1e-3, "expected a visible second moment, got {moments:?}");
            // analytic value of the offending moment (half-range Gaussian
            // product integral)
            let expect = -0.1013269431735142;
            let quad_scale = moments[1] / expect;
            assert!((quad_scale - 1.0).abs() < 0.15, "moment {} vs analytic {expect}", moments[1]);
        }
        other => panic!("expected incompatibility, got {other:?}"),
    }

    // data leaking onto v3 >= 0 is rejected outright
    let mut leak = vec![0.0; grid.len()];
    let j_up = (0..grid.len()).find(|&j| grid.node(j)[2] > 0.0).unwrap();
    leak[j_up] = 1.0;
    assert!(check_compatibility(&grid, &leak).is_err());
}

#[test]
fn cutoff_shape() {
    assert_eq!(cutoff(0.0f64), 1.0);
    assert_eq!(cutoff(1.0f64), 1.0);
    assert_eq!(cutoff(2.0f64), 0.0);
    assert_eq!(cutoff(5.0f64), 0.0);
    // monotone and C^2-flat at the junctions
    let mut prev = 1.0f64;
    for i in 0..=100 {
        let x = 1.0 + i as f64 / 100.0;
        let c = cutoff(x);
        assert!(c <= prev + 1e-15);
        prev = c;
    }
    assert!(cutoff_prime(1.0 + 1e-6f64).abs() < 1e-10);
    assert!(cutoff_prime(2.0 - 1e-6f64).abs() < 1e-10);
    assert!(cutoff_prime(1.5f64) < -1.0);
}

#[test]
fn lift_zero_data_is_zero_and_source_passthrough() {
    let (grid, op) = setup(6);
    let slab = SlabGrid::build(4.0).unwrap();
    let zero_fb = vec![0.0; grid.len()];
    let src = SourceSpec::Zero.materialize(&op, &slab);
    let (g, _) = lift_boundary(&op, &slab, &src, &zero_fb).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));

    // f_b = 0 -> g equals the source exactly
    let profile = knudsen_core::operator::a31(&grid);
    let src = SourceSpec::Separable { profile, rate: 0.5 }.materialize(&op, &slab);
    let (g, _) = lift_boundary(&op, &slab, &src, &zero_fb).unwrap();
    let mut max_diff = 0.0f64;
    for (a, b) in g.iter().zip(src.iter()) {
        max_diff = max_diff.max((a - b).abs());
    }
    assert_eq!(max_diff, 0.0);
}

#[test]
fn lift_moments_vanish_for_compatible_data() {
    let (grid, op) = setup(8);
    let slab = SlabGrid::build(4.0).unwrap();
    let fb = compatible_fb(&grid, &WeightSpec::default(), 0.05);
    let src = SourceSpec::Zero.materialize(&op, &slab);
    let (g, chi) = lift_boundary(&op, &slab, &src, &fb).unwrap();
    // cutoff values recorded on the slab
    assert_eq!(chi[0], 1.0);
    assert_eq!(*chi.last().unwrap(), 0.0);
    // the four invariant moments of g vanish at a mid-ramp node
    let raw = knudsen_core::operator::invariant_basis_raw(&grid);
    let i_mid = slab.x_all().iter().position(|&x| x > 1.4).unwrap();
    let col: Vec<f64> = g.column(i_mid).to_vec();
    for idx in [0usize, 1, 2, 4] {
        let m = grid.inner(&raw[idx], &col);
        assert!(m.abs() < 1e-12, "moment {idx}: {m}");
    }
}

#[test]
fn truncated_solve_zero_source_is_zero() {
    let (grid, op) = setup(6);
    let slab = SlabGrid::build(4.0).unwrap();
    let w = WeightSpec::default().values(&grid);
    let cfg = SolveConfig::default();
    let g = ndarray::Array2::<f64>::zeros((grid.len(), slab.len()));
    let out = solve_truncated(&op, &slab, &g, 0.1, 1.0, None, &w, &cfg).unwrap();
    assert!(out.field.iter().all(|&x| x == 0.0));
    assert_eq!(out.residual, 0.0);
}

fn small_config() -> SolveConfig<f64> {
    SolveConfig {
        eps_schedule: vec![1e-1, 1e-2, 1e-3],
        d_schedule: vec![4.0, 8.0],
        n_schedule: vec![8, 16, 32],
        ..SolveConfig::default()
    }
}

#[test]
fn truncated_solve_contraction_and_energy() {
    let (grid, op) = setup(8);
    let slab = SlabGrid::build(4.0).unwrap();
    let weight = WeightSpec::default();
    let w = weight.values(&grid);
    let cfg = small_config();
    let fb = compatible_fb(&grid, &weight, 0.05);
    let src = SourceSpec::Zero.materialize(&op, &slab);
    let (g, _) = lift_boundary(&op, &slab, &src, &fb).unwrap();

    let eps = 0.1;
    let out = solve_truncated(&op, &slab, &g, eps, 1.0, None, &w, &cfg).unwrap();
    // continuation stages recorded with measured ratios below one half
    assert_eq!(out.stages.last().unwrap().lambda, 1.0);
    for st in &out.stages {
        if let Some(r) = st.measured_ratio {
            assert!(r < 0.5, "stage at lambda {} ratio {r}", st.lambda);
        }
    }
    assert!(out.residual <= 1e-10, "residual {}", out.residual);
    assert!(out.boundary_defect < 1e-12, "boundary defect {}", out.boundary_defect);

    // discrete energy balance within the x-quadrature error
    let (lhs, rhs) = energy_identity(&op, &slab, &out.field, &g, eps, 1.0);
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    assert!(
        (lhs - rhs).abs() / scale < 5e-3,
        "energy identity: lhs {lhs} rhs {rhs} rel {}",
        (lhs - rhs).abs() / scale
    );

    // damped variant also balances (boundary term active)
    let out_d = solve_truncated(&op, &slab, &g, eps, 0.875, Some(&out.field), &w, &cfg).unwrap();
    let (lhs, rhs) = energy_identity(&op, &slab, &out_d.field, &g, eps, 0.875);
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    assert!((lhs - rhs).abs() / scale < 5e-3, "damped energy: lhs {lhs} rhs {rhs}");
}

#[test]
fn eps_limit_is_cauchy_and_satisfies_unpenalized_equation() {
    let (grid, op) = setup(8);
    let slab = SlabGrid::build(4.0).unwrap();
    let weight = WeightSpec::default();
    let w = weight.values(&grid);
    let cfg = small_config();
    let fb = compatible_fb(&grid, &weight, 0.05);
    let src = SourceSpec::Zero.materialize(&op, &slab);
    let (g, _) = lift_boundary(&op, &slab, &src, &fb).unwrap();

    let out = limit_eps_n(&op, &slab, &g, &cfg, &w, None, true).unwrap();
    assert!(out.eps_diffs.windows(2).all(|p| p[1] < p[0]), "{:?}", out.eps_diffs);
    assert!(
        out.eps_half_diffs.windows(2).all(|p| p[1] < p[0]),
        "{:?}",
        out.eps_half_diffs
    );
    // roughly first order in the penalty
    let slope = out.rate_slope.unwrap();
    assert!(slope > 0.7 && slope < 1.5, "rate slope {slope}");
    assert!(out.unpenalized_residual < 1e-6, "residual {}", out.unpenalized_residual);
}

#[test]
fn shift_system_solves_and_annihilates_far_end() {
    let (grid, op) = setup(8);
    // synthetic far-end slice with hydro and non-hydro content
    let sm = sqrt_mu_vec(&grid);
    let f_at_d: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&sm)
        .map(|(v, &s)| (0.3 + 0.1 * v[0] - 0.05 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0)) * s
            + 0.02 * v[2] * v[0] * s)
        .collect();
    let phi = compute_shift_phi(&op, &f_at_d).unwrap();
    let mut field = ndarray::Array2::<f64>::zeros((grid.len(), 1));
    for (j, &x) in f_at_d.iter().enumerate() {
        field[(j, 0)] = x;
    }
    knudsen_core::linear::shift_field(&op, &mut field, phi);
    let shifted: Vec<f64> = field.column(0).to_vec();
    let res = far_end_orthogonality(&op, &shifted).unwrap();
    for r in res {
        assert!(r.abs() < 1e-13, "far-end residual {r}");
    }
}

#[test]
fn extract_macro_reads_off_invariants() {
    let (grid, op) = setup(6);
    let sm = sqrt_mu_vec(&grid);
    let xs = [0.0, 0.5, 1.0];
    // field = sqrt(mu): a = 1, others 0
    let f = KineticField::from_fn(grid.len(), &xs, |j, _| sm[j]);
    let m = extract_macro(&op, &f);
    for i in 0..3 {
        assert!((m.a[i] - 1.0).abs() < 1e-12);
        for v in [m.b1[i], m.b2[i], m.b3[i], m.c[i]] {
            assert!(v.abs() < 1e-12);
        }
    }
    // field = (|v|^2 - 3) sqrt(mu): c = 1, others 0
    let f = KineticField::from_fn(grid.len(), &xs, |j, _| {
        let v = grid.node(j);
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0) * sm[j]
    });
    let m = extract_macro(&op, &f);
    for i in 0..3 {
        assert!((m.c[i] - 1.0).abs() < 1e-12, "c {}", m.c[i]);
        for v in [m.a[i], m.b1[i], m.b2[i], m.b3[i]] {
            assert!(v.abs() < 1e-12);
        }
    }
}

#[test]
fn fit_decay_synthetic() {
    let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let profile: Vec<f64> = xs.iter().map(|&x| (-x).exp()).collect();
    let sigma = fit_decay(&profile, &xs, 1.0, 5.0).unwrap();
    assert!((sigma - 1.0).abs() < 1e-6, "sigma {sigma}");
    // trivial field
    let zeros = vec![0.0; xs.len()];
    assert!(fit_decay(&zeros, &xs, 1.0, 5.0).is_none());
}

#[test]
fn mock_shift_back_substitution() {
    // with unit kappa entries and right side (1, 0, 0, 1) the solution of
    // the triangular system with rows (1,0,0,2),(0,1,0,0),(0,0,1,0),(0,0,0,1)
    // against the negated right side is (1, 0, 0, -1)
    let m00 = 1.0f64;
    let m03 = 2.0;
    let (m11, m22, m33) = (1.0, 1.0, 1.0);
    let r = [1.0, 0.0, 0.0, 1.0];
    let phi3: f64 = -r[3] / m33;
    let phi1 = -r[1] / m11;
    let phi2 = -r[2] / m22;
    let phi0 = (-r[0] - m03 * phi3) / m00;
    assert_eq!([phi0, phi1, phi2, phi3], [1.0, 0.0, 0.0, -1.0]);
}

#[test]
fn full_pipeline_small() {
    let (grid, op) = setup(8);
    let weight = WeightSpec::default();
    let fb = compatible_fb(&grid, &weight, 0.05);
    let problem = LinearProblem { f_b: fb, source: SourceSpec::Zero, weight, sigma0: 0.3 };
    let cfg = small_config();
    let sol = extend_domain(&op, &problem, &cfg).unwrap();
    let rep = &sol.report;

    assert_eq!(rep.domains.len(), 2);
    // parity data: hydro part vanishes identically
    for m in [&sol.macro_profile.a, &sol.macro_profile.b1, &sol.macro_profile.b2, &sol.macro_profile.b3, &sol.macro_profile.c] {
        let worst = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!(worst < 1e-12, "hydro profile should vanish by parity: {worst}");
    }
    for d in &rep.domains {
        for c in &d.conservation {
            assert!(c.pass, "{}: {} (tol {})", c.name, c.computed, c.tolerance);
        }
        for r in d.shift_residuals_after {
            assert!(r.abs() < 1e-12, "shift residual {r}");
        }
        assert!(d.unpenalized_residual < 1e-6);
    }
    // decay measured and positive
    let sigma = rep.sigma_final.expect("nontrivial field");
    assert!(sigma > 0.0, "sigma {sigma}");
    // discrepancy recorded for the single doubling
    assert_eq!(rep.d_discrepancies.len(), 1);
    // solution nontrivial
    assert!(rep.final_sup_w > 1e-4);

    // wall relation of the user field: f(0,v) - f(0,Rv) = f_b(Rv) incoming
    let w = weight.values(&grid);
    let mut worst = 0.0f64;
    for j in 0..grid.len() {
        if grid.node(j)[2] > 0.0 {
            let jr = grid.reflect()[j];
            let def = sol.field.data[(j, 0)] - sol.field.data[(jr, 0)] - problem.f_b[jr];
            worst = worst.max((w[j] * def).abs());
        }
    }
    assert!(worst < 1e-10, "user wall relation defect {worst}");

    // linearity: scaling the data scales the solution
    let mut problem2 = problem.clone();
    for x in problem2.f_b.iter_mut() {
        *x *= 0.5;
    }
    let sol2 = extend_domain(&op, &problem2, &cfg).unwrap();
    let mut lin_defect = 0.0f64;
    for (a, b) in sol.field.data.iter().zip(sol2.field.data.iter()) {
        lin_defect = lin_defect.max((0.5 * a - b).abs());
    }
    assert!(lin_defect < 1e-9, "homogeneity defect {lin_defect}");

    // additivity: a second compatible shape, solved separately and jointly
    let fb_other: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|v| {
            if v[2] < 0.0 {
                0.02 * v[0] * v[1] * (1.0 + 0.3 * v[2] * v[2])
                    * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
            } else {
                0.0
            }
        })
        .collect();
    let prob_b = LinearProblem {
        f_b: fb_other.clone(),
        source: SourceSpec::Zero,
        weight,
        sigma0: 0.3,
    };
    let mut fb_sum = problem.f_b.clone();
    for (x, &y) in fb_sum.iter_mut().zip(&fb_other) {
        *x += y;
    }
    let prob_sum = LinearProblem { f_b: fb_sum, source: SourceSpec::Zero, weight, sigma0: 0.3 };
    let sol_b = extend_domain(&op, &prob_b, &cfg).unwrap();
    let sol_sum = extend_domain(&op, &prob_sum, &cfg).unwrap();
    let mut add_defect = 0.0f64;
    for ((a, b), s) in sol
        .field
        .data
        .iter()
        .zip(sol_b.field.data.iter())
        .zip(sol_sum.field.data.iter())
    {
        add_defect = add_defect.max((a + b - s).abs());
    }
    assert!(add_defect < 1e-9, "additivity defect {add_defect}");
}
