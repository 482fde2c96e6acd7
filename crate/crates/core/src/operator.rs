//! Linearized hard-sphere collision operator on the discrete velocity grid:
//! multiplication part `nu`, compact part `K` (closed-form reduced kernel),
//! collision-invariant projector `P`, the constrained inverse of
//! `L = nu - K` on the orthogonal complement of its null space, and the
//! spectral constants (`c0`, `kappa1`, `kappa2`) the macroscopic estimates
//! rest on.
//!
//! The discrete `L` is sandwiched between `(I - P)` on both sides so the five
//! discretized collision invariants are exact null vectors at any resolution;
//! the raw kernel matrix is kept alongside for kernel-level diagnostics.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use crate::scalar::{pairwise_dot, Real};
use crate::velocity::VelocityGrid;
use crate::{Error, Result};

/// Version tag of the kernel closed form + assembly scheme; part of the
/// operator cache key.
pub const KERNEL_VERSION: u32 = 1;

/// Velocity weight `(1 + |v|^2)^(beta/2) * exp(varsigma |v - u|^2)` used by
/// all sup-norm measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec<T> {
    pub beta: T,
    pub varsigma: T,
}

impl<T: Real> WeightSpec<T> {
    pub fn new(beta: T, varsigma: T) -> Result<Self> {
        if !(beta >= T::of(3.0)) {
            return Err(Error::Invalid(format!("weight exponent beta must be >= 3, got {beta}")));
        }
        if !(varsigma >= T::zero() && varsigma < T::of(0.25)) {
            return Err(Error::Invalid(format!("varsigma must lie in [0, 1/4), got {varsigma}")));
        }
        Ok(Self { beta, varsigma })
    }

    pub fn value(&self, v: [T; 3], drift: [T; 3]) -> T {
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let z2 = norm2_rel(v, drift);
        (T::one() + v2).powf(self.beta * T::of(0.5)) * (self.varsigma * z2).exp()
    }

    pub fn values(&self, grid: &VelocityGrid<T>) -> Vec<T> {
        grid.nodes().iter().map(|&v| self.value(v, grid.drift())).collect()
    }
}

impl<T: Real> Default for WeightSpec<T> {
    /// Minimal admissible parameters: beta = 3, varsigma = 0.
    fn default() -> Self {
        Self { beta: T::of(3.0), varsigma: T::zero() }
    }
}

#[inline]
fn norm2_rel<T: Real>(v: [T; 3], u: [T; 3]) -> T {
    let d0 = v[0] - u[0];
    let d1 = v[1] - u[1];
    let d2 = v[2] - u[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Normalized Maxwellian `(2 pi)^(-3/2) exp(-|v - u|^2 / 2)`.
pub fn maxwellian<T: Real>(v: [T; 3], drift: [T; 3]) -> T {
    let c = T::of(0.06349363593424097); // (2 pi)^(-3/2)
    c * (-T::of(0.5) * norm2_rel(v, drift)).exp()
}

pub fn sqrt_maxwellian<T: Real>(v: [T; 3], drift: [T; 3]) -> T {
    maxwellian(v, drift).sqrt()
}

/// Hard-sphere collision frequency as a function of `s = |v - u|`:
/// `nu = 2 pi [ sqrt(2/pi) e^{-s^2/2} + (s + 1/s) erf(s / sqrt 2) ]`.
pub fn nu_hard_sphere<T: Real>(s: T) -> T {
    let two_pi = T::of(2.0) * T::pi();
    if s < T::of(1e-8) {
        // limit 4 sqrt(2 pi)
        return T::of(10.026513098524001);
    }
    let sq2_over_pi = T::of(0.7978845608028654); // sqrt(2/pi)
    let erf_part = (s + s.recip()) * (s / T::of(std::f64::consts::SQRT_2)).erf();
    two_pi * (sq2_over_pi * (-T::of(0.5) * s * s).exp() + erf_part)
}

/// Per-node collision frequency; rejects non-positive values.
pub fn collision_frequency<T: Real>(grid: &VelocityGrid<T>) -> Result<Vec<T>> {
    let drift = grid.drift();
    let nu: Vec<T> = grid.nodes().iter().map(|&v| nu_hard_sphere(norm2_rel(v, drift).sqrt())).collect();
    if nu.iter().any(|x| !(*x > T::zero()) || !x.is_finite()) {
        return Err(Error::Assembly("non-positive collision frequency".into()));
    }
    Ok(nu)
}

/// Loss-part kernel `k1(v, eta) = (2 pi)^(-1/2) |v - eta| e^{-(|z_v|^2 + |z_eta|^2)/4}`.
pub fn kernel_k1<T: Real>(v: [T; 3], eta: [T; 3], drift: [T; 3]) -> T {
    let r2 = norm2_rel(v, eta);
    let zv2 = norm2_rel(v, drift);
    let ze2 = norm2_rel(eta, drift);
    T::of(0.3989422804014327) * r2.sqrt() * (-(zv2 + ze2) * T::of(0.25)).exp()
}

/// Gain-part kernel from the classical reduction of the hard-sphere gain
/// integrals to a line integral:
/// `k2 = 4 (2 pi)^(-1/2) / r * exp(-r^2/8 - (|z_v|^2 - |z_eta|^2)^2 / (8 r^2))`
/// with `r = |v - eta|` and `z = v - u`. Verified in tests against a direct
/// quadrature of the defining collision integrals.
pub fn kernel_k2<T: Real>(v: [T; 3], eta: [T; 3], drift: [T; 3]) -> T {
    let r2 = norm2_rel(v, eta);
    if r2 == T::zero() {
        return T::infinity();
    }
    let zv2 = norm2_rel(v, drift);
    let ze2 = norm2_rel(eta, drift);
    let diff = zv2 - ze2;
    let expo = -T::of(0.125) * r2 - T::of(0.125) * diff * diff / r2;
    T::of(1.5957691216057308) * expo.exp() / r2.sqrt()
}

/// Full reduced kernel `k = k2 - k1` of the compact part `K`.
pub fn grad_kernel<T: Real>(v: [T; 3], eta: [T; 3], drift: [T; 3]) -> T {
    kernel_k2(v, eta, drift) - kernel_k1(v, eta, drift)
}

/// Kernel averaged over the quadrature cell of node `j` by 8-point
/// subsampling. Applied on the diagonal (where `k2` has its integrable
/// `1/r` singularity) and on directly adjacent cells, where a point sample
/// misrepresents the cell integral of `1/r`.
fn cell_averaged_kernel<T: Real>(
    grid: &VelocityGrid<T>,
    vi: [T; 3],
    j: usize,
    drift: [T; 3],
) -> T {
    let vj = grid.node(j);
    let hw = grid.cell_half_widths(j);
    let half = T::of(0.5);
    let mut acc = T::zero();
    for s0 in [-half, half] {
        for s1 in [-half, half] {
            for s2 in [-half, half] {
                let eta = [vj[0] + s0 * hw[0], vj[1] + s1 * hw[1], vj[2] + s2 * hw[2]];
                acc += grad_kernel(vi, eta, drift);
            }
        }
    }
    acc * T::of(0.125)
}

/// Dense kernel matrix `k(v_i, v_j)`, assembled row-parallel.
///
/// Off-diagonal entries sample the closed form; the diagonal (where `k2` has
/// its integrable `1/r` singularity) takes the average of the kernel over
/// eight symmetric sub-points of the local quadrature cell. The upper
/// triangle is mirrored and the matrix is then explicitly symmetrized, so
/// the discrete operator is self-adjoint to rounding in the quadrature inner
/// product.
pub fn assemble_k<T: Real>(grid: &VelocityGrid<T>) -> Result<Array2<T>> {
    let n = grid.len();
    let drift = grid.drift();
    let nodes = grid.nodes();
    let mut kmat = Array2::<T>::zeros((n, n));

    let npa = grid.n_per_axis();
    let unravel = |i: usize| -> [usize; 3] { [i / (npa * npa), (i / npa) % npa, i % npa] };
    {
        let rows: Vec<(usize, &mut [T])> = kmat
            .axis_iter_mut(Axis(0))
            .enumerate()
            .map(|(i, row)| (i, row.into_slice().expect("contiguous row")))
            .collect();
        rows.into_par_iter().for_each(|(i, row)| {
            let vi = nodes[i];
            let ci = unravel(i);
            for j in (i + 1)..n {
                let cj = unravel(j);
                let near = ci
                    .iter()
                    .zip(&cj)
                    .all(|(&a, &b)| a.abs_diff(b) <= 1);
                row[j] = if near {
                    // symmetric two-sided cell average
                    (cell_averaged_kernel(grid, vi, j, drift)
                        + cell_averaged_kernel(grid, nodes[j], i, drift))
                        * T::of(0.5)
                } else {
                    grad_kernel(vi, nodes[j], drift)
                };
            }
            row[i] = cell_averaged_kernel(grid, vi, i, drift);
        });
    }

    // mirror the strict upper triangle
    for i in 0..n {
        for j in (i + 1)..n {
            let x = kmat[(i, j)];
            kmat[(j, i)] = x;
        }
    }
    // explicit symmetrization K <- (K + K^T)/2
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (kmat[(i, j)] + kmat[(j, i)]) * T::of(0.5);
            kmat[(i, j)] = s;
            kmat[(j, i)] = s;
        }
    }

    if kmat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Assembly("non-finite kernel entry".into()));
    }
    Ok(kmat)
}

/// Discretized raw collision invariants `[sqrt(mu), z1 sqrt(mu), z2 sqrt(mu),
/// z3 sqrt(mu), (|z|^2 - 3) sqrt(mu)]`.
pub fn invariant_basis_raw<T: Real>(grid: &VelocityGrid<T>) -> [Vec<T>; 5] {
    let drift = grid.drift();
    let mut basis: [Vec<T>; 5] = Default::default();
    for b in basis.iter_mut() {
        b.reserve(grid.len());
    }
    for &v in grid.nodes() {
        let sm = sqrt_maxwellian(v, drift);
        let z = [v[0] - drift[0], v[1] - drift[1], v[2] - drift[2]];
        let z2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        basis[0].push(sm);
        basis[1].push(z[0] * sm);
        basis[2].push(z[1] * sm);
        basis[3].push(z[2] * sm);
        basis[4].push((z2 - T::of(3.0)) * sm);
    }
    basis
}

pub fn sqrt_mu_vec<T: Real>(grid: &VelocityGrid<T>) -> Vec<T> {
    grid.nodes().iter().map(|&v| sqrt_maxwellian(v, grid.drift())).collect()
}

/// `A_31 = z3 z1 sqrt(mu)`.
pub fn a31<T: Real>(grid: &VelocityGrid<T>) -> Vec<T> {
    off_diag_stress(grid, 0)
}

/// `A_32 = z3 z2 sqrt(mu)`.
pub fn a32<T: Real>(grid: &VelocityGrid<T>) -> Vec<T> {
    off_diag_stress(grid, 1)
}

fn off_diag_stress<T: Real>(grid: &VelocityGrid<T>, horiz: usize) -> Vec<T> {
    let u = grid.drift();
    grid.nodes()
        .iter()
        .map(|&v| (v[2] - u[2]) * (v[horiz] - u[horiz]) * sqrt_maxwellian(v, u))
        .collect()
}

/// `A_33 = (z3^2 - |z|^2/3) sqrt(mu)`.
pub fn a33<T: Real>(grid: &VelocityGrid<T>) -> Vec<T> {
    let u = grid.drift();
    grid.nodes()
        .iter()
        .map(|&v| {
            let z2 = norm2_rel(v, u);
            let z3 = v[2] - u[2];
            (z3 * z3 - z2 / T::of(3.0)) * sqrt_maxwellian(v, u)
        })
        .collect()
}

/// `B_3 = z3 (|z|^2 - 5) sqrt(mu)`.
pub fn b3<T: Real>(grid: &VelocityGrid<T>) -> Vec<T> {
    let u = grid.drift();
    grid.nodes()
        .iter()
        .map(|&v| {
            let z2 = norm2_rel(v, u);
            (v[2] - u[2]) * (z2 - T::of(5.0)) * sqrt_maxwellian(v, u)
        })
        .collect()
}

/// Assembled operator data: `nu`, the raw kernel matrix, the orthonormal
/// invariant basis, and the measured spectral constants. Immutable; all
/// solves read it concurrently.
pub struct OperatorSet<T> {
    grid: Arc<VelocityGrid<T>>,
    nu: Vec<T>,
    nu0: T,
    nu1: T,
    kmat: Array2<T>,
    /// Orthonormal (w.r.t. quadrature) basis of the discrete null space,
    /// stored as columns of an `n x 5` matrix.
    phi: Array2<T>,
    /// `phi` columns pre-scaled by quadrature weights (for fast projections).
    phi_w: Array2<T>,
    /// Same data as contiguous per-vector rows for the slice-based paths.
    phi_rows: Vec<Vec<T>>,
    phi_w_rows: Vec<Vec<T>>,
    kappa1: T,
    kappa2: T,
    c0: T,
    cbar0: T,
    lambda6: T,
    null_residuals: [T; 5],
    /// Largest `(1+|v_i|) sum_j |k_ij| w_j`: the measured constant of the
    /// kernel row-sum bound.
    kernel_row_const: T,
    /// Constrained inverses of the shear and heat-flux modes, reused by the
    /// far-end shift system.
    inv_a31: Vec<T>,
    inv_a32: Vec<T>,
    inv_b3: Vec<T>,
}

impl<T: Real> OperatorSet<T> {
    /// Full assembly: kernel matrix, projector basis, constrained-inverse
    /// constants and coercivity. Fails if the discretization produces a
    /// non-positive spectral gap.
    pub fn build(grid: Arc<VelocityGrid<T>>) -> Result<Self> {
        let nu = collision_frequency(&grid)?;
        let (nu0, nu1) = nu_bounds(&grid, &nu);
        let kmat = assemble_k(&grid)?;
        let phi = orthonormal_invariants(&grid)?;
        let mut phi_w = phi.clone();
        scale_rows(&mut phi_w.view_mut(), grid.weights());
        let (phi_rows, phi_w_rows) = basis_rows(&phi, &phi_w);

        let mut op = OperatorSet {
            grid,
            nu,
            nu0,
            nu1,
            kmat,
            phi,
            phi_w,
            phi_rows,
            phi_w_rows,
            kappa1: T::zero(),
            kappa2: T::zero(),
            c0: T::zero(),
            cbar0: T::zero(),
            lambda6: T::zero(),
            null_residuals: [T::zero(); 5],
            kernel_row_const: T::zero(),
            inv_a31: Vec::new(),
            inv_a32: Vec::new(),
            inv_b3: Vec::new(),
        };
        op.kernel_row_const = kernel_row_sum_constant(&op.grid, &op.kmat);
        op.measure_constants()?;
        Ok(op)
    }

    /// Reconstructs the derived quantities from cached raw parts.
    pub(crate) fn from_parts(
        grid: Arc<VelocityGrid<T>>,
        nu: Vec<T>,
        kmat: Array2<T>,
        phi: Array2<T>,
        constants: [T; 5],
        inverses: [Vec<T>; 3],
    ) -> Self {
        let (nu0, nu1) = nu_bounds(&grid, &nu);
        let mut phi_w = phi.clone();
        scale_rows(&mut phi_w.view_mut(), grid.weights());
        let (phi_rows, phi_w_rows) = basis_rows(&phi, &phi_w);
        let mut op = OperatorSet {
            grid,
            nu,
            nu0,
            nu1,
            kmat,
            phi,
            phi_w,
            phi_rows,
            phi_w_rows,
            kappa1: constants[2],
            kappa2: constants[3],
            c0: constants[0],
            cbar0: constants[4],
            lambda6: constants[1],
            null_residuals: [T::zero(); 5],
            kernel_row_const: T::zero(),
            inv_a31: inverses[0].clone(),
            inv_a32: inverses[1].clone(),
            inv_b3: inverses[2].clone(),
        };
        op.kernel_row_const = kernel_row_sum_constant(&op.grid, &op.kmat);
        op.null_residuals = op.measure_null_residuals();
        op
    }

    fn measure_constants(&mut self) -> Result<()> {
        self.null_residuals = self.measure_null_residuals();

        // kappa constants through the constrained inverse
        let a31v = a31(&*self.grid);
        let a32v = a32(&*self.grid);
        let b3v = b3(&*self.grid);
        let inv_a31 = self.solve_l_inv(&a31v)?;
        let inv_a32 = self.solve_l_inv(&a32v)?;
        let inv_b3 = self.solve_l_inv(&b3v)?;
        self.kappa1 = self.grid.inner(&a31v, &inv_a31);
        self.kappa2 = self.grid.inner(&b3v, &inv_b3);
        if !(self.kappa1 > T::zero()) || !(self.kappa2 > T::zero()) {
            return Err(Error::OperatorInvalid(format!(
                "kappa constants not positive: kappa1 = {}, kappa2 = {}",
                self.kappa1.f64(),
                self.kappa2.f64()
            )));
        }

        // measured constant of the nu-weighted inverse bound
        let mut cbar = T::zero();
        for (h, u) in [(&a31v, &inv_a31), (&b3v, &inv_b3)] {
            let num = weighted_quad(&self.grid, &self.nu, u, u);
            let den = weighted_quad_inv(&self.grid, &self.nu, h, h);
            cbar = cbar.max(num / den);
        }
        self.cbar0 = cbar;
        self.inv_a31 = inv_a31;
        self.inv_a32 = inv_a32;
        self.inv_b3 = inv_b3;

        self.lambda6 = self.smallest_eigenvalue_plain(160);
        self.c0 = self.coercivity_constant(160);
        if !(self.c0 > T::zero()) {
            return Err(Error::OperatorInvalid(format!(
                "coercivity estimate not positive: c0 = {} (discretization artifact; refine grid)",
                self.c0.f64()
            )));
        }
        Ok(())
    }

    fn measure_null_residuals(&self) -> [T; 5] {
        let mut out = [T::zero(); 5];
        for k in 0..5 {
            let phi_k: Vec<T> = self.phi.column(k).to_vec();
            let lphi = self.apply_l(&phi_k);
            out[k] = self.grid.norm_quad(&lphi);
        }
        out
    }

    pub fn grid(&self) -> &Arc<VelocityGrid<T>> {
        &self.grid
    }

    pub fn nu(&self) -> &[T] {
        &self.nu
    }

    pub fn nu0(&self) -> T {
        self.nu0
    }

    pub fn nu1(&self) -> T {
        self.nu1
    }

    pub fn kmat(&self) -> ArrayView2<'_, T> {
        self.kmat.view()
    }

    pub fn phi(&self) -> ArrayView2<'_, T> {
        self.phi.view()
    }

    pub fn kappa1(&self) -> T {
        self.kappa1
    }

    pub fn kappa2(&self) -> T {
        self.kappa2
    }

    pub fn c0(&self) -> T {
        self.c0
    }

    pub fn cbar0(&self) -> T {
        self.cbar0
    }

    /// Smallest eigenvalue of `L` outside the null space (plain metric).
    pub fn lambda6(&self) -> T {
        self.lambda6
    }

    pub fn null_residuals(&self) -> [T; 5] {
        self.null_residuals
    }

    pub fn kernel_row_const(&self) -> T {
        self.kernel_row_const
    }

    pub fn inv_a31(&self) -> &[T] {
        &self.inv_a31
    }

    pub fn inv_a32(&self) -> &[T] {
        &self.inv_a32
    }

    pub fn inv_b3(&self) -> &[T] {
        &self.inv_b3
    }

    pub(crate) fn constants(&self) -> [T; 5] {
        [self.c0, self.lambda6, self.kappa1, self.kappa2, self.cbar0]
    }

    /// Projection onto the discrete collision invariants.
    pub fn project_p(&self, f: &[T]) -> Vec<T> {
        let mut coeff = [T::zero(); 5];
        for k in 0..5 {
            coeff[k] = pairwise_dot(&self.phi_w_rows[k], f);
        }
        let mut out = vec![T::zero(); f.len()];
        for k in 0..5 {
            for (o, &p) in out.iter_mut().zip(&self.phi_rows[k]) {
                *o += coeff[k] * p;
            }
        }
        out
    }

    /// `(I - P) f` in place.
    pub fn project_out_p(&self, f: &mut [T]) {
        let p = self.project_p(f);
        for (x, y) in f.iter_mut().zip(p) {
            *x -= y;
        }
    }

    /// Raw compact part: `(K f)_i = sum_j k_ij w_j f_j`.
    pub fn apply_k_raw(&self, f: &[T]) -> Vec<T> {
        let wf: Vec<T> = f.iter().zip(self.grid.weights()).map(|(&x, &w)| x * w).collect();
        let mut out = vec![T::zero(); f.len()];
        for (o, row) in out.iter_mut().zip(self.kmat.axis_iter(Axis(0))) {
            *o = crate::scalar::fast_dot(row.as_slice().expect("contiguous"), &wf);
        }
        out
    }

    /// Projected operator `L f = (I - P)(nu - K)(I - P) f`; the discretized
    /// invariants are exact null vectors.
    pub fn apply_l(&self, f: &[T]) -> Vec<T> {
        let mut g = f.to_vec();
        self.project_out_p(&mut g);
        let kg = self.apply_k_raw(&g);
        let mut out: Vec<T> =
            g.iter().zip(&self.nu).zip(kg).map(|((&gi, &nui), kgi)| nui * gi - kgi).collect();
        self.project_out_p(&mut out);
        out
    }

    /// Compact part of the split `L = nu - K_tilde`: `K_tilde f = nu f - L f`.
    pub fn apply_k_tilde(&self, f: &[T]) -> Vec<T> {
        let lf = self.apply_l(f);
        f.iter().zip(&self.nu).zip(lf).map(|((&fi, &nui), lfi)| nui * fi - lfi).collect()
    }

    /// Field version of the invariant projection: `F <- (I - P) F` acting on
    /// every column (x-slice) at once.
    pub fn project_out_p_field(&self, field: &mut Array2<T>) {
        let coeff = self.phi_w.t().dot(field); // 5 x m
        let corr = self.phi.dot(&coeff); // n x m
        *field -= &corr;
    }

    pub fn project_p_field(&self, field: &Array2<T>) -> Array2<T> {
        let coeff = self.phi_w.t().dot(field);
        self.phi.dot(&coeff)
    }

    /// Field version of `L` (column-wise): `out = (I-P)(nu .* g - K (w .* g))`
    /// with `g = (I-P) field`.
    pub fn l_field(&self, field: &Array2<T>) -> Array2<T> {
        let mut g = field.clone();
        self.project_out_p_field(&mut g);
        let mut wg = g.clone();
        scale_rows(&mut wg.view_mut(), self.grid.weights());
        let mut out = self.kmat.dot(&wg);
        out.map_inplace(|x| *x = -*x);
        for ((mut orow, grow), &nui) in out.axis_iter_mut(Axis(0)).zip(g.axis_iter(Axis(0))).zip(&self.nu) {
            for (o, &gv) in orow.iter_mut().zip(grow.iter()) {
                *o += nui * gv;
            }
        }
        self.project_out_p_field(&mut out);
        out
    }

    /// Field version of `K_tilde`.
    pub fn k_tilde_field(&self, field: &Array2<T>) -> Array2<T> {
        let lf = self.l_field(field);
        let mut out = lf;
        out.map_inplace(|x| *x = -*x);
        for ((mut orow, frow), &nui) in out.axis_iter_mut(Axis(0)).zip(field.axis_iter(Axis(0))).zip(&self.nu) {
            for (o, &fv) in orow.iter_mut().zip(frow.iter()) {
                *o += nui * fv;
            }
        }
        out
    }

    /// Constrained solve `L u = h`, `P u = 0`, by projected conjugate
    /// gradients in the quadrature inner product with a `1/nu` diagonal
    /// preconditioner. Rejects inputs with a significant null-space
    /// component.
    pub fn solve_l_inv(&self, h: &[T]) -> Result<Vec<T>> {
        self.solve_l_inv_tol(h, T::of(1e-11), 400)
    }

    pub fn solve_l_inv_tol(&self, h: &[T], rtol: T, maxit: usize) -> Result<Vec<T>> {
        let h_norm = self.grid.norm_quad(h);
        if h_norm == T::zero() {
            return Ok(vec![T::zero(); h.len()]);
        }
        let p_part = self.project_p(h);
        let p_norm = self.grid.norm_quad(&p_part);
        let gate = T::of(1e-8) * h_norm;
        if p_norm > gate {
            return Err(Error::NullComponent { p_norm: p_norm.f64(), tol: gate.f64() });
        }
        let mut rhs = h.to_vec();
        self.project_out_p(&mut rhs);

        let mut u = vec![T::zero(); h.len()];
        let mut r = rhs.clone();
        let mut z: Vec<T> = r.iter().zip(&self.nu).map(|(&ri, &nui)| ri / nui).collect();
        let mut p = z.clone();
        let mut rz = self.grid.inner(&r, &z);
        let target = rtol * h_norm;
        for _ in 0..maxit {
            let ap = self.apply_l(&p);
            let pap = self.grid.inner(&p, &ap);
            if !(pap > T::zero()) {
                break;
            }
            let alpha = rz / pap;
            for ((ui, &pi), (ri, &api)) in u.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
                *ui += alpha * pi;
                *ri -= alpha * api;
            }
            if self.grid.norm_quad(&r) <= target {
                break;
            }
            z = r.iter().zip(&self.nu).map(|(&ri, &nui)| ri / nui).collect();
            let rz_new = self.grid.inner(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, &zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        self.project_out_p(&mut u);
        Ok(u)
    }

    /// Smallest eigenvalue of `L` restricted to the complement of its null
    /// space (standard metric), by deflated Lanczos on the symmetrized
    /// operator.
    fn smallest_eigenvalue_plain(&self, steps: usize) -> T {
        let w_sqrt: Vec<T> = self.grid.weights().iter().map(|&w| w.sqrt()).collect();
        let apply = |x: &[T]| -> Vec<T> {
            let f: Vec<T> = x.iter().zip(&w_sqrt).map(|(&xi, &s)| xi / s).collect();
            let lf = self.apply_l(&f);
            lf.iter().zip(&w_sqrt).map(|(&yi, &s)| yi * s).collect()
        };
        let deflate: Vec<Vec<T>> = (0..5)
            .map(|k| {
                let col: Vec<T> =
                    self.phi.column(k).iter().zip(&w_sqrt).map(|(&p, &s)| p * s).collect();
                col
            })
            .collect();
        lanczos_min_eig(self.grid.len(), apply, &deflate, steps)
    }

    /// Coercivity constant: smallest generalized eigenvalue of `L` against
    /// the `nu`-weighted inner product on the complement of the null space.
    fn coercivity_constant(&self, steps: usize) -> T {
        let s: Vec<T> =
            self.grid.weights().iter().zip(&self.nu).map(|(&w, &nu)| (w * nu).sqrt()).collect();
        let w = self.grid.weights();
        let apply = |x: &[T]| -> Vec<T> {
            let f: Vec<T> = x.iter().zip(&s).map(|(&xi, &si)| xi / si).collect();
            let lf = self.apply_l(&f);
            lf.iter().zip(&s).zip(w).map(|((&yi, &si), &wi)| yi * wi / si).collect()
        };
        let mut deflate: Vec<Vec<T>> = (0..5)
            .map(|k| self.phi.column(k).iter().zip(&s).map(|(&p, &si)| p * si).collect())
            .collect();
        orthonormalize_std(&mut deflate);
        lanczos_min_eig(self.grid.len(), apply, &deflate, steps)
    }
}

fn kernel_row_sum_constant<T: Real>(grid: &VelocityGrid<T>, kmat: &Array2<T>) -> T {
    let mut worst = T::zero();
    for (i, row) in kmat.axis_iter(Axis(0)).enumerate() {
        let v = grid.node(i);
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let mut acc = T::zero();
        for (&k, &w) in row.iter().zip(grid.weights()) {
            acc += k.abs() * w;
        }
        worst = worst.max(acc * (T::one() + speed));
    }
    worst
}

fn basis_rows<T: Real>(phi: &Array2<T>, phi_w: &Array2<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let rows = (0..5).map(|k| phi.column(k).to_vec()).collect();
    let w_rows = (0..5).map(|k| phi_w.column(k).to_vec()).collect();
    (rows, w_rows)
}

fn nu_bounds<T: Real>(grid: &VelocityGrid<T>, nu: &[T]) -> (T, T) {
    let mut lo = T::infinity();
    let mut hi = T::zero();
    for (&v, &n) in grid.nodes().iter().zip(nu) {
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let ratio = n / (T::one() + speed);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    (lo, hi)
}

fn scale_rows<T: Real>(m: &mut ArrayViewMut2<'_, T>, scale: &[T]) {
    for (mut row, &s) in m.axis_iter_mut(Axis(0)).zip(scale) {
        for x in row.iter_mut() {
            *x *= s;
        }
    }
}

/// Gram-Schmidt of the raw invariants under the quadrature inner product;
/// two passes so idempotence of the projector holds to rounding.
fn orthonormal_invariants<T: Real>(grid: &VelocityGrid<T>) -> Result<Array2<T>> {
    let raw = invariant_basis_raw(grid);
    let n = grid.len();
    let mut cols: Vec<Vec<T>> = raw.into_iter().collect();
    for k in 0..5 {
        for _pass in 0..2 {
            for j in 0..k {
                let cj = cols[j].clone();
                let proj = grid.inner(&cj, &cols[k]);
                for (x, &y) in cols[k].iter_mut().zip(&cj) {
                    *x -= proj * y;
                }
            }
        }
        let norm = grid.norm_quad(&cols[k]);
        if !(norm > T::zero()) {
            return Err(Error::Assembly("degenerate invariant basis".into()));
        }
        for x in cols[k].iter_mut() {
            *x /= norm;
        }
    }
    let mut phi = Array2::<T>::zeros((n, 5));
    for (k, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            phi[(i, k)] = x;
        }
    }
    Ok(phi)
}

fn weighted_quad<T: Real>(grid: &VelocityGrid<T>, wgt: &[T], a: &[T], b: &[T]) -> T {
    let prod: Vec<T> = wgt.iter().zip(a.iter().zip(b)).map(|(&w, (&x, &y))| w * x * y).collect();
    pairwise_dot(grid.weights(), &prod)
}

fn weighted_quad_inv<T: Real>(grid: &VelocityGrid<T>, wgt: &[T], a: &[T], b: &[T]) -> T {
    let prod: Vec<T> = wgt.iter().zip(a.iter().zip(b)).map(|(&w, (&x, &y))| x * y / w).collect();
    pairwise_dot(grid.weights(), &prod)
}

fn orthonormalize_std<T: Real>(vs: &mut [Vec<T>]) {
    for k in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..k {
                let d = dot_std(&vs[j], &vs[k]);
                let vj = vs[j].clone();
                for (x, &y) in vs[k].iter_mut().zip(&vj) {
                    *x -= d * y;
                }
            }
        }
        let n = dot_std(&vs[k], &vs[k]).sqrt();
        for x in vs[k].iter_mut() {
            *x /= n;
        }
    }
}

fn dot_std<T: Real>(a: &[T], b: &[T]) -> T {
    crate::scalar::fast_dot(a, b)
}

/// Deflated Lanczos with full reorthogonalization; returns the smallest Ritz
/// value. Deterministic start vector.
fn lanczos_min_eig<T: Real>(
    n: usize,
    apply: impl Fn(&[T]) -> Vec<T>,
    deflate: &[Vec<T>],
    steps: usize,
) -> T {
    let mut v = vec![T::zero(); n];
    // fixed quasi-random start
    let mut state = 0x9e3779b97f4a7c15u64;
    for x in v.iter_mut() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *x = T::of(((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5);
    }
    let project = |v: &mut Vec<T>| {
        for d in deflate {
            let c = dot_std(d, v);
            for (x, &y) in v.iter_mut().zip(d) {
                *x -= c * y;
            }
        }
    };
    project(&mut v);
    let norm = dot_std(&v, &v).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }

    let m = steps.min(n.saturating_sub(deflate.len()));
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut alphas: Vec<T> = Vec::with_capacity(m);
    let mut betas: Vec<T> = Vec::with_capacity(m);
    let mut prev: Option<Vec<T>> = None;
    let mut beta_prev = T::zero();

    for _ in 0..m {
        basis.push(v.clone());
        let mut w = apply(&v);
        let alpha = dot_std(&v, &w);
        alphas.push(alpha);
        for (x, &y) in w.iter_mut().zip(&v) {
            *x -= alpha * y;
        }
        if let Some(p) = &prev {
            for (x, &y) in w.iter_mut().zip(p) {
                *x -= beta_prev * y;
            }
        }
        project(&mut w);
        // full reorthogonalization against the Krylov basis
        for b in &basis {
            let c = dot_std(b, &w);
            for (x, &y) in w.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let beta = dot_std(&w, &w).sqrt();
        if !(beta > T::of(1e-14)) {
            break;
        }
        betas.push(beta);
        for x in w.iter_mut() {
            *x /= beta;
        }
        prev = Some(v);
        beta_prev = beta;
        v = w;
    }
    if betas.len() == alphas.len() {
        betas.pop();
    }
    tridiag_min_eig(&alphas, &betas)
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by Sturm bisection.
fn tridiag_min_eig<T: Real>(diag: &[T], off: &[T]) -> T {
    let n = diag.len();
    if n == 0 {
        return T::zero();
    }
    // Gershgorin bounds
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { T::zero() }
            + if i < n - 1 { off[i].abs() } else { T::zero() };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    // count of eigenvalues below x
    let count_below = |x: T| -> usize {
        let mut count = 0;
        let mut d = T::one();
        for i in 0..n {
            let off2 = if i > 0 { off[i - 1] * off[i - 1] } else { T::zero() };
            d = diag[i] - x - if d == T::zero() { off2 / T::of(1e-300) } else { off2 / d };
            if d < T::zero() {
                count += 1;
            }
        }
        count
    };
    let mut a = lo;
    let mut b = hi;
    for _ in 0..200 {
        let mid = (a + b) * T::of(0.5);
        if count_below(mid) >= 1 {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= T::of(1e-14) * (T::one() + b.abs()) {
            break;
        }
    }
    (a + b) * T::of(0.5)
}
