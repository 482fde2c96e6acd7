//! Bilinear collision term `Gamma(f, g) = Q(sqrt(mu) f, sqrt(mu) g) / sqrt(mu)`
//! by direct quadrature over `(u, omega)`: the grid rule in `u`, a product
//! angular rule on the sphere, and trilinear interpolation of the arguments
//! at the post-collision velocities.
//!
//! The operator of record projects the raw quadrature onto the complement of
//! the collision invariants, so membership in `N^perp` holds to rounding at
//! any resolution; the raw projection defect is reported as a quadrature
//! diagnostic.

use ndarray::Array2;
use rayon::prelude::*;

use crate::operator::{sqrt_maxwellian, OperatorSet};
use crate::scalar::Real;
use crate::velocity::{gauss_legendre, VelocityGrid};
use crate::{Error, Result};

/// Precomputed quadrature data for the bilinear term on one grid.
pub struct GammaOperator<T> {
    /// Unit vectors and weights of the product angular rule.
    omegas: Vec<([T; 3], T)>,
    /// `sqrt(mu)` at grid nodes.
    sqrt_mu: Vec<T>,
    /// Dense loss kernel `2 pi |v_i - v_j| sqrt(mu_j) w_j`.
    loss: Array2<T>,
    /// Per-axis node positions (with drift) for interpolation.
    axes: [Vec<T>; 3],
    n_per_axis: usize,
}

impl<T: Real> GammaOperator<T> {
    /// Default product angular rule: 16 azimuthal midpoints x 8 Gauss
    /// polar nodes.
    pub fn build(grid: &VelocityGrid<T>) -> Self {
        Self::build_with(grid, 16, 8)
    }

    pub fn build_with(grid: &VelocityGrid<T>, n_phi: usize, n_polar: usize) -> Self {
        // the integrand is invariant under omega -> -omega (the deflection
        // (v-u).omega omega flips sign twice), so the polar rule covers one
        // hemisphere with doubled weights
        let (gx, gw) = gauss_legendre(n_polar);
        let mut omegas = Vec::with_capacity(n_phi * n_polar);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        for (x, wq) in gx.iter().zip(&gw) {
            let c = 0.5 * (x + 1.0); // cos(theta) in (0, 1)
            let s = (1.0 - c * c).max(0.0).sqrt();
            for m in 0..n_phi {
                let phi = (m as f64 + 0.5) * dphi;
                let omega = [T::of(s * phi.cos()), T::of(s * phi.sin()), T::of(c)];
                omegas.push((omega, T::of(wq * dphi)));
            }
        }

        let drift = grid.drift();
        let sqrt_mu: Vec<T> = grid.nodes().iter().map(|&v| sqrt_maxwellian(v, drift)).collect();

        let n = grid.len();
        let mut loss = Array2::<T>::zeros((n, n));
        let two_pi = T::of(2.0) * T::pi();
        for i in 0..n {
            let vi = grid.node(i);
            for j in 0..n {
                let vj = grid.node(j);
                let r = ((vi[0] - vj[0]) * (vi[0] - vj[0])
                    + (vi[1] - vj[1]) * (vi[1] - vj[1])
                    + (vi[2] - vj[2]) * (vi[2] - vj[2]))
                    .sqrt();
                loss[(i, j)] = two_pi * r * sqrt_mu[j] * grid.weights()[j];
            }
        }

        let base = grid.axis_base().to_vec();
        let axes = [
            base.iter().map(|&b| drift[0] + b).collect(),
            base.iter().map(|&b| drift[1] + b).collect(),
            base.clone(),
        ];
        GammaOperator { omegas, sqrt_mu, loss, axes, n_per_axis: grid.n_per_axis() }
    }

    /// Trilinear interpolation of nodal values at an arbitrary velocity;
    /// zero outside the grid hull.
    fn interp(&self, values: &[T], q: [T; 3]) -> T {
        let n = self.n_per_axis;
        let mut idx = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let axis = &self.axes[a];
            if q[a] < axis[0] || q[a] > axis[n - 1] {
                return T::zero();
            }
            // cell index via binary search
            let mut lo = 0usize;
            let mut hi = n - 1;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if axis[mid] <= q[a] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            idx[a] = lo;
            frac[a] = (q[a] - axis[lo]) / (axis[lo + 1] - axis[lo]);
        }
        let (i1, i2, i3) = (idx[0], idx[1], idx[2]);
        let (t1, t2, t3) = (frac[0], frac[1], frac[2]);
        let one = T::one();
        let at = |a: usize, b: usize, c: usize| values[((i1 + a) * n + (i2 + b)) * n + (i3 + c)];
        let c00 = at(0, 0, 0) * (one - t3) + at(0, 0, 1) * t3;
        let c01 = at(0, 1, 0) * (one - t3) + at(0, 1, 1) * t3;
        let c10 = at(1, 0, 0) * (one - t3) + at(1, 0, 1) * t3;
        let c11 = at(1, 1, 0) * (one - t3) + at(1, 1, 1) * t3;
        let c0 = c00 * (one - t2) + c01 * t2;
        let c1 = c10 * (one - t2) + c11 * t2;
        c0 * (one - t1) + c1 * t1
    }

    /// Raw quadrature of `Gamma(f, g)` on one velocity slice.
    pub fn apply_raw(&self, grid: &VelocityGrid<T>, f: &[T], g: &[T]) -> Vec<T> {
        let n = grid.len();
        debug_assert_eq!(f.len(), n);
        debug_assert_eq!(g.len(), n);
        // loss factor: (LK f)_i
        let lossf: Vec<T> = self
            .loss
            .rows()
            .into_iter()
            .map(|row| crate::scalar::pairwise_dot(row.as_slice().expect("contiguous"), f))
            .collect();

        let nodes = grid.nodes();
        let weights = grid.weights();
        let mut out = vec![T::zero(); n];
        out.par_iter_mut().enumerate().for_each(|(i, oi)| {
            let vi = nodes[i];
            let mut gain = T::zero();
            for j in 0..n {
                let uj = nodes[j];
                let pref = weights[j] * self.sqrt_mu[j];
                let rel = [vi[0] - uj[0], vi[1] - uj[1], vi[2] - uj[2]];
                let mut acc = T::zero();
                for (omega, w_ang) in &self.omegas {
                    let zeta = rel[0] * omega[0] + rel[1] * omega[1] + rel[2] * omega[2];
                    let b = zeta.abs();
                    if b == T::zero() {
                        continue;
                    }
                    let up = [uj[0] + zeta * omega[0], uj[1] + zeta * omega[1], uj[2] + zeta * omega[2]];
                    let vp = [vi[0] - zeta * omega[0], vi[1] - zeta * omega[1], vi[2] - zeta * omega[2]];
                    let fu = self.interp(f, up);
                    if fu == T::zero() {
                        continue;
                    }
                    let gv = self.interp(g, vp);
                    acc += *w_ang * b * fu * gv;
                }
                gain += pref * acc;
            }
            *oi = gain - g[i] * lossf[i];
        });
        out
    }

    /// Operator of record: raw quadrature projected onto `N^perp`.
    pub fn apply(&self, op: &OperatorSet<T>, f: &[T], g: &[T]) -> Vec<T> {
        let mut raw = self.apply_raw(op.grid(), f, g);
        op.project_out_p(&mut raw);
        raw
    }

    /// Applies `Gamma(f, f)` column-wise to a field; columns whose weighted
    /// sup falls below `skip_below` (relative to the field maximum) are left
    /// zero.
    pub fn apply_field(
        &self,
        op: &OperatorSet<T>,
        field: &Array2<T>,
        skip_below: T,
    ) -> Result<Array2<T>> {
        if field.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gamma input field"));
        }
        let n_x = field.ncols();
        let col_sup: Vec<T> = (0..n_x)
            .map(|i| field.column(i).iter().fold(T::zero(), |m, &x| m.max(x.abs())))
            .collect();
        let global = col_sup.iter().fold(T::zero(), |m, &x| m.max(x));
        let cutoff = skip_below * global;

        let cols: Vec<Vec<T>> = (0..n_x)
            .into_par_iter()
            .map(|i| {
                if col_sup[i] <= cutoff {
                    return vec![T::zero(); field.nrows()];
                }
                let f = field.column(i).to_vec();
                self.apply(op, &f, &f)
            })
            .collect();
        let mut out = Array2::<T>::zeros((field.nrows(), n_x));
        for (i, col) in cols.into_iter().enumerate() {
            for (j, x) in col.into_iter().enumerate() {
                out[(j, i)] = x;
            }
        }
        Ok(out)
    }
}
