//! Discrete velocity space: reflection-symmetric tensor quadrature on which
//! all collision and transport operators act.
//!
//! The specular wall maps `v = (v1, v2, v3)` to `Rv = (v1, v2, -v3)`, so the
//! grid is built as a tensor product of per-axis rules whose node sets are
//! exactly (bitwise) symmetric, and the reflection is a pure index
//! permutation. An even node count per axis keeps `v3 = 0` off the grid, so
//! the grazing set never appears among discrete velocities.

use crate::scalar::{pairwise_dot, pairwise_sum, Real};
use crate::{Error, Result};
use sha2::{Digest, Sha256};

/// Per-axis quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadRule {
    /// Scaled Gauss-Hermite nodes; exact for polynomials times the Maxwellian.
    Hermite,
    /// Uniform trapezoid on `[-v_max, v_max]`.
    Uniform,
}

/// Parameters of the velocity grid.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec<T> {
    /// Velocity cutoff in thermal units. Node placement for the uniform rule;
    /// reporting cutoff for the Hermite rule (whose nodes follow the weight).
    pub v_max: T,
    /// Nodes per axis; must be even and at least 4.
    pub n_per_axis: usize,
    pub rule: QuadRule,
    /// Background drift `(u1, u2, 0)`; the third component is fixed to zero
    /// so that the Maxwellian is even in `v3` and specular-compatible.
    pub drift: [T; 3],
}

impl<T: Real> GridSpec<T> {
    pub fn new(v_max: T, n_per_axis: usize, rule: QuadRule, drift_12: [T; 2]) -> Self {
        Self { v_max, n_per_axis, rule, drift: [drift_12[0], drift_12[1], T::zero()] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > T::zero()) {
            return Err(Error::GridSpec(format!("v_max must be positive, got {}", self.v_max)));
        }
        if self.n_per_axis < 4 {
            return Err(Error::GridSpec(format!("n_per_axis must be >= 4, got {}", self.n_per_axis)));
        }
        if self.n_per_axis % 2 != 0 {
            return Err(Error::GridSpec(format!(
                "n_per_axis must be even so no node sits on the grazing plane v3 = 0, got {}",
                self.n_per_axis
            )));
        }
        if self.drift[2] != T::zero() {
            return Err(Error::GridSpec("drift must have zero third component".into()));
        }
        Ok(())
    }
}

/// Quadrature nodes/weights on the 3-D velocity space plus the specular
/// reflection permutation. Immutable after construction.
#[derive(Debug, Clone)]
pub struct VelocityGrid<T> {
    spec: GridSpec<T>,
    /// Per-axis node positions before the drift shift (shared by all axes).
    axis_base: Vec<T>,
    axis_weights: Vec<T>,
    nodes: Vec<[T; 3]>,
    weights: Vec<T>,
    reflect: Vec<usize>,
    hash: u64,
}

/// Builds the grid; rejects specs that violate the symmetry invariants.
pub fn build_grid<T: Real>(spec: &GridSpec<T>) -> Result<VelocityGrid<T>> {
    spec.validate()?;
    let n = spec.n_per_axis;
    let (axis_base, axis_weights) = match spec.rule {
        QuadRule::Hermite => hermite_axis::<T>(n),
        QuadRule::Uniform => uniform_axis::<T>(n, spec.v_max),
    };

    let total = n * n * n;
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut reflect = Vec::with_capacity(total);
    for i1 in 0..n {
        for i2 in 0..n {
            for i3 in 0..n {
                nodes.push([
                    spec.drift[0] + axis_base[i1],
                    spec.drift[1] + axis_base[i2],
                    axis_base[i3],
                ]);
                weights.push(axis_weights[i1] * axis_weights[i2] * axis_weights[i3]);
                reflect.push((i1 * n + i2) * n + (n - 1 - i3));
            }
        }
    }

    let hash = grid_hash(spec, &nodes, &weights);
    Ok(VelocityGrid { spec: *spec, axis_base, axis_weights, nodes, weights, reflect, hash })
}

impl<T: Real> VelocityGrid<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn nodes(&self) -> &[[T; 3]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [T; 3] {
        self.nodes[i]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Specular reflection as an index permutation: `reflect[i]` is the node
    /// with velocity `(v1, v2, -v3)`. It is an exact, weight-preserving
    /// involution by construction.
    pub fn reflect(&self) -> &[usize] {
        &self.reflect
    }

    pub fn drift(&self) -> [T; 3] {
        self.spec.drift
    }

    /// Digest of nodes + weights + spec; keys operator caches and field files.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn n_per_axis(&self) -> usize {
        self.spec.n_per_axis
    }

    /// Undrifted per-axis node positions (ascending).
    pub fn axis_base(&self) -> &[T] {
        &self.axis_base
    }

    pub fn axis_weights(&self) -> &[T] {
        &self.axis_weights
    }

    pub fn node_index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        let n = self.spec.n_per_axis;
        (i1 * n + i2) * n + i3
    }

    /// Index permutation mirroring one axis about the drift (axis 0/1) or
    /// zero (axis 2). Used by parity checks.
    pub fn mirror_axis(&self, axis: usize) -> Vec<usize> {
        let n = self.spec.n_per_axis;
        let mut perm = Vec::with_capacity(self.len());
        for i1 in 0..n {
            for i2 in 0..n {
                for i3 in 0..n {
                    let j = match axis {
                        0 => ((n - 1 - i1) * n + i2) * n + i3,
                        1 => (i1 * n + (n - 1 - i2)) * n + i3,
                        _ => (i1 * n + i2) * n + (n - 1 - i3),
                    };
                    perm.push(j);
                }
            }
        }
        perm
    }

    /// Quadrature of per-node samples: `sum_i w_i s_i` with a fixed pairwise
    /// summation order.
    pub fn quad(&self, samples: &[T]) -> Result<T> {
        if samples.len() != self.len() {
            return Err(Error::SampleLength { got: samples.len(), expect: self.len() });
        }
        Ok(pairwise_dot(&self.weights, samples))
    }

    /// Quadrature inner product `sum_i w_i a_i b_i`.
    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        debug_assert_eq!(a.len(), self.len());
        debug_assert_eq!(b.len(), self.len());
        let prod: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
        pairwise_dot(&self.weights, &prod)
    }

    pub fn norm_quad(&self, a: &[T]) -> T {
        self.inner(a, a).sqrt()
    }

    /// Analytic Maxwellian mass outside the ball `|v - u| > v_max`
    /// (chi-square tail with three degrees of freedom). Reported as the
    /// truncation diagnostic for every run.
    pub fn gaussian_tail_mass(&self) -> T {
        let r = self.spec.v_max;
        let half = T::of(0.5);
        let inside = (r / T::of(std::f64::consts::SQRT_2)).erf()
            - (T::of(2.0) / T::pi()).sqrt() * r * (-half * r * r).exp();
        T::one() - inside
    }

    /// Per-axis half-widths of the quadrature cell around node `(i1,i2,i3)`,
    /// taken as half the distance to the nearest neighbours. Used to average
    /// the kernel singularity over the diagonal cell.
    pub fn cell_half_widths(&self, i: usize) -> [T; 3] {
        let n = self.spec.n_per_axis;
        let i3 = i % n;
        let i2 = (i / n) % n;
        let i1 = i / (n * n);
        let half = T::of(0.5);
        let hw = |k: usize| -> T {
            let lo = if k > 0 { (self.axis_base[k] - self.axis_base[k - 1]) * half } else { T::zero() };
            let hi = if k + 1 < n { (self.axis_base[k + 1] - self.axis_base[k]) * half } else { T::zero() };
            if lo == T::zero() {
                hi
            } else if hi == T::zero() {
                lo
            } else {
                (lo + hi) * half
            }
        };
        [hw(i1), hw(i2), hw(i3)]
    }
}

/// Physicists' Gauss-Hermite rule (weight `exp(-x^2)`), transformed so that
/// plain `dv` integrals of Maxwellian-weighted integrands are exact for
/// polynomials: node `v = sqrt(2) x`, weight `sqrt(2) w exp(x^2)`.
///
/// Positive roots are computed by Newton iteration in `f64` and mirrored, so
/// the axis is exactly symmetric.
fn hermite_axis<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let (x, w) = gauss_hermite_f64(n);
    let mut base = vec![T::zero(); n];
    let mut wt = vec![T::zero(); n];
    let sqrt2 = std::f64::consts::SQRT_2;
    let half = n / 2;
    for k in 0..half {
        // positive roots come out of gauss_hermite_f64 in ascending order
        let v = sqrt2 * x[k];
        let pw = sqrt2 * w[k] * x[k].mul_add(x[k], 0.0).exp();
        base[half + k] = T::of(v);
        base[half - 1 - k] = T::of(-v);
        wt[half + k] = T::of(pw);
        wt[half - 1 - k] = T::of(pw);
    }
    (base, wt)
}

/// Positive Hermite roots and weights for even `n` (ascending), weight
/// function `exp(-x^2)`.
fn gauss_hermite_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n % 2 == 0 && n >= 2);
    let m = n / 2;
    let mut roots = vec![0.0f64; m];
    let mut weights = vec![0.0f64; m];
    // descending root index i = 0 is the largest root
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => {
                let an = 2.0 * n as f64 + 1.0;
                an.sqrt() - 1.85575 * an.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * roots_desc(&roots, 0),
            3 => 1.91 * z - 0.91 * roots_desc(&roots, 1),
            _ => 2.0 * z - roots_desc(&roots, i - 2),
        };
        let mut pp = 0.0f64;
        for _ in 0..200 {
            let (p1, dp) = hermite_eval(n, z);
            pp = dp;
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 * (1.0 + z.abs()) {
                break;
            }
        }
        roots[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    roots.reverse();
    weights.reverse();
    (roots, weights)
}

fn roots_desc(roots: &[f64], i: usize) -> f64 {
    roots[i]
}

/// Orthonormal Hermite recurrence value and derivative at `z`.
fn hermite_eval(n: usize, z: f64) -> (f64, f64) {
    let pim4 = 0.751_125_544_464_942_9_f64; // pi^(-1/4)
    let mut p1 = pim4;
    let mut p2 = 0.0f64;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let fj = j as f64;
        p1 = z * (2.0 / fj).sqrt() * p2 - ((fj - 1.0) / fj).sqrt() * p3;
    }
    let dp = (2.0 * n as f64).sqrt() * p2;
    (p1, dp)
}

/// Uniform trapezoid rule on `[-v_max, v_max]`, endpoints included; the even
/// node count keeps zero off the axis.
fn uniform_axis<T: Real>(n: usize, v_max: T) -> (Vec<T>, Vec<T>) {
    let h = v_max * T::of(2.0) / T::of((n - 1) as f64);
    let mut base = vec![T::zero(); n];
    let mut wt = vec![T::zero(); n];
    let half = n / 2;
    for k in 0..half {
        let v = v_max - T::of(k as f64) * h;
        base[n - 1 - k] = v;
        base[k] = -v;
        let w = if k == 0 { h * T::of(0.5) } else { h };
        wt[n - 1 - k] = w;
        wt[k] = w;
    }
    (base, wt)
}

/// Gauss-Legendre nodes/weights on `[-1, 1]`, computed in `f64` by Newton
/// iteration on the Legendre recurrence. Used by the angular rule of the
/// bilinear collision quadrature and by test oracles.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0f64;
            let mut p2 = 0.0f64;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let fj = j as f64;
                p1 = ((2.0 * fj + 1.0) * z * p2 - fj * p3) / (fj + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[doc(hidden)]
pub mod test_support {
    pub use super::gauss_legendre;
}

fn grid_hash<T: Real>(spec: &GridSpec<T>, nodes: &[[T; 3]], weights: &[T]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update([match spec.rule {
        QuadRule::Hermite => 1u8,
        QuadRule::Uniform => 2u8,
    }]);
    hasher.update((spec.n_per_axis as u32).to_le_bytes());
    hasher.update(spec.v_max.f64().to_le_bytes());
    for d in spec.drift {
        hasher.update(d.f64().to_le_bytes());
    }
    for v in nodes {
        for c in v {
            hasher.update(c.f64().to_le_bytes());
        }
    }
    for w in weights {
        hasher.update(w.f64().to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// `sum w_i f(v_i)` convenience for analytic integrands.
pub fn quad_fn<T: Real>(grid: &VelocityGrid<T>, f: impl Fn([T; 3]) -> T) -> T {
    let samples: Vec<T> = grid.nodes().iter().map(|&v| f(v)).collect();
    pairwise_dot(grid.weights(), &samples)
}

/// `1 - sum w_i mu(v_i)`: discrete mass defect of the Maxwellian.
pub fn maxwellian_mass_defect<T: Real>(grid: &VelocityGrid<T>) -> T {
    let mu: Vec<T> = grid.nodes().iter().map(|&v| crate::operator::maxwellian(v, grid.drift())).collect();
    T::one() - pairwise_sum(&mu.iter().zip(grid.weights()).map(|(&m, &w)| m * w).collect::<Vec<_>>())
}
