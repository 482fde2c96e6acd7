//! Kinetic field values on the velocity x slab tensor grid.

use ndarray::Array2;

use crate::scalar::Real;

/// Values `f(x, v)` stored as an `n_v x n_x` matrix (one column per slab
/// node, wall traces in the first and last column).
#[derive(Debug, Clone)]
pub struct KineticField<T> {
    pub data: Array2<T>,
}

impl<T: Real> KineticField<T> {
    pub fn zeros(n_v: usize, n_x: usize) -> Self {
        Self { data: Array2::zeros((n_v, n_x)) }
    }

    pub fn from_fn(n_v: usize, xs: &[T], f: impl Fn(usize, T) -> T) -> Self {
        let mut data = Array2::zeros((n_v, xs.len()));
        for j in 0..n_v {
            for (i, &x) in xs.iter().enumerate() {
                data[(j, i)] = f(j, x);
            }
        }
        Self { data }
    }

    pub fn n_v(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, i: usize) -> Vec<T> {
        self.data.column(i).to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest `|w(v) f(x, v)|` over all nodes.
    pub fn sup_w(&self, w: &[T]) -> T {
        let mut best = T::zero();
        for (row, &wj) in self.data.rows().into_iter().zip(w) {
            for &x in row.iter() {
                best = best.max((wj * x).abs());
            }
        }
        best
    }

    /// Per-slab-node profile of `sup_v |w(v) f(x, v)|`.
    pub fn sup_w_profile(&self, w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_x()];
        for (row, &wj) in self.data.rows().into_iter().zip(w) {
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o = o.max((wj * x).abs());
            }
        }
        out
    }

    /// Largest weighted difference `sup |w (self - other)|` over a column
    /// range (used by the slab-doubling discrepancy).
    pub fn sup_w_diff(&self, other: &Self, w: &[T], cols: std::ops::Range<usize>) -> T {
        let mut best = T::zero();
        for ((row_a, row_b), &wj) in
            self.data.rows().into_iter().zip(other.data.rows()).zip(w)
        {
            for i in cols.clone() {
                best = best.max((wj * (row_a[i] - row_b[i])).abs());
            }
        }
        best
    }

    pub fn axpy(&mut self, alpha: T, other: &Self) {
        self.data.zip_mut_with(&other.data, |a, &b| *a += alpha * b);
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.map_inplace(|a| *a *= alpha);
    }
}
