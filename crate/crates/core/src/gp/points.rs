use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Row-major point set; row `i` is one input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn from_rows(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            data.extend(row.iter());
        }
        Self { dim: m.ncols(), data }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }

    /// Distances from `x` to every row.
    pub fn distances_to(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dist(self.row(i), x)).collect()
    }

    /// Pairwise distance matrix `r_ij = ‖a_i − b_j‖`.
    pub fn cross_distances(&self, other: &Points) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), other.len(), |i, j| dist(self.row(i), other.row(j)))
    }
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}
