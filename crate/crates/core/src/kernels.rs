//! Gaussian and localized kernels, and Gram matrix assembly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::nearest_center;
use crate::points::{squared_distance, PointSet};

pub trait Kernel: Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

/// `k(x, y) = exp(-‖x − y‖² / γ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    gamma: f64,
}

impl GaussianKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Kernel for GaussianKernel {
    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-squared_distance(x, y) / (self.gamma * self.gamma)).exp()
    }
}

/// Sum over cells of `λ_j⁻¹ · 1_{A_j}(x) · k_{γ_j}(x, y) · 1_{A_j}(y)`, where
/// the cells `A_j` are the Voronoi cells of `centers`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedKernel {
    centers: PointSet,
    kernels: Vec<GaussianKernel>,
    lambdas: Vec<f64>,
}

impl LocalizedKernel {
    pub fn new(centers: PointSet, gammas: &[f64], lambdas: &[f64]) -> Result<Self> {
        let m = centers.len();
        if m == 0 || gammas.len() != m || lambdas.len() != m {
            return Err(Error::invalid(format!(
                "need one gamma and one lambda per center: {m} centers, {} gammas, {} lambdas",
                gammas.len(),
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambdas must be positive"));
        }
        let kernels = gammas
            .iter()
            .map(|&g| GaussianKernel::new(g))
            .collect::<Result<_>>()?;
        Ok(Self {
            centers,
            kernels,
            lambdas: lambdas.to_vec(),
        })
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        nearest_center(x, &self.centers)
    }
}

impl Kernel for LocalizedKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let j = self.cell_of(x);
        if j != self.cell_of(y) {
            return 0.0;
        }
        self.kernels[j].eval(x, y) / self.lambdas[j]
    }
}

const PARALLEL_ROWS: usize = 256;

/// Symmetric `n × n` matrix of kernel values. Only the upper triangle is
/// evaluated; the lower triangle is a mirror copy.
pub fn gram_matrix<K: Kernel + ?Sized>(ker: &K, points: &PointSet) -> DMatrix<f64> {
    let n = points.len();
    let row = |i: usize| -> Vec<f64> {
        let xi = points.row(i);
        (i..n).map(|k| ker.eval(xi, points.row(k))).collect()
    };
    let upper: Vec<Vec<f64>> = if n >= PARALLEL_ROWS {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    };
    let mut g = DMatrix::zeros(n, n);
    for (i, r) in upper.iter().enumerate() {
        for (off, &v) in r.iter().enumerate() {
            let k = i + off;
            g[(i, k)] = v;
            g[(k, i)] = v;
        }
    }
    g
}

/// `t × n` matrix with entry `(s, i) = k(query_s, x_i)`.
pub fn cross_matrix<K: Kernel + ?Sized>(ker: &K, queries: &PointSet, points: &PointSet) -> DMatrix<f64> {
    DMatrix::from_fn(queries.len(), points.len(), |s, i| {
        ker.eval(queries.row(s), points.row(i))
    })
}
