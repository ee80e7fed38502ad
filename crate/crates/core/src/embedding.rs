//! Dimension-inflating embedding `Φ(x) = T·(x, sin⟨x, w_1⟩, …, sin⟨x, w_p⟩)`.
//!
//! The image of `Φ` is a rotated graph of a smooth map, so it keeps the
//! intrinsic dimension `d` of the source while living in `ℝ^{d+p}`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::points::{dot, PointSet};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub d: usize,
    pub p: usize,
    pub seed: u64,
    /// `p` frequency vectors of length `d`, entries in `[-π, π]`.
    pub frequencies: PointSet,
    /// `(d+p) × (d+p)` orthogonal matrix, row-major.
    pub rotation: Vec<f64>,
}

/// Haar-distributed orthogonal matrix: the Q factor of a standard normal
/// matrix with columns flipped so that R has a positive diagonal.
pub fn haar_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Samples frequencies and rotation from a ChaCha8 stream seeded by `seed`.
pub fn sample_embedding(d: usize, p: usize, seed: u64) -> Result<EmbeddingSpec> {
    if d == 0 {
        return Err(Error::invalid("source dimension must be positive"));
    }
    let mut rng = rng::prng(seed, &[0xe3b]);
    let w: Vec<f64> = (0..p * d).map(|_| rng.random_range(-PI..=PI)).collect();
    let frequencies = if p == 0 {
        PointSet::empty(d)
    } else {
        PointSet::new(w, d)?
    };
    let t = haar_orthogonal(d + p, &mut rng);
    let rotation = t.transpose().as_slice().to_vec();
    Ok(EmbeddingSpec {
        d,
        p,
        seed,
        frequencies,
        rotation,
    })
}

impl EmbeddingSpec {
    pub fn output_dim(&self) -> usize {
        self.d + self.p
    }

    pub fn rotation_matrix(&self) -> DMatrix<f64> {
        let n = self.output_dim();
        DMatrix::from_row_slice(n, n, &self.rotation)
    }

    /// Replaces the rotation, e.g. by the identity in tests.
    pub fn with_rotation(mut self, t: &DMatrix<f64>) -> Result<Self> {
        let n = self.output_dim();
        if t.nrows() != n || t.ncols() != n {
            return Err(Error::invalid(format!("rotation must be {n}×{n}")));
        }
        self.rotation = t.transpose().as_slice().to_vec();
        Ok(self)
    }

    /// `(x, φ(x))` before rotation.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d, "input dimension mismatch");
        let mut z = Vec::with_capacity(self.output_dim());
        z.extend_from_slice(x);
        z.extend(self.frequencies.rows().map(|w| dot(x, w).sin()));
        z
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let z = self.lift(x);
        self.rotation
            .chunks_exact(z.len())
            .map(|row| dot(row, &z))
            .collect()
    }

    pub fn embed_points(&self, x: &PointSet) -> Result<PointSet> {
        if x.dim() != self.d {
            return Err(Error::invalid(format!(
                "embedding expects dimension {}, got {}",
                self.d,
                x.dim()
            )));
        }
        let mut data = Vec::with_capacity(x.len() * self.output_dim());
        for r in x.rows() {
            data.extend(self.embed(r));
        }
        PointSet::new(data, self.output_dim())
    }

    pub fn embed_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        ds.with_features(self.embed_points(ds.features())?)
    }
}
