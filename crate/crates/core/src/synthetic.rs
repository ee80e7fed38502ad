//! Self-contained synthetic datasets.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::Result;
use crate::points::PointSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `x ~ U[-1,1]²`, `y = cos(π x₁)·x₂ + 0.05·ε`.
    Square,
    /// Two interleaved half circles with Gaussian jitter, labels ±1.
    Moons,
}

impl SyntheticKind {
    pub fn task(self) -> Task {
        match self {
            SyntheticKind::Square => Task::Regression,
            SyntheticKind::Moons => Task::Classification,
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            SyntheticKind::Square => uniform_square_regression(n, 0.05, seed),
            SyntheticKind::Moons => two_moons(n, 0.15, seed),
        }
    }
}

pub fn uniform_square_regression(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng::prng(seed, &[1]);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-1.0..=1.0);
        let b: f64 = rng.random_range(-1.0..=1.0);
        let e: f64 = rng.sample(StandardNormal);
        x.extend([a, b]);
        y.push((PI * a).cos() * b + noise * e);
    }
    Dataset::new(PointSet::new(x, 2)?, y, Task::Regression)
}

pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng::prng(seed, &[2]);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t: f64 = rng.random_range(0.0..=PI);
        let (a, b, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 1.0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), -1.0)
        };
        let ea: f64 = rng.sample(StandardNormal);
        let eb: f64 = rng.sample(StandardNormal);
        x.extend([a + noise * ea, b + noise * eb]);
        y.push(label);
    }
    Dataset::new(PointSet::new(x, 2)?, y, Task::Classification)
}

/// `n` points uniform on `[-1, 1]^d`.
pub fn uniform_cube(n: usize, d: usize, seed: u64) -> PointSet {
    let mut rng = rng::prng(seed, &[3]);
    let data = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    PointSet::new(data, d).expect("d > 0")
}

/// `n` points uniform on the segment from `a` to `b`.
pub fn uniform_segment(n: usize, a: &[f64], b: &[f64], seed: u64) -> PointSet {
    let mut rng = rng::prng(seed, &[4]);
    let mut data = Vec::with_capacity(n * a.len());
    for _ in 0..n {
        let t: f64 = rng.random_range(0.0..=1.0);
        data.extend(a.iter().zip(b).map(|(u, v)| u + t * (v - u)));
    }
    PointSet::new(data, a.len()).expect("d > 0")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_shaped() {
        let a = uniform_square_regression(50, 0.05, 3).unwrap();
        assert_eq!(a, uniform_square_regression(50, 0.05, 3).unwrap());
        assert_eq!((a.len(), a.dim()), (50, 2));
        let m = two_moons(40, 0.1, 1).unwrap();
        assert_eq!(m.labels().iter().filter(|&&y| y > 0.0).count(), 20);
        let s = uniform_segment(10, &[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], 0);
        assert!(s.rows().all(|r| (r[1] - 2.0 * r[0]).abs() < 1e-12));
    }
}
