//! Farthest-first traversal and Voronoi partitions.
//!
//! Cells and centers are 0-based. All nearest-center decisions compare
//! squared Euclidean distances exactly and resolve ties in favour of the
//! smaller center index, both when partitioning training data and when
//! routing new points at prediction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{squared_distance, PointSet};

/// Centers chosen by farthest-first traversal, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FftCenters {
    /// Indices into the source point set.
    pub centers: Vec<usize>,
    /// `radii[k]` is the distance of the `k`-th center to the centers chosen
    /// before it; `radii[0]` is `+∞`. Equivalently `radii[k]` is the covering
    /// radius of the first `k` centers.
    pub radii: Vec<f64>,
}

/// Greedy farthest-first traversal starting from the first point.
///
/// Each step adds the non-center point with maximum distance to the current
/// centers, taking the smallest index on ties. Runs in `O(m·n·d)`.
pub fn fft_centers(points: &PointSet, m: usize) -> Result<FftCenters> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "number of centers m = {m} must lie in 1..={n}"
        )));
    }
    let mut centers = Vec::with_capacity(m);
    let mut radii = Vec::with_capacity(m);
    let mut is_center = vec![false; n];
    let mut nearest: Vec<f64> = points
        .rows()
        .map(|r| squared_distance(r, points.row(0)))
        .collect();
    centers.push(0);
    radii.push(f64::INFINITY);
    is_center[0] = true;

    for _ in 1..m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in nearest.iter().enumerate() {
            if !is_center[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        centers.push(best);
        radii.push(best_d.sqrt());
        is_center[best] = true;
        let c = points.row(best);
        for (i, d) in nearest.iter_mut().enumerate() {
            let t = squared_distance(points.row(i), c);
            if t < *d {
                *d = t;
            }
        }
    }
    Ok(FftCenters { centers, radii })
}

/// Index of the nearest center (smallest index on ties).
#[inline]
pub fn nearest_center(x: &[f64], centers: &PointSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.rows().enumerate() {
        let d = squared_distance(x, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn voronoi_assign(points: &PointSet, centers: &PointSet) -> Vec<usize> {
    assert!(!centers.is_empty(), "voronoi_assign needs at least one center");
    points.rows().map(|x| nearest_center(x, centers)).collect()
}

/// `max_i min_j ‖x_i − c_j‖` for centers given as point indices.
pub fn kcenter_radius(points: &PointSet, centers: &[usize]) -> f64 {
    assert!(!centers.is_empty(), "kcenter_radius needs at least one center");
    points
        .rows()
        .map(|x| {
            centers
                .iter()
                .map(|&c| squared_distance(x, points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// A farthest-first Voronoi partition of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub centers: Vec<usize>,
    pub center_points: PointSet,
    pub assignment: Vec<usize>,
    pub radii: Vec<f64>,
}

impl Partition {
    /// Runs FFT for `m` centers and assigns every point to its cell.
    ///
    /// If the data has fewer than `m` distinct locations the traversal would
    /// start picking duplicates of existing centers, which produces empty
    /// cells; those trailing zero-radius centers are dropped, so
    /// [`Partition::num_cells`] may be smaller than `m`.
    pub fn build(points: &PointSet, m: usize) -> Result<Self> {
        let FftCenters {
            mut centers,
            mut radii,
        } = fft_centers(points, m)?;
        if let Some(k) = radii.iter().position(|&r| r == 0.0) {
            centers.truncate(k);
            radii.truncate(k);
        }
        let center_points = points.select(&centers);
        let assignment = voronoi_assign(points, &center_points);
        Ok(Self {
            centers,
            center_points,
            assignment,
            radii,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.centers.len()
    }

    /// Point indices of each cell, in ascending order.
    pub fn cell_members(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.num_cells()];
        for (i, &j) in self.assignment.iter().enumerate() {
            cells[j].push(i);
        }
        cells
    }
}

/// Greedy upper-bound estimates of the entropy numbers `ε_m`.
///
/// For each requested `m`, reports the covering radius of the first `m`
/// farthest-first centers. This over-estimates the optimal `ε_m` by at most
/// a factor of two.
pub fn entropy_numbers(points: &PointSet, m_values: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = points.len();
    let Some(&max_m) = m_values.iter().max() else {
        return Ok(Vec::new());
    };
    if m_values.contains(&0) || max_m > n {
        return Err(Error::invalid(format!("entropy numbers need 1 <= m <= n = {n}")));
    }
    let fft = fft_centers(points, (max_m + 1).min(n))?;
    Ok(m_values
        .iter()
        .map(|&m| (m, if m < n { fft.radii[m] } else { 0.0 }))
        .collect())
}

/// Result of [`estimate_dimension`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub dimension: f64,
    pub slope: f64,
    /// `(m, ε_m)` pairs used in the fit.
    pub curve: Vec<(usize, f64)>,
}

pub const MIN_POINTS_FOR_DIMENSION: usize = 64;

/// Powers of two in `[16, n/16]`, or in `[2, n/4]` when that window holds
/// fewer than three values.
pub fn dimension_grid(n: usize) -> Vec<usize> {
    let pow2 = |lo: usize, hi: usize| {
        std::iter::successors(Some(lo), |&m| Some(m * 2))
            .take_while(|&m| m <= hi)
            .collect::<Vec<_>>()
    };
    let grid = pow2(16, n / 16);
    if grid.len() >= 3 {
        grid
    } else {
        pow2(2, n / 4)
    }
}

/// Fits `log ε_m ≈ c + s·log m` by least squares over [`dimension_grid`]
/// and returns `-1/s` as the scaling dimension.
pub fn estimate_dimension(points: &PointSet) -> Result<DimensionEstimate> {
    let n = points.len();
    if n < MIN_POINTS_FOR_DIMENSION {
        return Err(Error::InsufficientPoints {
            needed: MIN_POINTS_FOR_DIMENSION,
            got: n,
        });
    }
    let curve = entropy_numbers(points, &dimension_grid(n))?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|&(m, e)| ((m as f64).ln(), e.ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::ZeroDiameter);
    }
    let slope = ls_slope(&xs, &ys);
    if slope.is_nan() || slope >= 0.0 {
        return Err(Error::ZeroDiameter);
    }
    Ok(DimensionEstimate {
        dimension: -1.0 / slope,
        slope,
        curve,
    })
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
