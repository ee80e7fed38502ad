//! Reference implementations used as test oracles. Everything here is
//! written from the definitions and shares no code with the library beyond
//! the plain `PointSet` container.

#![allow(dead_code)]

use localkernel::PointSet;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSet {
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointSet::new(data, d).unwrap()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn gauss(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d = dist(x, y);
    (-(d * d) / (gamma * gamma)).exp()
}

pub fn gram(points: &PointSet, gamma: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| gauss(points.row(i), points.row(j), gamma))
}

/// Covering radius of `centers` over `points`.
pub fn radius(points: &PointSet, centers: &[usize]) -> f64 {
    (0..points.len())
        .map(|i| {
            centers
                .iter()
                .map(|&c| dist(points.row(i), points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Optimal k-center radius by enumerating every `m`-subset.
pub fn brute_force_kcenter(points: &PointSet, m: usize) -> f64 {
    fn rec(points: &PointSet, m: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == m {
            *best = best.min(radius(points, chosen));
            return;
        }
        for i in start..points.len() {
            chosen.push(i);
            rec(points, m, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(points, m, 0, &mut Vec::new(), &mut best);
    best
}

/// `λ αᵀKα + (1/n) Σ max(0, 1 − y_i (Kα)_i)`.
pub fn hinge_primal(k: &DMatrix<f64>, alphas: &[f64], labels: &[f64], lambda: f64) -> f64 {
    let a = DVector::from_column_slice(alphas);
    let f = k * &a;
    let risk = f
        .iter()
        .zip(labels)
        .map(|(f, y)| (1.0 - y * f).max(0.0))
        .sum::<f64>()
        / labels.len() as f64;
    lambda * a.dot(&f) + risk
}

/// `λ αᵀKα + (1/n) Σ (y_i − (Kα)_i)²`.
pub fn ls_primal(k: &DMatrix<f64>, alphas: &[f64], labels: &[f64], lambda: f64) -> f64 {
    let a = DVector::from_column_slice(alphas);
    let f = k * &a;
    let risk = f.iter().zip(labels).map(|(f, y)| (y - f).powi(2)).sum::<f64>() / labels.len() as f64;
    lambda * a.dot(&f) + risk
}

fn dual_value(q: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.sum() - 0.5 * a.dot(&(q * a))
}

/// Optimum of `max Σa − ½aᵀQa` over `0 ≤ a ≤ upper` by trying every
/// assignment of coordinates to {lower, free, upper}. `n ≤ 8`.
pub fn hinge_dual_brute_force(q: &DMatrix<f64>, upper: f64) -> DVector<f64> {
    let n = q.nrows();
    assert!(n <= 8);
    let mut best = DVector::zeros(n);
    let mut best_val = 0.0;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        if let Some(a) = solve_pattern(q, upper, &state) {
            let v = dual_value(q, &a);
            if v > best_val {
                best_val = v;
                best = a;
            }
        }
    }
    best
}

/// Stationary point on the face given by `state` (0 lower, 1 free, 2 upper)
/// if it is feasible.
fn solve_pattern(q: &DMatrix<f64>, upper: f64, state: &[u8]) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut a = DVector::from_fn(n, |i, _| if state[i] == 2 { upper } else { 0.0 });
    let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
    if free.is_empty() {
        return Some(a);
    }
    let qff = DMatrix::from_fn(free.len(), free.len(), |r, c| q[(free[r], free[c])]);
    let rhs = DVector::from_fn(free.len(), |r, _| {
        1.0 - (0..n).filter(|&j| state[j] == 2).map(|j| q[(free[r], j)] * upper).sum::<f64>()
    });
    let sol = qff.lu().solve(&rhs)?;
    let slack = 1e-12 * upper.max(1.0);
    for (r, &i) in free.iter().enumerate() {
        if sol[r] < -slack || sol[r] > upper + slack {
            return None;
        }
        a[i] = sol[r].clamp(0.0, upper);
    }
    Some(a)
}

/// Projected-gradient ascent on the box-constrained dual, finished by an
/// exact solve on the identified face.
pub fn hinge_dual_projected_gradient(q: &DMatrix<f64>, upper: f64) -> DVector<f64> {
    let n = q.nrows();
    let lipschitz = q.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut a = DVector::zeros(n);
    let mut y = a.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let g = DVector::from_element(n, 1.0) - q * &y;
        let next = (&y + step * g).map(|v| v.clamp(0.0, upper));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + ((t - 1.0) / t_next) * (&next - &a);
        a = next;
        t = t_next;
        if projected_gradient_norm(q, &a, upper) < 1e-13 {
            break;
        }
    }
    let tol = 1e-7 * upper;
    let state: Vec<u8> = a
        .iter()
        .map(|&v| if v <= tol { 0 } else if v >= upper - tol { 2 } else { 1 })
        .collect();
    match solve_pattern(q, upper, &state) {
        Some(polished) if dual_value(q, &polished) >= dual_value(q, &a) => polished,
        _ => a,
    }
}

pub fn projected_gradient_norm(q: &DMatrix<f64>, a: &DVector<f64>, upper: f64) -> f64 {
    let g = DVector::from_element(a.len(), 1.0) - q * a;
    a.iter()
        .zip(g.iter())
        .map(|(&a, &g)| {
            if a <= 0.0 {
                g.max(0.0)
            } else if a >= upper {
                (-g).max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn label_outer(k: &DMatrix<f64>, labels: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| labels[i] * labels[j] * k[(i, j)])
}
