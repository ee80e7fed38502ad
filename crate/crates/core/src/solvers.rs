//! Regularized empirical risk minimization on one cell.
//!
//! Both solvers minimize `λ‖f‖²_H + (1/n) Σ L(y_i, f(x_i))` over the
//! Gaussian RKHS, with `f = Σ α_i k(x_i, ·)`.
//!
//! * Least squares: setting the gradient in `α` to zero gives
//!   `(K + nλI) α = y`.
//! * Hinge: with slack variables and no offset term the dual is
//!   `max Σ a_i − ½ Σ a_i a_k y_i y_k K_ik` subject to `0 ≤ a_i ≤ 1/(2λn)`,
//!   and `α_i = a_i y_i`. It is solved by cyclic coordinate ascent over a
//!   freshly shuffled order on every pass.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, GaussianKernel, Kernel};
use crate::points::PointSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    LeastSquares,
    Hinge,
}

impl Loss {
    #[inline]
    pub fn eval(self, y: f64, t: f64) -> f64 {
        match self {
            Loss::LeastSquares => (y - t) * (y - t),
            Loss::Hinge => (1.0 - y * t).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Cholesky up to [`SolverConfig::direct_limit`] points, conjugate gradient above.
    Auto,
    CholeskyDirect,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kkt_tolerance: f64,
    pub max_passes: usize,
    pub linear_solver: LinearSolver,
    /// Relative residual target `‖(K + nλI)α − y‖ / ‖y‖`.
    pub cg_tolerance: f64,
    pub direct_limit: usize,
    /// Seeds the coordinate order of the hinge solver.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tolerance: 1e-6,
            max_passes: 10_000,
            linear_solver: LinearSolver::Auto,
            cg_tolerance: 1e-9,
            direct_limit: 1024,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0 && self.cg_tolerance > 0.0) || self.max_passes == 0 {
            return Err(Error::invalid("solver tolerances and max_passes must be positive"));
        }
        Ok(())
    }
}

/// A trained decision function `f(x) = Σ α_i k_γ(x_i, x)` on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub support: PointSet,
    pub kernel: GaussianKernel,
    pub effective_lambda: f64,
    pub loss: Loss,
    pub clip_bound: f64,
}

impl DualSolution {
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        self.support
            .rows()
            .zip(&self.alphas)
            .map(|(s, a)| a * self.kernel.eval(s, x))
            .sum()
    }

    /// Decision value clipped to `[-M, M]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        clip(self.decision_value(x), self.clip_bound)
    }

    /// `‖f‖²_H = αᵀ K α`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let k = gram_matrix(&self.kernel, &self.support);
        let a = DVector::from_column_slice(&self.alphas);
        a.dot(&(&k * &a))
    }

    /// `λ‖f‖² + (1/n) Σ L(y_i, f(x_i))` on the training cell.
    pub fn objective(&self, labels: &[f64]) -> f64 {
        let k = gram_matrix(&self.kernel, &self.support);
        regularized_objective(self.loss, &k, &self.alphas, labels, self.effective_lambda)
    }
}

/// `λ αᵀKα + (1/n) Σ L(y_i, (Kα)_i)` for a representer expansion `α`.
pub fn regularized_objective(loss: Loss, gram: &DMatrix<f64>, alphas: &[f64], labels: &[f64], lambda: f64) -> f64 {
    let a = DVector::from_column_slice(alphas);
    let f = gram * &a;
    let risk = labels
        .iter()
        .zip(f.iter())
        .map(|(&y, &t)| loss.eval(y, t))
        .sum::<f64>()
        / labels.len() as f64;
    lambda * a.dot(&f) + risk
}

fn check_inputs(points: &PointSet, labels: &[f64], lambda: f64) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("cannot train on an empty cell"));
    }
    if points.len() != labels.len() {
        return Err(Error::invalid("points and labels differ in length"));
    }
    if !points.all_finite() || labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("regularizer must be positive, got {lambda}")));
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Kernel ridge regression on one cell.
pub fn solve_krr(points: &PointSet, labels: &[f64], gamma: f64, lambda: f64, cfg: &SolverConfig) -> Result<DualSolution> {
    check_inputs(points, labels, lambda)?;
    cfg.validate()?;
    let kernel = GaussianKernel::new(gamma)?;
    let n = points.len();
    let mut a = gram_matrix(&kernel, points);
    let ridge = n as f64 * lambda;
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let y = DVector::from_column_slice(labels);
    let alphas = solve_spd(&a, &y, cfg)?;
    Ok(DualSolution {
        alphas: alphas.as_slice().to_vec(),
        support: points.clone(),
        kernel,
        effective_lambda: lambda,
        loss: Loss::LeastSquares,
        clip_bound: max_abs(labels).max(f64::MIN_POSITIVE),
    })
}

/// Solves `A x = b` for symmetric positive definite `A` to relative
/// residual `cfg.cg_tolerance`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DVector::zeros(b.len()));
    }
    let target = cfg.cg_tolerance * b_norm;
    let direct = match cfg.linear_solver {
        LinearSolver::Auto => b.len() <= cfg.direct_limit,
        LinearSolver::CholeskyDirect => true,
        LinearSolver::ConjugateGradient => false,
    };
    let mut x = DVector::zeros(b.len());
    if direct {
        if let Some(chol) = a.clone().cholesky() {
            x = chol.solve(b);
            // A few rounds of iterative refinement recover the digits lost
            // to ill-conditioning at small ridges.
            for _ in 0..3 {
                let r = b - a * &x;
                if r.norm() <= target {
                    return Ok(x);
                }
                x += chol.solve(&r);
            }
            if (b - a * &x).norm() <= target {
                return Ok(x);
            }
        }
        log::debug!("direct solve missed the residual target, continuing with CG");
    }
    conjugate_gradient(a, b, x, target, cfg.max_passes)
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, mut x: DVector<f64>, target: f64, max_iter: usize) -> Result<DVector<f64>> {
    let mut r = b - a * &x;
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        let ap = a * &p;
        let step = rr / p.dot(&ap);
        x.axpy(step, &p, 1.0);
        // Recompute the true residual now and then to stop drift.
        if it % 50 == 49 {
            r = b - a * &x;
        } else {
            r.axpy(-step, &ap, 1.0);
        }
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    let res = (b - a * &x).norm();
    if res <= target {
        Ok(x)
    } else {
        Err(Error::NotConverged {
            what: "conjugate gradient residual",
            value: res,
        })
    }
}

/// Bias-free hinge-loss SVM on one cell.
pub fn solve_hinge_svm(points: &PointSet, labels: &[f64], gamma: f64, lambda: f64, cfg: &SolverConfig) -> Result<DualSolution> {
    check_inputs(points, labels, lambda)?;
    cfg.validate()?;
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("hinge loss needs labels in {-1, +1}"));
    }
    let kernel = GaussianKernel::new(gamma)?;
    let gram = gram_matrix(&kernel, points);
    let n = points.len();
    let upper = 1.0 / (2.0 * lambda * n as f64);
    let (a, _) = hinge_dual_cd(&gram, labels, upper, cfg)?;
    Ok(DualSolution {
        alphas: a.iter().zip(labels).map(|(a, y)| a * y).collect(),
        support: points.clone(),
        kernel,
        effective_lambda: lambda,
        loss: Loss::Hinge,
        clip_bound: 1.0,
    })
}

/// Largest violation of the box-constrained KKT conditions, given the
/// dual gradient `g_i = 1 − y_i f(x_i)`.
pub fn kkt_violation(a: &[f64], grad: &[f64], upper: f64) -> f64 {
    a.iter()
        .zip(grad)
        .map(|(&ai, &g)| {
            if ai <= 0.0 {
                g.max(0.0)
            } else if ai >= upper {
                (-g).max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Coordinate ascent on the hinge dual. Returns the dual variables and the
/// final KKT violation.
fn hinge_dual_cd(gram: &DMatrix<f64>, labels: &[f64], upper: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, f64)> {
    let n = labels.len();
    let mut a = vec![0.0; n];
    // f[i] = Σ_k a_k y_k K_ik
    let mut f = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::prng(cfg.seed, &[0x41_6e6e]);
    let grad = |f: &[f64]| -> Vec<f64> {
        labels.iter().zip(f).map(|(y, fi)| 1.0 - y * fi).collect()
    };
    let mut violation = kkt_violation(&a, &grad(&f), upper);
    let mut last_checkpoint = f64::INFINITY;
    for pass in 0..cfg.max_passes {
        if violation <= cfg.kkt_tolerance {
            return Ok((a, violation));
        }
        order.shuffle(&mut rng);
        for &i in &order {
            let qii = gram[(i, i)];
            if qii <= 0.0 {
                continue;
            }
            let g = 1.0 - labels[i] * f[i];
            let next = (a[i] + g / qii).clamp(0.0, upper);
            let delta = next - a[i];
            if delta != 0.0 {
                a[i] = next;
                let s = delta * labels[i];
                for (fk, kk) in f.iter_mut().zip(gram.column(i).iter()) {
                    *fk += s * kk;
                }
            }
        }
        if pass % 64 == 63 {
            let av = DVector::from_iterator(n, a.iter().zip(labels).map(|(a, y)| a * y));
            f = (gram * av).as_slice().to_vec();
        }
        violation = kkt_violation(&a, &grad(&f), upper);
        // Coordinate steps crawl on ill-conditioned faces. When progress
        // between exponentially spaced checkpoints stalls, jump to the
        // face optimum.
        let checkpoint = pass >= 31 && (pass + 1).is_power_of_two();
        let stalled = violation > 0.1 * last_checkpoint;
        if checkpoint {
            last_checkpoint = violation;
        }
        if checkpoint && stalled && violation > cfg.kkt_tolerance {
            for _ in 0..POLISH_ROUNDS {
                match polish_face(gram, labels, &a, &f, upper, cfg.kkt_tolerance) {
                    Some((a_new, f_new)) => {
                        a = a_new;
                        f = f_new;
                        violation = kkt_violation(&a, &grad(&f), upper);
                        if violation <= cfg.kkt_tolerance {
                            break;
                        }
                    }
                    None => break,
                }
            }
        }
    }
    if violation <= cfg.kkt_tolerance {
        Ok((a, violation))
    } else {
        Err(Error::NotConverged {
            what: "hinge dual KKT violation",
            value: violation,
        })
    }
}

const POLISH_ROUNDS: usize = 8;
// Largest face handled by the dense active-set step.
const POLISH_LIMIT: usize = 512;

fn hinge_dual_value(a: &[f64], f: &[f64], labels: &[f64]) -> f64 {
    a.iter()
        .zip(f)
        .zip(labels)
        .map(|((a, f), y)| a - 0.5 * a * y * f)
        .sum()
}

/// Active-set ascent on the face of currently free coordinates. Each round
/// takes a Newton step on the curved part of the face plus a gradient step
/// on its flat part, stopping at the first bound it meets; the blocking
/// coordinate is then pinned. Returns the new point if the dual rose.
fn polish_face(
    gram: &DMatrix<f64>,
    labels: &[f64],
    a: &[f64],
    f: &[f64],
    upper: f64,
    tol: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = a.len();
    let mut work: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0 && a[i] < upper).collect();
    if work.len() > POLISH_LIMIT {
        return None;
    }
    let start = hinge_dual_value(a, f, labels);
    let mut a = a.to_vec();
    let mut f = f.to_vec();
    let mut blocked_only = false;
    for _ in 0..4 * n.min(POLISH_LIMIT) {
        if work.is_empty() || blocked_only {
            // Face optimal: release the worst bound violator, if any.
            blocked_only = false;
            let entering = (0..n)
                .filter(|i| !work.contains(i))
                .map(|i| {
                    let g = 1.0 - labels[i] * f[i];
                    let v = if a[i] <= 0.0 { g } else { -g };
                    (v, i)
                })
                .filter(|&(v, _)| v > tol)
                .max_by(|x, y| x.0.total_cmp(&y.0));
            match entering {
                Some((_, i)) if work.len() < POLISH_LIMIT => work.push(i),
                _ => break,
            }
        }
        let m = work.len();
        let q = DMatrix::from_fn(m, m, |r, c| {
            let (i, j) = (work[r], work[c]);
            labels[i] * labels[j] * gram[(i, j)]
        });
        let g = DVector::from_fn(m, |r, _| 1.0 - labels[work[r]] * f[work[r]]);
        let eig = q.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
        let coeffs = eig.eigenvectors.transpose() * &g;
        let scaled = DVector::from_fn(m, |k, _| {
            let v = eig.eigenvalues[k];
            if v > 1e-10 * top {
                coeffs[k] / v
            } else {
                coeffs[k]
            }
        });
        let dir = &eig.eigenvectors * scaled;
        let slope = g.dot(&dir);
        if slope <= 0.0 {
            blocked_only = true;
            continue;
        }
        let curvature = dir.dot(&(&q * &dir));
        let t_opt = if curvature > 0.0 { slope / curvature } else { f64::INFINITY };
        let mut t = t_opt;
        let mut blocking = None;
        for (r, &i) in work.iter().enumerate() {
            let limit_t = if dir[r] > 0.0 {
                (upper - a[i]) / dir[r]
            } else if dir[r] < 0.0 {
                -a[i] / dir[r]
            } else {
                continue;
            };
            if limit_t < t {
                t = limit_t;
                blocking = Some(r);
            }
        }
        if !t.is_finite() {
            break;
        }
        for (r, &i) in work.iter().enumerate() {
            let next = (a[i] + t * dir[r]).clamp(0.0, upper);
            let s = (next - a[i]) * labels[i];
            a[i] = next;
            if s != 0.0 {
                for (fk, kk) in f.iter_mut().zip(gram.column(i).iter()) {
                    *fk += s * kk;
                }
            }
        }
        match blocking {
            Some(r) => {
                let i = work.remove(r);
                a[i] = if dir[r] > 0.0 { upper } else { 0.0 };
                work.retain(|&i| a[i] > 0.0 && a[i] < upper);
            }
            None => blocked_only = true,
        }
    }
    let av = DVector::from_iterator(n, a.iter().zip(labels).map(|(a, y)| a * y));
    let f = (gram * av).as_slice().to_vec();
    (hinge_dual_value(&a, &f, labels) > start).then_some((a, f))
}

/// `max(-M, min(M, t))`.
#[inline]
pub fn clip(t: f64, bound: f64) -> f64 {
    t.clamp(-bound, bound)
}

/// Mean loss over paired predictions and labels.
pub fn empirical_risk(loss: Loss, predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty());
    predictions
        .iter()
        .zip(labels)
        .map(|(&t, &y)| loss.eval(y, t))
        .sum::<f64>()
        / labels.len() as f64
}

/// Fraction of sign mismatches, with `sign(0) = +1`.
pub fn zero_one_error(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty());
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(&t, &y)| (if t >= 0.0 { 1.0 } else { -1.0 }) != y)
        .count();
    wrong as f64 / labels.len() as f64
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> f64 {
    empirical_risk(Loss::LeastSquares, predictions, labels).sqrt()
}
