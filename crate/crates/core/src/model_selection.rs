//! Candidate grids and per-cell hyperparameter selection.
//!
//! Because the localized objective decouples over cells, selection runs
//! independently in every cell: `m·|Λ|·|Γ|` training runs rather than
//! `|Λ×Γ|^m`. Validation always scores the clipped predictor. Ties in
//! validation loss go to the smaller `λ`, then the smaller `γ`.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::local_model::{cell_config, clip_bound_for, loss_for, train_cell, CellPolicy, LocalModel};
use crate::partition::{nearest_center, Partition};
use crate::points::PointSet;
use crate::rng;
use crate::solvers::{clip, DualSolution, Loss, SolverConfig};

/// Finite candidate sets for bandwidths and regularizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    /// Sorted ascending, no duplicates.
    pub gammas: Vec<f64>,
    /// Sorted ascending, no duplicates.
    pub lambdas: Vec<f64>,
    /// Exponents `a` with `γ = n^{-a}` (empty for non-exponent grids).
    pub gamma_exponents: Vec<f64>,
    /// Exponents `b` with `λ = n^{-b}` (empty for non-exponent grids).
    pub lambda_exponents: Vec<f64>,
    pub n: f64,
    pub d: usize,
    pub sigma: f64,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl HyperGrid {
    /// An explicit grid. Values are sorted and deduplicated.
    pub fn from_values(gammas: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || lambdas.is_empty() {
            return Err(Error::invalid("grid needs at least one gamma and one lambda"));
        }
        if gammas.iter().chain(&lambdas).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("grid values must be positive and finite"));
        }
        Ok(Self {
            gammas: sorted_unique(gammas),
            lambdas: sorted_unique(lambdas),
            gamma_exponents: Vec::new(),
            lambda_exponents: Vec::new(),
            n: f64::NAN,
            d: 0,
            sigma: 0.0,
        })
    }

    /// `count` log-spaced values in each of the given closed ranges.
    pub fn geometric(gamma_range: (f64, f64), lambda_range: (f64, f64), count: usize) -> Result<Self> {
        Self::from_values(
            geomspace(gamma_range.0, gamma_range.1, count),
            geomspace(lambda_range.0, lambda_range.1, count),
        )
    }

    pub fn len(&self) -> usize {
        self.gammas.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(λ, γ)` pairs in tie-break order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.lambdas
            .iter()
            .flat_map(|&l| self.gammas.iter().map(move |&g| (l, g)))
            .collect()
    }

    /// `(max Λ, lower median Γ)`, used for cells without validation data.
    pub fn fallback_pair(&self) -> (f64, f64) {
        (
            *self.lambdas.last().expect("non-empty grid"),
            self.gammas[(self.gammas.len() - 1) / 2],
        )
    }
}

pub fn geomspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// A minimal `ε`-net of an interval containing its right endpoint `hi`.
///
/// Points descend from `hi` in steps of `2ε`. The last point is raised to
/// `lo + ε` if the lattice would place it lower, so the left end is covered
/// without leaving the interval. Each ball covers a length of `2ε`, and the
/// ball around `hi` only `ε` inside the interval, so no net with `hi` can
/// be smaller than `1 + ⌈(hi − lo − ε) / 2ε⌉`, which is the size produced.
pub fn descending_net(lo: f64, hi: f64, eps: f64) -> Vec<f64> {
    let len = hi - lo;
    if len <= eps {
        return vec![hi];
    }
    // Guard the ceiling against round-off when the ratio is an integer.
    let steps = ((len - eps) / (2.0 * eps) - 1e-9).ceil().max(1.0) as usize;
    let mut net: Vec<f64> = (0..steps).map(|k| hi - 2.0 * k as f64 * eps).collect();
    net.push((hi - 2.0 * steps as f64 * eps).max(lo + eps));
    net
}

/// The exponent nets and candidate sets used by the learning-rate results:
/// `A` is a `1/ln n`-net of `(0, 1]` containing 1, `B` a `1/ln n`-net of
/// `[σ+1, σ+d]` containing `σ+d`, `Γ = {n^{-a}}` and `Λ = {n^{-b}}`.
pub fn make_grids(n: f64, d: usize, sigma: f64) -> Result<HyperGrid> {
    if !(n.is_finite() && n.ln() > 2.0) {
        return Err(Error::invalid(format!("need ln n > 2, got n = {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::invalid(format!("sigma must lie in [0, 1), got {sigma}")));
    }
    let eps = 1.0 / n.ln();
    let a = descending_net(0.0, 1.0, eps);
    let b = descending_net(sigma + 1.0, sigma + d as f64, eps);
    Ok(HyperGrid {
        gammas: sorted_unique(a.iter().map(|&a| n.powf(-a)).collect()),
        lambdas: sorted_unique(b.iter().map(|&b| n.powf(-b)).collect()),
        gamma_exponents: a,
        lambda_exponents: b,
        n,
        d,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cell: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// NaN when the cell had nothing to validate on.
    pub validation_loss: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// `(λ_j, γ_j)` per cell.
    pub chosen: Vec<(f64, f64)>,
    pub trace: Vec<TraceEntry>,
    /// Cells that had no validation data and used [`HyperGrid::fallback_pair`].
    pub fallback_cells: Vec<usize>,
    /// Cells with fewer points than requested folds.
    pub reduced_fold_cells: Vec<usize>,
    pub training_runs: usize,
    pub model: LocalModel,
}

impl SelectionResult {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cell", "lambda", "gamma", "validation_loss", "chosen"])?;
        for t in &self.trace {
            wtr.write_record([
                t.cell.to_string(),
                t.lambda.to_string(),
                t.gamma.to_string(),
                t.validation_loss.to_string(),
                t.chosen.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Mean clipped loss of `model` on the given points.
fn validation_loss(model: &DualSolution, loss: Loss, bound: f64, x: &PointSet, y: &[f64]) -> f64 {
    let total: f64 = x
        .rows()
        .zip(y)
        .map(|(xi, &yi)| loss.eval(yi, clip(model.decision_value(xi), bound)))
        .sum();
    total / y.len() as f64
}

/// Index of the first strict minimum; NaN never wins.
fn argmin(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        match best {
            Some(b) if losses[b].partial_cmp(&l) != Some(Ordering::Greater) => {}
            _ => best = Some(i),
        }
    }
    best
}

struct CellOutcome {
    chosen: usize,
    losses: Vec<f64>,
    solution: DualSolution,
    fallback: bool,
    reduced_folds: bool,
}

fn assemble(partition: &Partition, grid: &HyperGrid, loss: Loss, bound: f64, outcomes: Vec<CellOutcome>, runs: usize) -> Result<SelectionResult> {
    let pairs = grid.pairs();
    let mut chosen = Vec::with_capacity(outcomes.len());
    let mut trace = Vec::with_capacity(outcomes.len() * pairs.len());
    let mut fallback_cells = Vec::new();
    let mut reduced_fold_cells = Vec::new();
    let mut cells = Vec::with_capacity(outcomes.len());
    for (j, o) in outcomes.into_iter().enumerate() {
        chosen.push(pairs[o.chosen]);
        for (c, (&(lambda, gamma), &l)) in pairs.iter().zip(&o.losses).enumerate() {
            trace.push(TraceEntry {
                cell: j,
                lambda,
                gamma,
                validation_loss: l,
                chosen: c == o.chosen,
            });
        }
        if o.fallback {
            fallback_cells.push(j);
        }
        if o.reduced_folds {
            reduced_fold_cells.push(j);
        }
        cells.push(o.solution);
    }
    let (lambdas, gammas) = chosen.iter().copied().unzip();
    let model = LocalModel::from_parts(
        partition.center_points.clone(),
        cells,
        lambdas,
        gammas,
        loss,
        bound,
    )?;
    Ok(SelectionResult {
        chosen,
        trace,
        fallback_cells,
        reduced_fold_cells,
        training_runs: runs,
        model,
    })
}

fn fallback_index(grid: &HyperGrid) -> usize {
    let fb = grid.fallback_pair();
    grid.pairs()
        .iter()
        .position(|&p| p == fb)
        .expect("fallback pair is on the grid")
}

/// Hold-out selection on a single shuffled split.
///
/// The data is shuffled with `seed`; the first `⌊n/2⌋ + 1` points train and
/// the rest validate. The partition is built from the training half, every
/// cell trains one model per grid pair on its training points and keeps the
/// pair with the lowest clipped validation loss over the validation points
/// routed to it. The returned model is the one trained on the training half.
pub fn train_validate(ds: &Dataset, policy: CellPolicy, grid: &HyperGrid, cfg: &SolverConfig, seed: u64) -> Result<SelectionResult> {
    let n = ds.len();
    if n < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: n });
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::prng(seed, &[0x7a11d]));
    let l = n / 2 + 1;
    let train = ds.subset(&order[..l]);
    let valid = ds.subset(&order[l..]);

    let partition = Partition::build(train.features(), policy.cells_for(l))?;
    let m = partition.num_cells();
    let train_members = partition.cell_members();
    let mut valid_members = vec![Vec::new(); m];
    for (i, x) in valid.features().rows().enumerate() {
        valid_members[nearest_center(x, &partition.center_points)].push(i);
    }

    let loss = loss_for(ds.task());
    let bound = clip_bound_for(&train);
    let pairs = grid.pairs();
    let runs = AtomicUsize::new(0);
    let fallback = fallback_index(grid);

    let tasks: Vec<(usize, usize)> = (0..m)
        .flat_map(|j| (0..pairs.len()).map(move |c| (j, c)))
        .collect();
    let results: Vec<Result<(f64, DualSolution)>> = tasks
        .par_iter()
        .map(|&(j, c)| {
            let (lambda, gamma) = pairs[c];
            let cell = train.subset(&train_members[j]);
            let lambda_eff = l as f64 * lambda / train_members[j].len() as f64;
            runs.fetch_add(1, AtomicOrdering::Relaxed);
            let sol = train_cell(loss, cell.features(), cell.labels(), gamma, lambda_eff, &cell_config(cfg, j))
                .map_err(|e| e.in_cell(j))?;
            let vl = if valid_members[j].is_empty() {
                f64::NAN
            } else {
                let v = valid.subset(&valid_members[j]);
                validation_loss(&sol, loss, bound, v.features(), v.labels())
            };
            Ok((vl, sol))
        })
        .collect();

    let mut outcomes = Vec::with_capacity(m);
    let mut it = results.into_iter();
    for (j, members) in valid_members.iter().enumerate() {
        let mut losses = Vec::with_capacity(pairs.len());
        let mut sols = Vec::with_capacity(pairs.len());
        let mut first_err = None;
        for r in it.by_ref().take(pairs.len()) {
            match r {
                Ok((vl, s)) => {
                    losses.push(vl);
                    sols.push(Some(s));
                }
                Err(e) => {
                    log::warn!("{e}");
                    losses.push(f64::NAN);
                    sols.push(None);
                    first_err.get_or_insert(e);
                }
            }
        }
        let no_validation = members.is_empty();
        let pick = if no_validation {
            Some(fallback)
        } else {
            argmin(&losses)
        };
        let Some(pick) = pick.filter(|&p| sols[p].is_some()) else {
            return Err(first_err.unwrap_or_else(|| Error::invalid("no usable candidate").in_cell(j)));
        };
        outcomes.push(CellOutcome {
            chosen: pick,
            losses,
            solution: sols[pick].take().expect("checked above"),
            fallback: no_validation,
            reduced_folds: false,
        });
    }
    assemble(&partition, grid, loss, bound, outcomes, runs.into_inner())
}

/// Per-cell `k`-fold cross-validation followed by a refit.
///
/// The partition is built on all of `ds`. Inside each cell the points are
/// shuffled (seeded per cell) and dealt round-robin into `k` folds; cells
/// with fewer than `k` points use one fold per point. Each fold model uses
/// the same effective regularizer `n·λ/n_j` as the final refit on the whole
/// cell. A cell with a single point cannot be validated and takes
/// [`HyperGrid::fallback_pair`].
pub fn kfold_cv(ds: &Dataset, policy: CellPolicy, grid: &HyperGrid, k: usize, cfg: &SolverConfig, seed: u64) -> Result<SelectionResult> {
    let n = ds.len();
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count k = {k} must lie in 2..={n}")));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let partition = Partition::build(ds.features(), policy.cells_for(n))?;
    let members = partition.cell_members();
    let loss = loss_for(ds.task());
    let bound = clip_bound_for(ds);
    let pairs = grid.pairs();
    let runs = AtomicUsize::new(0);
    let fallback = fallback_index(grid);

    let outcomes = members
        .par_iter()
        .enumerate()
        .map(|(j, idx)| -> Result<CellOutcome> {
            let nj = idx.len();
            let ccfg = cell_config(cfg, j);
            let mut local = idx.clone();
            local.shuffle(&mut rng::prng(seed, &[0xf01d, j as u64]));
            let cell = ds.subset(&local);
            let folds = k.min(nj);
            let lambda_scale = n as f64 / nj as f64;

            let mut losses = vec![f64::NAN; pairs.len()];
            if folds >= 2 {
                let fold_sets: Vec<(Dataset, Dataset)> = (0..folds)
                    .map(|f| {
                        let (tr, va): (Vec<usize>, Vec<usize>) =
                            (0..nj).partition(|p| p % folds != f);
                        (cell.subset(&tr), cell.subset(&va))
                    })
                    .collect();
                for (c, &(lambda, gamma)) in pairs.iter().enumerate() {
                    let mut total = 0.0;
                    let mut failed = false;
                    for (tr, va) in &fold_sets {
                        runs.fetch_add(1, AtomicOrdering::Relaxed);
                        match train_cell(loss, tr.features(), tr.labels(), gamma, lambda_scale * lambda, &ccfg) {
                            Ok(s) => total += validation_loss(&s, loss, bound, va.features(), va.labels()),
                            Err(e) => {
                                log::warn!("cell {j}: {e}");
                                failed = true;
                                break;
                            }
                        }
                    }
                    if !failed {
                        losses[c] = total / folds as f64;
                    }
                }
            }
            let pick = if folds < 2 {
                fallback
            } else {
                argmin(&losses).ok_or_else(|| {
                    Error::NotConverged {
                        what: "every candidate failed; last loss",
                        value: f64::NAN,
                    }
                    .in_cell(j)
                })?
            };
            let (lambda, gamma) = pairs[pick];
            runs.fetch_add(1, AtomicOrdering::Relaxed);
            let solution = train_cell(loss, cell.features(), cell.labels(), gamma, lambda_scale * lambda, &ccfg)
                .map_err(|e| e.in_cell(j))?;
            Ok(CellOutcome {
                chosen: pick,
                losses,
                solution,
                fallback: folds < 2,
                reduced_folds: folds < k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(&partition, grid, loss, bound, outcomes, runs.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;

    fn covers(net: &[f64], lo: f64, hi: f64, eps: f64, open_left: bool) -> bool {
        let steps = ((hi - lo) / 1e-4).round() as usize;
        (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .filter(|&a| !(open_left && a == lo))
            .all(|a| net.iter().any(|&p| (p - a).abs() <= eps + 1e-12))
    }

    #[test]
    fn net_at_e10() {
        let g = make_grids(10f64.exp(), 2, 0.0).unwrap();
        let a = &g.gamma_exponents;
        let expect = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1];
        assert_eq!(a.len(), expect.len());
        for (x, y) in a.iter().zip(expect) {
            assert!((x - y).abs() < 1e-12, "{a:?}");
        }
        assert!(covers(a, 0.0, 1.0, 0.1, true));
        assert!(covers(&g.lambda_exponents, 1.0, 2.0, 0.1, false));
        assert!((g.gammas[5] - 10f64.exp().powf(-0.1)).abs() < 1e-15);
    }

    #[test]
    fn nets_contain_right_endpoints() {
        for (n, d, s) in [(20.0, 1, 0.0), (1e3, 3, 0.25), (1e6, 10, 0.9)] {
            let g = make_grids(n, d, s).unwrap();
            assert_eq!(g.gamma_exponents[0], 1.0);
            assert_eq!(g.lambda_exponents[0], s + d as f64);
            assert!(g.lambda_exponents.iter().all(|&b| b >= s + 1.0 && b <= s + d as f64));
            assert!(g.gamma_exponents.iter().all(|&a| a > 0.0 && a <= 1.0));
        }
    }

    #[test]
    fn grids_reject_small_n() {
        assert!(make_grids(7.0, 2, 0.0).is_err());
        assert!(make_grids(100.0, 2, 1.0).is_err());
    }

    #[test]
    fn argmin_first_minimum_skipping_nan() {
        assert_eq!(argmin(&[2.0, f64::NAN, 1.0, 1.0]), Some(2));
        assert_eq!(argmin(&[f64::NAN]), None);
    }

    #[test]
    fn fallback_pair_uses_max_lambda_and_lower_median_gamma() {
        let g = HyperGrid::from_values(vec![0.1, 0.3, 0.2, 0.4], vec![1e-3, 1e-1]).unwrap();
        assert_eq!(g.fallback_pair(), (1e-1, 0.2));
    }

    fn zero_labels(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        Dataset::new(PointSet::new(x, 1).unwrap(), vec![0.0; n], Task::Regression).unwrap()
    }

    #[test]
    fn all_zero_losses_tie_to_smallest_pair() {
        let g = HyperGrid::from_values(vec![0.2, 0.5], vec![1e-3, 1e-2]).unwrap();
        let r = kfold_cv(&zero_labels(12), CellPolicy::Global, &g, 3, &SolverConfig::default(), 1).unwrap();
        assert_eq!(r.chosen, vec![(1e-3, 0.2)]);
        assert!(r.trace.iter().all(|t| t.validation_loss == 0.0));
    }

    #[test]
    fn leave_one_out_on_small_cell() {
        let g = HyperGrid::from_values(vec![0.5], vec![1e-2]).unwrap();
        let ds = zero_labels(3);
        let r = kfold_cv(&ds, CellPolicy::Global, &g, 3, &SolverConfig::default(), 0).unwrap();
        // three folds plus the refit
        assert_eq!(r.training_runs, 4);
        assert!(r.reduced_fold_cells.is_empty());
    }

    #[test]
    fn singleton_cell_falls_back_and_is_flagged() {
        // FFT picks 0.0 first and the outlier 100.0 second; the outlier's
        // cell holds a single point.
        let mut x: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        x.push(100.0);
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let ds = Dataset::new(PointSet::new(x, 1).unwrap(), y, Task::Regression).unwrap();
        let g = HyperGrid::from_values(vec![0.2, 0.5, 1.0], vec![1e-3, 1e-1]).unwrap();
        let r = kfold_cv(&ds, CellPolicy::Fixed(2), &g, 5, &SolverConfig::default(), 0).unwrap();
        assert_eq!(r.reduced_fold_cells, vec![1]);
        assert_eq!(r.fallback_cells, vec![1]);
        assert_eq!(r.chosen[1], (1e-1, 0.5));
        assert_eq!(r.training_runs, 6 * 5 + 2);
    }

    #[test]
    fn trace_csv_header() {
        let g = HyperGrid::from_values(vec![0.5], vec![1e-2]).unwrap();
        let r = train_validate(&zero_labels(8), CellPolicy::Global, &g, &SolverConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cell,lambda,gamma,validation_loss,chosen\n0,0.01,0.5,0,true"));
    }
}
