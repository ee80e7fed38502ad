//! The localized estimator: one independent kernel machine per Voronoi cell.
//!
//! Minimizing `Σ_j λ_j‖f|_{A_j}‖² + (1/n) Σ_i L(y_i, f(x_i))` over the
//! localized RKHS decouples into one problem per cell. Cell `j` sees only
//! its own `n_j` points and the effective regularizer `λ'_j = n·λ_j / n_j`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::kernels::GaussianKernel;
use crate::partition::{nearest_center, Partition};
use crate::points::PointSet;
use crate::rng;
use crate::solvers::{clip, solve_hinge_svm, solve_krr, DualSolution, Loss, SolverConfig};

/// How many cells to use for a training set of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellPolicy {
    Global,
    Fixed(usize),
    /// `⌈n / cap⌉` cells. Voronoi cells are not balanced, so individual
    /// cells may exceed the cap.
    Cap(usize),
    /// `⌈n^σ⌉` cells.
    Sigma(f64),
}

impl CellPolicy {
    pub fn cells_for(&self, n: usize) -> usize {
        let m = match *self {
            CellPolicy::Global => 1,
            CellPolicy::Fixed(m) => m,
            CellPolicy::Cap(cap) => n.div_ceil(cap.max(1)),
            CellPolicy::Sigma(s) => (n as f64).powf(s).ceil() as usize,
        };
        m.clamp(1, n.max(1))
    }

    /// The `σ` used for grid construction: explicit for the `Sigma` policy,
    /// 0 otherwise.
    pub fn sigma(&self) -> f64 {
        match *self {
            CellPolicy::Sigma(s) => s,
            _ => 0.0,
        }
    }
}

pub fn loss_for(task: Task) -> Loss {
    match task {
        Task::Regression => Loss::LeastSquares,
        Task::Classification => Loss::Hinge,
    }
}

/// Clipping bound: largest absolute training label for regression, 1 for
/// the hinge loss.
pub fn clip_bound_for(ds: &Dataset) -> f64 {
    match ds.task() {
        Task::Regression => ds
            .labels()
            .iter()
            .fold(0.0f64, |m, y| m.max(y.abs()))
            .max(f64::MIN_POSITIVE),
        Task::Classification => 1.0,
    }
}

/// Per-cell solver configuration with an independent seed stream.
pub(crate) fn cell_config(cfg: &SolverConfig, cell: usize) -> SolverConfig {
    SolverConfig {
        seed: rng::derive_seed(cfg.seed, &[cell as u64]),
        ..*cfg
    }
}

/// Trains one cell with the given loss.
pub fn train_cell(loss: Loss, points: &PointSet, labels: &[f64], gamma: f64, lambda_eff: f64, cfg: &SolverConfig) -> Result<DualSolution> {
    match loss {
        Loss::LeastSquares => solve_krr(points, labels, gamma, lambda_eff, cfg),
        Loss::Hinge => solve_hinge_svm(points, labels, gamma, lambda_eff, cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    centers: PointSet,
    cells: Vec<DualSolution>,
    lambdas: Vec<f64>,
    gammas: Vec<f64>,
    loss: Loss,
    clip_bound: f64,
}

impl LocalModel {
    /// Assembles a model from already trained cells. Every cell's clip bound
    /// is overwritten with `clip_bound`.
    pub fn from_parts(centers: PointSet, mut cells: Vec<DualSolution>, lambdas: Vec<f64>, gammas: Vec<f64>, loss: Loss, clip_bound: f64) -> Result<Self> {
        let m = centers.len();
        if m == 0 || cells.len() != m || lambdas.len() != m || gammas.len() != m {
            return Err(Error::invalid("one center, cell, lambda and gamma per cell required"));
        }
        if cells.iter().any(|c| c.support.dim() != centers.dim() || c.loss != loss) {
            return Err(Error::invalid("cells disagree with the model on dimension or loss"));
        }
        if clip_bound.is_nan() || clip_bound <= 0.0 {
            return Err(Error::invalid("clip bound must be positive"));
        }
        for c in &mut cells {
            c.clip_bound = clip_bound;
        }
        Ok(Self {
            centers,
            cells,
            lambdas,
            gammas,
            loss,
            clip_bound,
        })
    }

    /// Builds a farthest-first partition with `m` cells on the features of
    /// `ds` and trains every cell.
    pub fn fit(ds: &Dataset, m: usize, lambdas: &[f64], gammas: &[f64], cfg: &SolverConfig) -> Result<Self> {
        if lambdas.len() != m || gammas.len() != m {
            return Err(Error::invalid(format!(
                "expected {m} lambdas and gammas, got {} and {}",
                lambdas.len(),
                gammas.len()
            )));
        }
        if lambdas.iter().chain(gammas).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("lambdas and gammas must be positive"));
        }
        let partition = Partition::build(ds.features(), m)?;
        let k = partition.num_cells();
        Self::fit_on_partition(ds, &partition, &lambdas[..k], &gammas[..k], cfg)
    }

    /// Trains every cell of an existing partition of `ds`.
    pub fn fit_on_partition(ds: &Dataset, partition: &Partition, lambdas: &[f64], gammas: &[f64], cfg: &SolverConfig) -> Result<Self> {
        let loss = loss_for(ds.task());
        let n = ds.len() as f64;
        let members = partition.cell_members();
        let cells = members
            .par_iter()
            .enumerate()
            .map(|(j, idx)| {
                let local = ds.subset(idx);
                let lambda_eff = n * lambdas[j] / idx.len() as f64;
                train_cell(
                    loss,
                    local.features(),
                    local.labels(),
                    gammas[j],
                    lambda_eff,
                    &cell_config(cfg, j),
                )
                .map_err(|e| e.in_cell(j))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            partition.center_points.clone(),
            cells,
            lambdas.to_vec(),
            gammas.to_vec(),
            loss,
            clip_bound_for(ds),
        )
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn centers(&self) -> &PointSet {
        &self.centers
    }

    pub fn cells(&self) -> &[DualSolution] {
        &self.cells
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    /// Cell that `x` is routed to.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        nearest_center(x, &self.centers)
    }

    /// Unclipped decision value of the cell containing `x`.
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query dimension mismatch");
        self.cells[self.cell_of(x)].decision_value(x)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        clip(self.decision_value(x), self.clip_bound)
    }

    pub fn predict_batch(&self, points: &PointSet) -> Vec<f64> {
        if points.is_empty() {
            return Vec::new();
        }
        assert_eq!(points.dim(), self.dim(), "query dimension mismatch");
        (0..points.len())
            .into_par_iter()
            .map(|i| self.predict(points.row(i)))
            .collect()
    }

    pub fn decision_batch(&self, points: &PointSet) -> Vec<f64> {
        (0..points.len())
            .into_par_iter()
            .map(|i| self.decision_value(points.row(i)))
            .collect()
    }

    /// `Σ_j λ_j ‖f_j‖²` plus the empirical risk of the unclipped decision
    /// function on `ds`.
    pub fn localized_objective(&self, ds: &Dataset) -> f64 {
        let norm: f64 = self
            .cells
            .iter()
            .zip(&self.lambdas)
            .map(|(c, l)| l * c.rkhs_norm_sq())
            .sum();
        let preds = self.decision_batch(ds.features());
        norm + crate::solvers::empirical_risk(self.loss, &preds, ds.labels())
    }
}

const MAGIC: &[u8; 8] = b"LKMODEL\0";
const FORMAT_VERSION: u32 = 1;

// Binary layout, all little-endian:
//   magic[8] version:u32 loss:u8 dim:u32 cells:u32 clip:f64
//   centers: cells*dim f64
//   per cell: lambda:f64 gamma:f64 lambda_eff:f64 n:u64 alphas:n f64 support:n*dim f64
impl LocalModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[match self.loss {
            Loss::LeastSquares => 0u8,
            Loss::Hinge => 1u8,
        }])?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.num_cells() as u32).to_le_bytes())?;
        write_f64s(&mut w, &[self.clip_bound])?;
        write_f64s(&mut w, self.centers.as_slice())?;
        for (j, c) in self.cells.iter().enumerate() {
            write_f64s(
                &mut w,
                &[self.lambdas[j], self.gammas[j], c.effective_lambda],
            )?;
            w.write_all(&(c.alphas.len() as u64).to_le_bytes())?;
            write_f64s(&mut w, &c.alphas)?;
            write_f64s(&mut w, c.support.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let loss = match tag[0] {
            0 => Loss::LeastSquares,
            1 => Loss::Hinge,
            t => return Err(Error::Format(format!("unknown loss tag {t}"))),
        };
        let dim = read_u32(&mut r)? as usize;
        let m = read_u32(&mut r)? as usize;
        let clip_bound = read_f64s(&mut r, 1)?[0];
        let centers = PointSet::new(read_f64s(&mut r, m * dim)?, dim)?;
        let mut cells = Vec::with_capacity(m);
        let mut lambdas = Vec::with_capacity(m);
        let mut gammas = Vec::with_capacity(m);
        for _ in 0..m {
            let head = read_f64s(&mut r, 3)?;
            let mut nb = [0u8; 8];
            r.read_exact(&mut nb)?;
            let n = u64::from_le_bytes(nb) as usize;
            let alphas = read_f64s(&mut r, n)?;
            let support = PointSet::new(read_f64s(&mut r, n * dim)?, dim)?;
            lambdas.push(head[0]);
            gammas.push(head[1]);
            cells.push(DualSolution {
                alphas,
                support,
                kernel: GaussianKernel::new(head[1])?,
                effective_lambda: head[2],
                loss,
                clip_bound,
            });
        }
        Self::from_parts(centers, cells, lambdas, gammas, loss, clip_bound)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_regression(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng::prng(seed, &[]);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[i * d..(i + 1) * d].iter().sum::<f64>().sin())
            .collect();
        Dataset::new(PointSet::new(x, d).unwrap(), y, Task::Regression).unwrap()
    }

    #[test]
    fn cell_policies() {
        assert_eq!(CellPolicy::Global.cells_for(100), 1);
        assert_eq!(CellPolicy::Cap(4000).cells_for(4000), 1);
        assert_eq!(CellPolicy::Cap(4000).cells_for(4001), 2);
        assert_eq!(CellPolicy::Sigma(0.5).cells_for(101), 11);
        assert_eq!(CellPolicy::Fixed(50).cells_for(10), 10);
    }

    #[test]
    fn single_cell_matches_global_solve() {
        let ds = random_regression(25, 2, 3);
        let cfg = SolverConfig::default();
        let model = LocalModel::fit(&ds, 1, &[1e-3], &[0.6], &cfg).unwrap();
        let global = solve_krr(ds.features(), ds.labels(), 0.6, 1e-3, &cfg).unwrap();
        let mut rng = rng::prng(9, &[]);
        for _ in 0..50 {
            let q = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
            assert!((model.decision_value(&q) - global.decision_value(&q)).abs() <= 1e-8);
        }
    }

    #[test]
    fn every_point_gets_its_own_cell_when_m_equals_n() {
        let ds = random_regression(12, 1, 5);
        let m = ds.len();
        let model = LocalModel::fit(&ds, m, &vec![0.1; m], &vec![0.5; m], &SolverConfig::default()).unwrap();
        assert_eq!(model.num_cells(), m);
        for (j, c) in model.cells().iter().enumerate() {
            assert_eq!(c.support.len(), 1);
            assert_eq!(model.cell_of(model.centers().row(j)), j);
        }
    }

    #[test]
    fn predictions_are_clipped_and_batched() {
        let ds = random_regression(40, 2, 11);
        let model = LocalModel::fit(&ds, 3, &[1e-4; 3], &[0.3; 3], &SolverConfig::default()).unwrap();
        let q = PointSet::from_rows(&[[3.0, 3.0], [0.1, -0.2], [-5.0, 0.0]]).unwrap();
        let batch = model.predict_batch(&q);
        for (i, v) in batch.iter().enumerate() {
            assert!(v.abs() <= model.clip_bound());
            assert_eq!(v.to_bits(), model.predict(q.row(i)).to_bits());
        }
        let rev = q.select(&[2, 1, 0]);
        let rb = model.predict_batch(&rev);
        assert_eq!(rb, vec![batch[2], batch[1], batch[0]]);
        assert!(model.predict_batch(&PointSet::empty(2)).is_empty());
        let one = q.select(&[1]);
        assert_eq!(model.predict_batch(&one), vec![model.predict(q.row(1))]);
    }

    #[test]
    fn effective_regularizers_follow_cell_sizes() {
        let ds = random_regression(30, 2, 2);
        let lambdas = [1e-3, 2e-3, 5e-3];
        let model = LocalModel::fit(&ds, 3, &lambdas, &[0.5; 3], &SolverConfig::default()).unwrap();
        for (j, c) in model.cells().iter().enumerate() {
            let expect = 30.0 * lambdas[j] / c.support.len() as f64;
            assert_eq!(c.effective_lambda, expect);
        }
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let ds = random_regression(30, 3, 4);
        let model = LocalModel::fit(&ds, 3, &[1e-3; 3], &[0.7; 3], &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = LocalModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        buf[0] = b'X';
        assert!(matches!(LocalModel::read_from(buf.as_slice()), Err(Error::Format(_))));
    }
}
