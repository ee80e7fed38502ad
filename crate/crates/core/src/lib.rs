//! Localized kernel ridge regression and hinge-loss SVMs.
//!
//! The input space is split into Voronoi cells around centers picked by
//! farthest-first traversal, and an independent Gaussian-kernel machine is
//! trained in each cell. Hyperparameters are chosen per cell, either on a
//! single train/validation split or by k-fold cross-validation. The crate
//! also ships the random embedding used to test robustness against added
//! ambient dimensions, and a covering-radius estimator of intrinsic
//! dimension.
//!
//! ```
//! use localkernel::{LocalModel, SolverConfig, synthetic};
//!
//! let ds = synthetic::uniform_square_regression(200, 0.05, 1).unwrap();
//! let model = LocalModel::fit(&ds, 4, &[1e-4; 4], &[0.5; 4], &SolverConfig::default()).unwrap();
//! let y = model.predict(&[0.1, -0.3]);
//! assert!(y.abs() <= model.clip_bound());
//! ```

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod local_model;
pub mod model_selection;
pub mod partition;
pub mod points;
pub mod rng;
pub mod solvers;
pub mod synthetic;

pub use dataset::{Dataset, SplitSpec, Task};
pub use error::{Error, Result};
pub use local_model::{CellPolicy, LocalModel};
pub use model_selection::{HyperGrid, SelectionResult};
pub use partition::Partition;
pub use points::PointSet;
pub use solvers::{DualSolution, Loss, SolverConfig};
