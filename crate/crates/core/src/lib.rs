// SPDX-License-Identifier: Apache-2.0

//! Recommendation unlearning by influence functions.
//!
//! Models (matrix factorization and one-layer LightGCN) are trained with
//! binary cross-entropy. Removing a set of training interactions is
//! approximated by a single Newton-style step whose direction comes from an
//! iterative Hessian-vector-product solve, optionally restricted to the
//! parameters that the removal can reach.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod influence;
pub mod model;
pub mod operator;
pub mod optim;
pub mod pruning;
pub mod synthetic;
pub mod trainer;

pub use dataset::{AttackManifest, CsvSchema, Dataset, HeaderPolicy, InteractionRecord};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{auc, benchmark, completeness_coefficient, AucTriple, BenchmarkRun, EvalReport};
pub use graph::NeighborIndex;
pub use influence::{
    identify_affected, solve_influence, unlearn, unlearn_params, AffectedSet, Removal, SolverConfig, UnlearnOptions,
    UnlearnStats,
};
pub use model::{Model, ModelKind, ModelParams, ParamVector};
pub use operator::{LinearOperator, ParamLayout};
pub use pruning::{compute_importance, prune, select, ImportanceScores, PruneSelection};
pub use synthetic::SyntheticConfig;
pub use trainer::{retrain_from_scratch, train, Checkpoint, TrainConfig};
