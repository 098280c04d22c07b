//! Edge-cache revenue optimization workbench.
//!
//! The pipeline has two stages. Stage one predicts per-user content demand
//! over a multi-slot horizon (a federated-trained attention model, or a
//! controllable genie oracle) and blends predictions with local popularity
//! into expected demand. Stage two maximizes discounted expected revenue over
//! the horizon as a product-linearized integer program solved exactly by
//! branch and bound, deploying only the first column and replanning each
//! placement slot. The [`simulator`] replays plans against ground-truth
//! traces and compares against classic baselines (one-slot knapsack,
//! popularity statistics, LRU, random).

pub mod error;
pub mod estimator;
pub mod model;
pub mod optimizer;
pub mod predictor;
pub mod rng;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
