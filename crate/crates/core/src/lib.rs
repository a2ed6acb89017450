//! Weakly supervised anomaly scoring with a Gaussian-prior deviation loss
//! and top-K multiple-instance aggregation.
//!
//! A small feature network maps each instance to a scalar score. A bag is
//! scored by the mean of its K highest instance scores, and training pushes
//! normal bag scores toward the mean of a reference distribution while
//! forcing labeled anomalies at least `margin` standard deviations above it.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bag;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod io;
pub mod mil;
pub mod network;
pub mod prior;
pub mod trainer;

pub use bag::{Bag, Mask, PatchGeometry};
pub use error::{Error, Result};
pub use eval::{auc_roc, score_to_probability, EvalReport};
pub use mil::{deviation, deviation_loss, topk_score, LossKind, MilConfig};
pub use network::{init_params, NetworkParams};
pub use prior::{PriorConfig, ReferenceStats};
pub use trainer::{train, train_with_validation, AdamConfig, TrainConfig, TrainHistory};
