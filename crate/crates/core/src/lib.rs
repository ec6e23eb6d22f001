//! Open-set origin attribution of synthetic images.
//!
//! Given embeddings of real and generated images extracted by a frozen
//! backbone, this crate trains attribution classifiers over a set of known
//! generators, rejects images coming from unknown generators, and evaluates
//! the result with closed-set accuracy, AUROC and OSCR.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`feature_store`]: the FEATSET container, splits, subsampling.
//! * [`linear_probe`]: multinomial logistic regression trained with L-BFGS.
//! * [`contrastive`]: supervised-contrastive linear projection head.
//! * [`knn`]: cosine k-nearest-neighbour attribution and retrieval.
//! * [`rejection`]: open-set scoring functions (MSP, Energy, GEN, ViM, ...).
//! * [`metrics`]: accuracy, AUROC, CCR/FPR and OSCR.
//! * [`experiment`]: split/ablation protocols and report rendering.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod container;
pub mod contrastive;
pub mod error;
pub mod experiment;
pub mod feature_store;
pub mod lbfgs;
pub mod knn;
pub mod linear_probe;
pub mod matrix;
pub mod metrics;
pub mod rejection;
pub mod synthetic;

pub use error::{Error, Result};
pub use feature_store::{FeatureSet, Normalization, PartitionedData, SplitSpec};
pub use matrix::Matrix;
