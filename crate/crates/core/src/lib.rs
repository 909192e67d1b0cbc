//! Tabular in-context learning from a single pre-training table.
//!
//! The crate is organized around the lifecycle of one experiment:
//!
//! 1. [`table`] loads delimited datasets described by a [`manifest`];
//!    [`reference`] bundles the published benchmark score tables.
//! 2. [`task`] enumerates and samples (target, feature-subset) tasks from a
//!    table; [`episode`] turns a task into preprocessed context/query rows.
//! 3. [`tensor`] / [`tape`] / [`optim`] / [`gradcheck`] form the dense
//!    reverse-mode autodiff engine the backbone trains on.
//! 4. [`model`] is the row-attention transformer, [`trainer`] the
//!    pre-training loop, [`checkpoint`] its bit-exact persistence format.
//! 5. [`trees`] holds the from-scratch baselines (CART, forest, boosted
//!    trees, linear models); [`retrieval`], [`metrics`] and [`evaluate`]
//!    implement frozen-weight downstream evaluation.
//! 6. [`transfer`] and [`metafeatures`] run the rank/domain/meta-regression
//!    analyses over a transfer matrix; [`synth`] generates the bundled demo
//!    tables.

pub mod ablate;
pub mod checkpoint;
pub mod episode;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod manifest;
pub mod metafeatures;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod reference;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod table;
pub mod tape;
pub mod task;
pub mod tensor;
pub mod trainer;
pub mod transfer;
pub mod trees;

pub use error::CoreError;
pub use table::{Column, ColumnKind, DomainTag, Table};
pub use tensor::{Scalar, Tensor};
