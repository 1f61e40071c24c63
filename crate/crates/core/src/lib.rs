//! Core algorithms for one-shot backbone search.
//!
//! The pipeline has three phases, each built from the modules here:
//!
//! 1. pretrain the weight-sharing supernet on a classification task,
//!    sampling one uniform-random path per step ([`supernet::train_supernet`]);
//! 2. finetune the same supernet on a localization task, starting from the
//!    pretrained weights;
//! 3. search the finetuned supernet with a FLOPs-constrained evolutionary
//!    controller ([`evolution::run_search`]), recomputing batch-norm
//!    statistics for every candidate path before it is scored.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the filesystem live in the `detnas` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod evolution;
pub mod nn;
pub mod searchspace;
pub mod supernet;
pub mod tasks;

pub use error::{Error, Result};
pub use searchspace::{Architecture, ChoiceKind, Constraint, SearchSpace, StageSpec};
