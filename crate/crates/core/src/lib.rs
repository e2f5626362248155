//! Topic segmentation toolkit.
//!
//! Builds labeled segmentation documents from chat and sectioned corpora,
//! trains hierarchical Bi-LSTM and cross-segment transformer boundary
//! classifiers from scratch, and evaluates them with precision, recall
//! and F1 over candidate breaks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod par;
pub mod training;
pub mod util;

pub use error::{Error, Result};
