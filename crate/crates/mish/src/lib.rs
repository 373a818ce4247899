//! Semantic hashing tuned for multi-index search.
//!
//! The crate trains an unsupervised model that maps TF-IDF document vectors
//! to short binary hash codes, and searches those codes exactly with
//! multi-index hashing: codes are split into `m` substrings, each indexed in
//! its own hash table, and the pigeonhole principle bounds the per-table
//! lookup radii so that no true neighbor is missed. Beyond the usual
//! reconstruction objective, training adds two auxiliary losses that
//! directly shrink multi-index candidate sets: one pushes hard false
//! positives out of the query's substring ball, the other pulls the k-th
//! neighbor radius below the cheap-lookup threshold.
//!
//! Error convention: operations touching files or parsing external data
//! return [`error::Result`]; contract violations on pure in-memory
//! operations (length mismatches, out-of-range indices) panic.

pub mod corpus;
pub mod error;
pub mod gso;
pub mod hamming;
pub mod memory;
pub mod metrics;
pub mod mih;
pub mod model;
pub mod train;

pub use error::{Error, Result};
