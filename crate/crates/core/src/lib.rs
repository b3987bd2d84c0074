//! Emotion stimulus detection toolkit.
//!
//! Stimuli can be detected either by labeling tokens (IOB) or by
//! classifying clauses. This crate provides both model families, clause
//! extraction from constituency parses, mappings between the two output
//! formats, and span- and clause-level evaluation.

pub mod clause_extract;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod error_analysis;
pub mod evaluation;
pub mod mapping;
pub mod models;
pub mod nn;
pub mod parsetree;

pub use error::{Error, Result};
