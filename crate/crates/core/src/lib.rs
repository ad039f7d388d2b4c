//! Organ-level abnormality labeling of free-text radiology reports with a
//! chat LLM, plus the evaluation tooling around it.

pub mod cli;
pub mod eval;
pub mod exec;
pub mod fixture;
pub mod gateway;
pub mod labels_io;
pub mod pipeline;
pub mod prompts;
pub mod schema;
