//! Personalized retrieval-augmented generation: profile retrieval, prompt
//! construction, retriever training from downstream reward, and per-input
//! retriever selection.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod prompting;
pub mod retrieval;
pub mod ropg;
pub mod rng;
pub mod selection;
pub mod textmodel;

pub use error::{Error, Result};
