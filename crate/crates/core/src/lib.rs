//! Multilingual abstention harness.
//!
//! Teaches and measures language-model abstention in multilingual question
//! answering: a propose / multilingual-feedback / abstain pipeline, language
//! relatedness selection, nine adaptable baselines, and a full suite of
//! utility, equity, and calibration metrics.

pub mod backend;
pub mod corpus;
pub mod langspace;
pub mod par;
pub mod rng;
pub mod harness;
pub mod metrics;
pub mod strategies;
