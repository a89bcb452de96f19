//! Experiment pipeline: language generation, model training, surprising
//! contexts, hypothesis evaluation, the bound sweep and figures.

pub mod artifacts;
pub mod config;
pub mod figures;
pub mod pipeline;
pub mod seeds;
pub mod suite;
pub mod theory;
