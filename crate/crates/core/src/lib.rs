//! Synthetic regular languages, corpus statistics, and the hypotheses used to
//! explain how a next-token model behaves after an out-of-distribution token.

pub mod automata;
pub mod corpus;
pub mod dist;
pub mod error;
pub mod eval;
pub mod hypotheses;
pub mod model;
pub mod plot;
pub mod seq;

pub use dist::CategoricalDist;
pub use error::{Error, Result};
pub use model::NextTokenModel;
pub use seq::{SurprisingContext, Symbol, TokenSeq};
