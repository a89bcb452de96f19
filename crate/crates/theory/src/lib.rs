//! Checks, on synthetic data, that L2-regularized log-linear models with
//! local, global and conjunction indicators behave like a product of their
//! local-only and global-only counterparts on unseen pairs.

pub mod error;
pub mod features;
pub mod loglinear;
pub mod task;
pub mod verify;

pub use error::{Result, TheoryError};
pub use features::{featurize, FeatureKey, FeatureLayout, FeatureSubset};
pub use loglinear::{grad_check_loglinear, train_loglinear, train_subset, LogLinearModel, DEFAULT_TOL};
pub use task::{Sample, SyntheticTask, TaskConfig};
pub use verify::{
    check_proposition, measure_epsilon, train_triple, verify_lemma, verify_proposition, BoundVariant, EpsilonVariant,
    PropositionReport, TrialSummary,
};
