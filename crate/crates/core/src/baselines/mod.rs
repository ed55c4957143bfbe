//! Comparison methods: linear and Gamma regression, CART, random forest,
//! and an LSTM over the raw sequences.

mod features;
mod glm;
mod linear;
mod lstm;
mod tree;
mod tune;

pub use features::{featurize, featurize_all, FeatureMatrix};
pub use glm::{fit_gamma_glm, gamma_deviance, GlmFit, GlmOptions};
pub use linear::{fit_linear, LinearFit, RIDGE_JITTER};
pub use lstm::{Lstm, LstmConfig};
pub use tree::{fit_cart, fit_forest, FeatureRule, Forest, ForestParams, Node, Tree, TreeParams};
pub use tune::{app_folds, random_candidates, tune, Candidate, TuneResult, TreeMethod};
