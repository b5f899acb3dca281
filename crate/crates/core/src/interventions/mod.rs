//! Intervention strategies, representation editing and intervenability.

mod edit;
mod pipeline;
mod strategy;

pub use edit::{distance, edit_objective, edit_representations, DistanceKind, EditOutcome, InterventionConfig};
pub(crate) use pipeline::check_concepts;
pub use pipeline::{intervenability, intervene, Baseline, Intervenable, InterventionResult, PostHocModel, ProbedModel};
pub use strategy::{
    strategy_random_subset, strategy_uncertainty, uncertainty_weights, StrategyKind, StrategySpec, DEFAULT_EPS_UNC,
};
