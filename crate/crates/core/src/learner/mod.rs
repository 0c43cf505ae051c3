//! Dataset aggregation, the shared robot policy and tabular critics.

mod critic;
mod dataset;
mod policy;
mod pretrain;

pub use critic::{sample_balanced_batch, CriticKind, TabularCritic, Transition, TransitionBuffer};
pub use dataset::{DataPair, Dataset, Provenance};
pub use policy::{ActOutput, LinearSoftmax, PolicyModel};
pub use pretrain::{collect_expert_pairs, collect_pretraining_data, constraint_dataset_stats, Actor};
