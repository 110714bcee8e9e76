//! Robust text-classifier training through structure-aware positives,
//! LLM counterfactual negatives and a cross-entropy plus triplet objective.
//!
//! Pipeline stages, each usable on its own:
//!
//! - [`tagset`]: score universal POS tags by ablation and split them into
//!   causal and non-causal sets;
//! - [`positive`]: mask `k` non-causal tokens per sentence, fresh every epoch;
//! - [`negative`]: prompt a completion model for label-flipped counterfactuals;
//! - [`train`]: fine-tune an [`encoder::Encoder`] on anchor/positive/negative
//!   triplets with the mixed loss from [`loss`];
//! - [`eval`] and [`cad`]: accuracy tables and counterfactual-quality metrics.
//!
//! [`pipeline`] wires the stages to on-disk artifacts for the `salad` CLI.

pub mod cad;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod loss;
pub mod negative;
pub mod pipeline;
pub mod positive;
pub mod postag;
pub mod rng;
pub mod tagset;
pub mod train;

pub use corpus::{load_dataset, tokenize, Dataset, LabeledExample, Split, Task, TaskKind};
pub use postag::{Tagger, UniversalTag};
pub use tagset::{partition_tags, score_tags, TagImportanceReport, TagSetPartition};
