//! Structure-aware positives: replace `k` randomly chosen non-causal tokens
//! with an unknown-token marker, drawing fresh positions every epoch.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledExample};
use crate::postag::{tag, TaggedExample, Tagger, TaggerError};
use crate::rng;
use crate::tagset::TagSetPartition;

pub const DEFAULT_UNK: &str = "[UNK]";
pub const DEFAULT_SCALING_FACTOR: f64 = 0.18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveGenConfig {
    /// Multiplier applied to the mean non-causal token count to obtain `k`.
    pub scaling_factor: f64,
    pub k_override: Option<usize>,
    pub unk_token: String,
    pub seed: u64,
}

impl Default for PositiveGenConfig {
    fn default() -> Self {
        PositiveGenConfig {
            scaling_factor: DEFAULT_SCALING_FACTOR,
            k_override: None,
            unk_token: DEFAULT_UNK.to_string(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveExample {
    pub source_id: String,
    pub epoch: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub replaced_positions: Vec<usize>,
    /// Set when the source had no non-causal token to replace.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unmodified: bool,
}

impl PositiveExample {
    /// The positive as an example carrying the anchor's label.
    pub fn to_example(&self, label: usize) -> LabeledExample {
        LabeledExample {
            id: format!("{}+{}", self.source_id, self.epoch),
            text_a: self.text.clone(),
            text_b: self.text_b.clone(),
            label,
            explicit_id: true,
        }
    }
}

/// `k = max(1, round(mean * scaling))`, rounding half away from zero.
pub fn k_from_mean(mean_noncausal: f64, scaling_factor: f64) -> usize {
    ((mean_noncausal * scaling_factor).round() as usize).max(1)
}

pub fn noncausal_positions(tagged: &TaggedExample, partition: &TagSetPartition) -> Vec<usize> {
    tagged
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| !partition.is_causal(**t))
        .map(|(i, _)| i)
        .collect()
}

pub fn mean_noncausal_count(tagged: &[TaggedExample], partition: &TagSetPartition) -> f64 {
    if tagged.is_empty() {
        return 0.0;
    }
    let total: usize = tagged.iter().map(|t| noncausal_positions(t, partition).len()).sum();
    total as f64 / tagged.len() as f64
}

pub fn compute_k(
    train: &Dataset,
    partition: &TagSetPartition,
    cfg: &PositiveGenConfig,
    tagger: &dyn Tagger,
) -> Result<usize, TaggerError> {
    if let Some(k) = cfg.k_override {
        return Ok(k.max(1));
    }
    let tagged = tag_all(train, tagger)?;
    Ok(k_from_mean(mean_noncausal_count(&tagged, partition), cfg.scaling_factor))
}

pub fn tag_all(ds: &Dataset, tagger: &dyn Tagger) -> Result<Vec<TaggedExample>, TaggerError> {
    ds.examples.par_iter().map(|e| tag(e, tagger)).collect()
}

/// Replaces `min(k, n)` distinct non-causal positions with `unk_token`,
/// sampled uniformly without replacement. Length and order are preserved.
pub fn generate_positive<R: Rng + ?Sized>(
    tagged: &TaggedExample,
    partition: &TagSetPartition,
    k: usize,
    unk_token: &str,
    epoch: usize,
    rng: &mut R,
) -> PositiveExample {
    let eligible = noncausal_positions(tagged, partition);
    let take = k.min(eligible.len());
    let mut chosen: Vec<usize> = sample(rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    let mut tokens = tagged.tokens.clone();
    for &p in &chosen {
        tokens[p] = unk_token.to_string();
    }
    let ex = tagged.rebuild(&tokens, tagged.segment_len);
    PositiveExample {
        source_id: tagged.example.id.clone(),
        epoch,
        text: ex.text_a,
        text_b: ex.text_b,
        replaced_positions: chosen,
        unmodified: eligible.is_empty(),
    }
}

/// One positive per example for `epoch`, each drawn from the stream keyed
/// by `(seed, epoch, example id)`.
pub fn generate_epoch_positives(
    tagged: &[TaggedExample],
    partition: &TagSetPartition,
    k: usize,
    unk_token: &str,
    epoch: usize,
    seed: u64,
) -> Vec<PositiveExample> {
    let epoch_label = epoch.to_string();
    tagged
        .par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &["positive", &epoch_label, &t.example.id]);
            generate_positive(t, partition, k, unk_token, epoch, &mut r)
        })
        .collect()
}
