//! Tag importance by ablation and the causal / non-causal tag partition.
//!
//! For each universal tag the score is the drop in accuracy of a fixed
//! classifier when every token of that tag is deleted from each example:
//! `R = acc(originals) - acc(ablated)`, computed over the same `m` examples.
//! Tags scoring at or above the threshold are causal; the rest are
//! non-causal and become the masking candidates for positive samples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample};
use crate::postag::{ablate_tag, tag, Tagger, TaggerError, UniversalTag};

/// Default partition threshold: one percentage point of accuracy.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
#[error("classifier failed: {0}")]
pub struct OracleError(pub String);

/// A fixed, already fine-tuned classifier queried one example at a time.
pub trait ClassifierOracle: Sync {
    fn predict(&self, example: &LabeledExample) -> Result<usize, OracleError>;
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("cannot score tags on an empty dataset")]
    EmptyDataset,
    #[error("oracle failed on example {id}: {source}")]
    Oracle {
        id: String,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    Tagger(#[from] TaggerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagImportanceReport {
    pub dataset_name: String,
    pub m: usize,
    /// Accuracy reduction per tag, as a fraction in `[-1, 1]`.
    pub per_tag: BTreeMap<UniversalTag, f64>,
}

impl TagImportanceReport {
    pub fn score(&self, tag: UniversalTag) -> f64 {
        self.per_tag[&tag]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSetPartition {
    pub causal: BTreeSet<UniversalTag>,
    pub noncausal: BTreeSet<UniversalTag>,
    pub threshold: f64,
}

impl TagSetPartition {
    /// Builds a partition from an explicit causal set.
    pub fn from_causal(causal: impl IntoIterator<Item = UniversalTag>, threshold: f64) -> Self {
        let causal: BTreeSet<_> = causal.into_iter().collect();
        let noncausal = UniversalTag::ALL
            .into_iter()
            .filter(|t| !causal.contains(t))
            .collect();
        TagSetPartition {
            causal,
            noncausal,
            threshold,
        }
    }

    pub fn is_causal(&self, tag: UniversalTag) -> bool {
        self.causal.contains(&tag)
    }
}

#[derive(Default)]
struct Counts {
    original: usize,
    ablated: [usize; 12],
}

fn score_example(
    ex: &LabeledExample,
    oracle: &dyn ClassifierOracle,
    tagger: &dyn Tagger,
) -> Result<Counts, DiscoveryError> {
    let oracle_err = |source| DiscoveryError::Oracle {
        id: ex.id.clone(),
        source,
    };
    let tagged = tag(ex, tagger)?;
    let original_ok = oracle.predict(ex).map_err(oracle_err)? == ex.label;
    let mut counts = Counts {
        original: original_ok as usize,
        ..Counts::default()
    };
    for (slot, t) in UniversalTag::ALL.into_iter().enumerate() {
        let ok = if tagged.count(t) == 0 {
            original_ok
        } else {
            let ab = ablate_tag(&tagged, t);
            oracle.predict(&ab.example).map_err(oracle_err)? == ex.label
        };
        counts.ablated[slot] = ok as usize;
    }
    Ok(counts)
}

/// Scores every universal tag by the accuracy lost when it is ablated.
///
/// Oracle calls run in parallel; correctness counts are integers, so the
/// result does not depend on completion order or example order.
pub fn score_tags(
    ds: &Dataset,
    oracle: &dyn ClassifierOracle,
    tagger: &dyn Tagger,
) -> Result<TagImportanceReport, DiscoveryError> {
    if ds.is_empty() {
        return Err(DiscoveryError::EmptyDataset);
    }
    let per_example: Vec<Result<Counts, DiscoveryError>> = ds
        .examples
        .par_iter()
        .map(|ex| score_example(ex, oracle, tagger))
        .collect();
    let mut total = Counts::default();
    for c in per_example {
        let c = c?;
        total.original += c.original;
        for (acc, v) in total.ablated.iter_mut().zip(c.ablated) {
            *acc += v;
        }
    }
    let m = ds.len();
    let per_tag = UniversalTag::ALL
        .into_iter()
        .zip(total.ablated)
        .map(|(t, ab)| (t, (total.original as f64 - ab as f64) / m as f64))
        .collect();
    Ok(TagImportanceReport {
        dataset_name: ds.name.clone(),
        m,
        per_tag,
    })
}

/// Tags with `R >= threshold` are causal, the rest non-causal.
pub fn partition_tags(report: &TagImportanceReport, threshold: f64) -> TagSetPartition {
    debug_assert!(threshold >= 0.0, "threshold must be non-negative");
    let (causal, noncausal) = UniversalTag::ALL
        .into_iter()
        .partition(|t| report.per_tag.get(t).copied().unwrap_or(0.0) >= threshold);
    TagSetPartition {
        causal,
        noncausal,
        threshold,
    }
}

/// On-disk form of a discovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagDiscoveryArtifact {
    pub dataset: String,
    pub m: usize,
    pub scores: BTreeMap<UniversalTag, f64>,
    pub threshold: f64,
    pub causal: Vec<UniversalTag>,
    pub noncausal: Vec<UniversalTag>,
}

impl TagDiscoveryArtifact {
    pub fn new(report: &TagImportanceReport, partition: &TagSetPartition) -> Self {
        TagDiscoveryArtifact {
            dataset: report.dataset_name.clone(),
            m: report.m,
            scores: report.per_tag.clone(),
            threshold: partition.threshold,
            causal: partition.causal.iter().copied().collect(),
            noncausal: partition.noncausal.iter().copied().collect(),
        }
    }

    pub fn report(&self) -> TagImportanceReport {
        TagImportanceReport {
            dataset_name: self.dataset.clone(),
            m: self.m,
            per_tag: self.scores.clone(),
        }
    }

    pub fn partition(&self) -> TagSetPartition {
        TagSetPartition {
            causal: self.causal.iter().copied().collect(),
            noncausal: self.noncausal.iter().copied().collect(),
            threshold: self.threshold,
        }
    }
}

/// Per-tag accuracy reduction table, sorted by score.
pub fn render_table(report: &TagImportanceReport, partition: &TagSetPartition) -> String {
    let mut rows: Vec<_> = report.per_tag.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:>9}  set", "tag", "R (%)");
    for (t, r) in rows {
        let set = if partition.is_causal(*t) { "causal" } else { "non-causal" };
        let _ = writeln!(out, "{:<6} {:>9.2}  {set}", t.as_str(), r * 100.0);
    }
    let _ = writeln!(out, "m = {}, threshold = {:.2}%", report.m, partition.threshold * 100.0);
    out
}
