//! Quality metrics for a counterfactual dataset: how many new token types it
//! introduces, how much of each original it keeps, and how similar the pairs
//! are under an embedder.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{tokenize, Dataset};
use crate::encoder::{BowEncoder, Encoder};
use crate::negative::{counterfactual_text, CounterfactualExample};

#[derive(Debug, Error, PartialEq)]
pub enum CadError {
    #[error("no pairs to score")]
    NoPairs,
    #[error("every pair was skipped ({0} with an empty original)")]
    AllSkipped(usize),
    #[error("embedder failed on every pair; first error: {0}")]
    EmbedderFailed(String),
}

fn types(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Distinct token types present in the counterfactuals but in no training text.
pub fn diversity(train: &Dataset, cad: &[CounterfactualExample]) -> usize {
    let seen: BTreeSet<String> = train.examples.iter().flat_map(|e| e.tokens()).collect();
    let new: BTreeSet<String> = cad
        .iter()
        .flat_map(|c| tokenize(&counterfactual_text(c)))
        .filter(|t| !seen.contains(t))
        .collect();
    new.len()
}

/// An original text next to its counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadPair {
    pub id: String,
    pub original: String,
    pub counterfactual: String,
}

/// Pairs each counterfactual with its source example. Counterfactuals whose
/// source is absent from `originals` are returned separately.
pub fn pair_with_sources(originals: &Dataset, cad: &[CounterfactualExample]) -> (Vec<CadPair>, Vec<String>) {
    let by_id: HashMap<&str, _> = originals.examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    for c in cad {
        match by_id.get(c.source_id.as_str()) {
            Some(src) => pairs.push(CadPair {
                id: c.source_id.clone(),
                original: src.joined_text(),
                counterfactual: counterfactual_text(c),
            }),
            None => orphans.push(c.source_id.clone()),
        }
    }
    (pairs, orphans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub overlap_pct: f64,
    pub per_pair: Vec<Option<f64>>,
    /// Ids of pairs whose original has no tokens.
    pub skipped: Vec<String>,
}

/// Mean over pairs of the share of original token types kept in the
/// counterfactual, in percent.
pub fn overlap(pairs: &[CadPair]) -> Result<Overlap, CadError> {
    if pairs.is_empty() {
        return Err(CadError::NoPairs);
    }
    let per_pair: Vec<Option<f64>> = pairs
        .iter()
        .map(|p| {
            let orig = types(&p.original);
            if orig.is_empty() {
                return None;
            }
            let cf = types(&p.counterfactual);
            Some(100.0 * orig.intersection(&cf).count() as f64 / orig.len() as f64)
        })
        .collect();
    let skipped: Vec<String> = pairs
        .iter()
        .zip(&per_pair)
        .filter(|(_, v)| v.is_none())
        .map(|(p, _)| p.id.clone())
        .collect();
    let scored: Vec<f64> = per_pair.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(CadError::AllSkipped(skipped.len()));
    }
    Ok(Overlap {
        overlap_pct: scored.iter().sum::<f64>() / scored.len() as f64,
        per_pair,
        skipped,
    })
}

pub trait SentenceEmbedder: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String>;
}

/// One vector per token, for greedy token matching.
pub trait TokenEmbedder: Sync {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    Pooled,
    TokenMatching,
}

pub enum Embedder<'a> {
    Pooled(&'a dyn SentenceEmbedder),
    TokenMatching(&'a dyn TokenEmbedder),
}

impl Embedder<'_> {
    pub fn mode(&self) -> EmbedMode {
        match self {
            Embedder::Pooled(_) => EmbedMode::Pooled,
            Embedder::TokenMatching(_) => EmbedMode::TokenMatching,
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching F score: every token is matched to its most similar
/// token on the other side; precision and recall are the mean best matches.
pub fn token_matching_f(original: &[Vec<f64>], cf: &[Vec<f64>]) -> f64 {
    if original.is_empty() || cf.is_empty() {
        return 0.0;
    }
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|x| to.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    let r = best(original, cf);
    let p = best(cf, original);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSimilarity {
    pub mean: f64,
    pub mode: EmbedMode,
    pub per_pair: Vec<Option<f64>>,
    pub errors: BTreeMap<String, String>,
}

pub fn embed_similarity(pairs: &[CadPair], embedder: &Embedder) -> Result<EmbedSimilarity, CadError> {
    if pairs.is_empty() {
        return Err(CadError::NoPairs);
    }
    let results: Vec<Result<f64, String>> = pairs
        .par_iter()
        .map(|p| match embedder {
            Embedder::Pooled(e) => Ok(cosine(&e.embed(&p.original)?, &e.embed(&p.counterfactual)?)),
            Embedder::TokenMatching(e) => Ok(token_matching_f(
                &e.embed_tokens(&p.original)?,
                &e.embed_tokens(&p.counterfactual)?,
            )),
        })
        .collect();
    let mut errors = BTreeMap::new();
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(v) => per_pair.push(Some(v)),
            Err(e) => {
                errors.insert(p.id.clone(), e);
                per_pair.push(None);
            }
        }
    }
    let ok: Vec<f64> = per_pair.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(CadError::EmbedderFailed(errors.values().next().cloned().unwrap_or_default()));
    }
    Ok(EmbedSimilarity {
        mean: ok.iter().sum::<f64>() / ok.len() as f64,
        mode: embedder.mode(),
        per_pair,
        errors,
    })
}

/// Deterministic pseudo-random unit vector per token type.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 64 }
    }
}

impl HashingEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim);
        let mut counter = 0u32;
        while v.len() < self.dim {
            let mut h = Sha256::new();
            h.update(token.as_bytes());
            h.update(counter.to_le_bytes());
            for chunk in h.finalize().chunks(2) {
                if v.len() == self.dim {
                    break;
                }
                let x = u16::from_le_bytes([chunk[0], chunk[1]]) as f64 / u16::MAX as f64;
                v.push(2.0 * x - 1.0);
            }
            counter += 1;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }
}

impl TokenEmbedder for HashingEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, String> {
        Ok(tokenize(text).iter().map(|t| self.token_vector(t)).collect())
    }
}

impl SentenceEmbedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut sum = vec![0.0; self.dim];
        for tv in self.embed_tokens(text)? {
            for (s, x) in sum.iter_mut().zip(tv) {
                *s += x;
            }
        }
        Ok(sum)
    }
}

/// Pooled representation of a trained encoder.
impl SentenceEmbedder for BowEncoder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        let ex = crate::corpus::LabeledExample::new("q", text, 0);
        Ok(self.encode(std::slice::from_ref(&ex)).pooled.row(0).to_vec())
    }
}

/// The encoder's static token embeddings.
impl TokenEmbedder for BowEncoder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, String> {
        Ok(tokenize(text).iter().map(|t| self.token_embedding(t).to_vec()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub overlap_pct: Option<f64>,
    pub embed_sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadQualityReport {
    pub diversity: usize,
    pub overlap_pct: f64,
    pub embed_sim: f64,
    pub mode: EmbedMode,
    pub pair_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_pairs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embed_errors: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair: Option<Vec<PairRecord>>,
}

pub fn cad_quality(
    train: &Dataset,
    cad: &[CounterfactualExample],
    embedder: &Embedder,
    keep_per_pair: bool,
) -> Result<CadQualityReport, CadError> {
    let (pairs, unmatched) = pair_with_sources(train, cad);
    let ov = overlap(&pairs)?;
    let sim = embed_similarity(&pairs, embedder)?;
    let per_pair = keep_per_pair.then(|| {
        pairs
            .iter()
            .zip(ov.per_pair.iter().zip(&sim.per_pair))
            .map(|(p, (o, s))| PairRecord {
                id: p.id.clone(),
                overlap_pct: *o,
                embed_sim: *s,
            })
            .collect()
    });
    Ok(CadQualityReport {
        diversity: diversity(train, cad),
        overlap_pct: ov.overlap_pct,
        embed_sim: sim.mean,
        mode: sim.mode,
        pair_count: pairs.len(),
        skipped_pairs: ov.skipped,
        unmatched,
        embed_errors: sim.errors,
        per_pair,
    })
}
