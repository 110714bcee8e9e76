//! Contrastive fine-tuning: cross-entropy on anchors plus a triplet term on
//! pooled representations of (anchor, masked positive, counterfactual negative).

use std::collections::HashMap;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledExample;
use crate::encoder::{BowConfig, BowEncoder, Encoder, EncoderError, TrainableEncoder, Vocab, Adam};
use crate::eval::accuracy;
use crate::loss::{combined_loss, cross_entropy_grad, row_distances, triplet_loss_grad, Distance, LossConfig, LossError};
use crate::negative::CounterfactualExample;
use crate::positive::generate_epoch_positives;
use crate::postag::TaggedExample;
use crate::rng;
use crate::tagset::TagSetPartition;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("loss diverged at epoch {epoch}, batch {batch}: ce={ce}, cl={cl:?}, total={total}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        ce: f64,
        cl: Option<f64>,
        total: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Also train the classifier head on negatives with their flipped labels.
    pub ce_on_negatives: bool,
    pub run_name: String,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            learning_rate: 1e-5,
            max_seq_len: 256,
            epochs: 3,
            seeds: vec![0, 1, 2],
            ce_on_negatives: false,
            run_name: "salad".to_string(),
            embed_dim: 16,
            hidden: 8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_seq_len", self.max_seq_len),
            ("epochs", self.epochs),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn checkpoint_name(&self, seed: u64, epoch: usize) -> String {
        format!("{}-seed{seed}-ep{epoch}", self.run_name)
    }
}

/// Everything the loop needs besides the encoder.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub tagged: &'a [TaggedExample],
    pub partition: &'a TagSetPartition,
    pub k: usize,
    pub unk_token: &'a str,
    pub negatives: &'a [CounterfactualExample],
    pub validation: Option<&'a [LabeledExample]>,
}

impl TrainData<'_> {
    fn negatives_by_source(&self) -> HashMap<&str, &CounterfactualExample> {
        let mut map = HashMap::new();
        for n in self.negatives {
            map.entry(n.source_id.as_str()).or_insert(n);
        }
        map
    }
}

/// A minibatch. `positives[j]` and `negatives[j]` belong to anchor
/// `triplet_rows[j]`; anchors without a negative contribute CE only.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub anchors: Vec<LabeledExample>,
    pub triplet_rows: Vec<usize>,
    pub positives: Vec<LabeledExample>,
    pub negatives: Vec<LabeledExample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub ce: f64,
    /// `None` when the triplet branch was not evaluated.
    pub cl: Option<f64>,
    pub total: f64,
}

/// Loss of one batch and its gradient with respect to the encoder parameters.
pub fn batch_objective<E: TrainableEncoder>(
    encoder: &E,
    batch: &Batch,
    loss: &LossConfig,
    ce_on_negatives: bool,
) -> Result<(BatchLoss, Vec<f64>), TrainError> {
    let lambda = loss.lambda;
    let use_triplets = lambda > 0.0 && !batch.triplet_rows.is_empty();
    let negatives_in_ce = ce_on_negatives && !batch.negatives.is_empty();

    let (enc_a, tape_a) = encoder.forward(&batch.anchors);
    let neg = (use_triplets || negatives_in_ce).then(|| encoder.forward(&batch.negatives));

    let mut labels: Vec<usize> = batch.anchors.iter().map(|e| e.label).collect();
    let (ce, d_logits_all) = match (&neg, negatives_in_ce) {
        (Some((enc_n, _)), true) => {
            labels.extend(batch.negatives.iter().map(|e| e.label));
            let logits = concatenate(Axis(0), &[enc_a.logits.view(), enc_n.logits.view()])
                .map_err(|e| LossError::Shape(e.to_string()))?;
            cross_entropy_grad(logits.view(), &labels)?
        }
        _ => cross_entropy_grad(enc_a.logits.view(), &labels)?,
    };
    let d_logits_all = d_logits_all * (1.0 - lambda);
    let na = batch.anchors.len();
    let d_logits_a = d_logits_all.slice(ndarray::s![..na, ..]).to_owned();
    let d_logits_n = (d_logits_all.nrows() > na).then(|| d_logits_all.slice(ndarray::s![na.., ..]).to_owned());

    let hidden = encoder.hidden();
    let mut d_pooled_a = Array2::zeros((na, hidden));
    let mut cl = None;
    let mut pos_grads = None;
    let mut d_pooled_n = None;
    if use_triplets {
        let (enc_p, tape_p) = encoder.forward(&batch.positives);
        let enc_n = &neg.as_ref().expect("negatives forwarded").0;
        let anchors = enc_a.pooled.select(Axis(0), &batch.triplet_rows);
        let tg = triplet_loss_grad(anchors.view(), enc_p.pooled.view(), enc_n.pooled.view(), loss)?;
        for (j, &row) in batch.triplet_rows.iter().enumerate() {
            let mut r = d_pooled_a.row_mut(row);
            r.scaled_add(lambda, &tg.anchor.row(j));
        }
        cl = Some(tg.loss);
        pos_grads = Some((tape_p, tg.positive * lambda));
        d_pooled_n = Some(tg.negative * lambda);
    }

    // A batch without triplets still carries the (1 - lambda) weight on CE.
    let total = combined_loss(ce, cl.unwrap_or(0.0), lambda);

    let mut grad = vec![0.0; encoder.params().len()];
    encoder.backward(&tape_a, d_pooled_a.view(), d_logits_a.view(), &mut grad);
    if let Some((tape_p, dp)) = pos_grads {
        let zero = Array2::zeros((batch.positives.len(), encoder.num_classes()));
        encoder.backward(&tape_p, dp.view(), zero.view(), &mut grad);
    }
    if let Some((enc_n, tape_n)) = &neg {
        let dp = d_pooled_n.unwrap_or_else(|| Array2::zeros(enc_n.pooled.raw_dim()));
        let dl = d_logits_n.unwrap_or_else(|| Array2::zeros(enc_n.logits.raw_dim()));
        encoder.backward(tape_n, dp.view(), dl.view(), &mut grad);
    }
    Ok((BatchLoss { ce, cl, total }, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub ce: f64,
    pub cl: Option<f64>,
    pub total: f64,
    pub val_acc: Option<f64>,
}

/// Builds the toy encoder with a vocabulary over anchors, negatives and specials.
pub fn init_bow_encoder(
    data: &TrainData,
    num_classes: usize,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<BowEncoder, TrainError> {
    let negs: Vec<LabeledExample> = data.negatives.iter().map(|n| n.to_example()).collect();
    let vocab = Vocab::build(data.unk_token, data.tagged.iter().map(|t| &t.example).chain(&negs));
    let config = BowConfig {
        embed_dim: cfg.embed_dim,
        hidden: cfg.hidden,
        num_classes,
        max_seq_len: cfg.max_seq_len,
    };
    Ok(BowEncoder::new(config, vocab, &mut rng::stream(seed, &["init"]))?)
}

/// Runs `cfg.epochs` epochs for one seed, returning one metrics row per epoch.
pub fn train<E: TrainableEncoder>(
    encoder: &mut E,
    data: &TrainData,
    loss: &LossConfig,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    loss.validate()?;
    if data.tagged.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let by_source = data.negatives_by_source();
    let mut opt = Adam::new(cfg.learning_rate, encoder.params().len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let positives = generate_epoch_positives(data.tagged, data.partition, data.k, data.unk_token, epoch, seed);
        let mut order: Vec<usize> = (0..data.tagged.len()).collect();
        order.shuffle(&mut rng::stream(seed, &["batches", &epoch.to_string()]));

        let (mut ce_sum, mut cl_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let (mut batches, mut cl_batches) = (0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Batch::default();
            for (row, &i) in chunk.iter().enumerate() {
                let anchor = &data.tagged[i].example;
                batch.anchors.push(anchor.clone());
                if let Some(neg) = by_source.get(anchor.id.as_str()) {
                    batch.triplet_rows.push(row);
                    batch.positives.push(positives[i].to_example(anchor.label));
                    batch.negatives.push(neg.to_example());
                }
            }
            let (l, grad) = batch_objective(encoder, &batch, loss, cfg.ce_on_negatives)?;
            if !l.total.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    ce: l.ce,
                    cl: l.cl,
                    total: l.total,
                });
            }
            opt.step(encoder.params_mut(), &grad);
            ce_sum += l.ce;
            total_sum += l.total;
            batches += 1;
            if let Some(cl) = l.cl {
                cl_sum += cl;
                cl_batches += 1;
            }
        }
        let val_acc = match data.validation {
            Some(v) if !v.is_empty() => Some(accuracy(&*encoder, v).map_err(|e| TrainError::Config(e.to_string()))?),
            _ => None,
        };
        history.push(EpochMetrics {
            epoch,
            ce: ce_sum / batches as f64,
            cl: (cl_batches > 0).then(|| cl_sum / cl_batches as f64),
            total: total_sum / batches as f64,
            val_acc,
        });
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletOrdering {
    pub satisfied: usize,
    pub total: usize,
}

impl TripletOrdering {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.satisfied as f64 / self.total as f64
        }
    }
}

/// Counts anchors whose positive sits strictly closer than their negative,
/// using positives drawn for `epoch`.
pub fn triplet_ordering<E: Encoder + ?Sized>(
    encoder: &E,
    data: &TrainData,
    distance: Distance,
    epoch: usize,
    seed: u64,
) -> TripletOrdering {
    let by_source = data.negatives_by_source();
    let positives = generate_epoch_positives(data.tagged, data.partition, data.k, data.unk_token, epoch, seed);
    let (mut a, mut p, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for (t, pos) in data.tagged.iter().zip(&positives) {
        if let Some(neg) = by_source.get(t.example.id.as_str()) {
            a.push(t.example.clone());
            p.push(pos.to_example(t.example.label));
            n.push(neg.to_example());
        }
    }
    if a.is_empty() {
        return TripletOrdering { satisfied: 0, total: 0 };
    }
    let (ea, ep, en) = (encoder.encode(&a), encoder.encode(&p), encoder.encode(&n));
    let dp = row_distances(ea.pooled.view(), ep.pooled.view(), distance);
    let dn = row_distances(ea.pooled.view(), en.pooled.view(), distance);
    TripletOrdering {
        satisfied: dp.iter().zip(&dn).filter(|(x, y)| x < y).count(),
        total: a.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::negative::prompt::InstructionId;
    use crate::negative::Provenance;
    use crate::postag::{tag, LexiconTagger, UniversalTag};

    fn setup(neutral_only: bool) -> (Vec<TaggedExample>, TagSetPartition, Vec<CounterfactualExample>) {
        let tagger = LexiconTagger::from_tsv("good\tADJ\nbad\tADJ\nfilm\tNOUN\nthe\tDET\n", UniversalTag::Noun).unwrap();
        let mut tagged = Vec::new();
        let mut negs = Vec::new();
        for i in 0..12 {
            let (text, label) = if i % 2 == 0 { ("the good film", 1) } else { ("the bad film", 0) };
            let label = if neutral_only { 1 } else { label };
            let ex = LabeledExample::new(format!("e{i}"), text, label);
            if !neutral_only {
                negs.push(CounterfactualExample {
                    source_id: ex.id.clone(),
                    text: if label == 1 { "the bad film".into() } else { "the good film".into() },
                    text_b: None,
                    label: 1 - label,
                    instruction_id: InstructionId::I4,
                    raw_response_hash: String::new(),
                    provenance: Provenance::Stub,
                });
            }
            tagged.push(tag(&ex, &tagger).unwrap());
        }
        let partition = TagSetPartition::from_causal([UniversalTag::Adj], 0.01);
        (tagged, partition, negs)
    }

    fn cfg() -> TrainingConfig {
        TrainingConfig {
            batch_size: 4,
            learning_rate: 0.05,
            max_seq_len: 16,
            epochs: 5,
            seeds: vec![7],
            embed_dim: 4,
            hidden: 3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed_and_learns() {
        let (tagged, partition, negs) = setup(false);
        let val: Vec<LabeledExample> = tagged.iter().map(|t| t.example.clone()).collect();
        let data = TrainData {
            tagged: &tagged,
            partition: &partition,
            k: 1,
            unk_token: "[UNK]",
            negatives: &negs,
            validation: Some(&val),
        };
        let run = || {
            let mut enc = init_bow_encoder(&data, 2, &cfg(), 7).unwrap();
            let h = train(&mut enc, &data, &LossConfig::default(), &cfg(), 7).unwrap();
            (h, enc)
        };
        let (h1, e1) = run();
        let (h2, e2) = run();
        assert_eq!(h1, h2);
        assert_eq!(e1.params(), e2.params());
        assert!(h1.iter().all(|m| m.cl.is_some()));
        assert_eq!(h1.last().unwrap().val_acc, Some(100.0));
        assert_eq!(cfg().checkpoint_name(7, 4), "salad-seed7-ep4");
    }

    #[test]
    fn lambda_zero_skips_triplets() {
        let (tagged, partition, negs) = setup(false);
        let data = TrainData {
            tagged: &tagged,
            partition: &partition,
            k: 1,
            unk_token: "[UNK]",
            negatives: &negs,
            validation: None,
        };
        let loss = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let mut enc = init_bow_encoder(&data, 2, &cfg(), 1).unwrap();
        let h = train(&mut enc, &data, &loss, &cfg(), 1).unwrap();
        assert!(h.iter().all(|m| m.cl.is_none() && m.total == m.ce && m.val_acc.is_none()));
    }

    #[test]
    fn anchors_without_negatives_train_on_ce_only() {
        let (tagged, partition, negs) = setup(true);
        assert!(negs.is_empty());
        let data = TrainData {
            tagged: &tagged,
            partition: &partition,
            k: 1,
            unk_token: "[UNK]",
            negatives: &negs,
            validation: None,
        };
        let mut enc = init_bow_encoder(&data, 2, &cfg(), 1).unwrap();
        let h = train(&mut enc, &data, &LossConfig::default(), &cfg(), 1).unwrap();
        assert!(h.iter().all(|m| m.cl.is_none()));
        assert_eq!(triplet_ordering(&enc, &data, Distance::Euclidean, 5, 1).total, 0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.seeds.clear();
        assert!(c.validate().is_err());
    }
}
