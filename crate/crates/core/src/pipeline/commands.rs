use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{CadEmbedderKind, ClientKind, RunConfig, TaggerKind};
use super::manifest::{file_hash, value_hash, Manifest};
use super::PipelineError;
use crate::cad::{cad_quality, CadQualityReport, Embedder, HashingEmbedder};
use crate::corpus::{load_dataset, split_train_val, Dataset, Split};
use crate::encoder::{BowEncoder, EncoderOracle};
use crate::eval::{evaluate, EvalReport};
use crate::loss::LossConfig;
use crate::negative::cache::ResponseCache;
use crate::negative::client::{CompletionClient, HttpClient};
use crate::negative::prompt::InstructionId;
use crate::negative::stub::StubClient;
use crate::negative::{generate_negatives, load_negatives, GenerationError};
use crate::positive::{generate_epoch_positives, k_from_mean, mean_noncausal_count, tag_all};
use crate::postag::{ExternalTagger, HeuristicTagger, LexiconTagger, Tagger, UniversalTag};
use crate::tagset::{partition_tags, render_table, score_tags, TagDiscoveryArtifact, TagSetPartition};
use crate::train::{init_bow_encoder, train, triplet_ordering, EpochMetrics, TrainData, TripletOrdering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Json,
    #[default]
    Table,
}

const TAGS: &str = "tags";
const POS: &str = "pos";
const TRAIN: &str = "train";
const EVAL: &str = "eval";
const TAG_FILE: &str = "tag_importance.json";
const K_FILE: &str = "k.json";
const NEG_FILE: &str = "negatives.jsonl";
const SKIP_FILE: &str = "skipped.jsonl";
const SUMMARY_FILE: &str = "summary.json";

fn neg_stage(i: InstructionId) -> String {
    format!("neg/{i}")
}

fn cad_stage(i: InstructionId) -> String {
    format!("cad/{i}")
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r).expect("row serializes"));
        s.push('\n');
    }
    s.into_bytes()
}

/// A referenced input file, identified by name and content rather than by
/// location so manifests do not depend on where a run lives.
fn input(path: &Path) -> Result<Value, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    Ok(json!({
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "sha256": file_hash(path)?,
    }))
}

fn opt_input(path: Option<&PathBuf>) -> Result<Value, PipelineError> {
    path.map(|p| input(p)).transpose().map(|v| v.unwrap_or(Value::Null))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KArtifact {
    pub k: usize,
    pub mean_noncausal: f64,
    pub scaling_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_override: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub checkpoint: String,
    pub final_epoch: EpochMetrics,
    pub triplet_ordering: TripletOrdering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub run_name: String,
    pub runs: Vec<SeedRun>,
}

/// Result of one command, ready for printing.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub stage: String,
    pub dir: PathBuf,
    pub table: String,
    pub json: Value,
}

impl Outcome {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.table.clone(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("json");
                s.push('\n');
                s
            }
        }
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub strict: bool,
    warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, strict: bool) -> Self {
        Pipeline {
            cfg,
            strict,
            warnings: Vec::new(),
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.cfg.output_dir.join(stage)
    }

    // ---- fingerprints -------------------------------------------------

    fn data_fingerprint(&self) -> Result<Value, PipelineError> {
        let d = &self.cfg.data;
        Ok(json!({
            "task": self.cfg.task,
            "train": input(&d.train)?,
            "validation": opt_input(d.validation.as_ref())?,
            "val_fraction": d.val_fraction,
            "split_seed": d.split_seed,
        }))
    }

    fn tags_fingerprint(&self) -> Result<Value, PipelineError> {
        let t = &self.cfg.tagger;
        let oracle = match &self.cfg.tags.oracle_checkpoint {
            Some(p) => json!({ "checkpoint": input(p)? }),
            None => json!({ "trained": { "seed": self.cfg.tags.oracle_seed, "training": self.cfg.training } }),
        };
        Ok(json!({
            "data": self.data_fingerprint()?,
            "tagger": { "kind": t.kind, "lexicon": opt_input(t.lexicon.as_ref())?, "program": t.program, "args": t.args },
            "threshold": self.cfg.tags.threshold,
            "oracle": oracle,
        }))
    }

    fn pos_fingerprint(&self, tags_hash: &str) -> Value {
        json!({
            "tags": tags_hash,
            "positive": self.cfg.positive,
            "epochs": self.cfg.training.epochs,
            "seeds": self.cfg.training.seeds,
        })
    }

    fn neg_fingerprint(&self, tags_hash: &str, instruction: InstructionId) -> Result<Value, PipelineError> {
        let n = &self.cfg.negative;
        Ok(json!({
            "tags": tags_hash,
            "instruction": instruction,
            "client": n.client,
            "antonyms": if n.client == ClientKind::Stub { opt_input(n.antonyms.as_ref())? } else { Value::Null },
            "generation": n.generation,
        }))
    }

    fn train_fingerprint(&self, pos_hash: &str, neg_hash: &str) -> Value {
        json!({ "pos": pos_hash, "neg": neg_hash, "loss": self.cfg.loss, "training": self.cfg.training })
    }

    fn eval_fingerprint(&self, train_hash: &str) -> Result<Value, PipelineError> {
        let mut tests = BTreeMap::new();
        for (name, p) in &self.cfg.data.tests {
            tests.insert(name.clone(), input(p)?);
        }
        Ok(json!({ "train": train_hash, "tests": tests }))
    }

    fn cad_fingerprint(&self, neg_hash: &str, train_hash: Option<&str>) -> Value {
        json!({ "neg": neg_hash, "cad": self.cfg.cad, "train": train_hash })
    }

    fn expected_tags(&self) -> Result<String, PipelineError> {
        Ok(value_hash(&self.tags_fingerprint()?))
    }

    fn expected_pos(&self) -> Result<String, PipelineError> {
        Ok(value_hash(&self.pos_fingerprint(&self.expected_tags()?)))
    }

    fn expected_neg(&self, i: InstructionId) -> Result<String, PipelineError> {
        Ok(value_hash(&self.neg_fingerprint(&self.expected_tags()?, i)?))
    }

    fn expected_train(&self) -> Result<String, PipelineError> {
        Ok(value_hash(&self.train_fingerprint(
            &self.expected_pos()?,
            &self.expected_neg(self.cfg.negative.instruction)?,
        )))
    }

    /// Loads an upstream manifest and checks it against the current config.
    fn upstream(&mut self, stage: &str, command: &'static str, expected: &str) -> Result<Manifest, PipelineError> {
        let dir = self.stage_dir(stage);
        if !dir.join(super::manifest::MANIFEST_FILE).exists() {
            return Err(PipelineError::MissingUpstream {
                stage: stage.to_string(),
                command,
                dir,
            });
        }
        let m = Manifest::load(&dir)?;
        let reasons = m.staleness(&dir, expected);
        if !reasons.is_empty() {
            if self.strict {
                return Err(PipelineError::Stale(reasons));
            }
            self.warnings.extend(reasons.into_iter().map(|r| format!("stale upstream: {r}")));
        }
        Ok(m)
    }

    // ---- shared inputs ------------------------------------------------

    /// Training and validation splits: the configured validation file, or
    /// a seeded hold-out from train.
    pub fn load_splits(&self) -> Result<(Dataset, Dataset), PipelineError> {
        let task = self.cfg.task();
        let full = load_dataset(&self.cfg.data.train, &task, Split::Train)?;
        match &self.cfg.data.validation {
            Some(p) => Ok((full, load_dataset(p, &task, Split::Validation)?)),
            None => Ok(split_train_val(&full, self.cfg.data.val_fraction, self.cfg.data.split_seed)?),
        }
    }

    pub fn build_tagger(&self) -> Result<Box<dyn Tagger>, PipelineError> {
        let t = &self.cfg.tagger;
        Ok(match t.kind {
            TaggerKind::Heuristic => match &t.lexicon {
                Some(p) => Box::new(HeuristicTagger::with_user_lexicon(LexiconTagger::load(p, UniversalTag::Noun)?)),
                None => Box::new(HeuristicTagger::default()),
            },
            TaggerKind::Lexicon => {
                let p = t.lexicon.as_ref().ok_or_else(|| PipelineError::Config("tagger.lexicon missing".into()))?;
                Box::new(LexiconTagger::load(p, UniversalTag::Noun)?)
            }
            TaggerKind::External => {
                let program = t.program.clone().ok_or_else(|| PipelineError::Config("tagger.program missing".into()))?;
                Box::new(ExternalTagger::new(program, t.args.clone()))
            }
        })
    }

    fn load_partition(&self) -> Result<TagSetPartition, PipelineError> {
        let path = self.stage_dir(TAGS).join(TAG_FILE);
        let raw = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io { path: path.clone(), source: e })?;
        let art: TagDiscoveryArtifact =
            serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(art.partition())
    }

    fn checkpoint_path(&self, seed: u64) -> PathBuf {
        let name = self.cfg.training.checkpoint_name(seed, self.cfg.training.epochs);
        self.stage_dir(TRAIN).join(format!("{name}.json"))
    }

    // ---- commands -----------------------------------------------------

    /// Scores every tag by ablation and writes the causal / non-causal split.
    pub fn discover_tags(&mut self, train_oracle: bool) -> Result<Outcome, PipelineError> {
        let fingerprint = self.tags_fingerprint()?;
        let (train_ds, val_ds) = self.load_splits()?;
        let tagger = self.build_tagger()?;
        let dir = self.stage_dir(TAGS);
        let mut manifest = Manifest::new(TAGS, fingerprint);

        let oracle = match &self.cfg.tags.oracle_checkpoint {
            Some(p) => BowEncoder::load(p)?,
            None if train_oracle || self.cfg.tags.train_oracle => {
                let tagged = tag_all(&train_ds, &*tagger)?;
                let empty = TagSetPartition::from_causal([], self.cfg.tags.threshold);
                let data = TrainData {
                    tagged: &tagged,
                    partition: &empty,
                    k: 1,
                    unk_token: &self.cfg.positive.unk_token,
                    negatives: &[],
                    validation: Some(&val_ds.examples),
                };
                let seed = self.cfg.tags.oracle_seed;
                let mut enc = init_bow_encoder(&data, self.cfg.task().num_labels(), &self.cfg.training, seed)?;
                let ce_only = LossConfig {
                    lambda: 0.0,
                    ..self.cfg.loss
                };
                train(&mut enc, &data, &ce_only, &self.cfg.training, seed)?;
                manifest.write_output(&dir, "oracle.json", &pretty(&enc))?;
                enc
            }
            None => return Err(PipelineError::MissingOracle),
        };

        let report = score_tags(&train_ds, &EncoderOracle(&oracle), &*tagger)?;
        let partition = partition_tags(&report, self.cfg.tags.threshold);
        let artifact = TagDiscoveryArtifact::new(&report, &partition);
        manifest.write_output(&dir, TAG_FILE, &pretty(&artifact))?;
        manifest.save(&dir)?;
        Ok(Outcome {
            stage: TAGS.into(),
            dir,
            table: render_table(&report, &partition),
            json: serde_json::to_value(&artifact).expect("json"),
        })
    }

    /// Computes `k` and writes each seed's per-epoch positives.
    pub fn gen_pos(&mut self) -> Result<Outcome, PipelineError> {
        let expected = self.expected_tags()?;
        let tags = self.upstream(TAGS, "discover-tags", &expected)?;
        let partition = self.load_partition()?;
        let (train_ds, _) = self.load_splits()?;
        let tagger = self.build_tagger()?;
        let tagged = tag_all(&train_ds, &*tagger)?;
        let pc = &self.cfg.positive;
        let mean = mean_noncausal_count(&tagged, &partition);
        let k = pc.k_override.map(|k| k.max(1)).unwrap_or_else(|| k_from_mean(mean, pc.scaling_factor));
        let k_art = KArtifact {
            k,
            mean_noncausal: mean,
            scaling_factor: pc.scaling_factor,
            k_override: pc.k_override,
        };

        let dir = self.stage_dir(POS);
        let mut manifest = Manifest::new(POS, self.pos_fingerprint(&tags.config_hash));
        manifest.write_output(&dir, K_FILE, &pretty(&k_art))?;
        let mut rows = 0;
        for &seed in &self.cfg.training.seeds {
            let mut all = Vec::new();
            for epoch in 0..self.cfg.training.epochs {
                all.extend(generate_epoch_positives(&tagged, &partition, k, &pc.unk_token, epoch, seed));
            }
            rows += all.len();
            manifest.write_output(&dir, &format!("positives-seed{seed}.jsonl"), &jsonl(&all))?;
        }
        manifest.save(&dir)?;
        Ok(Outcome {
            stage: POS.into(),
            dir,
            table: format!(
                "k = {k} (mean non-causal tokens {mean:.2} x scaling {}), {rows} positives over {} seed(s)\n",
                pc.scaling_factor,
                self.cfg.training.seeds.len()
            ),
            json: serde_json::to_value(&k_art).expect("json"),
        })
    }

    fn client(&self) -> Result<Box<dyn CompletionClient>, PipelineError> {
        let n = &self.cfg.negative;
        Ok(match n.client {
            ClientKind::Stub => {
                let p = n.antonyms.as_ref().ok_or_else(|| PipelineError::Config("negative.antonyms missing".into()))?;
                Box::new(StubClient::load(p)?)
            }
            ClientKind::Http => Box::new(HttpClient::from_env(Duration::from_secs(n.generation.timeout_secs))?),
        })
    }

    /// Generates counterfactual negatives for one instruction.
    pub fn gen_neg(&mut self, instruction: InstructionId) -> Result<Outcome, PipelineError> {
        let expected = self.expected_tags()?;
        let tags = self.upstream(TAGS, "discover-tags", &expected)?;
        let partition = self.load_partition()?;
        let (train_ds, _) = self.load_splits()?;
        let tagger = self.build_tagger()?;
        let tagged = tag_all(&train_ds, &*tagger)?;
        let client = self.client()?;
        // The offline stub is cheap and deterministic; only real calls are cached.
        let cache = match self.cfg.negative.client {
            ClientKind::Stub => None,
            ClientKind::Http => {
                let dir = self.cfg.negative.cache_dir.clone().unwrap_or_else(|| self.cfg.output_dir.join("cache"));
                Some(ResponseCache::new(&dir).map_err(|e| PipelineError::Io { path: dir, source: e })?)
            }
        };

        let stage = neg_stage(instruction);
        let dir = self.stage_dir(&stage);
        let mut manifest = Manifest::new(&stage, self.neg_fingerprint(&tags.config_hash, instruction)?);
        let task = self.cfg.task();
        let result = generate_negatives(
            &train_ds,
            &tagged,
            &partition,
            instruction,
            &self.cfg.negative.generation,
            &*client,
            cache.as_ref(),
        );
        let batch = match result {
            Ok(b) => b,
            Err(GenerationError::TooManyFailures {
                failed,
                eligible,
                ceiling,
                partial,
            }) => {
                // Keep what succeeded, but leave no manifest: the stage is incomplete.
                manifest.write_output(&dir, NEG_FILE, partial.to_jsonl(&task).as_bytes())?;
                manifest.write_output(&dir, SKIP_FILE, partial.skip_manifest().as_bytes())?;
                return Err(GenerationError::TooManyFailures {
                    failed,
                    eligible,
                    ceiling,
                    partial,
                }
                .into());
            }
            Err(e) => return Err(e.into()),
        };
        manifest.write_output(&dir, NEG_FILE, batch.to_jsonl(&task).as_bytes())?;
        manifest.write_output(&dir, SKIP_FILE, batch.skip_manifest().as_bytes())?;
        manifest.save(&dir)?;
        let summary = json!({
            "instruction": instruction,
            "negatives": batch.negatives.len(),
            "skipped": batch.skipped.len(),
            "failed": batch.failures.len(),
        });
        Ok(Outcome {
            stage,
            dir,
            table: format!(
                "{instruction}: {} negatives, {} skipped (no label flip), {} failed\n",
                batch.negatives.len(),
                batch.skipped.len(),
                batch.failures.len()
            ),
            json: summary,
        })
    }

    /// Trains one encoder per seed on anchors, positives and negatives.
    pub fn train(&mut self) -> Result<Outcome, PipelineError> {
        let instruction = self.cfg.negative.instruction;
        let (e_pos, e_neg) = (self.expected_pos()?, self.expected_neg(instruction)?);
        let pos = self.upstream(POS, "gen-pos", &e_pos)?;
        let neg_stage = neg_stage(instruction);
        let neg = self.upstream(&neg_stage, "gen-neg", &e_neg)?;
        self.upstream(TAGS, "discover-tags", &self.expected_tags()?)?;

        let partition = self.load_partition()?;
        let k_path = self.stage_dir(POS).join(K_FILE);
        let k_raw = std::fs::read_to_string(&k_path).map_err(|e| PipelineError::Io { path: k_path.clone(), source: e })?;
        let k_art: KArtifact = serde_json::from_str(&k_raw).map_err(|e| PipelineError::Config(e.to_string()))?;
        let task = self.cfg.task();
        let negatives = load_negatives(&self.stage_dir(&neg_stage).join(NEG_FILE), &task)?;
        let (train_ds, val_ds) = self.load_splits()?;
        let tagger = self.build_tagger()?;
        let tagged = tag_all(&train_ds, &*tagger)?;
        let data = TrainData {
            tagged: &tagged,
            partition: &partition,
            k: k_art.k,
            unk_token: &self.cfg.positive.unk_token,
            negatives: &negatives,
            validation: Some(&val_ds.examples),
        };

        let dir = self.stage_dir(TRAIN);
        let mut manifest = Manifest::new(TRAIN, self.train_fingerprint(&pos.config_hash, &neg.config_hash));
        let tc = self.cfg.training.clone();
        let mut runs = Vec::new();
        let mut table = String::new();
        for &seed in &tc.seeds {
            let mut enc = init_bow_encoder(&data, task.num_labels(), &tc, seed)?;
            let history = train(&mut enc, &data, &self.cfg.loss, &tc, seed)?;
            let ordering = triplet_ordering(&enc, &data, self.cfg.loss.distance, tc.epochs, seed);
            let name = tc.checkpoint_name(seed, tc.epochs);
            manifest.write_output(&dir, &format!("{name}.json"), &pretty(&enc))?;
            manifest.write_output(&dir, &format!("{}-seed{seed}.metrics.jsonl", tc.run_name), &jsonl(&history))?;
            let last = history.last().cloned().expect("at least one epoch");
            table.push_str(&format!(
                "seed {seed}: ce {:.4}  cl {}  total {:.4}  val_acc {}  d(a,p)<d(a,n) {}/{}\n",
                last.ce,
                last.cl.map(|c| format!("{c:.4}")).unwrap_or_else(|| "-".into()),
                last.total,
                last.val_acc.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                ordering.satisfied,
                ordering.total
            ));
            runs.push(SeedRun {
                seed,
                checkpoint: name,
                final_epoch: last,
                triplet_ordering: ordering,
            });
        }
        let summary = TrainSummary {
            run_name: tc.run_name.clone(),
            runs,
        };
        manifest.write_output(&dir, SUMMARY_FILE, &pretty(&summary))?;
        manifest.save(&dir)?;
        Ok(Outcome {
            stage: TRAIN.into(),
            dir,
            table,
            json: serde_json::to_value(&summary).expect("json"),
        })
    }

    /// Accuracy of every seed's checkpoint on each configured test split.
    pub fn eval(&mut self) -> Result<Outcome, PipelineError> {
        let expected = self.expected_train()?;
        let trained = self.upstream(TRAIN, "train", &expected)?;
        let task = self.cfg.task();
        let mut splits: Vec<(String, Dataset)> = Vec::new();
        for (name, path) in &self.cfg.data.tests {
            let split = serde_json::from_value(Value::String(name.clone())).unwrap_or(Split::OTest);
            splits.push((name.clone(), load_dataset(path, &task, split)?));
        }
        if splits.is_empty() {
            let (_, val) = self.load_splits()?;
            splits.push(("validation".into(), val));
        }
        let seeds = self.cfg.training.seeds.clone();
        let mut per_split: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for &seed in &seeds {
            let enc = BowEncoder::load(&self.checkpoint_path(seed))?;
            for (name, ds) in &splits {
                per_split.entry(name.clone()).or_default().push(evaluate(&enc, ds)?);
            }
        }
        let per_seed = BTreeMap::from([(self.cfg.training.run_name.clone(), per_split)]);
        let order = splits.iter().map(|(n, _)| n.clone()).collect();
        let report = EvalReport::from_per_seed(per_seed, seeds, order)?;

        let dir = self.stage_dir(EVAL);
        let mut manifest = Manifest::new(EVAL, self.eval_fingerprint(&trained.config_hash)?);
        manifest.write_output(&dir, "report.json", &pretty(&report))?;
        manifest.write_output(&dir, "report.txt", report.render_table().as_bytes())?;
        manifest.save(&dir)?;
        Ok(Outcome {
            stage: EVAL.into(),
            dir,
            table: report.render_table(),
            json: serde_json::to_value(&report).expect("json"),
        })
    }

    /// Diversity, overlap and embedding similarity of one instruction's negatives.
    pub fn cad_quality(&mut self, instruction: InstructionId) -> Result<Outcome, PipelineError> {
        let e_neg = self.expected_neg(instruction)?;
        let neg_stage = neg_stage(instruction);
        let neg = self.upstream(&neg_stage, "gen-neg", &e_neg)?;
        let uses_encoder = matches!(
            self.cfg.cad.embedder,
            CadEmbedderKind::EncoderPooled | CadEmbedderKind::EncoderTokens
        );
        let train_hash = if uses_encoder {
            let expected = self.expected_train()?;
            Some(self.upstream(TRAIN, "train", &expected)?.config_hash)
        } else {
            None
        };
        let task = self.cfg.task();
        let negatives = load_negatives(&self.stage_dir(&neg_stage).join(NEG_FILE), &task)?;
        let (train_ds, _) = self.load_splits()?;

        let hashing = HashingEmbedder::default();
        let encoder = match uses_encoder {
            true => Some(BowEncoder::load(&self.checkpoint_path(self.cfg.training.seeds[0]))?),
            false => None,
        };
        let embedder = match (self.cfg.cad.embedder, &encoder) {
            (CadEmbedderKind::HashingTokens, _) => Embedder::TokenMatching(&hashing),
            (CadEmbedderKind::HashingPooled, _) => Embedder::Pooled(&hashing),
            (CadEmbedderKind::EncoderPooled, Some(e)) => Embedder::Pooled(e),
            (CadEmbedderKind::EncoderTokens, Some(e)) => Embedder::TokenMatching(e),
            _ => unreachable!("encoder loaded above"),
        };
        let report: CadQualityReport = cad_quality(&train_ds, &negatives, &embedder, self.cfg.cad.per_pair)?;

        let stage = cad_stage(instruction);
        let dir = self.stage_dir(&stage);
        let mut manifest = Manifest::new(&stage, self.cad_fingerprint(&neg.config_hash, train_hash.as_deref()));
        manifest.write_output(&dir, "report.json", &pretty(&report))?;
        manifest.save(&dir)?;
        let mode = serde_json::to_value(report.mode).expect("json");
        Ok(Outcome {
            stage,
            dir,
            table: format!(
                "{instruction}: diversity {}  overlap {:.2}%  embed_sim {:.4} ({})  pairs {}\n",
                report.diversity,
                report.overlap_pct,
                report.embed_sim,
                mode.as_str().unwrap_or_default(),
                report.pair_count
            ),
            json: serde_json::to_value(&report).expect("json"),
        })
    }
}
