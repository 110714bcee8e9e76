//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::array;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::IndexedRandom;
use rand::Rng;

use salad_core::cad::{diversity, embed_similarity, overlap, pair_with_sources, CadPair, Embedder, HashingEmbedder, SentenceEmbedder, TokenEmbedder};
use salad_core::corpus::{tokenize, Dataset, LabeledExample, Split, Task};
use salad_core::encoder::{BowConfig, BowEncoder, TrainableEncoder, Vocab};
use salad_core::eval::{aggregate_overall, evaluate};
use salad_core::loss::{combined_loss, cross_entropy, triplet_loss, Distance, LossConfig, TripletMode};
use salad_core::negative::prompt::InstructionId;
use salad_core::negative::stub::StubClient;
use salad_core::negative::{generate_negatives, CounterfactualExample, GenerationConfig, Provenance};
use salad_core::positive::{generate_epoch_positives, k_from_mean, mean_noncausal_count, tag_all};
use salad_core::postag::{LexiconTagger, UniversalTag};
use salad_core::rng;
use salad_core::tagset::{partition_tags, score_tags, ClassifierOracle, OracleError, TagSetPartition};
use salad_core::train::{batch_objective, init_bow_encoder, train, triplet_ordering, Batch, TrainData, TrainingConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. tag discovery against a brute-force reference

const LEXICON_20: &str = "\
good\tADJ\ngreat\tADJ\nbad\tADJ\nawful\tADJ\nfilm\tNOUN\nplot\tNOUN\nspielberg\tNOUN\n\
not\tPRT\nthe\tDET\nwas\tVERB\nis\tVERB\nvery\tADV\nand\tCONJ\n";

const FIXTURE_20: [(&str, usize); 20] = [
    ("the film was good", 1),
    ("the film was not good", 0),
    ("the plot was awful", 0),
    ("spielberg film", 1),
    ("the film is very great", 1),
    ("the plot is bad and awful", 0),
    ("not bad", 1),
    ("the film was bad", 0),
    ("spielberg was not great", 0),
    ("great plot and good film", 1),
    ("the film was", 0),
    ("spielberg", 1),
    ("very very good", 1),
    ("the plot was not awful", 1),
    ("bad film", 0),
    ("good and bad", 1),
    ("the spielberg film was awful", 0),
    ("is the plot good", 1),
    ("not the film", 0),
    ("was very bad", 1),
];

/// Counts polar adjectives, inverts on "not", and falls back to the
/// presence of "spielberg" on ties.
struct ScriptedOracle;

fn scripted(words: &[&str]) -> usize {
    let pos = words.iter().filter(|w| matches!(**w, "good" | "great")).count() as i64;
    let neg = words.iter().filter(|w| matches!(**w, "bad" | "awful")).count() as i64;
    let mut score = pos - neg;
    if words.contains(&"not") {
        score = -score;
    }
    match score.signum() {
        1 => 1,
        -1 => 0,
        _ => words.contains(&"spielberg") as usize,
    }
}

impl ClassifierOracle for ScriptedOracle {
    fn predict(&self, ex: &LabeledExample) -> Result<usize, OracleError> {
        let text = ex.joined_text();
        Ok(scripted(&text.split_whitespace().collect::<Vec<_>>()))
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let lexicon: BTreeMap<&str, &str> = LEXICON_20
        .lines()
        .map(|l| l.split_once('\t').unwrap())
        .collect();
    let tagger = LexiconTagger::from_tsv(LEXICON_20, UniversalTag::Noun).map_err(|e| e.to_string())?;
    let examples = FIXTURE_20
        .iter()
        .enumerate()
        .map(|(i, (t, l))| LabeledExample::new(format!("f{i}"), *t, *l))
        .collect();
    let ds = Dataset::new("fixture20", Task::sentiment(), Split::Train, examples).map_err(|e| e.to_string())?;
    let report = score_tags(&ds, &ScriptedOracle, &tagger).map_err(|e| e.to_string())?;

    // Reference: rebuild every ablated sentence from the word list and count.
    let m = FIXTURE_20.len();
    let original: usize = FIXTURE_20
        .iter()
        .filter(|(t, l)| scripted(&t.split_whitespace().collect::<Vec<_>>()) == *l)
        .count();
    let mut expected = BTreeMap::new();
    for tag in UniversalTag::ALL {
        let name = tag.as_str();
        let correct = FIXTURE_20
            .iter()
            .filter(|(t, l)| {
                let kept: Vec<&str> = t.split_whitespace().filter(|w| lexicon[w] != name).collect();
                scripted(&kept) == *l
            })
            .count();
        expected.insert(tag, (original as f64 - correct as f64) / m as f64);
    }
    for (tag, want) in &expected {
        let got = report.score(*tag);
        ensure!(got == *want, "R({tag:?}) = {got}, brute force {want}");
    }
    ensure!(expected.values().any(|v| *v != 0.0), "fixture exercises no tag");

    // Boundary: a threshold equal to a tag's score puts it in the causal set.
    let (&edge_tag, &edge) = expected
        .iter()
        .filter(|(_, v)| **v > 0.0)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or("no tag with positive R")?;
    let p = partition_tags(&report, edge);
    ensure!(p.is_causal(edge_tag), "{edge_tag:?} with R == threshold not causal");
    for (tag, v) in &expected {
        ensure!(p.is_causal(*tag) == (*v >= edge), "{tag:?} misplaced at threshold {edge}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    let nonzero: Vec<String> = expected
        .iter()
        .filter(|(_, v)| **v != 0.0)
        .map(|(t, v)| format!("{}={v}", t.as_str()))
        .collect();
    Ok(format!("12 tags match brute force ({}), boundary {edge} causal, {elapsed:.2?}", nonzero.join(" ")))
}

// ---------------------------------------------------------------------------
// 2. k rule

fn criterion_2() -> Outcome {
    ensure!(k_from_mean(45.0, 0.18) == 8, "k_from_mean(45, 0.18) = {}", k_from_mean(45.0, 0.18));
    // Same number reached from a corpus whose mean non-causal count is 45.
    let lexicon = "good\tADJ\nthe\tDET\n";
    let tagger = LexiconTagger::from_tsv(lexicon, UniversalTag::Noun).map_err(|e| e.to_string())?;
    let examples = [40usize, 50, 45, 45]
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut words = vec!["good"; 3];
            words.extend(std::iter::repeat_n("the", *n));
            LabeledExample::new(format!("k{i}"), words.join(" "), 1)
        })
        .collect();
    let ds = Dataset::new("k", Task::sentiment(), Split::Train, examples).map_err(|e| e.to_string())?;
    let tagged = tag_all(&ds, &tagger).map_err(|e| e.to_string())?;
    let partition = TagSetPartition::from_causal([UniversalTag::Adj], 0.01);
    let mean = mean_noncausal_count(&tagged, &partition);
    ensure!(mean == 45.0, "mean non-causal count {mean}");
    let k = k_from_mean(mean, 0.18);
    ensure!(k == 8, "k = {k}");
    Ok("mean 45, scaling 0.18 -> k = 8".into())
}

// ---------------------------------------------------------------------------
// 3. masking invariants

const WORDS: [(&str, UniversalTag); 10] = [
    ("good", UniversalTag::Adj),
    ("bad", UniversalTag::Adj),
    ("film", UniversalTag::Noun),
    ("plot", UniversalTag::Noun),
    ("the", UniversalTag::Det),
    ("a", UniversalTag::Det),
    ("was", UniversalTag::Verb),
    ("very", UniversalTag::Adv),
    ("and", UniversalTag::Conj),
    ("of", UniversalTag::Adp),
];

fn word_tagger() -> LexiconTagger {
    let tsv: String = WORDS.iter().map(|(w, t)| format!("{w}\t{}\n", t.as_str())).collect();
    LexiconTagger::from_tsv(&tsv, UniversalTag::Noun).unwrap()
}

fn criterion_3() -> Outcome {
    let tagger = word_tagger();
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (
        proptest::collection::vec(0..WORDS.len(), 1..40),
        proptest::collection::btree_set(0..UniversalTag::ALL.len(), 0..6),
        1usize..12,
        any::<u64>(),
        0usize..50,
    );
    runner
        .run(&strategy, |(word_ids, causal_ids, k, seed, epoch)| {
            let text: Vec<&str> = word_ids.iter().map(|&i| WORDS[i].0).collect();
            let ds = Dataset::new("p", Task::sentiment(), Split::Train, vec![LabeledExample::new("x", text.join(" "), 1)]).unwrap();
            let tagged = tag_all(&ds, &tagger).unwrap();
            let partition = TagSetPartition::from_causal(causal_ids.iter().map(|&i| UniversalTag::ALL[i]), 0.01);
            let a = generate_epoch_positives(&tagged, &partition, k, "[UNK]", epoch, seed);
            let b = generate_epoch_positives(&tagged, &partition, k, "[UNK]", epoch, seed);
            prop_assert_eq!(&a, &b);
            let pos = &a[0];
            let orig = &tagged[0];
            let toks = tokenize(&pos.text);
            prop_assert_eq!(toks.len(), orig.tokens.len());
            let eligible: BTreeSet<usize> = (0..orig.tokens.len()).filter(|&i| !partition.is_causal(orig.tags[i])).collect();
            prop_assert_eq!(pos.replaced_positions.len(), k.min(eligible.len()));
            for (i, (t, o)) in toks.iter().zip(&orig.tokens).enumerate() {
                if pos.replaced_positions.contains(&i) {
                    prop_assert!(eligible.contains(&i), "causal position {} replaced", i);
                    prop_assert_eq!(t.as_str(), "[UNK]");
                } else {
                    prop_assert_eq!(t, o);
                }
            }
            Ok(())
        })
        .map_err(|e| format!("property failed: {e}"))?;

    // Selection frequency: every non-causal position is picked with
    // probability k/n. Check each against 3 standard errors.
    let draws = 20_000usize;
    let mut worst = 0.0f64;
    for (sentence, k) in [("the good film was very bad and the plot of a film", 3usize), ("a good and bad film", 1), ("the the the good the", 2)] {
        let ds = Dataset::new("f", Task::sentiment(), Split::Train, vec![LabeledExample::new("x", sentence, 1)]).unwrap();
        let tagged = tag_all(&ds, &tagger).unwrap();
        let partition = TagSetPartition::from_causal([UniversalTag::Adj], 0.01);
        let eligible: Vec<usize> = (0..tagged[0].tokens.len()).filter(|&i| tagged[0].tags[i] != UniversalTag::Adj).collect();
        let n = eligible.len();
        let mut hits = vec![0usize; tagged[0].tokens.len()];
        for d in 0..draws {
            let p = &generate_epoch_positives(&tagged, &partition, k, "[UNK]", d, 99)[0];
            for &i in &p.replaced_positions {
                hits[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for &i in &eligible {
            let z = (hits[i] as f64 / draws as f64 - p).abs() / se;
            worst = worst.max(z);
            ensure!(z <= 3.0, "{sentence:?} position {i}: frequency {} vs {p}, z = {z:.2}", hits[i] as f64 / draws as f64);
        }
    }
    Ok(format!("1000 randomized cases hold; selection frequency max |z| = {worst:.2} over {draws} draws"))
}

// ---------------------------------------------------------------------------
// 4. loss values

fn criterion_4() -> Outcome {
    let uniform = cross_entropy(array![[0.0, 0.0]].view(), &[0]).map_err(|e| e.to_string())?;
    ensure!((uniform - 2f64.ln()).abs() <= 1e-6, "uniform CE {uniform}");
    let skewed = cross_entropy(array![[2.0, 0.0]].view(), &[1]).map_err(|e| e.to_string())?;
    let want = (1.0 + 2f64.exp()).ln();
    ensure!((skewed - want).abs() <= 1e-6, "CE {skewed} vs {want}");

    // (anchor, positive, negative, margin, expected)
    let cases = [
        ([0.0, 0.0], [0.0, 1.0], [3.0, 0.0], 1.0, 0.0),
        ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], 0.0, 0.0),
        ([0.0, 0.0], [0.0, 2.0], [0.0, 1.0], 1.0, 2.0),
    ];
    for mode in [TripletMode::BatchMeanHinge, TripletMode::PerExampleHinge] {
        for (a, p, n, margin, want) in cases {
            let cfg = LossConfig {
                margin,
                triplet_mode: mode,
                distance: Distance::Euclidean,
                ..LossConfig::default()
            };
            let got = triplet_loss(array![a].view(), array![p].view(), array![n].view(), &cfg).map_err(|e| e.to_string())?;
            ensure!((got - want).abs() <= 1e-9, "{mode:?} a={a:?} p={p:?} n={n:?}: {got} vs {want}");
        }
    }
    for (ce, cl) in [(0.5, 2.0), (0.123456789, 7.5), (3.0, 0.0)] {
        ensure!(combined_loss(ce, cl, 0.0) == ce, "lambda 0 not exact");
        ensure!(combined_loss(ce, cl, 1.0) == cl, "lambda 1 not exact");
    }
    ensure!((combined_loss(0.5, 2.0, 0.9) - 1.85).abs() < 1e-12, "0.9 case");
    Ok("CE ln2 / ln(1+e^2) ok, 3 triplet cases x 2 modes ok, lambda boundaries exact".into())
}

// ---------------------------------------------------------------------------
// 5. gradient check of the combined objective

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let anchors = vec![
        LabeledExample::new("a0", "the good film", 1),
        LabeledExample::new("a1", "a bad plot was very bad", 0),
        LabeledExample::new("a2", "the film of a plot", 1),
        LabeledExample::new("a3", "very good and the film", 0),
    ];
    let positives = vec![
        LabeledExample::new("p0", "[UNK] good film", 1),
        LabeledExample::new("p1", "a bad [UNK] was very bad", 0),
        LabeledExample::new("p3", "very good [UNK] the film", 0),
    ];
    let negatives = vec![
        LabeledExample::new("n0", "the bad film", 0),
        LabeledExample::new("n1", "a good plot was very good", 1),
        LabeledExample::new("n3", "very bad and the film", 1),
    ];
    let batch = Batch {
        anchors: anchors.clone(),
        triplet_rows: vec![0, 1, 3],
        positives: positives.clone(),
        negatives: negatives.clone(),
    };
    let vocab = Vocab::build("[UNK]", anchors.iter().chain(&positives).chain(&negatives));
    let cfg = BowConfig {
        embed_dim: 5,
        hidden: 8,
        num_classes: 2,
        max_seq_len: 16,
    };
    let mut enc = BowEncoder::new(cfg, vocab, &mut rng::stream(3, &["gradcheck"])).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for distance in [Distance::Euclidean, Distance::CosineDistance] {
        for mode in [TripletMode::BatchMeanHinge, TripletMode::PerExampleHinge] {
            let loss = LossConfig {
                lambda: 0.5,
                margin: 1.0,
                distance,
                triplet_mode: mode,
            };
            let (bl, analytic) = batch_objective(&enc, &batch, &loss, false).map_err(|e| e.to_string())?;
            ensure!(bl.cl.is_some(), "triplet branch not evaluated");
            let h = 1e-6;
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..analytic.len() {
                let orig = enc.params()[i];
                enc.params_mut()[i] = orig + h;
                let up = batch_objective(&enc, &batch, &loss, false).map_err(|e| e.to_string())?.0.total;
                enc.params_mut()[i] = orig - h;
                let down = batch_objective(&enc, &batch, &loss, false).map_err(|e| e.to_string())?.0.total;
                enc.params_mut()[i] = orig;
                numeric[i] = (up - down) / (2.0 * h);
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
            let rel = diff / scale.max(1e-12);
            worst = worst.max(rel);
            ensure!(rel <= 1e-4, "{distance:?}/{mode:?}: relative error {rel:e}");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{} params, 2 distances x 2 modes, worst relative error {worst:.2e}, {elapsed:.2?}", enc.params().len()))
}

// ---------------------------------------------------------------------------
// 6. shortcut mitigation on a planted-token corpus

const POS_ADJ: [&str; 20] = [
    "great", "wonderful", "excellent", "superb", "brilliant", "lovely", "charming", "delightful", "moving", "clever",
    "fresh", "gripping", "stunning", "witty", "warm", "vivid", "smart", "elegant", "joyful", "solid",
];
const NEG_ADJ: [&str; 20] = [
    "awful", "dreadful", "terrible", "poor", "dull", "ugly", "tedious", "painful", "flat", "stupid", "stale", "boring",
    "bland", "clumsy", "cold", "murky", "dumb", "crude", "bleak", "weak",
];
const NOUNS: [&str; 14] = [
    "film", "movie", "plot", "cast", "story", "script", "ending", "score", "pacing", "dialogue", "camera", "lead",
    "sequel", "premise",
];
const FILLERS: [&str; 6] = ["really", "quite", "truly", "rather", "fairly", "very"];
const SPURIOUS: &str = "spielberg";

fn shortcut_sentence<R: Rng>(r: &mut R, positive: bool, spurious: bool) -> String {
    let adj = if positive { POS_ADJ.choose(r) } else { NEG_ADJ.choose(r) }.unwrap();
    let mut words = vec![
        "the",
        NOUNS.choose(r).unwrap(),
        "and",
        "the",
        NOUNS.choose(r).unwrap(),
        "were",
        FILLERS.choose(r).unwrap(),
        adj,
    ];
    if spurious {
        let at = r.random_range(0..=words.len());
        words.insert(at, SPURIOUS);
    }
    words.join(" ")
}

/// 500 train examples where the planted token rides along with 95% of
/// positives, and 200 ODD examples where it only ever appears in negatives.
fn shortcut_corpus(seed: u64) -> (Dataset, Dataset) {
    let mut r = rng::stream(seed, &["corpus"]);
    let train = (0..500)
        .map(|i| {
            let positive = i % 2 == 0;
            let sp = positive && r.random_bool(0.95);
            LabeledExample::new(format!("t{i}"), shortcut_sentence(&mut r, positive, sp), positive as usize)
        })
        .collect();
    let odd = (0..200)
        .map(|i| {
            let positive = i % 2 == 0;
            LabeledExample::new(format!("o{i}"), shortcut_sentence(&mut r, positive, !positive), positive as usize)
        })
        .collect();
    (
        Dataset::new("shortcut-train", Task::sentiment(), Split::Train, train).unwrap(),
        Dataset::new("shortcut-odd", Task::sentiment(), Split::Odd, odd).unwrap(),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (train_ds, odd) = shortcut_corpus(0);
    let train_spurious = train_ds.examples.iter().filter(|e| e.label == 1 && e.tokens().iter().any(|t| t == SPURIOUS)).count();
    ensure!(odd.examples.iter().all(|e| e.label == 0 || !e.tokens().iter().any(|t| t == SPURIOUS)), "ODD leaks the shortcut");

    let mut lex = String::new();
    for w in POS_ADJ.iter().chain(&NEG_ADJ) {
        lex += &format!("{w}\tADJ\n");
    }
    for w in NOUNS.iter().chain([&SPURIOUS]) {
        lex += &format!("{w}\tNOUN\n");
    }
    for w in FILLERS {
        lex += &format!("{w}\tADV\n");
    }
    lex += "the\tDET\nand\tCONJ\nwere\tVERB\n";
    let tagger = LexiconTagger::from_tsv(&lex, UniversalTag::Noun).map_err(|e| e.to_string())?;
    let partition = TagSetPartition::from_causal([UniversalTag::Adj], 0.01);
    let tagged = tag_all(&train_ds, &tagger).map_err(|e| e.to_string())?;
    let k = k_from_mean(mean_noncausal_count(&tagged, &partition), 0.18);
    let stub = StubClient::new(POS_ADJ.iter().zip(NEG_ADJ.iter()).map(|(a, b)| (*a, *b)));
    let negatives = generate_negatives(&train_ds, &tagged, &partition, InstructionId::I4, &GenerationConfig::default(), &stub, None)
        .map_err(|e| e.to_string())?
        .negatives;
    let data = TrainData {
        tagged: &tagged,
        partition: &partition,
        k,
        unk_token: "[UNK]",
        negatives: &negatives,
        validation: None,
    };
    let cfg = TrainingConfig {
        batch_size: 16,
        learning_rate: 0.01,
        epochs: 40,
        embed_dim: 16,
        hidden: 8,
        max_seq_len: 64,
        seeds: vec![0, 1, 2],
        ..TrainingConfig::default()
    };
    // The pooled layer is tanh-bounded, so distances top out near
    // 2*sqrt(hidden); margin 1 is too loose to separate counterfactuals.
    let margin = 4.0;
    let (mut salad, mut base, mut satisfied, mut total) = (Vec::new(), Vec::new(), 0, 0);
    for &seed in &cfg.seeds {
        for lambda in [0.5, 0.0] {
            let loss = LossConfig {
                lambda,
                margin,
                ..LossConfig::default()
            };
            let mut enc = init_bow_encoder(&data, 2, &cfg, seed).map_err(|e| e.to_string())?;
            train(&mut enc, &data, &loss, &cfg, seed).map_err(|e| e.to_string())?;
            let acc = evaluate(&enc, &odd).map_err(|e| e.to_string())?;
            if lambda > 0.0 {
                let ord = triplet_ordering(&enc, &data, loss.distance, cfg.epochs, seed);
                satisfied += ord.satisfied;
                total += ord.total;
                salad.push(acc);
            } else {
                base.push(acc);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = mean(&salad) - mean(&base);
    let ordering = satisfied as f64 / total as f64;
    let elapsed = start.elapsed();
    let summary = format!(
        "k={k}, {} negatives, planted token in {train_spurious}/250 train positives; ODD acc SALAD {:.2} {salad:?} vs CE-only {:.2} {base:?}, gain {gain:+.2}pp; d(a,p)<d(a,n) on {:.1}% of anchors; {elapsed:.1?}",
        negatives.len(),
        mean(&salad),
        mean(&base),
        100.0 * ordering
    );
    ensure!(gain >= 5.0, "gain below 5pp: {summary}");
    ensure!(ordering >= 0.9, "triplet ordering below 90%: {summary}");
    ensure!(elapsed < Duration::from_secs(600), "over 10 minutes: {summary}");
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 7. overall aggregation on published rows

fn criterion_7() -> Outcome {
    let row = |cols: &[(&str, f64)]| cols.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
    let sentiment = BTreeMap::from([(
        "SALAD".to_string(),
        row(&[("o_test", 93.78), ("cf_test", 95.90), ("yelp", 94.99), ("sst2", 92.68), ("findfood", 95.58), ("tweet", 85.35)]),
    )]);
    let sexism = BTreeMap::from([("SALAD".to_string(), row(&[("o_test", 93.07), ("cf_test", 88.47), ("tweet", 83.38)]))]);
    let s = aggregate_overall(&sentiment).map_err(|e| e.to_string())?["SALAD"];
    let x = aggregate_overall(&sexism).map_err(|e| e.to_string())?["SALAD"];
    ensure!((s - 93.05).abs() <= 0.005, "sentiment overall {s}");
    ensure!((x - 88.31).abs() <= 0.005, "sexism overall {x}");
    Ok(format!("sentiment {s:.4} (93.05), sexism {x:.4} (88.31)"))
}

// ---------------------------------------------------------------------------
// 8. CAD metrics against set arithmetic

struct KnownVectors;

impl SentenceEmbedder for KnownVectors {
    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        Ok(vec![text.len() as f64, 1.0, -(text.split_whitespace().count() as f64)])
    }
}

impl TokenEmbedder for KnownVectors {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, String> {
        text.split_whitespace().map(|w| self.embed(w)).collect()
    }
}

fn criterion_8() -> Outcome {
    let originals = [
        ("c0", "the film was good", 1),
        ("c1", "a dull and slow plot", 0),
        ("c2", "good good acting", 1),
    ];
    let counterfactuals = [
        ("c0", "the film was terrible", 0),
        ("c1", "a lively and brisk plot", 1),
        ("c2", "bad wooden acting", 0),
    ];
    let train = Dataset::new(
        "cad3",
        Task::sentiment(),
        Split::Train,
        originals.iter().map(|(id, t, l)| LabeledExample::new(*id, *t, *l)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let cad: Vec<CounterfactualExample> = counterfactuals
        .iter()
        .map(|(id, t, l)| CounterfactualExample {
            source_id: id.to_string(),
            text: t.to_string(),
            text_b: None,
            label: *l,
            instruction_id: InstructionId::I4,
            raw_response_hash: String::new(),
            provenance: Provenance::HumanImport,
        })
        .collect();

    let words = |t: &str| t.split_whitespace().map(str::to_string).collect::<BTreeSet<String>>();
    let train_types: BTreeSet<String> = originals.iter().flat_map(|(_, t, _)| words(t)).collect();
    let cf_types: BTreeSet<String> = counterfactuals.iter().flat_map(|(_, t, _)| words(t)).collect();
    let want_div = cf_types.difference(&train_types).count();
    let got_div = diversity(&train, &cad);
    ensure!(got_div == want_div, "diversity {got_div} vs {want_div}");

    let (pairs, orphans) = pair_with_sources(&train, &cad);
    ensure!(orphans.is_empty() && pairs.len() == 3, "pairing failed");
    let per: Vec<f64> = originals
        .iter()
        .zip(&counterfactuals)
        .map(|((_, o, _), (_, c, _))| {
            let (o, c) = (words(o), words(c));
            100.0 * o.intersection(&c).count() as f64 / o.len() as f64
        })
        .collect();
    let want_overlap = per.iter().sum::<f64>() / per.len() as f64;
    let got = overlap(&pairs).map_err(|e| e.to_string())?;
    ensure!(got.overlap_pct == want_overlap, "overlap {} vs {want_overlap}", got.overlap_pct);
    ensure!(got.per_pair.iter().flatten().copied().collect::<Vec<_>>() == per, "per-pair overlap differs");

    let identical: Vec<CadPair> = pairs
        .iter()
        .map(|p| CadPair {
            id: p.id.clone(),
            original: p.original.clone(),
            counterfactual: p.original.clone(),
        })
        .collect();
    let hashing = HashingEmbedder::default();
    let all_texts: Vec<LabeledExample> = train.examples.clone();
    let enc = BowEncoder::new(
        BowConfig {
            embed_dim: 6,
            hidden: 4,
            num_classes: 2,
            max_seq_len: 16,
        },
        Vocab::build("[UNK]", all_texts.iter()),
        &mut rng::stream(0, &["cad"]),
    )
    .map_err(|e| e.to_string())?;
    let embedders: [(&str, Embedder); 6] = [
        ("known/pooled", Embedder::Pooled(&KnownVectors)),
        ("known/tokens", Embedder::TokenMatching(&KnownVectors)),
        ("hashing/pooled", Embedder::Pooled(&hashing)),
        ("hashing/tokens", Embedder::TokenMatching(&hashing)),
        ("encoder/pooled", Embedder::Pooled(&enc)),
        ("encoder/tokens", Embedder::TokenMatching(&enc)),
    ];
    for (name, e) in &embedders {
        let sim = embed_similarity(&identical, e).map_err(|e| e.to_string())?;
        ensure!((sim.mean - 1.0).abs() <= 1e-6, "{name}: identical pairs score {}", sim.mean);
    }
    Ok(format!(
        "diversity {got_div}, overlap {:.4}% match set arithmetic; identical pairs = 1 under 6 embedders",
        got.overlap_pct
    ))
}

// ---------------------------------------------------------------------------
// 9. offline CLI chain, run twice

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy/salad.toml")
}

fn run_chain(out: &Path) -> Result<(), String> {
    let config = fixture_config();
    for step in ["discover-tags", "gen-pos", "gen-neg", "train", "eval", "cad-quality"] {
        let o = Command::new(env!("CARGO_BIN_EXE_salad"))
            .arg(step)
            .arg("--config")
            .arg(&config)
            .arg("--output-dir")
            .arg(out)
            .arg("--strict")
            // Make sure nothing could reach a real endpoint.
            .env_remove("SALAD_API_KEY")
            .env("SALAD_API_BASE", "http://127.0.0.1:9")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{step} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    run_chain(&a)?;
    run_chain(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    ensure!(fa.keys().eq(fb.keys()), "different file sets: {:?} vs {:?}", fa.keys(), fb.keys());
    for stage in ["tags", "pos", "neg/I4", "train", "eval", "cad/I4"] {
        ensure!(fa.contains_key(&Path::new(stage).join("manifest.json")), "no manifest for {stage}");
    }
    for (path, bytes) in &fa {
        ensure!(&fb[path] == bytes, "{} differs between runs", path.display());
    }
    Ok(format!("6 stages, {} artifacts byte-identical across two runs", fa.len()))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("tag discovery matches brute force", criterion_1),
        ("k rule", criterion_2),
        ("masking invariants", criterion_3),
        ("loss values", criterion_4),
        ("gradient check", criterion_5),
        ("shortcut mitigation", criterion_6),
        ("overall aggregation", criterion_7),
        ("CAD metrics", criterion_8),
        ("offline CLI pipeline", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
