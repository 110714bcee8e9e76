//! Universal part-of-speech tags, tagger backends and per-tag ablation.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{detokenize, tokenize, LabeledExample};

/// Placeholder fed to classifiers when ablation removes every token of a segment.
pub const EMPTY_SENTINEL: &str = "[EMPTY]";

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tagger failed on example {id}: {message}")]
    Example { id: String, message: String },
    #[error("tagger backend error: {0}")]
    Backend(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
}

/// The 12-tag universal tag set. `Punct` is the set's `.` tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UniversalTag {
    Verb,
    Noun,
    Pron,
    Adj,
    Adv,
    Adp,
    Conj,
    Det,
    Num,
    Prt,
    X,
    Punct,
}

impl UniversalTag {
    pub const ALL: [UniversalTag; 12] = [
        UniversalTag::Verb,
        UniversalTag::Noun,
        UniversalTag::Pron,
        UniversalTag::Adj,
        UniversalTag::Adv,
        UniversalTag::Adp,
        UniversalTag::Conj,
        UniversalTag::Det,
        UniversalTag::Num,
        UniversalTag::Prt,
        UniversalTag::X,
        UniversalTag::Punct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UniversalTag::Verb => "VERB",
            UniversalTag::Noun => "NOUN",
            UniversalTag::Pron => "PRON",
            UniversalTag::Adj => "ADJ",
            UniversalTag::Adv => "ADV",
            UniversalTag::Adp => "ADP",
            UniversalTag::Conj => "CONJ",
            UniversalTag::Det => "DET",
            UniversalTag::Num => "NUM",
            UniversalTag::Prt => "PRT",
            UniversalTag::X => "X",
            UniversalTag::Punct => "PUNCT",
        }
    }
}

impl fmt::Display for UniversalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("not a universal tag: {0:?}")]
pub struct ParseTagError(pub String);

impl FromStr for UniversalTag {
    type Err = ParseTagError;

    /// Strict parse: only the 12 universal names (and `.` for PUNCT).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "." {
            return Ok(UniversalTag::Punct);
        }
        UniversalTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseTagError(s.to_string()))
    }
}

/// Maps a tag from any supported backend tagset onto the universal set.
///
/// Accepts universal names, Universal Dependencies UPOS and Penn Treebank
/// tags. Anything unrecognised maps to `X`, so the mapping is total.
pub fn map_backend_tag(tag: &str) -> UniversalTag {
    use UniversalTag::*;
    if let Ok(t) = tag.parse::<UniversalTag>() {
        return t;
    }
    match tag {
        // UD
        "PROPN" => Noun,
        "AUX" => Verb,
        "CCONJ" | "SCONJ" => Conj,
        "PART" => Prt,
        "SYM" | "INTJ" => X,
        // Penn Treebank
        "NN" | "NNS" | "NNP" | "NNPS" | "NP" | "NPS" => Noun,
        "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ" | "MD" => Verb,
        "JJ" | "JJR" | "JJS" => Adj,
        "RB" | "RBR" | "RBS" | "WRB" => Adv,
        "PRP" | "PRP$" | "WP" | "WP$" => Pron,
        "DT" | "PDT" | "WDT" | "EX" => Det,
        "IN" => Adp,
        "CC" => Conj,
        "CD" => Num,
        "RP" | "TO" | "POS" => Prt,
        "FW" | "LS" | "UH" => X,
        "," | ":" | "``" | "''" | "-LRB-" | "-RRB-" | "(" | ")" | "#" | "$" | "HYPH" | "NFP" => Punct,
        _ => X,
    }
}

/// Assigns one universal tag per token.
pub trait Tagger: Send + Sync {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError>;
}

impl<T: Tagger + ?Sized> Tagger for &T {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError> {
        (**self).tag_tokens(tokens)
    }
}

impl<T: Tagger + ?Sized> Tagger for Box<T> {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError> {
        (**self).tag_tokens(tokens)
    }
}

fn is_punct_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| !c.is_alphanumeric())
}

fn is_number_token(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| c.is_ascii_digit())
}

/// Dictionary tagger backed by a token-to-tag table.
///
/// Tokens missing from the table fall back to `default` (punctuation and
/// digits are still recognised). The table may use any backend tagset.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    table: HashMap<String, UniversalTag>,
    default: UniversalTag,
}

impl LexiconTagger {
    pub fn new(table: HashMap<String, UniversalTag>, default: UniversalTag) -> Self {
        LexiconTagger { table, default }
    }

    /// Parses the TSV fixture format: `token<TAB>tag` per line; `#` starts a comment.
    pub fn from_tsv(content: &str, default: UniversalTag) -> Result<Self, TaggerError> {
        let mut table = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (tok, tag) = line.split_once('\t').ok_or_else(|| TaggerError::Lexicon {
                line: i + 1,
                message: "expected token<TAB>tag".into(),
            })?;
            table.insert(tok.trim().to_lowercase(), map_backend_tag(tag.trim()));
        }
        Ok(LexiconTagger { table, default })
    }

    pub fn load(path: &Path, default: UniversalTag) -> Result<Self, TaggerError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| TaggerError::Backend(format!("{}: {e}", path.display())))?;
        Self::from_tsv(&content, default)
    }

    pub fn lookup(&self, token: &str) -> Option<UniversalTag> {
        self.table.get(token).copied()
    }

    fn tag_one(&self, tok: &str) -> UniversalTag {
        if let Some(t) = self.lookup(tok) {
            t
        } else if is_punct_token(tok) {
            UniversalTag::Punct
        } else if is_number_token(tok) {
            UniversalTag::Num
        } else {
            self.default
        }
    }
}

impl Tagger for LexiconTagger {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError> {
        Ok(tokens.iter().map(|t| self.tag_one(t)).collect())
    }
}

/// Built-in English lexicon: closed-class words plus frequent open-class words.
const ENGLISH_LEXICON: &str = include_str!("english_lexicon.tsv");

/// English tagger: built-in lexicon, then suffix rules, then NOUN.
///
/// An optional user lexicon takes precedence over the built-in one.
#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    builtin: LexiconTagger,
    user: Option<LexiconTagger>,
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        HeuristicTagger {
            builtin: LexiconTagger::from_tsv(ENGLISH_LEXICON, UniversalTag::Noun)
                .expect("built-in lexicon parses"),
            user: None,
        }
    }
}

impl HeuristicTagger {
    pub fn with_user_lexicon(user: LexiconTagger) -> Self {
        HeuristicTagger {
            user: Some(user),
            ..Self::default()
        }
    }

    fn tag_one(&self, tok: &str) -> UniversalTag {
        if let Some(t) = self.user.as_ref().and_then(|u| u.lookup(tok)) {
            return t;
        }
        if let Some(t) = self.builtin.lookup(tok) {
            return t;
        }
        if tok.starts_with('[') && tok.ends_with(']') && tok.len() > 2 {
            return UniversalTag::X;
        }
        if is_punct_token(tok) {
            return UniversalTag::Punct;
        }
        if tok.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
            return UniversalTag::Num;
        }
        suffix_rule(tok)
    }
}

fn suffix_rule(tok: &str) -> UniversalTag {
    const ADJ: [&str; 10] = ["ous", "ful", "ive", "able", "ible", "less", "ish", "ic", "ary", "ical"];
    if tok.len() > 4 && tok.ends_with("ly") {
        return UniversalTag::Adv;
    }
    if tok.len() > 4 && (tok.ends_with("ing") || tok.ends_with("ed") || tok.ends_with("ize") || tok.ends_with("ise")) {
        return UniversalTag::Verb;
    }
    if tok.len() > 4 && ADJ.iter().any(|s| tok.ends_with(s)) {
        return UniversalTag::Adj;
    }
    UniversalTag::Noun
}

impl Tagger for HeuristicTagger {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError> {
        Ok(tokens.iter().map(|t| self.tag_one(t)).collect())
    }
}

/// Adapter for an external statistical tagger run as a subprocess.
///
/// The child receives one token per line on stdin and must print one tag per
/// line (optionally `token<TAB>tag`), in any tagset [`map_backend_tag`] knows.
/// A fresh process is spawned per call, so the adapter is safe to share.
#[derive(Debug, Clone)]
pub struct ExternalTagger {
    program: String,
    args: Vec<String>,
}

impl ExternalTagger {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ExternalTagger {
            program: program.into(),
            args,
        }
    }
}

impl Tagger for ExternalTagger {
    fn tag_tokens(&self, tokens: &[String]) -> Result<Vec<UniversalTag>, TaggerError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let backend = |m: String| TaggerError::Backend(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| backend(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let mut buf = tokens.join("\n");
            buf.push('\n');
            stdin.write_all(buf.as_bytes()).map_err(|e| backend(e.to_string()))?;
        }
        let out = child.wait_with_output().map_err(|e| backend(e.to_string()))?;
        if !out.status.success() {
            return Err(backend(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let tags: Vec<UniversalTag> = stdout
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| map_backend_tag(l.rsplit('\t').next().unwrap_or(l).trim()))
            .collect();
        if tags.len() != tokens.len() {
            return Err(backend(format!(
                "returned {} tags for {} tokens",
                tags.len(),
                tokens.len()
            )));
        }
        Ok(tags)
    }
}

/// An example with one universal tag per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedExample {
    pub example: LabeledExample,
    pub tokens: Vec<String>,
    pub tags: Vec<UniversalTag>,
    /// Tokens `[0, segment_len)` belong to `text_a`, the rest to `text_b`.
    pub segment_len: usize,
}

impl TaggedExample {
    pub fn count(&self, tag: UniversalTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Rebuilds an example from (possibly edited) tokens, keeping the segment split.
    pub fn rebuild(&self, tokens: &[String], segment_len: usize) -> LabeledExample {
        let join = |toks: &[String]| {
            if toks.is_empty() {
                EMPTY_SENTINEL.to_string()
            } else {
                detokenize(toks)
            }
        };
        let mut ex = self.example.clone();
        ex.text_a = join(&tokens[..segment_len]);
        if ex.text_b.is_some() {
            ex.text_b = Some(join(&tokens[segment_len..]));
        }
        ex
    }
}

pub fn tag(example: &LabeledExample, tagger: &dyn Tagger) -> Result<TaggedExample, TaggerError> {
    let mut tokens = tokenize(&example.text_a);
    let segment_len = tokens.len();
    if let Some(b) = &example.text_b {
        tokens.extend(tokenize(b));
    }
    let tags = tagger.tag_tokens(&tokens).map_err(|e| TaggerError::Example {
        id: example.id.clone(),
        message: e.to_string(),
    })?;
    if tags.len() != tokens.len() {
        return Err(TaggerError::Example {
            id: example.id.clone(),
            message: format!("{} tags for {} tokens", tags.len(), tokens.len()),
        });
    }
    Ok(TaggedExample {
        example: example.clone(),
        tokens,
        tags,
        segment_len,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub example: LabeledExample,
    pub tokens: Vec<String>,
    pub tags: Vec<UniversalTag>,
    pub removed: usize,
    /// A segment lost all of its tokens and was replaced by [`EMPTY_SENTINEL`].
    pub degenerate: bool,
}

/// Deletes every token carrying `tag`. Surviving tokens keep their order.
///
/// When nothing is removed the original example is returned untouched.
pub fn ablate_tag(tagged: &TaggedExample, tag: UniversalTag) -> Ablation {
    let removed = tagged.count(tag);
    if removed == 0 {
        return Ablation {
            example: tagged.example.clone(),
            tokens: tagged.tokens.clone(),
            tags: tagged.tags.clone(),
            removed: 0,
            degenerate: false,
        };
    }
    let mut tokens = Vec::with_capacity(tagged.tokens.len() - removed);
    let mut tags = Vec::with_capacity(tokens.capacity());
    let mut seg = 0;
    for (i, (tok, &t)) in tagged.tokens.iter().zip(&tagged.tags).enumerate() {
        if t != tag {
            tokens.push(tok.clone());
            tags.push(t);
            if i < tagged.segment_len {
                seg += 1;
            }
        }
    }
    let degenerate = seg == 0 || (tagged.example.text_b.is_some() && seg == tokens.len());
    Ablation {
        example: tagged.rebuild(&tokens, seg),
        tokens,
        tags,
        removed,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> LexiconTagger {
        LexiconTagger::from_tsv("the\tDET\nmovie\tNOUN\nrocks\tVERB\nfilm\tNN\n", UniversalTag::Noun).unwrap()
    }

    #[test]
    fn tags_simple_phrase() {
        let t = tag(&LabeledExample::new("a", "the movie", 1), &fixture()).unwrap();
        assert_eq!(t.tags, [UniversalTag::Det, UniversalTag::Noun]);
        let t = tag(&LabeledExample::new("e", "", 1), &fixture()).unwrap();
        assert!(t.tags.is_empty());
    }

    #[test]
    fn heuristic_tagger_on_review_sentence() {
        let t = tag(
            &LabeledExample::new("a", "Never have I been so glad", 1),
            &HeuristicTagger::default(),
        )
        .unwrap();
        use UniversalTag::*;
        assert_eq!(t.tags, [Adv, Verb, Pron, Verb, Adv, Adj]);
    }

    #[test]
    fn penn_tags_are_mapped() {
        assert_eq!(map_backend_tag("VBZ"), UniversalTag::Verb);
        assert_eq!(map_backend_tag("PRP$"), UniversalTag::Pron);
        assert_eq!(map_backend_tag("PROPN"), UniversalTag::Noun);
        assert_eq!(map_backend_tag("."), UniversalTag::Punct);
        assert_eq!(map_backend_tag("weird"), UniversalTag::X);
        assert!("WEIRD".parse::<UniversalTag>().is_err());
        assert_eq!(fixture().lookup("film"), Some(UniversalTag::Noun));
    }

    #[test]
    fn ablation_cases() {
        let t = tag(&LabeledExample::new("a", "the movie rocks", 1), &fixture()).unwrap();
        let ab = ablate_tag(&t, UniversalTag::Verb);
        assert_eq!(ab.example.text_a, "the movie");
        assert_eq!(ab.removed, 1);
        assert_eq!(ab.example.label, 1);

        let ab = ablate_tag(&t, UniversalTag::Adj);
        assert_eq!(ab.removed, 0);
        assert_eq!(ab.example, t.example);

        let t = tag(&LabeledExample::new("n", "movie movie", 0), &fixture()).unwrap();
        let ab = ablate_tag(&t, UniversalTag::Noun);
        assert!(ab.degenerate);
        assert_eq!(ab.example.text_a, EMPTY_SENTINEL);
    }

    #[test]
    fn ablation_keeps_nli_segments() {
        let ex = LabeledExample::pair("p", "the movie rocks", "movie rocks", 0);
        let t = tag(&ex, &fixture()).unwrap();
        assert_eq!(t.segment_len, 3);
        let ab = ablate_tag(&t, UniversalTag::Det);
        assert_eq!(ab.example.text_a, "movie rocks");
        assert_eq!(ab.example.text_b.as_deref(), Some("movie rocks"));
        let ab = ablate_tag(&t, UniversalTag::Noun);
        assert_eq!(ab.example.text_b.as_deref(), Some("rocks"));
    }

    #[test]
    fn external_tagger_maps_backend_output() {
        let tagger = ExternalTagger::new("awk", vec![r#"{ print $1 "\tNN" }"#.to_string()]);
        let toks: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(tagger.tag_tokens(&toks).unwrap(), [UniversalTag::Noun; 2]);
        let bad = ExternalTagger::new("awk", vec!["NR == 1 { print \"NN\" }".to_string()]);
        assert!(bad.tag_tokens(&toks).is_err());
        let missing = ExternalTagger::new("/nonexistent/tagger", vec![]);
        let err = tag(&LabeledExample::new("id9", "x", 0), &missing).unwrap_err();
        assert!(err.to_string().contains("id9"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tag_strategy() -> impl Strategy<Value = UniversalTag> {
            (0..12usize).prop_map(|i| UniversalTag::ALL[i])
        }

        proptest! {
            #[test]
            fn ablation_removes_exactly_tagged_tokens(
                pairs in prop::collection::vec(("[a-z]{1,6}", tag_strategy()), 1..25),
                target in tag_strategy(),
            ) {
                let tokens: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
                let tags: Vec<UniversalTag> = pairs.iter().map(|p| p.1).collect();
                let tagged = TaggedExample {
                    example: LabeledExample::new("x", detokenize(&tokens), 0),
                    segment_len: tokens.len(),
                    tokens: tokens.clone(),
                    tags: tags.clone(),
                };
                let ab = ablate_tag(&tagged, target);
                let n_target = tags.iter().filter(|&&t| t == target).count();
                prop_assert_eq!(ab.tokens.len(), tokens.len() - n_target);
                let expect: Vec<(String, UniversalTag)> = pairs.iter().filter(|p| p.1 != target).cloned().collect();
                let got: Vec<(String, UniversalTag)> = ab.tokens.into_iter().zip(ab.tags).collect();
                prop_assert_eq!(got, expect);
            }

            #[test]
            fn backend_mapping_is_total(s in "\\PC{0,8}") {
                let t = map_backend_tag(&s);
                prop_assert!(UniversalTag::ALL.contains(&t));
            }
        }
    }
}
