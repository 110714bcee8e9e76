//! Instruction templates for counterfactual generation.
//!
//! Four instructions of increasing specificity. The fourth also lists the
//! causal words of the sentence and is the default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{flip_map, GenerationError};
use crate::corpus::{LabeledExample, Task, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum InstructionId {
    I1,
    I2,
    I3,
    #[default]
    I4,
}

impl InstructionId {
    pub const ALL: [InstructionId; 4] = [
        InstructionId::I1,
        InstructionId::I2,
        InstructionId::I3,
        InstructionId::I4,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }
}

impl fmt::Display for InstructionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I{}", self.number())
    }
}

impl FromStr for InstructionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches(['I', 'i']);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Self::from_number)
            .ok_or_else(|| format!("unknown instruction {s:?}, expected 1-4"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub instruction_id: InstructionId,
    pub task: Task,
    pub source_label: usize,
    pub target_label: usize,
}

impl PromptTemplate {
    /// `None` when the source label has no flip (NLI neutral).
    pub fn new(instruction_id: InstructionId, task: &Task, source_label: usize) -> Option<Self> {
        let target_label = flip_map(task, source_label)?;
        Some(PromptTemplate {
            instruction_id,
            task: task.clone(),
            source_label,
            target_label,
        })
    }

    pub fn causal_words_slot(&self) -> bool {
        self.instruction_id == InstructionId::I4
    }
}

fn with_article(label: &str) -> String {
    let vowel = label.starts_with(['a', 'e', 'i', 'o', 'u']);
    format!("{} {label}", if vowel { "an" } else { "a" })
}

fn task_phrase(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Sentiment => "sentiment analysis",
        TaskKind::Sexism => "sexism classification",
        TaskKind::Nli => "natural language inference",
    }
}

pub const CAUSAL_WORDS_PREFIX: &str = "Causal Words: ";
pub const SENTENCE_PREFIX: &str = "Sentence: ";
pub const PREMISE_PREFIX: &str = "Premise: ";
pub const HYPOTHESIS_PREFIX: &str = "Hypothesis: ";

/// Renders the instruction followed by the example text.
///
/// Single-sentence tasks end with a `Sentence:` line. NLI prompts show
/// both `Premise:` and `Hypothesis:` and ask for edits to the hypothesis only.
pub fn render_prompt(
    tpl: &PromptTemplate,
    example: &LabeledExample,
    causal_words: &[String],
) -> Result<String, GenerationError> {
    if tpl.causal_words_slot() && causal_words.is_empty() {
        return Err(GenerationError::Config(format!(
            "instruction {} needs causal words but example {} has none",
            tpl.instruction_id, example.id
        )));
    }
    let labels = tpl.task.labels();
    let source = with_article(&labels[tpl.source_label]);
    let target = with_article(&labels[tpl.target_label]);
    let task = task_phrase(tpl.task.kind());
    let pair = tpl.task.is_pair_task();

    let (unit, scope, edit_scope) = if pair {
        ("pair", "premise and hypothesis are", " in the hypothesis")
    } else {
        ("sentence", "sentence is", " in the sentence")
    };
    let goal = format!("make it {target} {unit}");
    let context = format!("The following {scope} {source} {unit} in {task}.");
    let hyp_only = if pair { " by editing the hypothesis" } else { "" };

    let instruction = match tpl.instruction_id {
        InstructionId::I1 => format!("Please {goal}{hyp_only}."),
        InstructionId::I2 => format!("{context} Please {goal}{hyp_only}."),
        InstructionId::I3 => {
            let scope = if pair { edit_scope } else { "" };
            format!(
                "{context} Just change a few words{scope} to {goal} while preserving the original text as much as possible."
            )
        }
        InstructionId::I4 => format!(
            "{context} Just change a few words among causal words{edit_scope} to {goal} while preserving the original text as much as possible. {CAUSAL_WORDS_PREFIX}{}",
            causal_words.join(", ")
        ),
    };

    let mut out = instruction;
    match &example.text_b {
        Some(hyp) if pair => {
            out.push('\n');
            out.push_str(PREMISE_PREFIX);
            out.push_str(&example.text_a);
            out.push('\n');
            out.push_str(HYPOTHESIS_PREFIX);
            out.push_str(hyp);
        }
        _ => {
            out.push('\n');
            out.push_str(SENTENCE_PREFIX);
            out.push_str(&example.text_a);
        }
    }
    Ok(out)
}

/// The pieces of a rendered prompt an offline client needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedPrompt {
    pub causal_words: Option<Vec<String>>,
    /// The text to be edited: the sentence, or the NLI hypothesis.
    pub target: String,
}

pub fn parse_prompt(prompt: &str) -> ParsedPrompt {
    let mut parsed = ParsedPrompt::default();
    for line in prompt.lines() {
        if let Some(pos) = line.find(CAUSAL_WORDS_PREFIX) {
            let words = &line[pos + CAUSAL_WORDS_PREFIX.len()..];
            parsed.causal_words = Some(
                words
                    .split(", ")
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect(),
            );
        } else if let Some(s) = line.strip_prefix(SENTENCE_PREFIX) {
            parsed.target = s.to_string();
        } else if let Some(s) = line.strip_prefix(HYPOTHESIS_PREFIX) {
            parsed.target = s.to_string();
        }
    }
    parsed
}
