//! Offline completion client that flips words through an antonym table.

use std::collections::HashMap;
use std::path::Path;

use super::client::{ChatRequest, ClientError, CompletionClient};
use super::prompt::parse_prompt;
use super::Provenance;
use crate::corpus::{detokenize, tokenize};

/// Deterministic stand-in for a chat model.
///
/// Reads the target text and causal-word list back out of the rendered
/// prompt and replaces each token that has an antonym. With a causal-word
/// list only those words are eligible; without one, any listed word is.
#[derive(Debug, Clone, Default)]
pub struct StubClient {
    antonyms: HashMap<String, String>,
}

impl StubClient {
    /// Pairs are inserted in both directions.
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut antonyms = HashMap::new();
        for (a, b) in pairs {
            let (a, b) = (a.into().to_lowercase(), b.into().to_lowercase());
            antonyms.entry(b.clone()).or_insert_with(|| a.clone());
            antonyms.insert(a, b);
        }
        StubClient { antonyms }
    }

    /// TSV: `word<TAB>antonym` per line, `#` comments allowed.
    pub fn from_tsv(content: &str) -> Result<Self, ClientError> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| ClientError::Response(format!("antonym table line {}: expected word<TAB>antonym", i + 1)))?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        Ok(Self::new(pairs))
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Request(format!("{}: {e}", path.display())))?;
        Self::from_tsv(&content)
    }

    pub fn flip(&self, text: &str, causal_words: Option<&[String]>) -> String {
        let tokens: Vec<String> = tokenize(text)
            .into_iter()
            .map(|tok| {
                let eligible = causal_words.is_none_or(|cw| cw.iter().any(|w| w == &tok));
                match self.antonyms.get(&tok) {
                    Some(ant) if eligible => ant.clone(),
                    _ => tok,
                }
            })
            .collect();
        detokenize(&tokens)
    }
}

impl CompletionClient for StubClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let parsed = parse_prompt(request.prompt());
        if parsed.target.is_empty() {
            return Err(ClientError::Response("prompt carries no target text".into()));
        }
        Ok(self.flip(&parsed.target, parsed.causal_words.as_deref()))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Stub
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_only_listed_causal_words() {
        let stub = StubClient::from_tsv("boring\texciting\nglad\tsad\nlong\tshort\n").unwrap();
        let words = vec!["boring".to_string(), "glad".to_string()];
        assert_eq!(
            stub.flip("Long, boring, blasphemous. Never have I been so glad", Some(&words)),
            "long , exciting , blasphemous . never have i been so sad"
        );
        assert_eq!(stub.flip("so sad", None), "so glad");
        assert_eq!(stub.flip("long", None), "short");
    }

    #[test]
    fn rejects_prompt_without_target() {
        let stub = StubClient::default();
        assert!(stub.complete(&ChatRequest::user("m", "no target", 0.1, 1.0)).is_err());
        assert!(StubClient::from_tsv("missing-tab\n").is_err());
    }
}
