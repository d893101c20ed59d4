use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    #[default]
    Char,
    Word,
}

impl Tokenization {
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Char => text.chars().map(String::from).collect(),
            Tokenization::Word => text.split_whitespace().map(String::from).collect(),
        }
    }
}

impl std::str::FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Tokenization::Char),
            "word" => Ok(Tokenization::Word),
            other => Err(Error::param(
                "tokenization",
                format!("`{other}` is neither `char` nor `word`"),
            )),
        }
    }
}

/// Ordered token set shared by every model of an ensemble.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokenization: Tokenization,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokenization: Tokenization,
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(repr: VocabularyRepr) -> Self {
        Vocabulary::from_tokens(repr.tokenization, repr.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(vocab: Vocabulary) -> Self {
        VocabularyRepr {
            tokenization: vocab.tokenization,
            tokens: vocab.tokens,
        }
    }
}

impl Vocabulary {
    /// Sorted set of all tokens occurring in `documents`.
    pub fn build<S: AsRef<str>>(documents: &[S], tokenization: Tokenization) -> Self {
        let tokens: BTreeSet<String> = documents
            .iter()
            .flat_map(|d| tokenization.split(d.as_ref()))
            .collect();
        Self::from_tokens(tokenization, tokens.into_iter().collect())
    }

    pub fn from_tokens(tokenization: Tokenization, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            tokenization,
            tokens,
            index,
        }
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.tokenization
            .split(text)
            .into_iter()
            .map(|t| self.id(&t).ok_or(Error::OutOfVocabulary(t)))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let sep = match self.tokenization {
            Tokenization::Char => "",
            Tokenization::Word => " ",
        };
        ids.iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(sep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_vocab_is_sorted_and_encodes() {
        let v = Vocabulary::build(&["bab", "ca"], Tokenization::Char);
        assert_eq!(v.len(), 3);
        assert_eq!(v.encode("cab").unwrap(), vec![2, 0, 1]);
        assert_eq!(v.decode(&[2, 0, 1]), "cab");
        assert!(matches!(v.encode("d"), Err(Error::OutOfVocabulary(t)) if t == "d"));
    }

    #[test]
    fn word_vocab() {
        let v = Vocabulary::build(&["the cat", "the hat"], Tokenization::Word);
        assert_eq!(v.len(), 3);
        assert_eq!(v.decode(&v.encode("the hat").unwrap()), "the hat");
    }

    #[test]
    fn serde_rebuilds_index() {
        let v = Vocabulary::build(&["xyz"], Tokenization::Char);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("y"), Some(1));
    }
}
