//! Additively smoothed n-gram models over a shared vocabulary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::provider::DistributionProvider;
use super::vocab::{TokenId, Vocabulary};
use crate::divergence::ProbDist;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_alpha: f64,
    vocabulary: Arc<Vocabulary>,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

/// Counts every token of every document against its preceding
/// `order - 1` tokens (fewer at the start of a document).
pub fn train_ngram(
    shard: &[Vec<TokenId>],
    order: usize,
    smoothing_alpha: f64,
    vocabulary: Arc<Vocabulary>,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::param("order", "must be >= 1"));
    }
    if !(smoothing_alpha > 0.0 && smoothing_alpha.is_finite()) {
        return Err(Error::param(
            "smoothing",
            format!("{smoothing_alpha} must be > 0"),
        ));
    }
    if shard.iter().all(Vec::is_empty) {
        return Err(Error::param("shard", "no tokens to train on"));
    }
    let vocab_size = vocabulary.len();
    let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
    for doc in shard {
        for (pos, &token) in doc.iter().enumerate() {
            if token as usize >= vocab_size {
                return Err(Error::OutOfVocabulary(format!("#{token}")));
            }
            let context = doc[pos.saturating_sub(order - 1)..pos].to_vec();
            let entry = counts.entry(context).or_default();
            entry.total += 1;
            *entry.next.entry(token).or_insert(0) += 1;
        }
    }
    Ok(NGramModel {
        order,
        smoothing_alpha,
        vocabulary,
        counts,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocabulary
    }

    pub(crate) fn share_vocabulary(&mut self, shared: Arc<Vocabulary>) {
        debug_assert_eq!(*shared, *self.vocabulary);
        self.vocabulary = shared;
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            order: self.order,
            smoothing_alpha: self.smoothing_alpha,
            vocabulary: (*self.vocabulary).clone(),
            counts: self
                .counts
                .iter()
                .map(|(context, c)| ContextRecord {
                    context: context.clone(),
                    next: c.next.iter().map(|(&t, &n)| (t, n)).collect(),
                })
                .collect(),
        };
        let mut json = serde_json::to_string(&file)?;
        json.push('\n');
        Ok(json)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let counts = file
            .counts
            .into_iter()
            .map(|record| {
                let next: BTreeMap<TokenId, u64> = record.next.into_iter().collect();
                let total = next.values().sum();
                (record.context, ContextCounts { total, next })
            })
            .collect();
        Ok(Self {
            order: file.order,
            smoothing_alpha: file.smoothing_alpha,
            vocabulary: Arc::new(file.vocabulary),
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

impl DistributionProvider for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// (c(ctx, t) + s) / (c(ctx) + s·|V|) over the last `order - 1` tokens
    /// of `context`; unseen contexts give the uniform distribution.
    fn predict(&self, context: &[TokenId]) -> Result<ProbDist> {
        let vocab_size = self.vocabulary.len();
        if let Some(&bad) = context.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::OutOfVocabulary(format!("#{bad}")));
        }
        let key = &context[context.len().saturating_sub(self.order - 1)..];
        let s = self.smoothing_alpha;
        let probs = match self.counts.get(key) {
            None => vec![1.0 / vocab_size as f64; vocab_size],
            Some(c) => {
                let denom = c.total as f64 + s * vocab_size as f64;
                let mut probs = vec![s / denom; vocab_size];
                for (&t, &n) in &c.next {
                    probs[t as usize] = (n as f64 + s) / denom;
                }
                probs
            }
        };
        ProbDist::new(probs)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    order: usize,
    smoothing_alpha: f64,
    vocabulary: Vocabulary,
    counts: Vec<ContextRecord>,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::vocab::Tokenization;

    fn abab(smoothing: f64) -> NGramModel {
        let vocab = Arc::new(Vocabulary::build(&["abc"], Tokenization::Char));
        let doc = vocab.encode("abab").unwrap();
        train_ngram(&[doc], 2, smoothing, vocab).unwrap()
    }

    #[test]
    fn hand_counted_bigram() {
        let s = 0.1;
        let m = abab(s);
        let v = 3.0;
        let d = m.predict(&[0]).unwrap(); // context "a"
        assert!((d.prob(1) - (2.0 + s) / (2.0 + s * v)).abs() < 1e-15);
        assert!((d.prob(0) - s / (2.0 + s * v)).abs() < 1e-15);
        assert_eq!(d.prob(0), d.prob(2));
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = abab(0.1);
        let d = m.predict(&[2]).unwrap(); // "c" never seen as a context
        assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let m = abab(1e6);
        let d = m.predict(&[0]).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-4));
    }

    #[test]
    fn only_last_tokens_matter() {
        let m = abab(0.1);
        assert_eq!(m.predict(&[1, 1, 0]).unwrap(), m.predict(&[0]).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let vocab = Arc::new(Vocabulary::build(&["ab"], Tokenization::Char));
        assert!(train_ngram(&[vec![0, 1]], 0, 0.1, vocab.clone()).is_err());
        assert!(train_ngram(&[vec![0, 1]], 2, 0.0, vocab.clone()).is_err());
        assert!(train_ngram(&[vec![]], 2, 0.1, vocab.clone()).is_err());
        let m = train_ngram(&[vec![0, 1]], 2, 0.1, vocab).unwrap();
        assert!(matches!(m.predict(&[5]), Err(Error::OutOfVocabulary(_))));
    }

    #[test]
    fn json_round_trip_is_byte_exact() {
        let m = abab(0.1);
        let json = m.to_json().unwrap();
        let back = NGramModel::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn rejects_other_format_versions() {
        let json = abab(0.1).to_json().unwrap().replace(
            "\"format_version\":1",
            "\"format_version\":9",
        );
        assert!(matches!(
            NGramModel::from_json(&json),
            Err(Error::FormatVersion { found: 9, .. })
        ));
    }
}
