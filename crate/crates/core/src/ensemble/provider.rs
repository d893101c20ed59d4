use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::TokenId;
use crate::divergence::ProbDist;
use crate::error::{Error, Result};

/// Anything that maps a context to a next-token distribution over the shared
/// vocabulary. Must be deterministic for a fixed state and context.
pub trait DistributionProvider: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn predict(&self, context: &[TokenId]) -> Result<ProbDist>;
}

pub fn predict(model: &dyn DistributionProvider, context: &[TokenId]) -> Result<ProbDist> {
    model.predict(context)
}

pub const RECORDING_FORMAT_VERSION: u32 = 1;

/// Replays distributions captured from another provider, bit for bit.
///
/// Stored as JSON lines: a header with the vocabulary size, then one
/// `{"context": [...], "probs": [...]}` record per context.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedProvider {
    vocab_size: usize,
    table: BTreeMap<Vec<TokenId>, ProbDist>,
}

#[derive(Serialize, Deserialize)]
struct RecordingHeader {
    format_version: u32,
    vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordingLine {
    context: Vec<TokenId>,
    probs: ProbDist,
}

impl RecordedProvider {
    pub fn record<'a, I>(source: &dyn DistributionProvider, contexts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut table = BTreeMap::new();
        for context in contexts {
            table.insert(context.to_vec(), source.predict(context)?);
        }
        Ok(Self {
            vocab_size: source.vocab_size(),
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = RecordingHeader {
            format_version: RECORDING_FORMAT_VERSION,
            vocab_size: self.vocab_size,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for (context, probs) in &self.table {
            serde_json::to_writer(
                &mut out,
                &RecordingLine {
                    context: context.clone(),
                    probs: probs.clone(),
                },
            )?;
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let header: RecordingHeader =
            serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format_version != RECORDING_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: header.format_version,
                expected: RECORDING_FORMAT_VERSION,
            });
        }
        let mut table = BTreeMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordingLine =
                serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if record.probs.len() != header.vocab_size {
                return Err(parse_err(
                    i + 1,
                    format!("{} probabilities for vocabulary of {}", record.probs.len(), header.vocab_size),
                ));
            }
            table.insert(record.context, record.probs);
        }
        Ok(Self {
            vocab_size: header.vocab_size,
            table,
        })
    }
}

impl DistributionProvider for RecordedProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn predict(&self, context: &[TokenId]) -> Result<ProbDist> {
        self.table
            .get(context)
            .cloned()
            .ok_or_else(|| Error::UnknownContext(context.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ngram::train_ngram;
    use crate::ensemble::vocab::{Tokenization, Vocabulary};
    use std::sync::Arc;

    #[test]
    fn recording_replays_bit_exactly() {
        let vocab = Arc::new(Vocabulary::build(&["the quick brown fox"], Tokenization::Char));
        let doc = vocab.encode("the quick brown fox").unwrap();
        let model = train_ngram(&[doc.clone()], 3, 0.1, vocab).unwrap();
        let contexts: Vec<&[TokenId]> = (0..doc.len()).map(|i| &doc[..i]).collect();
        let rec = RecordedProvider::record(&model, contexts.iter().copied()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        rec.save(&path).unwrap();
        let loaded = RecordedProvider::load(&path).unwrap();
        assert_eq!(loaded, rec);
        for ctx in contexts {
            let a = predict(&model, ctx).unwrap();
            let b = predict(&loaded, ctx).unwrap();
            let bits = |d: &ProbDist| d.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
        assert!(matches!(
            loaded.predict(&[99, 98]),
            Err(Error::UnknownContext(_))
        ));
    }
}
