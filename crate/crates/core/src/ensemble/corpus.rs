use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How documents are delimited in corpus files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentMode {
    /// Every non-empty line is a document.
    #[default]
    Lines,
    /// Every file is a document.
    File,
}

impl std::str::FromStr for DocumentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(DocumentMode::Lines),
            "file" => Ok(DocumentMode::File),
            other => Err(Error::param(
                "doc_mode",
                format!("`{other}` is neither `lines` nor `file`"),
            )),
        }
    }
}

/// Reads UTF-8 documents from a file, or from every file of a directory in
/// name order.
pub fn load_documents(path: &Path, mode: DocumentMode) -> Result<Vec<String>> {
    let files = if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        files.retain(|p| p.is_file());
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut documents = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        match mode {
            DocumentMode::Lines => documents.extend(
                text.lines()
                    .map(|l| l.trim_end_matches('\r'))
                    .filter(|l| !l.trim().is_empty())
                    .map(String::from),
            ),
            DocumentMode::File => {
                let trimmed = text.trim();
                if !trimmed.is_empty() {
                    documents.push(trimmed.to_string());
                }
            }
        }
    }
    Ok(documents)
}

/// Documents split into pairwise disjoint, non-empty shards.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardedCorpus<T> {
    pub shards: Vec<Vec<T>>,
    /// Shard id to the input positions of its documents, ascending.
    pub manifest: BTreeMap<usize, Vec<usize>>,
}

pub(crate) fn shuffled_ids(count: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..count).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Seeded shuffle followed by round-robin assignment to `n` shards.
pub fn partition_corpus<T: Clone>(documents: &[T], n: usize, seed: u64) -> Result<ShardedCorpus<T>> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if documents.len() < n {
        return Err(Error::NotEnoughDocuments {
            documents: documents.len(),
            shards: n,
        });
    }
    let mut manifest: BTreeMap<usize, Vec<usize>> = (0..n).map(|s| (s, Vec::new())).collect();
    for (position, doc) in shuffled_ids(documents.len(), seed).into_iter().enumerate() {
        manifest.get_mut(&(position % n)).expect("shard exists").push(doc);
    }
    manifest.values_mut().for_each(|ids| ids.sort_unstable());
    let shards = manifest
        .values()
        .map(|ids| ids.iter().map(|&i| documents[i].clone()).collect())
        .collect();
    Ok(ShardedCorpus { shards, manifest })
}
