//! Trained model directories: a manifest, one public model, N private models
//! and the held-out evaluation split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{
    load_documents, partition_corpus, shuffled_ids, train_ngram, DistributionProvider,
    DocumentMode, NGramModel, TokenId, Tokenization, Vocabulary,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PUBLIC_MODEL_FILE: &str = "public.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

pub fn private_model_file(shard: usize) -> String {
    format!("private_{shard:03}.json")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainShardsArgs {
    pub corpus: PathBuf,
    pub n: usize,
    pub order: usize,
    pub smoothing: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Share of documents set aside for the public model.
    pub public_fraction: f64,
    /// Share of documents held out for evaluation.
    pub eval_fraction: f64,
    pub tokenization: Tokenization,
    pub doc_mode: DocumentMode,
}

impl TrainShardsArgs {
    pub fn new(corpus: impl Into<PathBuf>, n: usize, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            n,
            order: 2,
            smoothing: crate::ensemble::DEFAULT_SMOOTHING,
            seed: 0,
            out_dir: out_dir.into(),
            public_fraction: 0.04,
            eval_fraction: 0.1,
            tokenization: Tokenization::Char,
            doc_mode: DocumentMode::Lines,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub order: usize,
    pub smoothing: f64,
    pub seed: u64,
    pub tokenization: Tokenization,
    pub doc_mode: DocumentMode,
    pub vocab_size: usize,
    pub documents: usize,
    pub public_documents: Vec<usize>,
    pub eval_documents: Vec<usize>,
    /// Shard id to corpus document ids.
    pub shards: BTreeMap<usize, Vec<usize>>,
    pub public_model: String,
    pub private_models: Vec<String>,
    /// Relative to the model directory.
    pub eval_path: Option<String>,
}

fn split_count(fraction: f64, total: usize) -> usize {
    if fraction <= 0.0 {
        0
    } else {
        ((fraction * total as f64).ceil() as usize).max(1)
    }
}

/// Splits the corpus into public, evaluation and private documents, trains
/// one model per private shard plus the public model, and writes everything
/// to `out_dir`. Nothing is written unless every model trains.
pub fn cmd_train_shards(args: &TrainShardsArgs) -> Result<ModelManifest> {
    for (field, value) in [
        ("public_fraction", args.public_fraction),
        ("eval_fraction", args.eval_fraction),
    ] {
        if !(0.0..1.0).contains(&value) {
            return Err(Error::param(field, format!("{value} not in [0, 1)")));
        }
    }
    if args.public_fraction == 0.0 {
        return Err(Error::param("public_fraction", "the public model needs documents"));
    }
    if args.n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }

    let documents = load_documents(&args.corpus, args.doc_mode)?;
    let total = documents.len();
    let n_public = split_count(args.public_fraction, total);
    let n_eval = split_count(args.eval_fraction, total);
    if total < n_public + n_eval + args.n {
        return Err(Error::NotEnoughDocuments {
            documents: total.saturating_sub(n_public + n_eval),
            shards: args.n,
        });
    }

    let vocabulary = Arc::new(Vocabulary::build(&documents, args.tokenization));
    let encoded: Vec<Vec<TokenId>> = documents
        .iter()
        .map(|d| vocabulary.encode(d))
        .collect::<Result<_>>()?;

    let order = shuffled_ids(total, args.seed);
    let mut public_ids = order[..n_public].to_vec();
    let mut eval_ids = order[n_public..n_public + n_eval].to_vec();
    let mut private_ids = order[n_public + n_eval..].to_vec();
    public_ids.sort_unstable();
    eval_ids.sort_unstable();
    private_ids.sort_unstable();

    let sharded = partition_corpus(&private_ids, args.n, args.seed.wrapping_add(1))?;
    let shards: BTreeMap<usize, Vec<usize>> = sharded
        .shards
        .iter()
        .enumerate()
        .map(|(s, ids)| {
            let mut ids = ids.clone();
            ids.sort_unstable();
            (s, ids)
        })
        .collect();

    let docs_of = |ids: &[usize]| -> Vec<Vec<TokenId>> { ids.iter().map(|&i| encoded[i].clone()).collect() };
    let public = train_ngram(&docs_of(&public_ids), args.order, args.smoothing, vocabulary.clone())?;
    let private: Vec<NGramModel> = shards
        .iter()
        .map(|(&s, ids)| {
            train_ngram(&docs_of(ids), args.order, args.smoothing, vocabulary.clone()).map_err(|e| match e {
                Error::InvalidParameter { field: "shard", .. } => Error::EmptyShard(s),
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let eval_path = match (n_eval, args.doc_mode) {
        (0, _) => None,
        (_, DocumentMode::Lines) => Some("eval.txt".to_string()),
        (_, DocumentMode::File) => Some("eval".to_string()),
    };
    let manifest = ModelManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        order: args.order,
        smoothing: args.smoothing,
        seed: args.seed,
        tokenization: args.tokenization,
        doc_mode: args.doc_mode,
        vocab_size: vocabulary.len(),
        documents: total,
        public_documents: public_ids,
        eval_documents: eval_ids.clone(),
        shards,
        public_model: PUBLIC_MODEL_FILE.to_string(),
        private_models: (0..args.n).map(private_model_file).collect(),
        eval_path: eval_path.clone(),
    };

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    public.save(&out.join(PUBLIC_MODEL_FILE))?;
    for (model, file) in private.iter().zip(&manifest.private_models) {
        model.save(&out.join(file))?;
    }
    match (eval_path, args.doc_mode) {
        (None, _) => {}
        (Some(name), DocumentMode::Lines) => {
            let mut text = String::new();
            for &i in &eval_ids {
                text.push_str(&documents[i]);
                text.push('\n');
            }
            let path = out.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        (Some(name), DocumentMode::File) => {
            let dir = out.join(name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (k, &i) in eval_ids.iter().enumerate() {
                let path = dir.join(format!("{k:05}.txt"));
                fs::write(&path, &documents[i]).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    let path = out.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A loaded model directory. All models share one vocabulary.
#[derive(Clone, Debug)]
pub struct ModelSet {
    dir: PathBuf,
    manifest: ModelManifest,
    vocabulary: Arc<Vocabulary>,
    public: NGramModel,
    private: Vec<NGramModel>,
}

impl ModelSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: manifest.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        let mut public = NGramModel::load(&dir.join(&manifest.public_model))?;
        let vocabulary = public.vocabulary().clone();
        public.share_vocabulary(vocabulary.clone());
        let mut private = Vec::with_capacity(manifest.private_models.len());
        for file in &manifest.private_models {
            let mut model = NGramModel::load(&dir.join(file))?;
            if **model.vocabulary() != *vocabulary {
                return Err(Error::param("vocabulary", format!("{file} uses a different vocabulary")));
            }
            model.share_vocabulary(vocabulary.clone());
            private.push(model);
        }
        if private.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            vocabulary,
            public,
            private,
        })
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocabulary
    }

    pub fn public(&self) -> &NGramModel {
        &self.public
    }

    pub fn private(&self) -> &[NGramModel] {
        &self.private
    }

    /// Evaluation split written at training time, if any.
    pub fn eval_path(&self) -> Option<PathBuf> {
        self.manifest.eval_path.as_ref().map(|p| self.dir.join(p))
    }

    /// The first `n` private models as providers.
    pub fn private_providers(&self, n: usize) -> Result<Vec<&dyn DistributionProvider>> {
        if n == 0 || n > self.private.len() {
            return Err(Error::Config {
                field: "N".into(),
                reason: format!("{n} members requested, {} trained", self.private.len()),
            });
        }
        Ok(self.private[..n].iter().map(|m| m as &dyn DistributionProvider).collect())
    }

    /// Loads and encodes evaluation documents with the shared vocabulary.
    pub fn encode_documents(&self, path: &Path, mode: DocumentMode) -> Result<Vec<Vec<TokenId>>> {
        load_documents(path, mode)?
            .iter()
            .map(|d| self.vocabulary.encode(d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(dir: &Path, docs: usize) -> PathBuf {
        let path = dir.join("corpus.txt");
        let text: String = (0..docs)
            .map(|i| format!("document {i} says {} things\n", "ab".repeat(i + 1)))
            .collect();
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn ten_documents_four_shards() {
        let dir = tempfile::tempdir().unwrap();
        let args = TrainShardsArgs::new(corpus(dir.path(), 10), 4, dir.path().join("models"));
        let manifest = cmd_train_shards(&args).unwrap();
        assert_eq!(manifest.private_models.len(), 4);
        let set = ModelSet::load(&args.out_dir).unwrap();
        assert_eq!(set.private().len(), 4);
        assert!(args.out_dir.join(PUBLIC_MODEL_FILE).exists());

        let mut seen: Vec<usize> = manifest.shards.values().flatten().copied().collect();
        seen.extend(&manifest.public_documents);
        seen.extend(&manifest.eval_documents);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let src = corpus(dir.path(), 12);
        let a = TrainShardsArgs::new(&src, 3, dir.path().join("a"));
        let b = TrainShardsArgs::new(&src, 3, dir.path().join("b"));
        cmd_train_shards(&a).unwrap();
        cmd_train_shards(&b).unwrap();
        for name in ["manifest.json", "public.json", "private_000.json", "private_002.json", "eval.txt"] {
            assert_eq!(
                fs::read(a.out_dir.join(name)).unwrap(),
                fs::read(b.out_dir.join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn too_many_shards_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let args = TrainShardsArgs::new(corpus(dir.path(), 5), 8, dir.path().join("models"));
        assert!(matches!(
            cmd_train_shards(&args),
            Err(Error::NotEnoughDocuments { .. })
        ));
        assert!(!args.out_dir.exists());
    }
}
