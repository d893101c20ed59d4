//! Desk-scale stand-in for a fine-tuned LLM ensemble: disjoint shards of a
//! corpus, one smoothed n-gram model per shard, and a public model trained
//! on a separate split.

mod corpus;
mod ngram;
mod provider;
mod vocab;

pub use corpus::{load_documents, partition_corpus, DocumentMode, ShardedCorpus};
pub(crate) use corpus::shuffled_ids;
pub use ngram::{train_ngram, NGramModel, DEFAULT_SMOOTHING, MODEL_FORMAT_VERSION};
pub use provider::{predict, DistributionProvider, RecordedProvider, RECORDING_FORMAT_VERSION};
pub use vocab::{TokenId, Tokenization, Vocabulary};
