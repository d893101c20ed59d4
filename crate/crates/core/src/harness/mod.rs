//! Command implementations behind the `pmixed` CLI: shard training,
//! decoding sessions, evaluation, sweeps and ledger audits.

mod config;
mod ledger_file;
mod models;
mod session;
mod sweep;

pub use config::{load_config, parse_config, render_config, DEFAULT_DELTA};
pub use ledger_file::{
    cmd_account, parse_ledger, read_ledger, AccountSummary, LedgerFile, LedgerHeader,
    LedgerRecord, LedgerWriter, Mismatch, QueryRecord, LEDGER_FORMAT_VERSION,
};
pub use models::{
    cmd_train_shards, private_model_file, ModelManifest, ModelSet, TrainShardsArgs,
    MANIFEST_FILE, PUBLIC_MODEL_FILE,
};
pub use session::{
    cmd_decode, cmd_evaluate, decode_to_files, evaluate_providers, perplexity, run_session,
    DecodeArgs, EvalReport, EvaluateReport, PerplexityBasis, SessionOptions,
};
pub use sweep::{cmd_sweep, run_seed, SweepArgs, SweepParam, SweepRow, SweepSpec, CSV_HEADER};
