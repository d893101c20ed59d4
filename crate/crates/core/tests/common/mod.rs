//! Shared fixtures: the bundled corpus and the desk-scale decoding setup.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pmixed_core::harness::{cmd_train_shards, parse_config, TrainShardsArgs};
use pmixed_core::DecodingConfig;

pub const DESK_QUERIES: u64 = 2500;
pub const DESK_SHARDS: usize = 16;

pub fn corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/alice.txt")
}

pub fn train_desk_models(out_dir: &Path) -> PathBuf {
    let mut args = TrainShardsArgs::new(corpus_path(), DESK_SHARDS, out_dir);
    args.order = 2;
    args.public_fraction = 0.04;
    args.eval_fraction = 0.1;
    args.seed = 7;
    cmd_train_shards(&args).expect("desk models train");
    out_dir.to_path_buf()
}

/// α=18, β=0.2, N=16 with the screening parameters used for WikiText.
pub const DESK_CONFIG: &str = "\
alpha = 18
beta = 0.2
N = 16
sigma = 1e-2
lambda = 1e-4
T = 4.5
top_k = 60
delta = 1e-5
mode = \"adaptive\"
seed = 11
";

pub fn desk_config() -> DecodingConfig {
    parse_config(DESK_CONFIG).expect("desk config parses")
}

/// Rényi divergence straight from its definition, without log-domain care.
pub fn naive_renyi(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    let mut sum = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        sum += pi.powf(alpha) * qi.powf(1.0 - alpha);
    }
    sum.ln() / (alpha - 1.0)
}

pub fn random_dist<R: rand::Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..size).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}
