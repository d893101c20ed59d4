//! One decoding run per value of a single hyperparameter, collected as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecodingConfig;
use crate::divergence::RenyiOrder;
use crate::ensemble::{DocumentMode, TokenId};
use crate::error::{Error, Result};
use crate::harness::config::into_config_error;
use crate::harness::models::ModelSet;
use crate::harness::session::{decode_to_files, eval_documents, EvalReport, SessionOptions};
use crate::serde_ext::extended_f64;

pub const CSV_HEADER: &str = "param,value,eps_rdp,eps_dp,ppl,screened_out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Threshold,
    TopK,
    Beta,
    EnsembleSize,
    /// Values are `lambda:sigma` pairs.
    ScreenLambdaSigma,
    Alpha,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Threshold => "threshold",
            SweepParam::TopK => "top_k",
            SweepParam::Beta => "beta",
            SweepParam::EnsembleSize => "ensemble_size",
            SweepParam::ScreenLambdaSigma => "screen_lambda_sigma",
            SweepParam::Alpha => "alpha",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Threshold,
            SweepParam::TopK,
            SweepParam::Beta,
            SweepParam::EnsembleSize,
            SweepParam::ScreenLambdaSigma,
            SweepParam::Alpha,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::param("param", format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub base: DecodingConfig,
}

fn bad_value(param: SweepParam, value: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config {
        field: param.name().to_string(),
        reason: format!("`{value}`: {reason}"),
    }
}

impl SweepSpec {
    pub fn new(param: SweepParam, values: Vec<String>, base: DecodingConfig) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("values", "sweep needs at least one value"));
        }
        let spec = Self {
            param,
            values,
            base,
        };
        for value in &spec.values {
            spec.apply(value)?;
        }
        Ok(spec)
    }

    /// The base config with `value` substituted; checked except for the
    /// vocabulary-dependent top-k bound.
    pub fn apply(&self, value: &str) -> Result<DecodingConfig> {
        let param = self.param;
        if value.contains([',', '\n', '"']) {
            return Err(bad_value(param, value, "values may not contain commas, quotes or newlines"));
        }
        let real = |text: &str| {
            extended_f64::parse(text).ok_or_else(|| bad_value(param, value, "not a number"))
        };
        let count = |text: &str| {
            text.trim()
                .parse::<usize>()
                .map_err(|_| bad_value(param, value, "not a non-negative integer"))
        };
        let mut cfg = self.base.clone();
        match param {
            SweepParam::Threshold => cfg.screening.threshold = real(value)?,
            SweepParam::TopK => cfg.screening.top_k = count(value)?,
            SweepParam::Beta => cfg.beta = real(value)?,
            SweepParam::EnsembleSize => cfg.ensemble_size = count(value)?,
            SweepParam::ScreenLambdaSigma => {
                let (lambda, sigma) = value
                    .split_once(':')
                    .ok_or_else(|| bad_value(param, value, "expected lambda:sigma"))?;
                cfg.screening.lambda_screen = real(lambda)?;
                cfg.screening.sigma = real(sigma)?;
            }
            SweepParam::Alpha => {
                let alpha = RenyiOrder::new(real(value)?).map_err(|e| bad_value(param, value, e))?;
                cfg.alpha = alpha;
                cfg.screening.alpha = alpha;
            }
        }
        cfg.validate(usize::MAX)
            .map_err(|e| bad_value(param, value, into_config_error(e)))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub eps_rdp: f64,
    pub eps_dp: f64,
    pub ppl: f64,
    pub screened_out: u64,
}

impl SweepRow {
    fn from_report(param: SweepParam, value: &str, report: &EvalReport) -> Self {
        Self {
            param: param.name().to_string(),
            value: value.to_string(),
            eps_rdp: report.eps_rdp_final,
            eps_dp: report.eps_dp_final,
            ppl: report.perplexity,
            screened_out: report.queries_screened_out,
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{}",
            self.param, self.value, self.eps_rdp, self.eps_dp, self.ppl, self.screened_out
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepArgs {
    pub spec: SweepSpec,
    pub models_dir: PathBuf,
    pub eval_path: Option<PathBuf>,
    pub doc_mode: Option<DocumentMode>,
    pub out_csv: PathBuf,
    /// Ledgers and reports of every run go here, named by run index.
    pub run_dir: PathBuf,
    pub options: SessionOptions,
    /// Run concurrently; each run then gets its own seed derived from the
    /// base seed and the run index.
    pub parallel: bool,
}

pub fn run_seed(base: u64, run: usize) -> u64 {
    base ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_one(
    models: &ModelSet,
    documents: &[Vec<TokenId>],
    cfg: &DecodingConfig,
    args: &SweepArgs,
    run: usize,
) -> Result<EvalReport> {
    decode_to_files(
        models,
        documents,
        cfg,
        &args.options,
        &args.run_dir.join(format!("run_{run:03}.ledger.jsonl")),
        &args.run_dir.join(format!("run_{run:03}.report.json")),
    )
}

fn write_csv(path: &Path, rows: &[SweepRow], failure: Option<&Error>) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    if let Some(e) = failure {
        let _ = writeln!(text, "# invalid: {}", e.to_string().replace('\n', " "));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the sweep and writes the CSV. If a run fails, the rows completed
/// before it are written followed by a `# invalid: ...` line, and the error
/// is returned.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let models = ModelSet::load(&args.models_dir)?;
    let documents = eval_documents(&models, args.eval_path.as_deref(), args.doc_mode)?;
    let vocab = models.vocabulary().len();
    let mut configs = Vec::with_capacity(args.spec.values.len());
    for (run, value) in args.spec.values.iter().enumerate() {
        let mut cfg = args.spec.apply(value)?;
        cfg.validate(vocab)
            .map_err(|e| bad_value(args.spec.param, value, into_config_error(e)))?;
        if args.parallel {
            cfg.seed = run_seed(cfg.seed, run);
        }
        configs.push(cfg);
    }
    fs::create_dir_all(&args.run_dir).map_err(|e| Error::io(&args.run_dir, e))?;

    let results: Vec<Result<EvalReport>> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .enumerate()
                .map(|(run, cfg)| {
                    let (models, documents) = (&models, &documents);
                    scope.spawn(move || run_one(models, documents, cfg, args, run))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep run panicked"))
                .collect()
        })
    } else {
        let mut results = Vec::new();
        for (run, cfg) in configs.iter().enumerate() {
            let result = run_one(&models, &documents, cfg, args, run);
            let failed = result.is_err();
            results.push(result);
            if failed {
                break;
            }
        }
        results
    };

    let mut rows = Vec::new();
    for (value, result) in args.spec.values.iter().zip(results) {
        match result {
            Ok(report) => rows.push(SweepRow::from_report(args.spec.param, value, &report)),
            Err(e) => {
                write_csv(&args.out_csv, &rows, Some(&e))?;
                return Err(e);
            }
        }
    }
    write_csv(&args.out_csv, &rows, None)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn base() -> DecodingConfig {
        parse_config("alpha = 18\nbeta = 0.2\nN = 4\nsigma = 1e-2\nlambda = 1e-4\nT = 4.5\ntop_k = 10\n")
            .unwrap()
    }

    #[test]
    fn applies_each_parameter() {
        let spec = |p, v: &str| SweepSpec::new(p, vec![v.to_string()], base()).unwrap();
        assert_eq!(spec(SweepParam::Threshold, "inf").apply("inf").unwrap().screening.threshold, f64::INFINITY);
        let c = spec(SweepParam::ScreenLambdaSigma, "1e-3:1e-1").apply("1e-3:1e-1").unwrap();
        assert_eq!((c.screening.lambda_screen, c.screening.sigma), (1e-3, 1e-1));
        let c = spec(SweepParam::Alpha, "15").apply("15").unwrap();
        assert_eq!(c.screening.alpha, c.alpha);
    }

    #[test]
    fn rejects_out_of_domain_values() {
        for (p, v) in [
            (SweepParam::Beta, "-0.1"),
            (SweepParam::TopK, "1"),
            (SweepParam::EnsembleSize, "0"),
            (SweepParam::Alpha, "1"),
            (SweepParam::ScreenLambdaSigma, "1e-4"),
            (SweepParam::Threshold, "nan"),
        ] {
            assert!(
                matches!(SweepSpec::new(p, vec![v.into()], base()), Err(Error::Config { .. })),
                "{p:?} {v}"
            );
        }
    }

    #[test]
    fn parameter_names_round_trip() {
        for name in ["threshold", "top_k", "beta", "ensemble_size", "screen_lambda_sigma", "alpha"] {
            assert_eq!(name.parse::<SweepParam>().unwrap().name(), name);
        }
    }
}
