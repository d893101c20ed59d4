//! Decoding sessions over an evaluation text: every position of every
//! document is one next-token query, with the true prefix as context.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accountant::{data_independent_bound, utility_gap_bound, ExactSum, PrivacyLedger};
use crate::decoder::{
    decode_adaptive, decode_baseline, mix_projected, project_ensemble, DecodingConfig, DecodingMode,
};
use crate::divergence::{cap_divergence, ProbDist, DEFAULT_DIVERGENCE_CAP};
use crate::ensemble::{DistributionProvider, DocumentMode, TokenId};
use crate::error::{Error, Result};
use crate::harness::config::{into_config_error, load_config};
use crate::harness::ledger_file::{
    LedgerHeader, LedgerRecord, LedgerWriter, QueryRecord, LEDGER_FORMAT_VERSION,
};
use crate::harness::models::ModelSet;

/// Which distribution's likelihood of the true token enters the perplexity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerplexityBasis {
    /// The distribution the token was sampled from: public on screen-out,
    /// the projected mixture otherwise.
    #[default]
    Sampled,
    /// Always the projected mixture, even for screened-out queries.
    Projected,
}

impl std::str::FromStr for PerplexityBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(PerplexityBasis::Sampled),
            "projected" => Ok(PerplexityBasis::Projected),
            other => Err(Error::param(
                "basis",
                format!("`{other}` is neither `sampled` nor `projected`"),
            )),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionOptions {
    pub max_queries: Option<u64>,
    pub basis: PerplexityBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub perplexity_basis: PerplexityBasis,
    pub queries_answered: u64,
    pub queries_screened_out: u64,
    pub eps_screen_total: f64,
    pub eps_decode_total: f64,
    pub eps_rdp_final: f64,
    pub eps_dp_final: f64,
    /// What the same number of queries costs under the data-independent
    /// bound at the configured β.
    pub data_independent_rdp_total: f64,
    /// Over the queries that were not screened out; 0 if there are none.
    pub utility_gap_bound: f64,
    pub config_snapshot: DecodingConfig,
}

/// exp of the mean negative log-likelihood.
pub fn perplexity<I: IntoIterator<Item = f64>>(likelihoods: I) -> f64 {
    let mut nll = ExactSum::new();
    let mut count = 0u64;
    for p in likelihoods {
        nll.add(-p.ln());
        count += 1;
    }
    if count == 0 {
        return f64::NAN;
    }
    (nll.value() / count as f64).exp()
}

/// Runs one session and passes the header and every query record to `sink`
/// as they are produced.
pub fn run_session(
    public: &dyn DistributionProvider,
    private: &[&dyn DistributionProvider],
    documents: &[Vec<TokenId>],
    cfg: &DecodingConfig,
    opts: &SessionOptions,
    sink: &mut dyn FnMut(&LedgerRecord) -> Result<()>,
) -> Result<EvalReport> {
    cfg.validate(public.vocab_size()).map_err(into_config_error)?;
    if private.len() != cfg.ensemble_size {
        return Err(Error::Config {
            field: "N".into(),
            reason: format!("{} members configured, {} supplied", cfg.ensemble_size, private.len()),
        });
    }
    let mut ledger = PrivacyLedger::new(cfg.alpha, cfg.delta)?;
    sink(&LedgerRecord::Header(LedgerHeader {
        format_version: LEDGER_FORMAT_VERSION,
        alpha: cfg.alpha.value(),
        delta: cfg.delta,
        config: Some(cfg.clone()),
    }))?;

    let limit = opts.max_queries.unwrap_or(u64::MAX);
    let mut likelihoods = Vec::new();
    let mut screened_out = 0u64;
    let mut gap_lambdas: Vec<Vec<f64>> = vec![Vec::new(); private.len()];
    let mut gap_private: Vec<Vec<f64>> = vec![Vec::new(); private.len()];
    let mut gap_public = Vec::new();

    let positions = documents
        .iter()
        .flat_map(|doc| (0..doc.len()).map(move |t| (&doc[..t], doc[t])));
    for (query_index, (context, target)) in (0..limit).zip(positions) {
        let p_public = public.predict(context)?;
        let members: Vec<ProbDist> = private
            .iter()
            .map(|m| m.predict(context))
            .collect::<Result<_>>()?;
        let outcome = match cfg.mode {
            DecodingMode::Adaptive => {
                decode_adaptive(&members, &p_public, cfg, &mut ledger, query_index)?
            }
            DecodingMode::Baseline => decode_baseline(
                |i| Ok(members[i].clone()),
                &p_public,
                cfg,
                &mut ledger,
                query_index,
            )?,
        };
        let target_idx = target as usize;
        let target_prob = match (opts.basis, outcome.screened_out) {
            (PerplexityBasis::Projected, true) => {
                let projections = project_ensemble(&members, &p_public, cfg.alpha, cfg.beta)?;
                mix_projected(&projections, &p_public).prob(target_idx)
            }
            _ => outcome.output_dist.prob(target_idx),
        };
        likelihoods.push(target_prob);
        if outcome.screened_out {
            screened_out += 1;
        } else {
            for (j, member) in members.iter().enumerate() {
                gap_lambdas[j].push(outcome.lambdas[j]);
                gap_private[j].push(member.prob(target_idx));
            }
            gap_public.push(p_public.prob(target_idx));
        }

        let capped = outcome
            .noisy_divergence
            .map(|d| cap_divergence(d, DEFAULT_DIVERGENCE_CAP));
        sink(&LedgerRecord::Query(QueryRecord {
            query_index,
            screened_out: outcome.screened_out,
            eps_screen: outcome.eps_screen,
            eps_decode: outcome.eps_decode,
            cum_rdp: ledger.eps_rdp_total(),
            cum_dp: ledger.eps_dp_total(),
            token: outcome.token as u32,
            target,
            target_prob,
            noisy_divergence: capped.map(|c| c.value),
            divergence_clamped: capped.is_some_and(|c| c.clamped),
            beta_used: outcome.beta_used,
            digest: outcome.output_dist_digest,
        }))?;
    }

    let queries = likelihoods.len() as u64;
    if queries == 0 {
        return Err(Error::param("eval_path", "evaluation text yields no queries"));
    }
    let per_query = data_independent_bound(cfg.alpha, cfg.beta, cfg.ensemble_size)?;
    Ok(EvalReport {
        perplexity: perplexity(likelihoods),
        perplexity_basis: opts.basis,
        queries_answered: queries,
        queries_screened_out: screened_out,
        eps_screen_total: ledger.eps_screen_total(),
        eps_decode_total: ledger.eps_decode_total(),
        eps_rdp_final: ledger.eps_rdp_total(),
        eps_dp_final: ledger.eps_dp_total(),
        data_independent_rdp_total: per_query * queries as f64,
        utility_gap_bound: utility_gap_bound(&gap_lambdas, &gap_private, &gap_public)?,
        config_snapshot: cfg.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeArgs {
    pub models_dir: PathBuf,
    /// Defaults to the evaluation split written at training time.
    pub eval_path: Option<PathBuf>,
    /// Defaults to the document mode the models were trained with.
    pub doc_mode: Option<DocumentMode>,
    pub config_path: PathBuf,
    pub ledger_out: PathBuf,
    pub report_out: PathBuf,
    pub options: SessionOptions,
}

pub(crate) fn eval_documents(
    models: &ModelSet,
    eval_path: Option<&Path>,
    doc_mode: Option<DocumentMode>,
) -> Result<Vec<Vec<TokenId>>> {
    let path = match eval_path {
        Some(p) => p.to_path_buf(),
        None => models
            .eval_path()
            .ok_or_else(|| Error::param("eval_path", "models have no evaluation split; pass one"))?,
    };
    models.encode_documents(&path, doc_mode.unwrap_or(models.manifest().doc_mode))
}

/// Runs a session with an already-parsed config and writes its ledger and
/// report.
pub fn decode_to_files(
    models: &ModelSet,
    documents: &[Vec<TokenId>],
    cfg: &DecodingConfig,
    options: &SessionOptions,
    ledger_out: &Path,
    report_out: &Path,
) -> Result<EvalReport> {
    let private = models.private_providers(cfg.ensemble_size)?;
    let mut writer = LedgerWriter::create(ledger_out)?;
    let report = run_session(models.public(), &private, documents, cfg, options, &mut |r| {
        writer.write(r)
    })?;
    writer.finish()?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(report_out, json).map_err(|e| Error::io(report_out, e))?;
    Ok(report)
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<EvalReport> {
    let cfg = load_config(&args.config_path)?;
    let models = ModelSet::load(&args.models_dir)?;
    let documents = eval_documents(&models, args.eval_path.as_deref(), args.doc_mode)?;
    decode_to_files(
        &models,
        &documents,
        &cfg,
        &args.options,
        &args.ledger_out,
        &args.report_out,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub queries: u64,
    pub public: f64,
    pub private: Vec<f64>,
    /// Plain average of all private members.
    pub ensemble_average: f64,
}

pub fn evaluate_providers(
    public: &dyn DistributionProvider,
    private: &[&dyn DistributionProvider],
    documents: &[Vec<TokenId>],
) -> Result<EvaluateReport> {
    if private.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut public_probs = Vec::new();
    let mut private_probs: Vec<Vec<f64>> = vec![Vec::new(); private.len()];
    let mut average_probs = Vec::new();
    for doc in documents {
        for t in 0..doc.len() {
            let (context, target) = (&doc[..t], doc[t] as usize);
            public_probs.push(public.predict(context)?.prob(target));
            let mut sum = 0.0;
            for (j, member) in private.iter().enumerate() {
                let p = member.predict(context)?.prob(target);
                private_probs[j].push(p);
                sum += p;
            }
            average_probs.push(sum / private.len() as f64);
        }
    }
    if public_probs.is_empty() {
        return Err(Error::param("eval_path", "evaluation text yields no queries"));
    }
    Ok(EvaluateReport {
        queries: public_probs.len() as u64,
        public: perplexity(public_probs),
        private: private_probs.into_iter().map(perplexity).collect(),
        ensemble_average: perplexity(average_probs),
    })
}

pub fn cmd_evaluate(
    models_dir: &Path,
    eval_path: Option<&Path>,
    doc_mode: Option<DocumentMode>,
) -> Result<EvaluateReport> {
    let models = ModelSet::load(models_dir)?;
    let documents = eval_documents(&models, eval_path, doc_mode)?;
    let private = models.private_providers(models.private().len())?;
    evaluate_providers(models.public(), &private, &documents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::RenyiOrder;
    use crate::screening::ScreeningConfig;

    struct Fixed(ProbDist);

    impl DistributionProvider for Fixed {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }

        fn predict(&self, _: &[TokenId]) -> Result<ProbDist> {
            Ok(self.0.clone())
        }
    }

    /// Puts all mass on the token following the last one, cyclically.
    struct Successor(usize);

    impl DistributionProvider for Successor {
        fn vocab_size(&self) -> usize {
            self.0
        }

        fn predict(&self, context: &[TokenId]) -> Result<ProbDist> {
            let next = context.last().map_or(0, |&t| (t as usize + 1) % self.0);
            ProbDist::point_mass(self.0, next)
        }
    }

    fn config(threshold: f64, n: usize) -> DecodingConfig {
        let alpha = RenyiOrder::new(18.0).unwrap();
        DecodingConfig {
            alpha,
            beta: 0.2,
            ensemble_size: n,
            screening: ScreeningConfig {
                lambda_screen: 1e-4,
                sigma: 1e-2,
                threshold,
                top_k: 4,
                alpha,
                symmetric: false,
                add_noise: true,
            },
            delta: 1e-5,
            mode: DecodingMode::Adaptive,
            baseline: None,
            seed: 5,
        }
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let uniform = Fixed(ProbDist::uniform(7).unwrap());
        let docs = vec![vec![0, 3, 6, 2, 2, 1]];
        let r = evaluate_providers(&uniform, &[&uniform], &docs).unwrap();
        assert!((r.public - 7.0).abs() < 1e-12);
    }

    #[test]
    fn correct_point_mass_perplexity_is_one() {
        let model = Successor(5);
        let docs = vec![vec![0, 1, 2, 3, 4, 0, 1]];
        let r = evaluate_providers(&model, &[&model, &model], &docs).unwrap();
        assert_eq!(r.public, 1.0);
        assert_eq!(r.ensemble_average, 1.0);
    }

    #[test]
    fn always_fail_threshold_matches_public_model() {
        let public = Fixed(ProbDist::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap());
        let member = Fixed(ProbDist::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let private: Vec<&dyn DistributionProvider> = vec![&member, &member, &member];
        let docs = vec![vec![0, 1, 2, 3, 0, 0, 1], vec![3, 3, 2]];
        let mut records = Vec::new();
        let report = run_session(
            &public,
            &private,
            &docs,
            &config(f64::NEG_INFINITY, 3),
            &SessionOptions::default(),
            &mut |r| {
                records.push(r.clone());
                Ok(())
            },
        )
        .unwrap();
        let reference = evaluate_providers(&public, &private, &docs).unwrap();
        assert_eq!(report.perplexity, reference.public);
        assert_eq!(report.eps_decode_total, 0.0);
        assert_eq!(report.queries_answered, 10);
        assert_eq!(report.queries_screened_out, 10);
        assert_eq!(records.len(), 11);
        assert_eq!(report.utility_gap_bound, 0.0);
    }

    #[test]
    fn max_queries_limits_the_stream() {
        let public = Fixed(ProbDist::uniform(4).unwrap());
        let docs = vec![vec![0, 1, 2, 3]; 10];
        let opts = SessionOptions {
            max_queries: Some(13),
            ..Default::default()
        };
        let r = run_session(&public, &[&public], &docs, &config(4.5, 1), &opts, &mut |_| Ok(()))
            .unwrap();
        assert_eq!(r.queries_answered, 13);
    }

    #[test]
    fn wrong_member_count_names_n() {
        let public = Fixed(ProbDist::uniform(4).unwrap());
        let err = run_session(
            &public,
            &[&public],
            &[vec![0]],
            &config(4.5, 2),
            &SessionOptions::default(),
            &mut |_| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "N"));
    }
}
