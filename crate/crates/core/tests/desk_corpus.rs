//! End-to-end checks on the bundled corpus.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use pmixed_core::divergence::renyi_divergence_sym;
use pmixed_core::ensemble::{DistributionProvider, TokenId};
use pmixed_core::harness::{
    cmd_account, cmd_decode, cmd_evaluate, cmd_sweep, cmd_train_shards, perplexity, read_ledger,
    render_config, run_session, DecodeArgs, EvalReport, ModelSet, SessionOptions, SweepArgs,
    SweepParam, SweepRow, SweepSpec, TrainShardsArgs,
};
use pmixed_core::{BaselineConfig, DecodingMode, Error, ProbDist, RenyiOrder};

use common::*;

struct Desk {
    _dir: tempfile::TempDir,
    models: PathBuf,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let models = train_desk_models(&dir.path().join("models"));
        Desk { _dir: dir, models }
    })
}

fn write_config(dir: &Path, cfg: &pmixed_core::DecodingConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, render_config(cfg)).unwrap();
    path
}

fn sweep(param: SweepParam, values: &[&str], dir: &Path, parallel: bool) -> Vec<SweepRow> {
    let spec = SweepSpec::new(param, values.iter().map(|v| v.to_string()).collect(), desk_config()).unwrap();
    cmd_sweep(&SweepArgs {
        spec,
        models_dir: desk().models.clone(),
        eval_path: None,
        doc_mode: None,
        out_csv: dir.join("sweep.csv"),
        run_dir: dir.join("runs"),
        options: SessionOptions {
            max_queries: Some(DESK_QUERIES),
            ..Default::default()
        },
        parallel,
    })
    .unwrap()
}

fn decode(dir: &Path, cfg: &pmixed_core::DecodingConfig, eval: Option<PathBuf>, max_queries: Option<u64>) -> EvalReport {
    cmd_decode(&DecodeArgs {
        models_dir: desk().models.clone(),
        eval_path: eval,
        doc_mode: None,
        config_path: write_config(dir, cfg),
        ledger_out: dir.join("ledger.jsonl"),
        report_out: dir.join("report.json"),
        options: SessionOptions {
            max_queries,
            ..Default::default()
        },
    })
    .unwrap()
}

#[test]
fn raising_the_threshold_spends_more_and_predicts_better() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(SweepParam::Threshold, &["2", "3", "4", "4.5", "inf"], dir.path(), false);
    for pair in rows.windows(2) {
        assert!(pair[1].eps_rdp >= pair[0].eps_rdp, "{pair:?}");
        assert!(pair[1].ppl <= pair[0].ppl, "{pair:?}");
        assert!(pair[1].screened_out <= pair[0].screened_out, "{pair:?}");
    }
    assert_eq!(rows.last().unwrap().screened_out, 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("param,value,eps_rdp,eps_dp,ppl,screened_out\nthreshold,2,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn larger_beta_admits_more_private_information() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(SweepParam::Beta, &["0.05", "0.1", "0.15", "0.2", "0.25", "0.3"], dir.path(), false);
    for pair in rows.windows(2) {
        assert!(pair[1].ppl <= pair[0].ppl, "{pair:?}");
        assert!(pair[1].eps_rdp >= pair[0].eps_rdp, "{pair:?}");
    }
}

#[test]
fn single_value_sweep_equals_one_decode_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(SweepParam::Beta, &["0.2"], &dir.path().join("a"), false);
    let again = sweep(SweepParam::Beta, &["0.2"], &dir.path().join("a2"), false);
    assert_eq!(rows, again);
    assert_eq!(
        fs::read(dir.path().join("a/sweep.csv")).unwrap(),
        fs::read(dir.path().join("a2/sweep.csv")).unwrap()
    );

    let report = decode(dir.path(), &desk_config(), None, Some(DESK_QUERIES));
    let row = &rows[0];
    assert_eq!(row.eps_rdp, report.eps_rdp_final);
    assert_eq!(row.eps_dp, report.eps_dp_final);
    assert_eq!(row.ppl, report.perplexity);
    assert_eq!(row.screened_out, report.queries_screened_out);
    assert_eq!(
        fs::read(dir.path().join("ledger.jsonl")).unwrap(),
        fs::read(dir.path().join("a/runs/run_000.ledger.jsonl")).unwrap()
    );
}

#[test]
fn parallel_sweeps_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = sweep(SweepParam::TopK, &["10", "30", "60"], &dir.path().join("a"), true);
    let b = sweep(SweepParam::TopK, &["10", "30", "60"], &dir.path().join("b"), true);
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
}

#[test]
fn failing_run_leaves_flagged_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec::new(
        SweepParam::EnsembleSize,
        vec!["4".into(), "32".into(), "8".into()],
        desk_config(),
    )
    .unwrap();
    let out = dir.path().join("sweep.csv");
    let err = cmd_sweep(&SweepArgs {
        spec,
        models_dir: desk().models.clone(),
        eval_path: None,
        doc_mode: None,
        out_csv: out.clone(),
        run_dir: dir.path().join("runs"),
        options: SessionOptions {
            max_queries: Some(100),
            ..Default::default()
        },
        parallel: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "N"));
    let csv = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ensemble_size,4,"));
    assert!(lines[2].starts_with("# invalid: "));
}

#[test]
fn ensemble_average_beats_the_worst_member() {
    let r = cmd_evaluate(&desk().models, None, None).unwrap();
    assert_eq!(r.private.len(), DESK_SHARDS);
    let worst = r.private.iter().copied().fold(f64::MIN, f64::max);
    assert!(r.ensemble_average <= worst, "{} > {worst}", r.ensemble_average);
}

#[test]
fn public_and_private_models_disagree() {
    let models = ModelSet::load(&desk().models).unwrap();
    let vocab = models.vocabulary();
    let context = vocab.encode("Alice").unwrap();
    let p0 = models.public().predict(&context).unwrap();
    let alpha = RenyiOrder::new(2.0).unwrap();
    let divergences: Vec<f64> = models
        .private()
        .iter()
        .map(|m| renyi_divergence_sym(&m.predict(&context).unwrap(), &p0, alpha).unwrap())
        .collect();
    assert!(divergences.iter().all(|d| *d > 0.0), "{divergences:?}");
}

#[test]
fn always_fail_threshold_reproduces_public_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let models = ModelSet::load(&desk().models).unwrap();
    let eval_text = fs::read_to_string(models.eval_path().unwrap()).unwrap();
    let subset: String = eval_text.lines().take(5).map(|l| format!("{l}\n")).collect();
    let eval = dir.path().join("subset.txt");
    fs::write(&eval, subset).unwrap();

    let mut cfg = desk_config();
    cfg.screening.threshold = f64::NEG_INFINITY;
    let report = decode(dir.path(), &cfg, Some(eval.clone()), None);
    let reference = cmd_evaluate(&desk().models, Some(&eval), None).unwrap();
    assert_eq!(report.queries_answered, reference.queries);
    assert_eq!(report.queries_screened_out, report.queries_answered);
    assert_eq!(report.eps_decode_total, 0.0);
    assert!((report.perplexity - reference.public).abs() <= 1e-9 * reference.public);
}

#[test]
fn ledger_backs_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = decode(dir.path(), &desk_config(), None, Some(800));
    let ledger_path = dir.path().join("ledger.jsonl");
    let ledger = read_ledger(&ledger_path).unwrap();
    assert_eq!(ledger.queries.len() as u64, report.queries_answered);
    assert_eq!(ledger.header.unwrap().config.unwrap(), report.config_snapshot);
    let offline = perplexity(ledger.queries.iter().map(|(_, q)| q.target_prob));
    assert!((offline - report.perplexity).abs() <= 1e-9);
    let audit = cmd_account(&ledger_path, None, None).unwrap();
    assert!(audit.mismatches.is_empty());
    assert_eq!(audit.eps_rdp, report.eps_rdp_final);
    assert_eq!(audit.queries_screened_out, report.queries_screened_out);
}

#[test]
fn baseline_spends_the_fixed_budget() {
    let dir = tempfile::tempdir().unwrap();
    let queries = 300;
    for q in [1.0, 0.5] {
        let mut cfg = desk_config();
        cfg.mode = DecodingMode::Baseline;
        cfg.baseline = Some(BaselineConfig {
            eps_budget: 8.0,
            query_budget: queries,
            subsample_q: q,
        });
        let report = decode(dir.path(), &cfg, None, Some(queries));
        assert_eq!(report.queries_screened_out, 0);
        assert_eq!(report.eps_screen_total, 0.0);
        assert!((report.eps_rdp_final - 8.0).abs() < 1e-12, "q={q}: {}", report.eps_rdp_final);
        assert!(cmd_account(&dir.path().join("ledger.jsonl"), None, None).unwrap().mismatches.is_empty());
    }
}

#[test]
fn hundred_member_ensemble_stays_below_the_fixed_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TrainShardsArgs::new(corpus_path(), 100, dir.path().join("models"));
    args.public_fraction = 0.04;
    args.seed = 7;
    cmd_train_shards(&args).unwrap();
    let mut cfg = desk_config();
    cfg.ensemble_size = 100;
    let report = cmd_decode(&DecodeArgs {
        models_dir: args.out_dir.clone(),
        eval_path: None,
        doc_mode: None,
        config_path: write_config(dir.path(), &cfg),
        ledger_out: dir.path().join("ledger.jsonl"),
        report_out: dir.path().join("report.json"),
        options: SessionOptions {
            max_queries: Some(300),
            ..Default::default()
        },
    })
    .unwrap();
    assert!(report.eps_rdp_final < report.data_independent_rdp_total);
    assert!((report.eps_screen_total - 300.0 * 1.8e-7).abs() < 1e-12);
}

struct Fixed(ProbDist);

impl DistributionProvider for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }

    fn predict(&self, _: &[TokenId]) -> pmixed_core::Result<ProbDist> {
        Ok(self.0.clone())
    }
}

#[test]
fn wikitext_screening_cost_over_9728_queries() {
    let public = Fixed(ProbDist::uniform(64).unwrap());
    let members: Vec<&dyn DistributionProvider> = vec![&public; 100];
    let mut cfg = desk_config();
    cfg.ensemble_size = 100;
    let doc: Vec<TokenId> = (0..9728u32).map(|i| i % 64).collect();
    let report = run_session(&public, &members, &[doc], &cfg, &SessionOptions::default(), &mut |_| Ok(()))
        .unwrap();
    assert_eq!(report.queries_answered, 9728);
    assert!((report.eps_screen_total - 9728.0 * 1.8e-7).abs() < 1e-12);
    assert_eq!(format!("{:.3}", report.eps_screen_total), "0.002");
    assert_eq!(report.eps_decode_total, 0.0);
}
