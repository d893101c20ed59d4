//! Line-delimited JSON ledgers: one header record, then one record per
//! query carrying its costs and the running totals.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accountant::{rdp_to_dp, LedgerEntry, PrivacyLedger};
use crate::decoder::DecodingConfig;
use crate::divergence::RenyiOrder;
use crate::error::{Error, Result};
use crate::harness::config::DEFAULT_DELTA;

pub const LEDGER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub format_version: u32,
    pub alpha: f64,
    pub delta: f64,
    pub config: Option<DecodingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_index: u64,
    pub screened_out: bool,
    pub eps_screen: f64,
    pub eps_decode: f64,
    /// Running RDP total including this query.
    pub cum_rdp: f64,
    pub cum_dp: f64,
    pub token: u32,
    pub target: u32,
    /// Likelihood of `target` under the perplexity basis distribution.
    pub target_prob: f64,
    /// Capped at [`crate::divergence::DEFAULT_DIVERGENCE_CAP`].
    pub noisy_divergence: Option<f64>,
    pub divergence_clamped: bool,
    pub beta_used: f64,
    pub digest: String,
}

impl QueryRecord {
    pub fn entry(&self) -> LedgerEntry {
        LedgerEntry {
            query_index: self.query_index,
            eps_screen: self.eps_screen,
            eps_decode: self.eps_decode,
            screened_out: self.screened_out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum LedgerRecord {
    Header(LedgerHeader),
    Query(QueryRecord),
}

pub struct LedgerWriter<W: Write> {
    out: W,
}

impl LedgerWriter<BufWriter<fs::File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufWriter::new(file)))
    }
}

impl<W: Write> LedgerWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &LedgerRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io("<ledger>", e))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io("<ledger>", e))?;
        Ok(self.out)
    }
}

/// A parsed ledger; queries keep their 1-based line numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct LedgerFile {
    pub header: Option<LedgerHeader>,
    pub queries: Vec<(usize, QueryRecord)>,
}

pub fn parse_ledger(text: &str, path: &Path) -> Result<LedgerFile> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut header = None;
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: LedgerRecord =
            serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        match record {
            LedgerRecord::Header(h) => {
                if header.is_some() || !queries.is_empty() {
                    return Err(parse_err(line_no, "header must be the first record".into()));
                }
                if h.format_version != LEDGER_FORMAT_VERSION {
                    return Err(Error::FormatVersion {
                        found: h.format_version,
                        expected: LEDGER_FORMAT_VERSION,
                    });
                }
                header = Some(h);
            }
            LedgerRecord::Query(q) => queries.push((line_no, q)),
        }
    }
    Ok(LedgerFile { header, queries })
}

pub fn read_ledger(path: &Path) -> Result<LedgerFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ledger(&text, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub line: usize,
    pub query_index: u64,
    pub field: String,
    pub stored: f64,
    pub recomputed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountSummary {
    pub ledger: PathBuf,
    pub alpha: f64,
    pub delta: f64,
    pub queries: u64,
    pub queries_screened_out: u64,
    pub eps_screen_total: f64,
    pub eps_decode_total: f64,
    pub eps_rdp: f64,
    pub eps_dp: f64,
    pub mismatches: Vec<Mismatch>,
}

/// Recomputes the totals of a ledger from its per-query costs and compares
/// them with the stored running totals.
///
/// `alpha` and `delta` default to the header's; an `alpha` that disagrees
/// with the header is an error. Running DP totals are only audited when the
/// conversion uses the header's δ.
pub fn cmd_account(path: &Path, alpha: Option<f64>, delta: Option<f64>) -> Result<AccountSummary> {
    let file = read_ledger(path)?;
    let header_alpha = file.header.as_ref().map(|h| h.alpha);
    let alpha = match (alpha, header_alpha) {
        (Some(a), Some(h)) if a != h => {
            return Err(Error::OrderMismatch {
                ledger: h,
                outcome: a,
            })
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(Error::param("alpha", "ledger has no header; pass alpha")),
    };
    let order = RenyiOrder::new(alpha)?;
    let header_delta = file.header.as_ref().map(|h| h.delta);
    let delta = delta.or(header_delta).unwrap_or(DEFAULT_DELTA);
    let audit_dp = header_delta.is_none_or(|d| d == delta);

    let mut ledger = PrivacyLedger::new(order, delta)?;
    let mut mismatches = Vec::new();
    let mut screened = 0u64;
    let mut previous: Option<u64> = None;
    for (line, q) in &file.queries {
        let mut flag = |field: &str, stored: f64, recomputed: f64| {
            mismatches.push(Mismatch {
                line: *line,
                query_index: q.query_index,
                field: field.to_string(),
                stored,
                recomputed,
            })
        };
        if previous.is_some_and(|p| q.query_index <= p) {
            flag("query_index", q.query_index as f64, previous.unwrap() as f64 + 1.0);
        }
        previous = Some(q.query_index);
        ledger.record_entry(q.entry()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            reason: e.to_string(),
        })?;
        screened += q.screened_out as u64;
        let rdp = ledger.eps_rdp_total();
        if q.cum_rdp != rdp {
            flag("cum_rdp", q.cum_rdp, rdp);
        }
        if audit_dp {
            let dp = rdp_to_dp(rdp, order, delta)?;
            if q.cum_dp != dp {
                flag("cum_dp", q.cum_dp, dp);
            }
        }
    }
    Ok(AccountSummary {
        ledger: path.to_path_buf(),
        alpha,
        delta,
        queries: file.queries.len() as u64,
        queries_screened_out: screened,
        eps_screen_total: ledger.eps_screen_total(),
        eps_decode_total: ledger.eps_decode_total(),
        eps_rdp: ledger.eps_rdp_total(),
        eps_dp: ledger.eps_dp_total(),
        mismatches,
    })
}
