//! Rewrite harness: prompts backends for stable rewrites, measures them and
//! labels the outcome against the original expression.

pub mod backend;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{measure_expression, DatasetRecord, MeasureFailure, Strategy};
use crate::domain::{derive_constraints, DomainError, DomainMap, Interval, MAX_DOUBLE};
use crate::eval::{ErrorReport, EvalConfig};
use crate::expr::{parse, structural_diff, Expr, LiteralPolicy, ParseError, StructuralDiff};

pub use backend::{build_backend, Backend, BackendConfig, BackendError, BackendKind, MockBehavior, PromptContext};

/// Raw responses are truncated to this many bytes in results files.
pub const RAW_RESPONSE_CAP: usize = 64 * 1024;

pub const MAX_ITERATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ZeroShot,
    FewShot,
    /// Best of several imported rewrites.
    BestOfK,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero-shot",
            Mode::FewShot => "few-shot",
            Mode::BestOfK => "best-of-k",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Mode::ZeroShot, Mode::FewShot, Mode::BestOfK]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Improved,
    Worse,
    Unchanged,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    /// New minus original; absent for failed rewrites.
    pub bits_delta: Option<f64>,
    pub accuracy_delta: Option<f64>,
}

pub fn assign_verdict(original: &ErrorReport, candidate: Option<&ErrorReport>) -> Verdict {
    let Some(c) = candidate else {
        return Verdict { label: VerdictLabel::Failed, bits_delta: None, accuracy_delta: None };
    };
    let label = if c.accuracy > original.accuracy {
        VerdictLabel::Improved
    } else if c.accuracy < original.accuracy {
        VerdictLabel::Worse
    } else {
        VerdictLabel::Unchanged
    };
    Verdict {
        label,
        bits_delta: Some(c.bits - original.bits),
        accuracy_delta: Some(c.accuracy - original.accuracy),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResponseError {
    #[error("no fenced block in response")]
    NoBlockFound,
    #[error("fenced block holds no expression")]
    EmptyBlock,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("malformed domain line `{0}`")]
    DomainLine(String),
    #[error("rewrite uses variable `{0}` with no domain")]
    UnknownVariable(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn first_fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")? + 3;
    let rest = &text[start..];
    // skip an info string such as ```lisp
    let body_start = rest.find('\n').map_or(rest.len(), |i| i + 1);
    let body = &rest[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

fn parse_bound(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    if v.is_nan() {
        return None;
    }
    Some(v.clamp(-MAX_DOUBLE, MAX_DOUBLE))
}

/// Extracts the rewrite and its domains from a reply. Variables without a
/// `domain` line inherit `original`; the original residual is kept.
pub fn parse_response(text: &str, original: &DomainMap) -> Result<(Expr, DomainMap), ResponseError> {
    let block = first_fenced_block(text).ok_or(ResponseError::NoBlockFound)?;
    parse_block(block, original)
}

fn parse_block(block: &str, original: &DomainMap) -> Result<(Expr, DomainMap), ResponseError> {
    let mut expr_lines = Vec::new();
    let mut declared = BTreeMap::new();
    for line in block.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix("domain ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let bad = || ResponseError::DomainLine(line.to_string());
            let [var, lo, hi] = parts[..] else { return Err(bad()) };
            let (lo, hi) = (parse_bound(lo).ok_or_else(bad)?, parse_bound(hi).ok_or_else(bad)?);
            declared.insert(var.to_string(), Interval::closed(lo, hi)?);
        } else {
            expr_lines.push(line);
        }
    }
    if expr_lines.is_empty() {
        return Err(ResponseError::EmptyBlock);
    }
    let expr = parse(&expr_lines.join(" "))?;
    let mut dm = original.clone();
    for (v, iv) in declared {
        dm.set(&v, iv);
    }
    if let Some(v) = expr.variables().into_iter().find(|v| dm.get(v).is_none()) {
        return Err(ResponseError::UnknownVariable(v));
    }
    let dm = derive_constraints(&expr, &dm)?;
    Ok((expr, dm))
}

/// Measures rewrites of a record.
pub trait Scorer: Sync {
    fn score(&self, record: &DatasetRecord, expr: &Expr, domains: &DomainMap) -> Result<ErrorReport, MeasureFailure>;
}

/// Samples on the record's own stream, so an unchanged domain yields the
/// same inputs as the original measurement.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampledScorer {
    pub eval: EvalConfig,
}

impl Scorer for SampledScorer {
    fn score(&self, record: &DatasetRecord, expr: &Expr, domains: &DomainMap) -> Result<ErrorReport, MeasureFailure> {
        measure_expression(expr, domains, &record.id, record.provenance.seed, &self.eval)
    }
}

/// The original record's properties that reports group by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub expr: String,
    pub strategy: Strategy,
    pub variables: usize,
    pub conditional: bool,
    pub operations: usize,
    pub hp_literals: usize,
    pub bits: f64,
    pub accuracy: f64,
}

impl RecordSummary {
    pub fn of(r: &DatasetRecord) -> RecordSummary {
        RecordSummary {
            expr: r.expr.clone(),
            strategy: r.strategy,
            variables: r.variables,
            conditional: r.conditional,
            operations: r.operations,
            hp_literals: r.hp_literals,
            bits: r.original.bits,
            accuracy: r.original.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteCandidate {
    pub record_id: String,
    pub backend: String,
    pub mode: Mode,
    /// 0 for zero-shot and imported rewrites, 1..=5 for few-shot.
    pub iteration: usize,
    pub expr: Option<String>,
    pub domains: Option<DomainMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<String>,
    pub raw: String,
    pub report: Option<ErrorReport>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub original: RecordSummary,
    pub diff: Option<StructuralDiff>,
}

impl RewriteCandidate {
    pub fn accuracy(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.accuracy)
    }
}

pub fn cap_raw(raw: &str) -> String {
    if raw.len() <= RAW_RESPONSE_CAP {
        return raw.to_string();
    }
    let mut end = RAW_RESPONSE_CAP;
    while !raw.is_char_boundary(end) {
        end -= 1;
    }
    raw[..end].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub max_iterations: usize,
    pub literal_threshold: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig { max_iterations: MAX_ITERATIONS, literal_threshold: 15 }
    }
}

fn describe_domains(out: &mut String, dm: &DomainMap) {
    for (v, iv) in &dm.vars {
        let _ = writeln!(out, "  {v} in {iv}");
    }
    if let Some(r) = dm.residual_text() {
        let _ = writeln!(out, "  subject to {r}");
    }
}

/// Prompt for a record; `history` is empty for zero-shot.
pub fn build_rewrite_prompt(record: &DatasetRecord, domains: &DomainMap, history: &[RewriteCandidate]) -> String {
    let mut p = String::new();
    p.push_str(
        "Task: rewrite the floating-point expression below into a numerically stable form \
         that computes the same real-valued function, and infer the input domains on which \
         your rewrite should be evaluated.\n\n",
    );
    p.push_str(
        "Goals: reduce rounding error in IEEE-754 double precision by mitigating cancellation, \
         overflow, and underflow.\n\n",
    );
    p.push_str("Expression (prefix notation):\n");
    let _ = writeln!(p, "  {}\n", record.expr);
    p.push_str("Input domains:\n");
    describe_domains(&mut p, domains);
    if !history.is_empty() {
        p.push_str("\nPrevious attempts, oldest first:\n");
        for c in history {
            let _ = writeln!(p, "Attempt {}:", c.iteration);
            match (&c.expr, &c.report) {
                (Some(e), Some(r)) => {
                    let _ = writeln!(p, "  expression: {e}");
                    if let Some(d) = &c.domains {
                        p.push_str("  domains:\n");
                        let mut dm = d.clone();
                        if let Some(res) = &c.residual {
                            let _ = dm.set_residual_text(res);
                        }
                        let mut inner = String::new();
                        describe_domains(&mut inner, &dm);
                        for line in inner.lines() {
                            let _ = writeln!(p, "  {line}");
                        }
                    }
                    let _ = writeln!(p, "  bits of error: {:.4}", r.bits);
                    let _ = writeln!(p, "  accuracy: {:.4}%", r.accuracy);
                }
                _ => {
                    if let Some(e) = &c.expr {
                        let _ = writeln!(p, "  expression: {e}");
                    }
                    let _ = writeln!(p, "  failed: {}", c.failure.as_deref().unwrap_or("no result"));
                }
            }
        }
    }
    p.push_str(
        "\nOutput format: reply with one fenced code block holding exactly one expression in \
         the same prefix notation, optionally followed by lines `domain <var> <lo> <hi>` that \
         narrow the input domains. Text outside the block is ignored. Example:\n\
         ```\n(log1p x)\ndomain x 0 1e6\n```\n",
    );
    p
}

struct Attempt<'a> {
    record: &'a DatasetRecord,
    original_expr: &'a Expr,
    domains: &'a DomainMap,
    backend: &'a str,
    mode: Mode,
    iteration: usize,
    policy: LiteralPolicy,
}

impl Attempt<'_> {
    fn failed(&self, raw: &str, expr: Option<&Expr>, reason: String) -> RewriteCandidate {
        RewriteCandidate {
            record_id: self.record.id.clone(),
            backend: self.backend.to_string(),
            mode: self.mode,
            iteration: self.iteration,
            expr: expr.map(|e| e.to_string()),
            domains: None,
            residual: None,
            raw: cap_raw(raw),
            report: None,
            verdict: assign_verdict(&self.record.original, None),
            failure: Some(reason),
            original: RecordSummary::of(self.record),
            diff: expr.map(|e| structural_diff(self.original_expr, e, self.policy)),
        }
    }

    fn evaluate(&self, raw: &str, parsed: Result<(Expr, DomainMap), ResponseError>, scorer: &dyn Scorer) -> RewriteCandidate {
        let (expr, dm) = match parsed {
            Ok(v) => v,
            Err(e) => return self.failed(raw, None, e.to_string()),
        };
        let report = match scorer.score(self.record, &expr, &dm) {
            Ok(r) => r,
            Err(e) => return self.failed(raw, Some(&expr), e.to_string()),
        };
        RewriteCandidate {
            record_id: self.record.id.clone(),
            backend: self.backend.to_string(),
            mode: self.mode,
            iteration: self.iteration,
            expr: Some(expr.to_string()),
            domains: Some(DomainMap { vars: dm.vars.clone(), residual: Vec::new() }),
            residual: dm.residual_text(),
            raw: cap_raw(raw),
            verdict: assign_verdict(&self.record.original, Some(&report)),
            report: Some(report),
            failure: None,
            original: RecordSummary::of(self.record),
            diff: Some(structural_diff(self.original_expr, &expr, self.policy)),
        }
    }
}

fn ask(
    record: &DatasetRecord,
    backend: &dyn Backend,
    scorer: &dyn Scorer,
    cfg: &HarnessConfig,
    mode: Mode,
    iteration: usize,
    history: &[RewriteCandidate],
) -> RewriteCandidate {
    let (original_expr, domains) = match (record.expression(), record.domain_map()) {
        (Ok(e), Ok(d)) => (e, d),
        (Err(e), _) | (_, Err(e)) => {
            // an unreadable record still gets exactly one verdict
            let placeholder = Expr::lit("0");
            let a = Attempt {
                record,
                original_expr: &placeholder,
                domains: &DomainMap::default(),
                backend: backend.name(),
                mode,
                iteration,
                policy: LiteralPolicy::new(cfg.literal_threshold),
            };
            return a.failed("", None, e.to_string());
        }
    };
    let a = Attempt {
        record,
        original_expr: &original_expr,
        domains: &domains,
        backend: backend.name(),
        mode,
        iteration,
        policy: LiteralPolicy::new(cfg.literal_threshold),
    };
    let prompt = build_rewrite_prompt(record, a.domains, history);
    let ctx = PromptContext { record_id: &record.id, expr: Some(&original_expr), iteration };
    match backend.complete(&prompt, &ctx) {
        Ok(raw) => a.evaluate(&raw, parse_response(&raw, a.domains), scorer),
        Err(e) => a.failed("", None, e.to_string()),
    }
}

pub fn run_zero_shot(record: &DatasetRecord, backend: &dyn Backend, scorer: &dyn Scorer, cfg: &HarnessConfig) -> RewriteCandidate {
    ask(record, backend, scorer, cfg, Mode::ZeroShot, 0, &[])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotRun {
    pub best: RewriteCandidate,
    pub history: Vec<RewriteCandidate>,
}

/// Highest accuracy, earliest on ties; `None` if every candidate failed.
pub fn best_candidate(cands: &[RewriteCandidate]) -> Option<&RewriteCandidate> {
    let mut best: Option<&RewriteCandidate> = None;
    for c in cands {
        let Some(acc) = c.accuracy() else { continue };
        if best.and_then(|b| b.accuracy()).is_none_or(|b| acc > b) {
            best = Some(c);
        }
    }
    best
}

/// Iterates with full history and keeps the best iteration. Stops early once
/// a rewrite reaches 100% accuracy.
pub fn run_few_shot(record: &DatasetRecord, backend: &dyn Backend, scorer: &dyn Scorer, cfg: &HarnessConfig) -> FewShotRun {
    let mut history: Vec<RewriteCandidate> = Vec::new();
    for i in 1..=cfg.max_iterations.clamp(1, MAX_ITERATIONS) {
        let c = ask(record, backend, scorer, cfg, Mode::FewShot, i, &history);
        let done = c.accuracy() == Some(100.0);
        history.push(c);
        if done {
            break;
        }
    }
    let best = best_candidate(&history)
        .or(history.last())
        .cloned()
        .expect("at least one iteration");
    FewShotRun { best, history }
}

/// Measures every imported rewrite of `record` and keeps the best.
pub fn import_baseline(
    record: &DatasetRecord,
    rewrites: &[String],
    backend: &str,
    scorer: &dyn Scorer,
    cfg: &HarnessConfig,
) -> RewriteCandidate {
    let policy = LiteralPolicy::new(cfg.literal_threshold);
    let (original_expr, domains) = match (record.expression(), record.domain_map()) {
        (Ok(e), Ok(d)) => (e, d),
        _ => (Expr::lit("0"), DomainMap::default()),
    };
    let a = Attempt {
        record,
        original_expr: &original_expr,
        domains: &domains,
        backend,
        mode: Mode::BestOfK,
        iteration: 0,
        policy,
    };
    let cands: Vec<RewriteCandidate> = rewrites
        .iter()
        .map(|text| {
            let parsed = if text.contains("```") {
                parse_response(text, &domains)
            } else {
                parse_block(text, &domains)
            };
            a.evaluate(text, parsed, scorer)
        })
        .collect();
    match best_candidate(&cands) {
        Some(b) => b.clone(),
        None => cands
            .last()
            .cloned()
            .unwrap_or_else(|| a.failed("", None, "no imported rewrites".into())),
    }
}

#[derive(Debug, Deserialize)]
struct BaselineLine {
    id: String,
    expr: String,
}

/// Reads `{"id": ..., "expr": ...}` lines; several lines per id form the k
/// candidates. Errors carry the 1-based line number.
pub fn load_baseline(text: &str) -> Result<BTreeMap<String, Vec<String>>, (usize, serde_json::Error)> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let b: BaselineLine = serde_json::from_str(line).map_err(|e| (i + 1, e))?;
        out.entry(b.id).or_default().push(b.expr);
    }
    Ok(out)
}

/// Runs one backend over `records` in every requested mode. Output order is
/// (record id, mode) regardless of scheduling.
pub fn run_backend(
    records: &[DatasetRecord],
    backend: &dyn Backend,
    modes: &[Mode],
    scorer: &dyn Scorer,
    cfg: &HarnessConfig,
) -> Vec<RewriteCandidate> {
    let mut out: Vec<RewriteCandidate> = records
        .par_iter()
        .flat_map_iter(|r| {
            modes
                .iter()
                .filter_map(|m| match m {
                    Mode::ZeroShot => Some(run_zero_shot(r, backend, scorer, cfg)),
                    Mode::FewShot => Some(run_few_shot(r, backend, scorer, cfg).best),
                    Mode::BestOfK => None,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    sort_candidates(&mut out);
    out
}

pub fn sort_candidates(cands: &mut [RewriteCandidate]) {
    cands.sort_by(|a, b| (&a.record_id, a.mode, &a.backend).cmp(&(&b.record_id, b.mode, &b.backend)));
}
