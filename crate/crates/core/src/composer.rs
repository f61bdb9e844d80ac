//! Benchmark construction by substituting corpus expressions into each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{default_domain, derive_constraints, propagate_through_composition, DomainError, DomainMap, Interval};
use crate::eval::{measure, ErrorReport, EvalConfig, EvalError};
use crate::expr::{parse, Expr, LiteralPolicy, ParseError};
use crate::sampler::{sample, seeded_rng, stream_id, SamplePlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("expected {expected} inner expressions, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("inner expression `{expr}` must use only variable `{var}`")]
    VariableMismatch { expr: String, var: String },
    #[error("no inner expression for base variable `{0}`")]
    Coverage(String),
    #[error("mixed composition must replace a proper nonempty subset of {total} variables, got {found}")]
    SubsetSize { total: usize, found: usize },
    #[error("`{0}` is not a base variable")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: malformed domain annotation `{text}`")]
    Annotation { line: usize, text: String },
    #[error("line {line}: {source}")]
    Domain { line: usize, source: DomainError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Unary,
    Full,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Unary, Strategy::Full, Strategy::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Unary => "unary",
            Strategy::Full => "full",
            Strategy::Mixed => "mixed",
        }
    }

    /// Whether the strategy produces results with `vars` variables.
    pub fn applies_to(self, vars: usize) -> bool {
        match self {
            Strategy::Unary => vars == 1,
            Strategy::Full | Strategy::Mixed => vars >= 2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub expr: Expr,
    pub domains: DomainMap,
}

impl CorpusEntry {
    pub fn new(id: &str, expr: Expr) -> Result<CorpusEntry, DomainError> {
        let domains = derive_constraints(&expr, &default_domain(&expr.variables()))?;
        Ok(CorpusEntry { id: id.to_string(), expr, domains })
    }

    /// The single variable of an inner-expression candidate.
    pub fn sole_variable(&self) -> Option<String> {
        let vars = self.expr.variables();
        (vars.len() == 1).then(|| vars[0].clone())
    }
}

/// Parses a corpus: one expression per line. `# domain: <var> <lo> <hi>`
/// lines constrain the next expression; other `#` lines are comments.
/// Entry ids are `c<line>`.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Interval)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(spec) = rest.trim().strip_prefix("domain:") {
                pending.push(parse_annotation(spec, line)?);
            }
            continue;
        }
        let expr = parse(t).map_err(|source| CorpusError::Parse { line, source })?;
        let mut base = default_domain(&expr.variables());
        for (v, iv) in pending.drain(..) {
            base.set(&v, iv);
        }
        let domains = derive_constraints(&expr, &base).map_err(|source| CorpusError::Domain { line, source })?;
        out.push(CorpusEntry { id: format!("c{line}"), expr, domains });
    }
    Ok(out)
}

fn parse_annotation(spec: &str, line: usize) -> Result<(String, Interval), CorpusError> {
    let bad = || CorpusError::Annotation { line, text: spec.trim().to_string() };
    let parts: Vec<&str> = spec.split_whitespace().collect();
    let [var, lo, hi] = parts[..] else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let iv = Interval::closed(lo, hi).map_err(|source| CorpusError::Domain { line, source })?;
    Ok((var.to_string(), iv))
}

fn require_single_var(g: &Expr, var: &str) -> Result<(), ComposeError> {
    if g.variables().iter().any(|v| v != var) {
        return Err(ComposeError::VariableMismatch { expr: g.to_string(), var: var.to_string() });
    }
    Ok(())
}

/// Renames the only variable of `g` to `to`. Constants are returned as is.
fn rebind(g: &Expr, to: &str) -> Result<Expr, ComposeError> {
    let vars = g.variables();
    match vars.as_slice() {
        [] => Ok(g.clone()),
        [v] => Ok(g.rename_var(v, to)),
        _ => Err(ComposeError::VariableMismatch { expr: g.to_string(), var: to.to_string() }),
    }
}

/// Replaces the i-th variable of `f` (first-occurrence order) with `gs[i]`.
/// Every inner expression must use only `target_var`.
pub fn compose_unary(f: &Expr, gs: &[Expr], target_var: &str) -> Result<Expr, ComposeError> {
    let vars = f.variables();
    if gs.len() != vars.len() {
        return Err(ComposeError::Arity { expected: vars.len(), found: gs.len() });
    }
    for g in gs {
        require_single_var(g, target_var)?;
    }
    let map = vars.into_iter().zip(gs.iter().cloned()).collect();
    Ok(f.substitute(&map))
}

/// Replaces every variable `v` of `f` with `gs[v]`, whose only variable is
/// renamed to `v`.
pub fn compose_full(f: &Expr, gs: &BTreeMap<String, Expr>) -> Result<Expr, ComposeError> {
    let vars = f.variables();
    if let Some(v) = vars.iter().find(|v| !gs.contains_key(*v)) {
        return Err(ComposeError::Coverage(v.clone()));
    }
    if let Some(k) = gs.keys().find(|k| !vars.contains(k)) {
        return Err(ComposeError::UnknownVariable(k.clone()));
    }
    let map = gs
        .iter()
        .map(|(v, g)| Ok((v.clone(), rebind(g, v)?)))
        .collect::<Result<BTreeMap<_, _>, ComposeError>>()?;
    Ok(f.substitute(&map))
}

/// Like [`compose_full`] on a proper nonempty subset of the variables.
pub fn compose_mixed(f: &Expr, gs: &BTreeMap<String, Expr>) -> Result<Expr, ComposeError> {
    let vars = f.variables();
    if gs.is_empty() || gs.len() >= vars.len() {
        return Err(ComposeError::SubsetSize { total: vars.len(), found: gs.len() });
    }
    if let Some(k) = gs.keys().find(|k| !vars.contains(k)) {
        return Err(ComposeError::UnknownVariable(k.clone()));
    }
    let map = gs
        .iter()
        .map(|(v, g)| Ok((v.clone(), rebind(g, v)?)))
        .collect::<Result<BTreeMap<_, _>, ComposeError>>()?;
    Ok(f.substitute(&map))
}

/// Draws the variables replaced by a mixed composition.
pub fn choose_mixed_subset(vars: &[String], rng: &mut ChaCha20Rng) -> Vec<String> {
    if vars.len() < 2 {
        return Vec::new();
    }
    let k = rng.gen_range(1..vars.len());
    let mut picked: Vec<String> = vars.choose_multiple(rng, k).cloned().collect();
    picked.sort_by_key(|v| vars.iter().position(|w| w == v));
    picked
}

fn rename_domain(dm: &DomainMap, from: &str, to: &str) -> DomainMap {
    let map = BTreeMap::from([(from.to_string(), Expr::var(to))]);
    DomainMap {
        vars: dm
            .vars
            .iter()
            .map(|(k, iv)| (if k == from { to.to_string() } else { k.clone() }, *iv))
            .collect(),
        residual: dm.residual.iter().map(|c| c.substitute(&map)).collect(),
    }
}

/// A composition and the domains of its result.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionSpec {
    pub strategy: Strategy,
    pub base: String,
    /// Base variable to inner corpus id.
    pub inner: BTreeMap<String, String>,
    pub result: Expr,
    pub domains: DomainMap,
}

/// Composes `base` with `inner` (base variable to entry) and propagates
/// domains. Unary composition rebinds every inner entry to `target`.
pub fn compose_entries(
    strategy: Strategy,
    base: &CorpusEntry,
    inner: &BTreeMap<String, &CorpusEntry>,
    target: Option<&str>,
) -> Result<CompositionSpec, CompositionFailure> {
    let mut subst = BTreeMap::new();
    for (v, e) in inner {
        let to = match strategy {
            Strategy::Unary => target.unwrap_or(v),
            _ => v,
        };
        let g = rebind(&e.expr, to)?;
        let dm = match e.sole_variable() {
            Some(w) => rename_domain(&e.domains, &w, to),
            None => e.domains.clone(),
        };
        subst.insert(v.clone(), (g, dm));
    }
    let result = match strategy {
        Strategy::Unary => {
            let order: Vec<Expr> = base
                .expr
                .variables()
                .iter()
                .map(|v| subst.get(v).map(|(g, _)| g.clone()).ok_or_else(|| ComposeError::Coverage(v.clone())))
                .collect::<Result<_, _>>()?;
            compose_unary(&base.expr, &order, target.unwrap_or("x"))?
        }
        Strategy::Full => compose_full(&base.expr, &subst.iter().map(|(k, (g, _))| (k.clone(), g.clone())).collect())?,
        Strategy::Mixed => compose_mixed(&base.expr, &subst.iter().map(|(k, (g, _))| (k.clone(), g.clone())).collect())?,
    };
    let domains = propagate_through_composition(&base.expr, &base.domains, &subst)?;
    Ok(CompositionSpec {
        strategy,
        base: base.id.clone(),
        inner: inner.iter().map(|(k, e)| (k.clone(), e.id.clone())).collect(),
        result,
        domains,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionFailure {
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base: String,
    pub inner: BTreeMap<String, String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub expr: String,
    pub domains: DomainMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<String>,
    pub strategy: Strategy,
    pub variables: usize,
    pub conditional: bool,
    pub conditional_depth: usize,
    pub operations: usize,
    pub hp_literals: usize,
    pub original: ErrorReport,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("record {id}: {source}")]
    Parse { id: String, source: ParseError },
}

impl DatasetRecord {
    pub fn expression(&self) -> Result<Expr, RecordError> {
        parse(&self.expr).map_err(|source| RecordError::Parse { id: self.id.clone(), source })
    }

    /// Boxes plus the residual predicate.
    pub fn domain_map(&self) -> Result<DomainMap, RecordError> {
        let mut dm = self.domains.clone();
        if let Some(r) = &self.residual {
            dm.set_residual_text(r)
                .map_err(|source| RecordError::Parse { id: self.id.clone(), source })?;
        }
        Ok(dm)
    }

    pub fn group(&self) -> GroupKey {
        GroupKey { vars: self.variables, conditional: self.conditional }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub vars: usize,
    pub conditional: bool,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}-{}", self.vars, if self.conditional { "c" } else { "n" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupQuota {
    pub vars: usize,
    pub conditional: bool,
    /// Records per applicable strategy.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub quotas: Vec<GroupQuota>,
    pub eval: EvalConfig,
    /// Draws allowed per requested record before giving up on a cell.
    pub attempts_per_record: usize,
    pub literal_threshold: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            strategies: Strategy::ALL.to_vec(),
            quotas: Vec::new(),
            eval: EvalConfig::default(),
            attempts_per_record: 50,
            literal_threshold: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaWarning {
    pub group: GroupKey,
    pub strategy: Strategy,
    pub wanted: usize,
    pub got: usize,
}

impl fmt::Display for QuotaWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "quota unreachable for {} / {}: {} of {} records",
            self.group, self.strategy, self.got, self.wanted
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub warnings: Vec<QuotaWarning>,
}

/// Measures a composed expression on its own sample stream.
pub fn measure_expression(
    expr: &Expr,
    domains: &DomainMap,
    id: &str,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<ErrorReport, MeasureFailure> {
    let plan = SamplePlan::for_id(cfg.sample_count, seed, id);
    let set = sample(domains, &plan)?;
    Ok(measure(expr, domains, &set.points, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureFailure {
    #[error(transparent)]
    Sample(#[from] crate::sampler::SampleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn draw_inner<'a>(
    rng: &mut ChaCha20Rng,
    pool: &[&'a CorpusEntry],
    vars: &[String],
) -> Option<BTreeMap<String, &'a CorpusEntry>> {
    if pool.is_empty() {
        return None;
    }
    // distinct inner expressions when the pool allows it
    let picked: Vec<&CorpusEntry> = if pool.len() >= vars.len() {
        pool.choose_multiple(rng, vars.len()).copied().collect()
    } else {
        (0..vars.len()).map(|_| *pool.choose(rng).expect("nonempty")).collect()
    };
    Some(vars.iter().cloned().zip(picked).collect())
}

fn draw_spec(
    rng: &mut ChaCha20Rng,
    strategy: Strategy,
    group: GroupKey,
    corpus: &[CorpusEntry],
    pool: &[&CorpusEntry],
) -> Option<Result<CompositionSpec, CompositionFailure>> {
    let bases: Vec<&CorpusEntry> = corpus
        .iter()
        .filter(|e| {
            let n = e.expr.variables().len();
            match strategy {
                Strategy::Unary => n >= 2,
                Strategy::Full | Strategy::Mixed => n == group.vars,
            }
        })
        .collect();
    let base = *bases.choose(rng)?;
    let vars = base.expr.variables();
    let (inner, target) = match strategy {
        Strategy::Unary => {
            let inner = draw_inner(rng, pool, &vars)?;
            let target = inner.values().next().and_then(|e| e.sole_variable());
            (inner, target)
        }
        Strategy::Full => (draw_inner(rng, pool, &vars)?, None),
        Strategy::Mixed => {
            let subset = choose_mixed_subset(&vars, rng);
            (draw_inner(rng, pool, &subset)?, None)
        }
    };
    Some(compose_entries(strategy, base, &inner, target.as_deref()))
}

/// Builds a deduplicated dataset, one seeded stream per (group, strategy)
/// cell. Records are sorted by id.
pub fn build_dataset(corpus: &[CorpusEntry], cfg: &DatasetConfig) -> Dataset {
    let pool: Vec<&CorpusEntry> = corpus.iter().filter(|e| e.sole_variable().is_some()).collect();
    let policy = LiteralPolicy::new(cfg.literal_threshold);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Dataset::default();
    let mut quotas = cfg.quotas.clone();
    quotas.sort_by_key(|q| (q.vars, q.conditional));
    for q in &quotas {
        let group = GroupKey { vars: q.vars, conditional: q.conditional };
        for &strategy in &cfg.strategies {
            if q.count == 0 || !strategy.applies_to(q.vars) {
                continue;
            }
            let mut rng = seeded_rng(cfg.seed, stream_id(&format!("{strategy}-{group}")));
            let mut got = 0;
            let budget = q.count.saturating_mul(cfg.attempts_per_record.max(1));
            for _ in 0..budget {
                if got == q.count {
                    break;
                }
                let Some(Ok(spec)) = draw_spec(&mut rng, strategy, group, corpus, &pool) else { continue };
                let vars = spec.result.variables().len();
                if vars != q.vars || spec.result.has_conditional() != q.conditional {
                    continue;
                }
                let text = spec.result.to_string();
                if seen.contains(&text) {
                    continue;
                }
                let id = format!("{strategy}-{group}-{got:04}");
                let Ok(report) = measure_expression(&spec.result, &spec.domains, &id, cfg.seed, &cfg.eval) else {
                    continue;
                };
                if report.accuracy >= 100.0 {
                    continue;
                }
                seen.insert(text.clone());
                out.records.push(DatasetRecord {
                    id,
                    expr: text,
                    domains: DomainMap { vars: spec.domains.vars.clone(), residual: Vec::new() },
                    residual: spec.domains.residual_text(),
                    strategy,
                    variables: vars,
                    conditional: spec.result.has_conditional(),
                    conditional_depth: spec.result.conditional_depth(),
                    operations: spec.result.count_operations(),
                    hp_literals: spec.result.high_precision_literals(policy).len(),
                    original: report,
                    provenance: Provenance { base: spec.base, inner: spec.inner, seed: cfg.seed },
                });
                got += 1;
            }
            if got < q.count {
                let w = QuotaWarning { group, strategy, wanted: q.count, got };
                log::warn!("{w}");
                out.warnings.push(w);
            }
        }
    }
    out.records.sort_by(|a, b| a.id.cmp(&b.id));
    out
}
