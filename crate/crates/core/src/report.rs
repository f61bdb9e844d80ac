//! Aggregate statistics over rewrite candidates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::harness::{Mode, RewriteCandidate, VerdictLabel};

/// Operation-count buckets as (label, inclusive lower bound).
pub const OPERATION_BUCKETS: [(&str, usize); 5] = [("0-4", 0), ("5-9", 5), ("10-19", 10), ("20-39", 20), ("40+", 40)];

pub const CSV_HEADER: &str =
    "backend,mode,group,value,n,improved,worse,unchanged,failed,mean_acc_increase,cond_removed_pct,hp_lit_removed_pct";

pub fn operation_bucket(ops: usize) -> &'static str {
    OPERATION_BUCKETS
        .iter()
        .rev()
        .find(|(_, lo)| ops >= *lo)
        .map(|(l, _)| *l)
        .unwrap_or("0-4")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub backend: String,
    pub mode: String,
    pub group: String,
    pub value: String,
    pub n: usize,
    pub improved: f64,
    pub worse: f64,
    pub unchanged: f64,
    pub failed: f64,
    /// Mean accuracy gain over improved candidates only.
    pub mean_acc_increase: f64,
    /// Share of conditional originals whose rewrite has no conditional.
    pub cond_removed_pct: f64,
    /// Share of originals with high-precision literals whose rewrite drops one.
    pub hp_lit_removed_pct: f64,
}

#[derive(Debug, Default)]
struct Tally {
    n: usize,
    by_label: BTreeMap<VerdictLabel, usize>,
    gain_sum: f64,
    conditional: usize,
    cond_removed: usize,
    with_hp: usize,
    hp_removed: usize,
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

impl Tally {
    fn add(&mut self, c: &RewriteCandidate) {
        self.n += 1;
        *self.by_label.entry(c.verdict.label).or_default() += 1;
        if c.verdict.label == VerdictLabel::Improved {
            self.gain_sum += c.verdict.accuracy_delta.unwrap_or(0.0);
        }
        if c.original.conditional {
            self.conditional += 1;
            if c.diff.is_some_and(|d| d.conditional_removed) {
                self.cond_removed += 1;
            }
        }
        if c.original.hp_literals > 0 {
            self.with_hp += 1;
            if c.diff.is_some_and(|d| d.hp_literals_removed > 0) {
                self.hp_removed += 1;
            }
        }
    }

    fn cell(&self, backend: &str, mode: &str, group: &str, value: &str) -> Cell {
        let label = |l| self.by_label.get(&l).copied().unwrap_or(0);
        let improved = label(VerdictLabel::Improved);
        Cell {
            backend: backend.into(),
            mode: mode.into(),
            group: group.into(),
            value: value.into(),
            n: self.n,
            improved: pct(improved, self.n),
            worse: pct(label(VerdictLabel::Worse), self.n),
            unchanged: pct(label(VerdictLabel::Unchanged), self.n),
            failed: pct(label(VerdictLabel::Failed), self.n),
            mean_acc_increase: if improved == 0 { 0.0 } else { self.gain_sum / improved as f64 },
            cond_removed_pct: pct(self.cond_removed, self.conditional),
            hp_lit_removed_pct: pct(self.hp_removed, self.with_hp),
        }
    }
}

fn breakdowns(c: &RewriteCandidate) -> Vec<(&'static str, String)> {
    vec![
        ("all", "all".into()),
        ("variables", c.original.variables.to_string()),
        ("conditional", if c.original.conditional { "yes" } else { "no" }.into()),
        ("strategy", c.original.strategy.to_string()),
        ("operations", operation_bucket(c.original.operations).into()),
        ("hp_literals", if c.original.hp_literals > 0 { "yes" } else { "no" }.into()),
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Complementarity {
    pub backend: String,
    pub mode: String,
    /// Baseline failures this backend improves.
    pub improves_baseline_failures: Vec<String>,
    /// Records where this backend's accuracy exceeds the baseline's.
    pub beats_baseline: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub baseline: Option<String>,
    pub cells: Vec<Cell>,
    /// Records the baseline did not improve.
    pub baseline_failures: Vec<String>,
    pub complementarity: Vec<Complementarity>,
    /// Baseline failures improved by at least one other backend.
    pub improved_by_any: Vec<String>,
}

/// Builds the report from candidates alone. `baseline` names the backend
/// whose failures the complementarity section is about.
pub fn aggregate(candidates: &[RewriteCandidate], baseline: Option<&str>) -> AggregateReport {
    let mut tallies: BTreeMap<(String, Mode, &'static str, String), Tally> = BTreeMap::new();
    for c in candidates {
        for (group, value) in breakdowns(c) {
            tallies
                .entry((c.backend.clone(), c.mode, group, value))
                .or_default()
                .add(c);
        }
    }
    let mut cells: Vec<Cell> = tallies
        .iter()
        .map(|((b, m, g, v), t)| t.cell(b, m.name(), g, v))
        .collect();
    cells.sort_by(|a, b| {
        let key = |c: &Cell| {
            (
                c.backend.clone(),
                c.mode.clone(),
                c.group.clone(),
                c.value.parse::<usize>().unwrap_or(usize::MAX),
                OPERATION_BUCKETS.iter().position(|(l, _)| *l == c.value).unwrap_or(usize::MAX),
                c.value.clone(),
            )
        };
        key(a).cmp(&key(b))
    });

    let mut report = AggregateReport { baseline: baseline.map(str::to_string), cells, ..Default::default() };
    let Some(base) = baseline else { return report };
    let base_cands: BTreeMap<&str, &RewriteCandidate> = candidates
        .iter()
        .filter(|c| c.backend == base)
        .map(|c| (c.record_id.as_str(), c))
        .collect();
    let failures: BTreeSet<&str> = base_cands
        .iter()
        .filter(|(_, c)| c.verdict.label != VerdictLabel::Improved)
        .map(|(id, _)| *id)
        .collect();
    let mut per_pair: BTreeMap<(String, Mode), Complementarity> = BTreeMap::new();
    let mut any: BTreeSet<String> = BTreeSet::new();
    for c in candidates.iter().filter(|c| c.backend != base) {
        let entry = per_pair.entry((c.backend.clone(), c.mode)).or_insert_with(|| Complementarity {
            backend: c.backend.clone(),
            mode: c.mode.name().into(),
            ..Default::default()
        });
        let Some(b) = base_cands.get(c.record_id.as_str()) else { continue };
        if c.verdict.label == VerdictLabel::Improved && failures.contains(c.record_id.as_str()) {
            entry.improves_baseline_failures.push(c.record_id.clone());
            any.insert(c.record_id.clone());
        }
        let beats = match (c.accuracy(), b.accuracy()) {
            (Some(x), Some(y)) => x > y,
            (Some(_), None) => true,
            _ => false,
        };
        if beats {
            entry.beats_baseline.push(c.record_id.clone());
        }
    }
    for e in per_pair.values_mut() {
        e.improves_baseline_failures.sort();
        e.improves_baseline_failures.dedup();
        e.beats_baseline.sort();
        e.beats_baseline.dedup();
    }
    report.baseline_failures = failures.into_iter().map(str::to_string).collect();
    report.complementarity = per_pair.into_values().collect();
    report.improved_by_any = any.into_iter().collect();
    report
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AggregateReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                csv_field(&c.backend),
                c.mode,
                c.group,
                csv_field(&c.value),
                c.n,
                c.improved,
                c.worse,
                c.unchanged,
                c.failed,
                c.mean_acc_increase,
                c.cond_removed_pct,
                c.hp_lit_removed_pct
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::Strategy;
    use crate::expr::StructuralDiff;
    use crate::harness::{RecordSummary, Verdict};

    fn cand(id: &str, backend: &str, label: VerdictLabel, acc: Option<f64>) -> RewriteCandidate {
        let report = acc.map(|a| crate::eval::ErrorReport {
            bits: 53.0 * (1.0 - a / 100.0),
            accuracy: a,
            valid: 1,
            failed: 0,
            invalid: 0,
            point_bits: vec![],
        });
        RewriteCandidate {
            record_id: id.into(),
            backend: backend.into(),
            mode: if backend == "baseline" { Mode::BestOfK } else { Mode::ZeroShot },
            iteration: 0,
            expr: Some("x".into()),
            domains: None,
            residual: None,
            raw: String::new(),
            report,
            verdict: Verdict { label, bits_delta: None, accuracy_delta: acc.map(|a| a - 50.0) },
            failure: None,
            original: RecordSummary {
                expr: "x".into(),
                strategy: Strategy::Unary,
                variables: 1,
                conditional: id == "r1",
                operations: 7,
                hp_literals: usize::from(id == "r2"),
                bits: 26.5,
                accuracy: 50.0,
            },
            diff: Some(StructuralDiff { conditional_removed: id == "r1", hp_literals_removed: 0, operation_delta: 0 }),
        }
    }

    fn fixture() -> Vec<RewriteCandidate> {
        use VerdictLabel::*;
        vec![
            cand("r1", "A", Improved, Some(70.0)),
            cand("r2", "A", Improved, Some(90.0)),
            cand("r3", "A", Worse, Some(40.0)),
            cand("r4", "A", Failed, None),
            cand("r1", "baseline", Unchanged, Some(50.0)),
            cand("r2", "baseline", Improved, Some(95.0)),
            cand("r3", "baseline", Improved, Some(60.0)),
            cand("r4", "baseline", Failed, None),
        ]
    }

    #[test]
    fn complementarity_set_algebra() {
        let r = aggregate(&fixture(), Some("baseline"));
        assert_eq!(r.baseline_failures, vec!["r1", "r4"]);
        assert_eq!(r.complementarity.len(), 1);
        assert_eq!(r.complementarity[0].improves_baseline_failures, vec!["r1"]);
        assert_eq!(r.complementarity[0].beats_baseline, vec!["r1"]);
        assert_eq!(r.improved_by_any, vec!["r1"]);
    }

    #[test]
    fn cells_sum_to_100_and_cover_records() {
        let r = aggregate(&fixture(), Some("baseline"));
        for c in &r.cells {
            let s = c.improved + c.worse + c.unchanged + c.failed;
            assert!((s - 100.0).abs() < 1e-9, "{c:?}");
        }
        let a = r.cells.iter().find(|c| c.backend == "A" && c.group == "all").unwrap();
        assert_eq!(a.n, 4);
        assert_eq!((a.improved, a.worse, a.failed), (50.0, 25.0, 25.0));
        assert_eq!(a.mean_acc_increase, 30.0);
        assert_eq!(a.cond_removed_pct, 100.0);
        assert_eq!(a.hp_lit_removed_pct, 0.0);
        let ops = r.cells.iter().find(|c| c.backend == "A" && c.group == "operations").unwrap();
        assert_eq!(ops.value, "5-9");
    }

    #[test]
    fn empty_input() {
        let r = aggregate(&[], Some("baseline"));
        assert!(r.cells.is_empty() && r.baseline_failures.is_empty());
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn buckets() {
        assert_eq!(operation_bucket(0), "0-4");
        assert_eq!(operation_bucket(9), "5-9");
        assert_eq!(operation_bucket(10), "10-19");
        assert_eq!(operation_bucket(39), "20-39");
        assert_eq!(operation_bucket(400), "40+");
    }
}
