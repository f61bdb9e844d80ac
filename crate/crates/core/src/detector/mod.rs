//! Search for inputs that maximise the floating-point error of a kernel.

pub mod kernels;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{relative_error, sig17};
use crate::harness::{Backend, PromptContext};
use crate::sampler::{seeded_rng, stream_id};

pub use kernels::{suite, Kernel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("kernel `{kernel}` takes {expected} inputs, got {found}")]
    Signature { kernel: String, expected: usize, found: usize },
    #[error("oracle result is undefined")]
    UndefinedHp,
    #[error("binary64 result is NaN")]
    UndefinedFp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeError {
    pub name: String,
    /// NaN when either side of the probe is NaN.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRun {
    pub fp: Vec<f64>,
    /// Oracle outputs rounded to binary64.
    pub hp: Vec<f64>,
    /// Largest relative error over the outputs.
    pub final_error: f64,
    pub probes: Vec<ProbeError>,
    pub max_intermediate: f64,
}

/// Executes `kernel` in binary64 and under the oracle, the latter following
/// the binary64 control flow.
pub fn run_kernel(kernel: &Kernel, inputs: &[f64], prec: u32) -> Result<KernelRun, KernelError> {
    if inputs.len() != kernel.arity() {
        return Err(KernelError::Signature {
            kernel: kernel.name.clone(),
            expected: kernel.arity(),
            found: inputs.len(),
        });
    }
    let (fp, fp_probes, decisions) = kernels::run_fp(kernel, inputs);
    let (hp, hp_probes) = kernels::run_hp(kernel, inputs, prec, &decisions);
    if hp.iter().any(|v| v.is_nan()) {
        return Err(KernelError::UndefinedHp);
    }
    if fp.iter().any(|v| v.is_nan()) {
        return Err(KernelError::UndefinedFp);
    }
    let final_error = fp
        .iter()
        .zip(&hp)
        .map(|(f, h)| relative_error(*f, h))
        .fold(0.0, f64::max);
    let probes: Vec<ProbeError> = fp_probes
        .iter()
        .zip(&hp_probes)
        .map(|((name, f), (_, h))| ProbeError { name: name.clone(), rel_error: relative_error(*f, h) })
        .collect();
    let max_intermediate = probes
        .iter()
        .map(|p| p.rel_error)
        .filter(|e| !e.is_nan())
        .fold(0.0, f64::max);
    Ok(KernelRun {
        fp,
        hp: hp.iter().map(|h| h.to_f64()).collect(),
        final_error,
        probes,
        max_intermediate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Random,
    Mock,
    ChatEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub box_lo: f64,
    pub box_hi: f64,
    pub stagnation: usize,
    pub budget_secs: f64,
    pub warmup: usize,
    /// Trial cap independent of wall-clock time, for reproducible runs.
    pub max_trials: Option<usize>,
    pub seed: u64,
    pub oracle_precision: u32,
    pub generator: GeneratorKind,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            box_lo: -100.0,
            box_hi: 100.0,
            stagnation: 10,
            budget_secs: 3600.0,
            warmup: 1000,
            max_trials: None,
            seed: 0,
            oracle_precision: 256,
            generator: GeneratorKind::Random,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.box_lo.partial_cmp(&self.box_hi) != Some(std::cmp::Ordering::Less) || !self.box_lo.is_finite() || !self.box_hi.is_finite() {
            return Err(format!("invalid input box [{}, {}]", self.box_lo, self.box_hi));
        }
        if self.stagnation == 0 || self.budget_secs <= 0.0 {
            return Err("stagnation threshold and budget must be positive".into());
        }
        Ok(())
    }

    fn in_box(&self, x: f64) -> bool {
        x >= self.box_lo && x <= self.box_hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediatePeak {
    pub inputs: Vec<f64>,
    #[serde(with = "crate::eval::sig17")]
    pub max_intermediate: f64,
    #[serde(with = "crate::eval::sig17")]
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub kernel: String,
    pub variables: Vec<String>,
    pub best_inputs: Vec<f64>,
    pub best_final: f64,
    /// Max intermediate error at `best_inputs`.
    pub best_final_intermediate: f64,
    /// Point with the largest intermediate error seen so far.
    pub peak: Option<IntermediatePeak>,
    /// Indices into `variables`.
    pub symbolic: Vec<usize>,
    pub concrete: Vec<usize>,
    pub trials: usize,
    pub since_improvement: usize,
    pub depth: usize,
    pub rejected: usize,
    pub elapsed_secs: f64,
}

impl SearchState {
    pub fn best_intermediate(&self) -> f64 {
        self.peak.as_ref().map_or(0.0, |p| p.max_intermediate)
    }

    fn reset_partition(&mut self) {
        self.symbolic = (0..self.variables.len()).collect();
        self.concrete.clear();
        self.depth = 0;
    }

    /// Records an evaluated point; true on strict improvement of the final error.
    fn observe(&mut self, inputs: &[f64], run: &KernelRun) -> bool {
        if self.peak.as_ref().is_none_or(|p| run.max_intermediate > p.max_intermediate) {
            self.peak = Some(IntermediatePeak {
                inputs: inputs.to_vec(),
                max_intermediate: run.max_intermediate,
                final_error: run.final_error,
            });
        }
        if run.final_error > self.best_final || self.best_inputs.is_empty() {
            self.best_inputs = inputs.to_vec();
            self.best_final = run.final_error;
            self.best_final_intermediate = run.max_intermediate;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub elapsed_ms: u64,
    pub trial: usize,
    pub candidate: BTreeMap<String, String>,
    #[serde(with = "opt_sig17")]
    pub final_error: Option<f64>,
    #[serde(with = "opt_sig17")]
    pub max_intermediate: Option<f64>,
    pub accepted: bool,
    pub improved: bool,
    #[serde(with = "sig17")]
    pub best_final: f64,
}

mod opt_sig17 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&format!("{v:.16e}")),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| t.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Uniform sampling of the box, starting from the full symbolic set.
pub fn warm_up(kernel: &Kernel, cfg: &DetectorConfig, rng: &mut ChaCha20Rng) -> SearchState {
    let variables = kernel.variables();
    let mut st = SearchState {
        kernel: kernel.name.clone(),
        variables: variables.clone(),
        best_inputs: Vec::new(),
        best_final: 0.0,
        best_final_intermediate: 0.0,
        peak: None,
        symbolic: Vec::new(),
        concrete: Vec::new(),
        trials: 0,
        since_improvement: 0,
        depth: 0,
        rejected: 0,
        elapsed_secs: 0.0,
    };
    st.reset_partition();
    let count = if variables.is_empty() { 1 } else { cfg.warmup.max(1) };
    for _ in 0..count {
        let x: Vec<f64> = (0..variables.len()).map(|_| rng.gen_range(cfg.box_lo..=cfg.box_hi)).collect();
        if let Ok(run) = run_kernel(kernel, &x, cfg.oracle_precision) {
            st.observe(&x, &run);
        }
    }
    if st.best_inputs.is_empty() {
        st.best_inputs = vec![0.0; variables.len()];
    }
    st
}

/// Source of candidate values for the symbolic variables.
pub trait CandidateSource {
    /// Values keyed by variable name; `Err` counts as a failed trial.
    fn propose(&mut self, kernel: &Kernel, state: &SearchState, cfg: &DetectorConfig, rng: &mut ChaCha20Rng)
        -> Result<BTreeMap<String, String>, String>;
}

/// Seeded random proposals: uniform, log-uniform magnitude, perturbation of
/// the current best, and cancellation moves.
#[derive(Debug, Default, Clone, Copy)]
pub struct RandomSource;

fn log_magnitude(rng: &mut ChaCha20Rng, hi: f64) -> f64 {
    let (l0, l1) = (f64::MIN_POSITIVE.log2(), hi.log2());
    let m = (l0 + (l1 - l0) * rng.gen::<f64>()).exp2().min(hi);
    if rng.gen_bool(0.5) {
        -m
    } else {
        m
    }
}

impl CandidateSource for RandomSource {
    fn propose(
        &mut self,
        _kernel: &Kernel,
        st: &SearchState,
        cfg: &DetectorConfig,
        rng: &mut ChaCha20Rng,
    ) -> Result<BTreeMap<String, String>, String> {
        let mut x = st.best_inputs.clone();
        let bound = cfg.box_hi.abs().min(cfg.box_lo.abs()).max(f64::MIN_POSITIVE);
        let mv = rng.gen_range(0..4);
        for &i in &st.symbolic {
            x[i] = match mv {
                0 => rng.gen_range(cfg.box_lo..=cfg.box_hi),
                1 => log_magnitude(rng, bound),
                2 => {
                    let scale = (rng.gen::<f64>() * -52.0).exp2();
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    x[i] * (1.0 + sign * scale)
                }
                _ => x[i],
            };
        }
        if mv == 3 && !st.symbolic.is_empty() {
            // cancel the running sum of the preceding inputs, or another input
            let &i = st.symbolic.choose(rng).expect("nonempty");
            x[i] = if i > 0 && rng.gen_bool(0.5) {
                -x[..i].iter().fold(0.0, |s, v| s + v)
            } else {
                let j = rng.gen_range(0..x.len());
                -x[j]
            };
        }
        Ok(st.symbolic.iter().map(|&i| (st.variables[i].clone(), fmt17(x[i]))).collect())
    }
}

/// Replays fixed candidate replies in order, then repeats the last one.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSource {
    pub replies: Vec<String>,
    next: usize,
}

impl ScriptedSource {
    pub fn new(replies: Vec<String>) -> ScriptedSource {
        ScriptedSource { replies, next: 0 }
    }
}

impl CandidateSource for ScriptedSource {
    fn propose(&mut self, _: &Kernel, _: &SearchState, _: &DetectorConfig, _: &mut ChaCha20Rng) -> Result<BTreeMap<String, String>, String> {
        let reply = self
            .replies
            .get(self.next)
            .or(self.replies.last())
            .ok_or("no scripted replies")?;
        self.next += 1;
        parse_candidate_reply(reply)
    }
}

/// Asks a chat backend with [`build_detector_prompt`].
pub struct BackendSource<'a> {
    pub backend: &'a dyn Backend,
}

impl CandidateSource for BackendSource<'_> {
    fn propose(&mut self, kernel: &Kernel, st: &SearchState, cfg: &DetectorConfig, _: &mut ChaCha20Rng) -> Result<BTreeMap<String, String>, String> {
        let prompt = build_detector_prompt(kernel, st, cfg);
        let ctx = PromptContext { record_id: &kernel.name, expr: None, iteration: st.trials + 1 };
        let reply = self.backend.complete(&prompt, &ctx).map_err(|e| e.to_string())?;
        parse_candidate_reply(&reply)
    }
}

/// `name = value` lines from the first fenced block.
pub fn parse_candidate_reply(text: &str) -> Result<BTreeMap<String, String>, String> {
    let start = text.find("```").ok_or("no fenced block")? + 3;
    let rest = &text[start..];
    let body = &rest[rest.find('\n').map_or(rest.len(), |i| i + 1)..];
    let body = &body[..body.find("```").ok_or("unterminated fenced block")?];
    let mut out = BTreeMap::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line `{line}`"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Checks completeness, type and box membership of a proposal.
pub fn validate_candidate(st: &SearchState, cfg: &DetectorConfig, proposal: &BTreeMap<String, String>) -> Result<Vec<f64>, String> {
    if let Some(k) = proposal.keys().find(|k| !st.variables.contains(k)) {
        return Err(format!("unknown variable `{k}`"));
    }
    let mut x = st.best_inputs.clone();
    for &i in &st.symbolic {
        let name = &st.variables[i];
        let text = proposal.get(name).ok_or_else(|| format!("missing value for `{name}`"))?;
        let v: f64 = text.parse().map_err(|_| format!("`{text}` is not a number"))?;
        if !v.is_finite() || !cfg.in_box(v) {
            return Err(format!("`{name}` = {text} is outside [{}, {}]", cfg.box_lo, cfg.box_hi));
        }
        x[i] = v;
    }
    Ok(x)
}

pub fn build_detector_prompt(kernel: &Kernel, st: &SearchState, cfg: &DetectorConfig) -> String {
    let mut p = String::new();
    p.push_str(
        "Task: find input values that maximise the floating-point error of the program below, \
         measured as the relative error of its IEEE-754 double-precision result against a \
         high-precision reference.\n\n",
    );
    let _ = writeln!(p, "Program `{}`:\n{}\n", kernel.name, kernel.source);
    let names = |ix: &[usize]| ix.iter().map(|&i| st.variables[i].clone()).collect::<Vec<_>>().join(", ");
    let _ = writeln!(p, "Symbolic variables (choose values): {}", names(&st.symbolic));
    p.push_str("Concrete variables (fixed):\n");
    for &i in &st.concrete {
        let _ = writeln!(p, "  {} = {}", st.variables[i], fmt17(st.best_inputs[i]));
    }
    p.push_str("Current best inputs:\n");
    for (n, v) in st.variables.iter().zip(&st.best_inputs) {
        let _ = writeln!(p, "  {n} = {}", fmt17(*v));
    }
    let _ = writeln!(p, "Current best relative error: {}\n", fmt17(st.best_final));
    let _ = writeln!(
        p,
        "Constraints: every value must be a finite decimal number in [{}, {}].",
        crate::expr::shortest_decimal(cfg.box_lo),
        crate::expr::shortest_decimal(cfg.box_hi)
    );
    p.push_str(
        "Output format: one fenced code block with a line `name = value` for every symbolic \
         variable. Example:\n```\nx = 1.0000000000000002e0\n```\n",
    );
    p
}

/// Search loop with symbolic/concrete partitioning. `on_trial` sees every
/// trial in order.
pub fn search(
    kernel: &Kernel,
    cfg: &DetectorConfig,
    source: &mut dyn CandidateSource,
    rng: &mut ChaCha20Rng,
    mut on_trial: impl FnMut(&TraceEntry),
) -> SearchState {
    let start = Instant::now();
    let mut st = warm_up(kernel, cfg, rng);
    if st.variables.is_empty() {
        return st;
    }
    loop {
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= cfg.budget_secs || cfg.max_trials.is_some_and(|m| st.trials >= m) {
            st.elapsed_secs = elapsed;
            break;
        }
        st.trials += 1;
        let proposal = source.propose(kernel, &st, cfg, rng);
        let candidate = proposal.clone().unwrap_or_default();
        let mut entry = TraceEntry {
            elapsed_ms: start.elapsed().as_millis() as u64,
            trial: st.trials,
            candidate,
            final_error: None,
            max_intermediate: None,
            accepted: false,
            improved: false,
            best_final: st.best_final,
        };
        let evaluated = proposal
            .and_then(|p| validate_candidate(&st, cfg, &p))
            .map_err(|_| st.rejected += 1)
            .ok()
            .and_then(|x| run_kernel(kernel, &x, cfg.oracle_precision).ok().map(|r| (x, r)));
        if let Some((x, run)) = evaluated {
            entry.accepted = true;
            entry.final_error = Some(run.final_error);
            entry.max_intermediate = Some(run.max_intermediate);
            entry.improved = st.observe(&x, &run);
        }
        entry.best_final = st.best_final;
        if entry.improved {
            st.since_improvement = 0;
        } else {
            st.since_improvement += 1;
        }
        if st.since_improvement >= cfg.stagnation {
            st.since_improvement = 0;
            if st.symbolic.len() > 1 {
                st.symbolic.shuffle(rng);
                let keep = st.symbolic.len() / 2;
                let moved = st.symbolic.split_off(keep);
                st.concrete.extend(moved);
                st.symbolic.sort_unstable();
                st.concrete.sort_unstable();
                st.depth += 1;
            } else {
                st.reset_partition();
            }
        }
        on_trial(&entry);
    }
    st
}

/// Result of one kernel's search, with its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRun {
    pub state: SearchState,
    pub trace: Vec<TraceEntry>,
}

/// Searches every kernel in parallel with the random generator, each on its
/// own stream.
pub fn run_suite_random(kernels: &[Kernel], cfg: &DetectorConfig) -> Vec<DetectorRun> {
    kernels
        .par_iter()
        .map(|k| {
            let mut rng = seeded_rng(cfg.seed, stream_id(&k.name));
            let mut trace = Vec::new();
            let state = search(k, cfg, &mut RandomSource, &mut rng, |e| trace.push(e.clone()));
            DetectorRun { state, trace }
        })
        .collect()
}

/// Searches one kernel with any candidate source on the kernel's stream.
pub fn run_one(kernel: &Kernel, cfg: &DetectorConfig, source: &mut dyn CandidateSource) -> DetectorRun {
    let mut rng = seeded_rng(cfg.seed, stream_id(&kernel.name));
    let mut trace = Vec::new();
    let state = search(kernel, cfg, source, &mut rng, |e| trace.push(e.clone()));
    DetectorRun { state, trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 256;

    #[test]
    fn recursive_sum_exact_inputs() {
        let r = run_kernel(&Kernel::recursive_sum(3), &[1.0, 2.0, 3.0], P).unwrap();
        assert_eq!((r.fp[0], r.hp[0], r.final_error), (6.0, 6.0, 0.0));
        assert!(r.probes.iter().all(|p| p.rel_error == 0.0));
    }

    #[test]
    fn recursive_sum_absorption() {
        let r = run_kernel(&Kernel::recursive_sum(3), &[1e16, 1.0, -1e16], P).unwrap();
        // 1e16 + 1 is a tie and rounds to 1e16, so the result is 0 against 1
        assert_eq!(r.fp[0], 0.0);
        assert_eq!(r.hp[0], 1.0);
        assert_eq!(r.final_error, 1.0);
        assert_eq!(r.probes.len(), 1);
        let exact = rug::Float::with_val(256, 1) / (rug::Float::with_val(256, 1e16) + 1u32);
        assert_eq!(r.probes[0].rel_error, exact.to_f64());
        assert!(r.probes[0].rel_error < r.final_error);
    }

    #[test]
    fn kahan_on_absorption_input() {
        let r = run_kernel(&Kernel::kahan_sum(3), &[1e16, 1.0, -1e16], P).unwrap();
        // the compensation is lost when -1e16 - (-1) rounds back to -1e16
        assert_eq!(r.fp[0], 0.0);
        assert_eq!(r.final_error, 1.0);
        let r = run_kernel(&Kernel::kahan_sum(4), &[1.0, 1e-16, 1e-16, 1e-16], P).unwrap();
        assert!(r.final_error < 1e-16);
        let naive = run_kernel(&Kernel::recursive_sum(4), &[1.0, 1e-16, 1e-16, 1e-16], P).unwrap();
        assert!(naive.final_error > r.final_error);
    }

    #[test]
    fn signature_mismatch() {
        assert!(matches!(
            run_kernel(&Kernel::by_name("cancellation").unwrap(), &[1.0], P),
            Err(KernelError::Signature { expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn suite_runs_everywhere() {
        for k in suite() {
            let x: Vec<f64> = if k.name.starts_with("quadratic") {
                vec![1.0, 5.0, 1.0]
            } else {
                (0..k.arity()).map(|i| 1.0 + i as f64 * 0.25).collect()
            };
            let r = run_kernel(&k, &x, P).unwrap_or_else(|e| panic!("{}: {e}", k.name));
            assert!(r.final_error < 1e-14, "{} {}", k.name, r.final_error);
            assert_eq!(r.fp.len(), r.hp.len());
        }
        assert_eq!(suite().len(), 12);
    }

    #[test]
    fn quadratic_branch_replay() {
        let k = Kernel::by_name("quadratic_stable").unwrap();
        let r = run_kernel(&k, &[1.0, -1e8, 1.0], P).unwrap();
        assert!(r.final_error < 1e-15);
        assert!(r.probes.iter().any(|p| p.name == "num"));
    }

    #[test]
    fn undefined_oracle_is_discarded() {
        let k = Kernel::by_name("quadratic_naive").unwrap();
        assert_eq!(run_kernel(&k, &[1.0, 0.0, 1.0], P), Err(KernelError::UndefinedHp));
    }

    #[test]
    fn warm_up_deterministic() {
        let k = Kernel::by_name("cancellation").unwrap();
        let cfg = DetectorConfig::default();
        let a = warm_up(&k, &cfg, &mut seeded_rng(1, 2));
        let b = warm_up(&k, &cfg, &mut seeded_rng(1, 2));
        assert_eq!(a, b);
        assert!(a.best_final > 0.0);
        assert_eq!(a.symbolic, vec![0, 1]);
    }

    #[test]
    fn scripted_search_follows_sequence() {
        let k = Kernel::by_name("cancellation").unwrap();
        let cfg = DetectorConfig { warmup: 1, max_trials: Some(5), ..DetectorConfig::default() };
        let replies = ["x = 1\ny = 1", "x = 1\ny = 1e-17", "x = 1\ny = 200", "nonsense", "x = 1e16\ny = 1"]
            .iter()
            .map(|r| format!("```\n{r}\n```"))
            .collect();
        let mut src = ScriptedSource::new(replies);
        let run = run_one(&k, &cfg, &mut src);
        assert_eq!(run.state.best_final, 1.0);
        assert_eq!(run.state.best_inputs, vec![1.0, 1e-17]);
        assert_eq!(run.state.rejected, 3);
        assert!(run.trace.windows(2).all(|w| w[0].best_final <= w[1].best_final));
        let again = run_one(&k, &cfg, &mut ScriptedSource::new(src.replies.clone()));
        assert_eq!(again.state.best_inputs, run.state.best_inputs);
        let strip = |t: &[TraceEntry]| t.iter().map(|e| TraceEntry { elapsed_ms: 0, ..e.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&again.trace), strip(&run.trace));
    }

    #[test]
    fn partition_invariant_and_split() {
        let k = Kernel::recursive_sum(8);
        let cfg = DetectorConfig { warmup: 10, max_trials: Some(200), ..DetectorConfig::default() };
        let mut rng = seeded_rng(4, 4);
        let mut trials = 0;
        let st = search(&k, &cfg, &mut RandomSource, &mut rng, |_| trials += 1);
        assert_eq!(trials, 200);
        let mut all: Vec<usize> = st.symbolic.iter().chain(&st.concrete).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        assert!(!st.symbolic.is_empty());
    }

    #[test]
    fn prompt_contents() {
        let k = Kernel::by_name("cancellation").unwrap();
        let cfg = DetectorConfig::default();
        let mut st = warm_up(&k, &cfg, &mut seeded_rng(0, 0));
        st.symbolic = vec![1];
        st.concrete = vec![0];
        st.best_inputs = vec![0.1, 3.0];
        let p = build_detector_prompt(&k, &st, &cfg);
        assert!(p.contains("[-100, 100]"));
        assert!(p.contains("Symbolic variables (choose values): y\n"));
        let line = p.lines().find(|l| l.trim_start().starts_with("x = ")).unwrap();
        let v: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
        assert_eq!(v.to_bits(), 0.1f64.to_bits());
    }

    #[test]
    fn trace_serializes_infinite_errors() {
        let e = TraceEntry {
            elapsed_ms: 1,
            trial: 1,
            candidate: BTreeMap::new(),
            final_error: Some(f64::INFINITY),
            max_intermediate: None,
            accepted: true,
            improved: true,
            best_final: f64::INFINITY,
        };
        let s = serde_json::to_string(&e).unwrap();
        let back: TraceEntry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
