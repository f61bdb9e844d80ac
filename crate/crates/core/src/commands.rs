//! File-level pipeline stages. Each reads its inputs from the run config,
//! writes its outputs atomically and returns a small summary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{build_dataset, measure_expression, parse_corpus, DatasetRecord, QuotaWarning};
use crate::config::{ConfigError, RunConfig};
use crate::detector::kernels::{suite, Kernel};
use crate::detector::{run_one, run_suite_random, BackendSource, DetectorRun, GeneratorKind, IntermediatePeak};
use crate::eval::ErrorReport;
use crate::harness::backend::{build_backend, BackendKind};
use crate::harness::{import_baseline, load_baseline, run_backend, sort_candidates, RewriteCandidate, SampledScorer};
use crate::report::aggregate;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Input { path: PathBuf, line: usize, message: String },
    #[error("backend `{name}`: {message}")]
    Backend { name: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CommandError {
    /// 2 config or usage, 3 filesystem, 4 malformed input, 5 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Usage(_) => 2,
            CommandError::Io { .. } => 3,
            CommandError::Input { .. } => 4,
            CommandError::Backend { .. } => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String, CommandError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a sibling temp file so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CommandError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CommandError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CommandError::Input {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Runs `f` on a pool of `threads` workers, or the global pool if `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CommandError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CommandError::Usage(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComposeSummary {
    pub corpus_entries: usize,
    pub records: usize,
    pub warnings: Vec<QuotaWarning>,
}

pub fn cmd_compose(cfg: &RunConfig) -> Result<ComposeSummary, CommandError> {
    let path = &cfg.paths.corpus;
    let corpus = parse_corpus(&read_text(path)?).map_err(|e| CommandError::Input {
        path: path.clone(),
        line: corpus_line(&e),
        message: e.to_string(),
    })?;
    let dataset = with_threads(cfg.threads, || build_dataset(&corpus, &cfg.dataset_config()))?;
    write_atomic(&cfg.paths.dataset, &to_jsonl(&dataset.records))?;
    Ok(ComposeSummary { corpus_entries: corpus.len(), records: dataset.records.len(), warnings: dataset.warnings })
}

fn corpus_line(e: &crate::composer::CorpusError) -> usize {
    use crate::composer::CorpusError::*;
    match e {
        Parse { line, .. } | Annotation { line, .. } | Domain { line, .. } => *line,
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<DatasetRecord>, CommandError> {
    let path = &cfg.paths.dataset;
    let records: Vec<DatasetRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = r.expression() {
            return Err(CommandError::Input { path: path.clone(), line: i + 1, message: e.to_string() });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub id: String,
    pub report: Option<ErrorReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn cmd_measure(cfg: &RunConfig) -> Result<Vec<Measurement>, CommandError> {
    let records = load_dataset(cfg)?;
    let rows = with_threads(cfg.threads, || {
        records
            .par_iter()
            .map(|r| {
                let result = match (r.expression(), r.domain_map()) {
                    (Ok(e), Ok(d)) => {
                        measure_expression(&e, &d, &r.id, r.provenance.seed, &cfg.eval).map_err(|e| e.to_string())
                    }
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(e.to_string()),
                };
                match result {
                    Ok(rep) => Measurement { id: r.id.clone(), report: Some(rep), error: None },
                    Err(e) => Measurement { id: r.id.clone(), report: None, error: Some(e) },
                }
            })
            .collect::<Vec<_>>()
    })?;
    write_atomic(&cfg.paths.measurements, &to_jsonl(&rows))?;
    Ok(rows)
}

/// Rewrites the dataset with each selected backend (all if `only` is empty).
/// Candidates from backends not selected are kept from the existing file.
pub fn cmd_rewrite(cfg: &RunConfig, only: &[String]) -> Result<Vec<RewriteCandidate>, CommandError> {
    for name in only {
        if cfg.backend(name).is_none() {
            return Err(CommandError::Usage(format!("unknown backend `{name}`")));
        }
    }
    let selected: Vec<_> = cfg
        .backends
        .iter()
        .filter(|b| only.is_empty() || only.contains(&b.name))
        .collect();
    let records = load_dataset(cfg)?;
    let scorer = SampledScorer { eval: cfg.eval };
    let hcfg = cfg.harness_config();
    let mut out: Vec<RewriteCandidate> = Vec::new();
    for b in &selected {
        let produced = match b.kind {
            BackendKind::BaselineImport => {
                let file = PathBuf::from(b.baseline_file.clone().unwrap_or_default());
                let table = load_baseline(&read_text(&file)?)
                    .map_err(|(line, e)| CommandError::Input { path: file.clone(), line, message: e.to_string() })?;
                with_threads(cfg.threads, || {
                    records
                        .par_iter()
                        .map(|r| {
                            let rewrites = table.get(&r.id).map(Vec::as_slice).unwrap_or(&[]);
                            import_baseline(r, rewrites, &b.name, &scorer, &hcfg)
                        })
                        .collect::<Vec<_>>()
                })?
            }
            _ => {
                let backend = build_backend(b)
                    .map_err(|e| CommandError::Backend { name: b.name.clone(), message: e.to_string() })?;
                with_threads(cfg.threads, || run_backend(&records, backend.as_ref(), &cfg.harness.modes, &scorer, &hcfg))?
            }
        };
        out.extend(produced);
    }
    if !only.is_empty() && cfg.paths.candidates.exists() {
        let keep: BTreeSet<&str> = selected.iter().map(|b| b.name.as_str()).collect();
        let previous: Vec<RewriteCandidate> = read_jsonl(&cfg.paths.candidates)?;
        out.extend(previous.into_iter().filter(|c| !keep.contains(c.backend.as_str())));
    }
    sort_candidates(&mut out);
    write_atomic(&cfg.paths.candidates, &to_jsonl(&out))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub kernel: String,
    pub variables: Vec<String>,
    pub best_inputs: Vec<f64>,
    #[serde(with = "crate::eval::sig17")]
    pub best_final: f64,
    #[serde(with = "crate::eval::sig17")]
    pub best_final_intermediate: f64,
    pub peak: Option<IntermediatePeak>,
    pub trials: usize,
    pub rejected: usize,
}

impl KernelSummary {
    pub fn of(run: &DetectorRun) -> KernelSummary {
        let s = &run.state;
        KernelSummary {
            kernel: s.kernel.clone(),
            variables: s.variables.clone(),
            best_inputs: s.best_inputs.clone(),
            best_final: s.best_final,
            best_final_intermediate: s.best_final_intermediate,
            peak: s.peak.clone(),
            trials: s.trials,
            rejected: s.rejected,
        }
    }
}

pub fn selected_kernels(cfg: &RunConfig) -> Result<Vec<Kernel>, CommandError> {
    let all = suite();
    if cfg.detector.kernels.is_empty() {
        return Ok(all);
    }
    cfg.detector
        .kernels
        .iter()
        .map(|n| {
            Kernel::by_name(n).ok_or_else(|| {
                let names: Vec<_> = all.iter().map(|k| k.name.as_str()).collect();
                CommandError::Usage(format!("unknown kernel `{n}` (known: {})", names.join(", ")))
            })
        })
        .collect()
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<Vec<KernelSummary>, CommandError> {
    let kernels = selected_kernels(cfg)?;
    let dcfg = cfg.detector_config();
    let runs: Vec<DetectorRun> = match dcfg.generator {
        GeneratorKind::Random => with_threads(cfg.threads, || run_suite_random(&kernels, &dcfg))?,
        GeneratorKind::Mock | GeneratorKind::ChatEndpoint => {
            let name = cfg.detector.backend.clone().unwrap_or_default();
            let bcfg = cfg.backend(&name).ok_or_else(|| CommandError::Usage(format!("unknown backend `{name}`")))?;
            let backend = build_backend(bcfg).map_err(|e| CommandError::Backend { name, message: e.to_string() })?;
            kernels
                .iter()
                .map(|k| run_one(k, &dcfg, &mut BackendSource { backend: backend.as_ref() }))
                .collect()
        }
    };
    let dir = &cfg.paths.trace_dir;
    for r in &runs {
        write_atomic(&dir.join(format!("{}.jsonl", r.state.kernel)), &to_jsonl(&r.trace))?;
    }
    let summary: Vec<KernelSummary> = runs.iter().map(KernelSummary::of).collect();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_atomic(&dir.join("summary.json"), &json)?;
    Ok(summary)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<crate::report::AggregateReport, CommandError> {
    let cands: Vec<RewriteCandidate> = read_jsonl(&cfg.paths.candidates)?;
    let report = aggregate(&cands, cfg.harness.baseline.as_deref());
    write_atomic(&cfg.paths.report_dir.join("report.csv"), &report.to_csv())?;
    write_atomic(&cfg.paths.report_dir.join("report.json"), &report.to_json())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, "hi").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "hi");
        assert!(!dir.path().join("a/b/c.txt.tmp").exists());
    }

    #[test]
    fn jsonl_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"report\":null}\n\nnot json\n").unwrap();
        let err = read_jsonl::<Measurement>(&p).unwrap_err();
        assert!(matches!(err, CommandError::Input { line: 3, .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn missing_input_is_io() {
        let mut cfg = RunConfig::default();
        cfg.paths.candidates = "/nonexistent/candidates.jsonl".into();
        assert_eq!(cmd_report(&cfg).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn empty_candidates_give_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.resolve_paths(dir.path());
        write_atomic(&cfg.paths.candidates, "").unwrap();
        let r = cmd_report(&cfg).unwrap();
        assert!(r.cells.is_empty());
        assert!(cfg.paths.report_dir.join("report.csv").exists());
    }

    #[test]
    fn infinite_errors_survive_json() {
        let k = KernelSummary {
            kernel: "k".into(),
            variables: vec!["x".into()],
            best_inputs: vec![1.0],
            best_final: f64::INFINITY,
            best_final_intermediate: 0.5,
            peak: None,
            trials: 1,
            rejected: 0,
        };
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"inf\""), "{json}");
        assert_eq!(serde_json::from_str::<KernelSummary>(&json).unwrap(), k);
    }

    #[test]
    fn unknown_kernel_is_usage_error() {
        let mut cfg = RunConfig::default();
        cfg.detector.kernels = vec!["nope".into()];
        assert_eq!(selected_kernels(&cfg).unwrap_err().exit_code(), 2);
    }
}
