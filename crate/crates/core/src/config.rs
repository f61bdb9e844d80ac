//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{DatasetConfig, GroupQuota, Strategy};
use crate::detector::{DetectorConfig, GeneratorKind};
use crate::eval::EvalConfig;
use crate::harness::backend::{BackendConfig, BackendKind};
use crate::harness::{HarnessConfig, Mode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub measurements: PathBuf,
    pub candidates: PathBuf,
    pub report_dir: PathBuf,
    pub trace_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.fpcore".into(),
            dataset: "out/dataset.jsonl".into(),
            measurements: "out/measurements.jsonl".into(),
            candidates: "out/candidates.jsonl".into(),
            report_dir: "out/report".into(),
            trace_dir: "out/traces".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub strategies: Vec<Strategy>,
    pub quotas: Vec<GroupQuota>,
    pub attempts_per_record: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection { strategies: d.strategies, quotas: d.quotas, attempts_per_record: d.attempts_per_record }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessSection {
    pub modes: Vec<Mode>,
    pub max_iterations: usize,
    /// Backend whose failures the complementarity report is about.
    pub baseline: Option<String>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            modes: vec![Mode::ZeroShot, Mode::FewShot],
            max_iterations: HarnessConfig::default().max_iterations,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    /// Kernel names; empty means the whole suite.
    pub kernels: Vec<String>,
    /// Backend that proposes inputs when the generator is not random.
    pub backend: Option<String>,
    pub box_lo: f64,
    pub box_hi: f64,
    pub stagnation: usize,
    pub budget_secs: f64,
    pub warmup: usize,
    pub max_trials: Option<usize>,
    pub generator: GeneratorKind,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSection {
            kernels: Vec::new(),
            backend: None,
            box_lo: d.box_lo,
            box_hi: d.box_hi,
            stagnation: d.stagnation,
            budget_secs: d.budget_secs,
            warmup: d.warmup,
            max_trials: d.max_trials,
            generator: d.generator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub literal_threshold: usize,
    pub paths: Paths,
    pub eval: EvalConfig,
    pub dataset: DatasetSection,
    pub harness: HarnessSection,
    pub detector: DetectorSection,
    pub backends: Vec<BackendConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            literal_threshold: 15,
            paths: Paths::default(),
            eval: EvalConfig::default(),
            dataset: DatasetSection::default(),
            harness: HarnessSection::default(),
            detector: DetectorSection::default(),
            backends: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads and validates `path`; relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for f in [&mut p.corpus, &mut p.dataset, &mut p.measurements, &mut p.candidates, &mut p.report_dir, &mut p.trace_dir] {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        for b in &mut self.backends {
            if let Some(f) = b.baseline_file.as_mut() {
                if Path::new(f.as_str()).is_relative() {
                    *f = base.join(&*f).to_string_lossy().into_owned();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.eval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.detector_config().validate().map_err(ConfigError::Invalid)?;
        if self.threads == Some(0) {
            return Err(ConfigError::Invalid("threads must be positive".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.backends {
            b.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !names.insert(b.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate backend `{}`", b.name)));
            }
        }
        if let Some(base) = &self.harness.baseline {
            if !names.contains(base.as_str()) {
                return Err(ConfigError::Invalid(format!("baseline `{base}` is not a configured backend")));
            }
        }
        if self.detector.generator != GeneratorKind::Random {
            let Some(name) = &self.detector.backend else {
                return Err(ConfigError::Invalid("detector generator needs `detector.backend`".into()));
            };
            match self.backend(name) {
                Some(b) if b.kind != BackendKind::BaselineImport => {}
                _ => return Err(ConfigError::Invalid(format!("detector backend `{name}` is not a promptable backend"))),
            }
        }
        Ok(())
    }

    pub fn backend(&self, name: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.name == name)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            strategies: self.dataset.strategies.clone(),
            quotas: self.dataset.quotas.clone(),
            eval: self.eval,
            attempts_per_record: self.dataset.attempts_per_record,
            literal_threshold: self.literal_threshold,
        }
    }

    pub fn harness_config(&self) -> HarnessConfig {
        HarnessConfig { max_iterations: self.harness.max_iterations, literal_threshold: self.literal_threshold }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let d = &self.detector;
        DetectorConfig {
            box_lo: d.box_lo,
            box_hi: d.box_hi,
            stagnation: d.stagnation,
            budget_secs: d.budget_secs,
            warmup: d.warmup,
            max_trials: d.max_trials,
            seed: self.seed,
            oracle_precision: self.eval.oracle_precision,
            generator: d.generator,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::backend::MockBehavior;

    const SAMPLE: &str = r#"
seed = 7
threads = 2

[paths]
corpus = "corpus.fpcore"

[eval]
sample_count = 64

[dataset]
strategies = ["unary", "full"]
quotas = [{ vars = 2, conditional = false, count = 3 }]

[harness]
modes = ["zero-shot"]
baseline = "base"

[[backends]]
name = "mock"
kind = "mock"
mock = { kind = "rules" }

[[backends]]
name = "base"
kind = "baseline-import"
baseline_file = "baseline.jsonl"
"#;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.eval.sample_count, 64);
        assert_eq!(cfg.eval.oracle_precision, 256);
        assert_eq!(cfg.backends[0].mock, Some(MockBehavior::Rules));
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.corpus, dir.path().join("corpus.fpcore"));
        assert!(cfg.backends[1].baseline_file.as_deref().unwrap().starts_with(dir.path().to_str().unwrap()));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SAMPLE.replace("baseline = \"base\"", "baseline = \"nope\"");
        assert!(RunConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = SAMPLE.replace("sample_count = 64", "sample_count = 0");
        assert!(RunConfig::from_toml(&bad).unwrap().validate().is_err());
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(ConfigError::Parse { .. })));
        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.detector.generator = GeneratorKind::Mock;
        assert!(c.validate().is_err());
        c.detector.backend = Some("mock".into());
        c.validate().unwrap();
    }
}
