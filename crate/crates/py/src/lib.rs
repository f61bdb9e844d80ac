use std::collections::BTreeMap;
use std::path::PathBuf;

use fpstab::commands::{self, CommandError};
use fpstab::composer::{compose_full, compose_mixed, compose_unary, measure_expression};
use fpstab::config::RunConfig;
use fpstab::detector::kernels::{suite, Kernel};
use fpstab::detector::run_kernel as run_kernel_dual;
use fpstab::domain::{default_domain, derive_constraints, DomainMap, Interval};
use fpstab::eval::{self, EvalConfig};
use fpstab::expr::{self, LiteralPolicy};
use fpstab::sampler::{self, SamplePlan};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rug::Float;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn command_err(e: CommandError) -> PyErr {
    match e {
        CommandError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// A parsed expression. Printing gives the canonical s-expression.
#[pyclass(frozen, from_py_object, name = "Expr", module = "fpstab")]
#[derive(Clone)]
pub struct PyExpr {
    inner: expr::Expr,
}

#[derive(FromPyObject)]
pub enum ExprArg {
    Parsed(PyExpr),
    Text(String),
}

impl ExprArg {
    fn resolve(self) -> PyResult<expr::Expr> {
        match self {
            ExprArg::Parsed(e) => Ok(e.inner),
            ExprArg::Text(t) => expr::parse(&t).map_err(value_err),
        }
    }
}

type Bounds = BTreeMap<String, (f64, f64)>;
/// (lo, hi, lo_open, hi_open)
type IntervalTuple = (f64, f64, bool, bool);

fn domain_map(e: &expr::Expr, bounds: Option<Bounds>) -> PyResult<DomainMap> {
    let mut dm = default_domain(&e.variables());
    for (v, (lo, hi)) in bounds.unwrap_or_default() {
        dm.set(&v, Interval::closed(lo, hi).map_err(value_err)?);
    }
    derive_constraints(e, &dm).map_err(value_err)
}

#[pymethods]
impl PyExpr {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyExpr { inner: expr::parse(text).map_err(value_err)? })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr('{}')", self.inner)
    }

    fn __eq__(&self, other: &PyExpr) -> bool {
        self.inner == other.inner
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.variables()
    }

    #[getter]
    fn operations(&self) -> usize {
        self.inner.count_operations()
    }

    #[getter]
    fn conditional(&self) -> bool {
        self.inner.has_conditional()
    }

    #[getter]
    fn conditional_depth(&self) -> usize {
        self.inner.conditional_depth()
    }

    #[pyo3(signature = (threshold = 15))]
    fn hp_literals(&self, threshold: usize) -> Vec<String> {
        self.inner.high_precision_literals(LiteralPolicy::new(threshold))
    }

    fn substitute(&self, map: BTreeMap<String, ExprArg>) -> PyResult<PyExpr> {
        let map = map
            .into_iter()
            .map(|(k, v)| Ok((k, v.resolve()?)))
            .collect::<PyResult<BTreeMap<_, _>>>()?;
        Ok(PyExpr { inner: self.inner.substitute(&map) })
    }

    /// Binary64 value, or None when undefined.
    fn eval_fp64(&self, point: BTreeMap<String, f64>) -> PyResult<Option<f64>> {
        match eval::eval_fp64(&self.inner, &point) {
            Ok(v) => Ok(Some(v)),
            Err(eval::EvalError::Undefined) => Ok(None),
            Err(e) => Err(value_err(e)),
        }
    }

    /// Oracle value as a decimal string, or None when undefined.
    #[pyo3(signature = (point, precision = 256))]
    fn eval_hp(&self, point: BTreeMap<String, f64>, precision: u32) -> PyResult<Option<String>> {
        match eval::eval_hp(&self.inner, &point, precision) {
            Ok(v) => Ok(Some(v.to_string())),
            Err(eval::EvalError::Undefined) => Ok(None),
            Err(e) => Err(value_err(e)),
        }
    }

    /// Per-variable `(lo, hi, lo_open, hi_open)` after precondition
    /// propagation, plus the residual predicate text.
    #[pyo3(signature = (bounds = None))]
    fn domains(&self, bounds: Option<Bounds>) -> PyResult<(BTreeMap<String, IntervalTuple>, Option<String>)> {
        let dm = domain_map(&self.inner, bounds)?;
        let vars = dm
            .vars
            .iter()
            .map(|(k, iv)| (k.clone(), (iv.lo, iv.hi, iv.lo_open, iv.hi_open)))
            .collect();
        Ok((vars, dm.residual_text()))
    }
}

#[pyfunction]
fn parse(text: &str) -> PyResult<PyExpr> {
    PyExpr::new(text)
}

#[pyfunction]
fn ordinal(x: f64) -> i64 {
    eval::ordinal(x)
}

#[pyfunction]
fn bits_between(a: f64, b: f64) -> f64 {
    eval::bits_between(a, b)
}

#[pyfunction]
fn accuracy(bits: f64) -> PyResult<f64> {
    eval::accuracy(bits).map_err(value_err)
}

/// Relative error of `fp` against a decimal reference value.
#[pyfunction]
#[pyo3(signature = (fp, reference, precision = 256))]
fn relative_error(fp: f64, reference: &str, precision: u32) -> PyResult<f64> {
    let parsed = Float::parse(reference).map_err(value_err)?;
    Ok(eval::relative_error(fp, &Float::with_val(precision, parsed)))
}

#[pyfunction]
#[pyo3(signature = (domains, n, seed = 0, stream = ""))]
fn sample(
    py: Python<'_>,
    domains: Bounds,
    n: usize,
    seed: u64,
    stream: &str,
) -> PyResult<Vec<BTreeMap<String, f64>>> {
    let mut dm = DomainMap::default();
    for (v, (lo, hi)) in domains {
        dm.set(&v, Interval::closed(lo, hi).map_err(value_err)?);
    }
    let plan = SamplePlan::for_id(n, seed, stream);
    py.detach(|| sampler::sample(&dm, &plan))
        .map(|s| s.points)
        .map_err(value_err)
}

/// Mean bits of error and accuracy over `n` sampled points.
#[pyfunction]
#[pyo3(signature = (expr, bounds = None, n = 256, seed = 0, id = "", precision = 256))]
fn measure<'py>(
    py: Python<'py>,
    expr: ExprArg,
    bounds: Option<Bounds>,
    n: usize,
    seed: u64,
    id: &str,
    precision: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let e = expr.resolve()?;
    let dm = domain_map(&e, bounds)?;
    let cfg = EvalConfig { oracle_precision: precision, sample_count: n };
    cfg.validate().map_err(value_err)?;
    let rep = py.detach(|| measure_expression(&e, &dm, id, seed, &cfg)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("bits", rep.bits)?;
    d.set_item("accuracy", rep.accuracy)?;
    d.set_item("valid", rep.valid)?;
    d.set_item("failed", rep.failed)?;
    d.set_item("invalid", rep.invalid)?;
    Ok(d)
}

fn resolve_map(gs: BTreeMap<String, ExprArg>) -> PyResult<BTreeMap<String, expr::Expr>> {
    gs.into_iter().map(|(k, v)| Ok((k, v.resolve()?))).collect()
}

#[pyfunction(name = "compose_unary")]
#[pyo3(signature = (f, gs, var = "x"))]
fn compose_unary_py(f: ExprArg, gs: Vec<ExprArg>, var: &str) -> PyResult<PyExpr> {
    let gs = gs.into_iter().map(ExprArg::resolve).collect::<PyResult<Vec<_>>>()?;
    let inner = compose_unary(&f.resolve()?, &gs, var).map_err(value_err)?;
    Ok(PyExpr { inner })
}

#[pyfunction(name = "compose_full")]
fn compose_full_py(f: ExprArg, gs: BTreeMap<String, ExprArg>) -> PyResult<PyExpr> {
    let inner = compose_full(&f.resolve()?, &resolve_map(gs)?).map_err(value_err)?;
    Ok(PyExpr { inner })
}

#[pyfunction(name = "compose_mixed")]
fn compose_mixed_py(f: ExprArg, gs: BTreeMap<String, ExprArg>) -> PyResult<PyExpr> {
    let inner = compose_mixed(&f.resolve()?, &resolve_map(gs)?).map_err(value_err)?;
    Ok(PyExpr { inner })
}

#[pyfunction]
#[pyo3(signature = (original, rewrite, threshold = 15))]
fn structural_diff<'py>(
    py: Python<'py>,
    original: ExprArg,
    rewrite: ExprArg,
    threshold: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let d = expr::structural_diff(&original.resolve()?, &rewrite.resolve()?, LiteralPolicy::new(threshold));
    let out = PyDict::new(py);
    out.set_item("conditional_removed", d.conditional_removed)?;
    out.set_item("hp_literals_removed", d.hp_literals_removed)?;
    out.set_item("operation_delta", d.operation_delta)?;
    Ok(out)
}

#[pyfunction]
fn kernels() -> Vec<(String, Vec<String>)> {
    suite().into_iter().map(|k| (k.name.clone(), k.variables())).collect()
}

/// Runs a built-in kernel in both precisions.
#[pyfunction]
#[pyo3(signature = (name, inputs, precision = 256))]
fn run_kernel<'py>(py: Python<'py>, name: &str, inputs: Vec<f64>, precision: u32) -> PyResult<Bound<'py, PyDict>> {
    let k = Kernel::by_name(name).ok_or_else(|| value_err(format!("unknown kernel `{name}`")))?;
    let run = run_kernel_dual(&k, &inputs, precision).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("fp", run.fp)?;
    d.set_item("hp", run.hp)?;
    d.set_item("final_error", run.final_error)?;
    d.set_item("max_intermediate", run.max_intermediate)?;
    let probes: Vec<(String, f64)> = run.probes.into_iter().map(|p| (p.name, p.rel_error)).collect();
    d.set_item("probes", probes)?;
    Ok(d)
}

/// Runs one pipeline stage from a TOML config; returns its summary as JSON.
#[pyfunction]
#[pyo3(signature = (config, stage, threads = None))]
fn run_stage(py: Python<'_>, config: PathBuf, stage: &str, threads: Option<usize>) -> PyResult<String> {
    let mut cfg = RunConfig::load(&config).map_err(|e| command_err(e.into()))?;
    if threads.is_some() {
        cfg.threads = threads;
    }
    let json = |v: serde_json::Value| v.to_string();
    py.detach(|| -> Result<String, CommandError> {
        Ok(match stage {
            "compose" => json(serde_json::to_value(commands::cmd_compose(&cfg)?).unwrap_or_default()),
            "measure" => json(serde_json::to_value(commands::cmd_measure(&cfg)?).unwrap_or_default()),
            "rewrite" => json(serde_json::json!({ "candidates": commands::cmd_rewrite(&cfg, &[])?.len() })),
            "detect" => json(serde_json::to_value(commands::cmd_detect(&cfg)?).unwrap_or_default()),
            "report" => commands::cmd_report(&cfg)?.to_json(),
            other => return Err(CommandError::Usage(format!("unknown stage `{other}`"))),
        })
    })
    .map_err(command_err)
}

#[pymodule(name = "fpstab")]
pub fn fpstab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(ordinal, m)?)?;
    m.add_function(wrap_pyfunction!(bits_between, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(compose_unary_py, m)?)?;
    m.add_function(wrap_pyfunction!(compose_full_py, m)?)?;
    m.add_function(wrap_pyfunction!(compose_mixed_py, m)?)?;
    m.add_function(wrap_pyfunction!(structural_diff, m)?)?;
    m.add_function(wrap_pyfunction!(kernels, m)?)?;
    m.add_function(wrap_pyfunction!(run_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add("MAX_ERROR_BITS", eval::MAX_ERROR_BITS)?;
    Ok(())
}
