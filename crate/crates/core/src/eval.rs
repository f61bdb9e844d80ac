//! Dual evaluation (binary64 and a multiple-precision oracle), the
//! bits-of-error metric and the accuracy score derived from it.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use rug::float::Round;
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DomainMap;
use crate::expr::{Cond, Expr, Literal, Op, Precondition};

/// Significand bits of binary64; also the ceiling of the error metric.
pub const MAX_ERROR_BITS: f64 = 53.0;

/// Exponent range (in bits) of oracle values. Far beyond binary64 so that
/// intermediate overflow is still tracked, but bounded so that argument
/// reduction of huge trigonometric inputs stays cheap.
pub const ORACLE_EXP_BITS: i64 = 1 << 16;

pub type Point = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` has no value")]
    Unbound(String),
    #[error("result is undefined")]
    Undefined,
    #[error("bits of error {0} outside [0, 53]")]
    BitsOutOfRange(f64),
    #[error("evaluation failed on every sampled input")]
    AllPointsFailed,
    #[error("no sample points were supplied")]
    NoPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub oracle_precision: u32,
    pub sample_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            oracle_precision: 256,
            sample_count: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.oracle_precision < 2 * 53 {
            return Err(format!(
                "oracle precision {} is below 106 bits",
                self.oracle_precision
            ));
        }
        if self.sample_count == 0 {
            return Err("sample count must be positive".into());
        }
        Ok(())
    }
}

/// Arithmetic carrier. Expressions and kernels are written once against this
/// trait and executed with either binary64 or the oracle.
pub trait Arith {
    type Value: Clone + std::fmt::Debug;

    fn from_f64(&self, x: f64) -> Self::Value;
    fn literal(&self, lit: &Literal) -> Self::Value;
    /// Applies `op`. Real-domain violations give NaN.
    fn apply(&self, op: Op, args: &[&Self::Value]) -> Self::Value;
    fn compare(&self, a: &Self::Value, b: &Self::Value) -> Option<Ordering>;
    fn is_nan(&self, v: &Self::Value) -> bool;
    /// Rounds to nearest binary64.
    fn to_f64(&self, v: &Self::Value) -> f64;

    fn add(&self, a: &Self::Value, b: &Self::Value) -> Self::Value {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Self::Value {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&self, a: &Self::Value, b: &Self::Value) -> Self::Value {
        self.apply(Op::Mul, &[a, b])
    }
    fn div(&self, a: &Self::Value, b: &Self::Value) -> Self::Value {
        self.apply(Op::Div, &[a, b])
    }
    fn sqrt(&self, a: &Self::Value) -> Self::Value {
        self.apply(Op::Sqrt, &[a])
    }
    fn neg(&self, a: &Self::Value) -> Self::Value {
        self.apply(Op::Neg, &[a])
    }
}

/// IEEE-754 binary64, round-to-nearest-even, platform libm for elementary
/// functions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Binary64;

impl Arith for Binary64 {
    type Value = f64;

    fn from_f64(&self, x: f64) -> f64 {
        x
    }

    fn literal(&self, lit: &Literal) -> f64 {
        lit.to_f64()
    }

    fn apply(&self, op: Op, a: &[&f64]) -> f64 {
        let x = *a[0];
        match op {
            Op::Add => x + a[1],
            Op::Sub => x - a[1],
            Op::Mul => x * a[1],
            Op::Div => x / a[1],
            Op::Neg => -x,
            Op::Sqrt => x.sqrt(),
            Op::Cbrt => x.cbrt(),
            Op::Fabs => x.abs(),
            Op::Exp => x.exp(),
            Op::Expm1 => x.exp_m1(),
            Op::Log => x.ln(),
            Op::Log1p => x.ln_1p(),
            Op::Pow => x.powf(*a[1]),
            Op::Sin => x.sin(),
            Op::Cos => x.cos(),
            Op::Tan => x.tan(),
            Op::Asin => x.asin(),
            Op::Acos => x.acos(),
            Op::Atan => x.atan(),
            Op::Atan2 => x.atan2(*a[1]),
            Op::Sinh => x.sinh(),
            Op::Cosh => x.cosh(),
            Op::Tanh => x.tanh(),
            Op::Fmod => x % a[1],
            Op::Fma => x.mul_add(*a[1], *a[2]),
            Op::Hypot => x.hypot(*a[1]),
            Op::Min => x.min(*a[1]),
            Op::Max => x.max(*a[1]),
        }
    }

    fn compare(&self, a: &f64, b: &f64) -> Option<Ordering> {
        a.partial_cmp(b)
    }

    fn is_nan(&self, v: &f64) -> bool {
        v.is_nan()
    }

    fn to_f64(&self, v: &f64) -> f64 {
        *v
    }
}

thread_local! {
    static EXP_RANGE_SET: Cell<bool> = const { Cell::new(false) };
}

fn ensure_exponent_range() {
    EXP_RANGE_SET.with(|set| {
        if !set.get() {
            // SAFETY: only adjusts MPFR's (thread-local) exponent bounds, which
            // are valid values for both setters.
            unsafe {
                gmp_mpfr_sys::mpfr::set_emax(ORACLE_EXP_BITS);
                gmp_mpfr_sys::mpfr::set_emin(-ORACLE_EXP_BITS);
            }
            set.set(true);
        }
    });
}

/// Multiple-precision oracle with a fixed working precision in bits. Every
/// operation is correctly rounded at that precision.
#[derive(Debug, Clone, Copy)]
pub struct MultiPrecision {
    pub prec: u32,
}

impl MultiPrecision {
    pub fn new(prec: u32) -> MultiPrecision {
        ensure_exponent_range();
        MultiPrecision { prec }
    }

    fn nan(&self) -> Float {
        Float::with_val(self.prec, rug::float::Special::Nan)
    }

    fn violates(&self, op: Op, a: &[&Float]) -> bool {
        let x = a[0];
        match op.precondition() {
            Precondition::None => false,
            Precondition::Positive => !x.is_sign_positive() || x.is_zero(),
            Precondition::NonNegative => *x < 0,
            Precondition::GreaterThanMinusOne => *x <= -1,
            Precondition::UnitInterval => *x < -1 || *x > 1,
            Precondition::NonZeroSecond => a[1].is_zero(),
            Precondition::PowBase => *x < 0 && !a[1].is_integer(),
        }
    }
}

impl Arith for MultiPrecision {
    type Value = Float;

    fn from_f64(&self, x: f64) -> Float {
        Float::with_val(self.prec, x)
    }

    fn literal(&self, lit: &Literal) -> Float {
        let parsed = Float::parse(lit.token()).expect("validated literal");
        Float::with_val(self.prec, parsed)
    }

    fn apply(&self, op: Op, a: &[&Float]) -> Float {
        if a.iter().any(|v| v.is_nan()) {
            return self.nan();
        }
        if self.violates(op, a) {
            return self.nan();
        }
        let p = self.prec;
        let x = a[0];
        match op {
            Op::Add => Float::with_val(p, x + a[1]),
            Op::Sub => Float::with_val(p, x - a[1]),
            Op::Mul => Float::with_val(p, x * a[1]),
            Op::Div => Float::with_val(p, x / a[1]),
            Op::Neg => Float::with_val(p, -x),
            Op::Sqrt => Float::with_val(p, x.sqrt_ref()),
            Op::Cbrt => x.clone().cbrt(),
            Op::Fabs => Float::with_val(p, x.abs_ref()),
            Op::Exp => Float::with_val(p, x.exp_ref()),
            Op::Expm1 => Float::with_val(p, x.exp_m1_ref()),
            Op::Log => Float::with_val(p, x.ln_ref()),
            Op::Log1p => Float::with_val(p, x.ln_1p_ref()),
            Op::Pow => Float::with_val(p, x.pow(a[1])),
            Op::Sin => Float::with_val(p, x.sin_ref()),
            Op::Cos => Float::with_val(p, x.cos_ref()),
            Op::Tan => Float::with_val(p, x.tan_ref()),
            Op::Asin => Float::with_val(p, x.asin_ref()),
            Op::Acos => Float::with_val(p, x.acos_ref()),
            Op::Atan => Float::with_val(p, x.atan_ref()),
            Op::Atan2 => Float::with_val(p, x.atan2_ref(a[1])),
            Op::Sinh => Float::with_val(p, x.sinh_ref()),
            Op::Cosh => Float::with_val(p, x.cosh_ref()),
            Op::Tanh => Float::with_val(p, x.tanh_ref()),
            Op::Fmod => Float::with_val(p, x % a[1]),
            Op::Fma => Float::with_val(p, x.mul_add_ref(a[1], a[2])),
            Op::Hypot => Float::with_val(p, x.hypot_ref(a[1])),
            Op::Min => Float::with_val(p, x.min_ref(a[1])),
            Op::Max => Float::with_val(p, x.max_ref(a[1])),
        }
    }

    fn compare(&self, a: &Float, b: &Float) -> Option<Ordering> {
        a.partial_cmp(b)
    }

    fn is_nan(&self, v: &Float) -> bool {
        v.is_nan()
    }

    fn to_f64(&self, v: &Float) -> f64 {
        v.to_f64_round(Round::Nearest)
    }
}

/// Evaluates `expr` under carrier `a`, appending every `if` decision to
/// `trace`.
pub fn eval_with<A: Arith>(
    a: &A,
    expr: &Expr,
    env: &BTreeMap<String, A::Value>,
    trace: &mut Vec<bool>,
) -> Result<A::Value, EvalError> {
    match expr {
        Expr::Literal(l) => Ok(a.literal(l)),
        Expr::Var(v) => env.get(v).cloned().ok_or_else(|| EvalError::Unbound(v.clone())),
        Expr::Op(op, args) => {
            let vals = args
                .iter()
                .map(|e| eval_with(a, e, env, trace))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&A::Value> = vals.iter().collect();
            Ok(a.apply(*op, &refs))
        }
        Expr::If(c, t, e) => {
            let taken = eval_cond_with(a, c, env, trace)?;
            trace.push(taken);
            if taken {
                eval_with(a, t, env, trace)
            } else {
                eval_with(a, e, env, trace)
            }
        }
    }
}

pub fn eval_cond_with<A: Arith>(
    a: &A,
    c: &Cond,
    env: &BTreeMap<String, A::Value>,
    trace: &mut Vec<bool>,
) -> Result<bool, EvalError> {
    Ok(match c {
        Cond::Cmp(op, x, y) => {
            let x = eval_with(a, x, env, trace)?;
            let y = eval_with(a, y, env, trace)?;
            op.holds(a.compare(&x, &y))
        }
        Cond::And(x, y) => eval_cond_with(a, x, env, trace)? && eval_cond_with(a, y, env, trace)?,
        Cond::Or(x, y) => eval_cond_with(a, x, env, trace)? || eval_cond_with(a, y, env, trace)?,
        Cond::Not(x) => !eval_cond_with(a, x, env, trace)?,
    })
}

fn inject<A: Arith>(a: &A, point: &Point) -> BTreeMap<String, A::Value> {
    point.iter().map(|(k, v)| (k.clone(), a.from_f64(*v))).collect()
}

/// Strict binary64 evaluation. A NaN result is `Undefined`.
pub fn eval_fp64(expr: &Expr, point: &Point) -> Result<f64, EvalError> {
    let v = eval_with(&Binary64, expr, point, &mut Vec::new())?;
    if v.is_nan() {
        Err(EvalError::Undefined)
    } else {
        Ok(v)
    }
}

/// Oracle evaluation at `prec` bits. Real-domain violations are `Undefined`.
pub fn eval_hp(expr: &Expr, point: &Point, prec: u32) -> Result<Float, EvalError> {
    let mp = MultiPrecision::new(prec);
    let v = eval_with(&mp, expr, &inject(&mp, point), &mut Vec::new())?;
    if v.is_nan() {
        Err(EvalError::Undefined)
    } else {
        Ok(v)
    }
}

/// True when the oracle at `prec` and at `2 * prec` bits round to different
/// binary64 values, or only one of them is defined.
pub fn precision_sensitive(expr: &Expr, point: &Point, prec: u32) -> bool {
    let round = |p| eval_hp(expr, point, p).ok().map(|v| v.to_f64_round(Round::Nearest));
    match (round(prec), round(2 * prec)) {
        (Some(a), Some(b)) => a.to_bits() != b.to_bits() && !(a == 0.0 && b == 0.0),
        (None, None) => false,
        _ => true,
    }
}

/// Binary64 evaluation of a condition; unbound variables make it false.
pub fn eval_cond_fp64(c: &Cond, point: &Point) -> bool {
    eval_cond_with(&Binary64, c, point, &mut Vec::new()).unwrap_or(false)
}

/// Monotone map of non-NaN binary64 values onto consecutive integers, with
/// both zeros at 0.
pub fn ordinal(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    if bits < 0 {
        -(bits & i64::MAX)
    } else {
        bits
    }
}

/// log2 of the number of binary64 values in the closed range between `a`
/// and `b`, capped at 53. Any NaN scores 53.
pub fn bits_between(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return MAX_ERROR_BITS;
    }
    let distance = ordinal(a).abs_diff(ordinal(b));
    ((distance as f64) + 1.0).log2().clamp(0.0, MAX_ERROR_BITS)
}

/// Bits of error of a binary64 result against the oracle; undefined on
/// either side scores 53.
pub fn bits_of_error(fp: Option<f64>, hp: Option<&Float>) -> f64 {
    match (fp, hp) {
        (Some(f), Some(h)) => bits_between(f, h.to_f64_round(Round::Nearest)),
        _ => MAX_ERROR_BITS,
    }
}

/// Accuracy percentage for a mean bits-of-error value.
pub fn accuracy(bits: f64) -> Result<f64, EvalError> {
    if !(0.0..=MAX_ERROR_BITS).contains(&bits) {
        return Err(EvalError::BitsOutOfRange(bits));
    }
    Ok(100.0 * (1.0 - bits / MAX_ERROR_BITS))
}

/// |fp - hp| / |hp| at the oracle's precision.
pub fn relative_error(fp: f64, hp: &Float) -> f64 {
    if fp.is_nan() || hp.is_nan() {
        return f64::NAN;
    }
    if hp.is_zero() {
        return if fp == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let prec = hp.prec();
    let diff = Float::with_val(prec, fp - hp).abs();
    let rel = diff / Float::with_val(prec, hp.abs_ref());
    rel.to_f64_round(Round::Nearest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    InvalidDomain,
    UndefinedFp,
    UndefinedHp,
    BranchDivergenceNoted,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: Point,
    pub fp: f64,
    pub hp: Option<Float>,
    pub fp_branches: Vec<bool>,
    pub hp_branches: Vec<bool>,
    pub status: PointStatus,
    /// `None` for points that are not scored.
    pub bits: Option<f64>,
}

impl PointResult {
    pub fn is_valid(&self) -> bool {
        self.bits.is_some()
    }
}

/// Evaluates one point in both carriers.
pub fn eval_point(expr: &Expr, point: &Point, domains: Option<&DomainMap>, prec: u32) -> PointResult {
    let unscored = |status| PointResult {
        point: point.clone(),
        fp: f64::NAN,
        hp: None,
        fp_branches: Vec::new(),
        hp_branches: Vec::new(),
        status,
        bits: None,
    };
    if domains.is_some_and(|d| !d.accepts(point)) {
        return unscored(PointStatus::InvalidDomain);
    }
    let mut fp_branches = Vec::new();
    let fp = match eval_with(&Binary64, expr, point, &mut fp_branches) {
        Ok(v) => v,
        Err(_) => return unscored(PointStatus::InvalidDomain),
    };
    let mp = MultiPrecision::new(prec);
    let mut hp_branches = Vec::new();
    let hp = eval_with(&mp, expr, &inject(&mp, point), &mut hp_branches)
        .ok()
        .filter(|v| !v.is_nan());
    let Some(hp) = hp else {
        return PointResult {
            fp,
            fp_branches,
            hp_branches,
            ..unscored(PointStatus::UndefinedHp)
        };
    };
    let fp_defined = (!fp.is_nan()).then_some(fp);
    let bits = bits_of_error(fp_defined, Some(&hp));
    let status = if fp_defined.is_none() {
        PointStatus::UndefinedFp
    } else if fp_branches != hp_branches {
        PointStatus::BranchDivergenceNoted
    } else {
        PointStatus::Ok
    };
    PointResult {
        point: point.clone(),
        fp,
        hp: Some(hp),
        fp_branches,
        hp_branches,
        status,
        bits: Some(bits),
    }
}

pub(crate) mod sig17 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{x:.16e}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// Result of measuring one expression over a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Mean bits of error over valid points.
    #[serde(with = "sig17")]
    pub bits: f64,
    #[serde(with = "sig17")]
    pub accuracy: f64,
    pub valid: usize,
    pub failed: usize,
    pub invalid: usize,
    pub point_bits: Vec<f64>,
}

impl ErrorReport {
    pub fn from_point_bits(point_bits: Vec<f64>, failed: usize, invalid: usize) -> Result<ErrorReport, EvalError> {
        if point_bits.is_empty() {
            return Err(EvalError::AllPointsFailed);
        }
        // fixed-order reduction so results do not depend on scheduling
        let total: f64 = point_bits.iter().sum();
        let bits = (total / point_bits.len() as f64).clamp(0.0, MAX_ERROR_BITS);
        Ok(ErrorReport {
            bits,
            accuracy: accuracy(bits)?,
            valid: point_bits.len(),
            failed,
            invalid,
            point_bits,
        })
    }
}

/// Per-point results for a whole sample, in sample order.
pub fn eval_points(expr: &Expr, domains: &DomainMap, samples: &[Point], cfg: &EvalConfig) -> Vec<PointResult> {
    samples
        .par_iter()
        .map(|pt| eval_point(expr, pt, Some(domains), cfg.oracle_precision))
        .collect()
}

/// Mean bits of error and accuracy of `expr` over `samples`.
pub fn measure(expr: &Expr, domains: &DomainMap, samples: &[Point], cfg: &EvalConfig) -> Result<ErrorReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoPoints);
    }
    let results = eval_points(expr, domains, samples, cfg);
    let point_bits: Vec<f64> = results.iter().filter_map(|r| r.bits).collect();
    let invalid = results
        .iter()
        .filter(|r| r.status == PointStatus::InvalidDomain)
        .count();
    let failed = results
        .iter()
        .filter(|r| r.status == PointStatus::UndefinedHp)
        .count();
    ErrorReport::from_point_bits(point_bits, failed, invalid)
}
