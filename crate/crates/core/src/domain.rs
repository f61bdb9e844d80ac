//! Input domains: one interval per variable plus a residual predicate for
//! constraints that are not a box.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval;
use crate::expr::{CmpOp, Cond, Expr, Op, Precondition};

pub const MAX_DOUBLE: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("domain for `{0}` is empty")]
    EmptyDomain(String),
    #[error("no domain given for variable `{0}`")]
    MissingVariable(String),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
}

/// Interval with independently open or closed endpoints. Endpoints are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Result<Interval, DomainError> {
        Interval::new(lo, hi, false, false)
    }

    pub fn new(lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<Interval, DomainError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(DomainError::InvalidInterval(format!("non-finite endpoint [{lo}, {hi}]")));
        }
        let iv = Interval { lo, hi, lo_open, hi_open };
        if iv.is_empty() {
            return Err(DomainError::InvalidInterval(iv.to_string()));
        }
        Ok(iv)
    }

    /// The whole finite binary64 line.
    pub fn full() -> Interval {
        Interval {
            lo: -MAX_DOUBLE,
            hi: MAX_DOUBLE,
            lo_open: false,
            hi_open: false,
        }
    }

    pub fn point(x: f64) -> Interval {
        Interval { lo: x, hi: x, lo_open: false, hi_open: false }
    }

    pub fn is_full(&self) -> bool {
        *self == Interval::full()
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        let below = if self.hi_open { x < self.hi } else { x <= self.hi };
        above && below
    }

    fn raise_lo(&mut self, bound: f64, open: bool) {
        if bound > self.lo || (bound == self.lo && open) {
            self.lo = bound;
            self.lo_open = open;
        }
    }

    fn lower_hi(&mut self, bound: f64, open: bool) {
        if bound < self.hi || (bound == self.hi && open) {
            self.hi = bound;
            self.hi_open = open;
        }
    }

    /// Intersection; `None` when empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let mut out = *self;
        out.raise_lo(other.lo, other.lo_open);
        out.lower_hi(other.hi, other.hi_open);
        (!out.is_empty()).then_some(out)
    }

    /// Width of the interval is no larger than `other`'s on either side.
    pub fn within(&self, other: &Interval) -> bool {
        let lo_ok = self.lo > other.lo || (self.lo == other.lo && (self.lo_open || !other.lo_open));
        let hi_ok = self.hi < other.hi || (self.hi == other.hi && (self.hi_open || !other.hi_open));
        lo_ok && hi_ok
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:e}, {:e}{}",
            if self.lo_open { '(' } else { '[' },
            self.lo,
            self.hi,
            if self.hi_open { ')' } else { ']' }
        )
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    #[serde(serialize_with = "ser_endpoint", deserialize_with = "de_endpoint")]
    lo: f64,
    #[serde(serialize_with = "ser_endpoint", deserialize_with = "de_endpoint")]
    hi: f64,
    #[serde(default)]
    lo_open: bool,
    #[serde(default)]
    hi_open: bool,
}

fn ser_endpoint<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&crate::expr::shortest_decimal(*x))
}

fn de_endpoint<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match NumOrStr::deserialize(d)? {
        NumOrStr::Num(x) => Ok(x),
        NumOrStr::Str(s) => s.trim().parse().map_err(de::Error::custom),
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IntervalRepr {
            lo: self.lo,
            hi: self.hi,
            lo_open: self.lo_open,
            hi_open: self.hi_open,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = IntervalRepr::deserialize(d)?;
        Interval::new(r.lo, r.hi, r.lo_open, r.hi_open).map_err(de::Error::custom)
    }
}

/// Per-variable boxes plus a conjunction of residual conditions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainMap {
    pub vars: BTreeMap<String, Interval>,
    pub residual: Vec<Cond>,
}

impl DomainMap {
    pub fn get(&self, var: &str) -> Option<&Interval> {
        self.vars.get(var)
    }

    pub fn set(&mut self, var: &str, iv: Interval) {
        self.vars.insert(var.to_string(), iv);
    }

    /// Adds a residual condition unless an identical one is already present.
    pub fn add_residual(&mut self, c: Cond) {
        if !self.residual.contains(&c) {
            self.residual.push(c);
        }
    }

    pub fn residual_cond(&self) -> Option<Cond> {
        Cond::all(self.residual.clone())
    }

    /// Residual predicate in the condition grammar, if any.
    pub fn residual_text(&self) -> Option<String> {
        self.residual_cond().map(|c| c.to_string())
    }

    /// Splits a right-nested conjunction back into its parts.
    pub fn set_residual_text(&mut self, text: &str) -> Result<(), crate::expr::ParseError> {
        let mut c = crate::expr::parse_cond(text)?;
        self.residual.clear();
        loop {
            match c {
                Cond::And(a, b) => {
                    self.add_residual(*a);
                    c = *b;
                }
                other => {
                    self.add_residual(other);
                    break;
                }
            }
        }
        Ok(())
    }

    /// Box membership and residual predicate evaluated in binary64.
    pub fn accepts(&self, point: &BTreeMap<String, f64>) -> bool {
        self.vars
            .iter()
            .all(|(v, iv)| point.get(v).is_some_and(|x| iv.contains(*x)))
            && self.residual.iter().all(|c| eval::eval_cond_fp64(c, point))
    }

    pub fn covers(&self, expr: &Expr) -> Result<(), DomainError> {
        match expr.variables().into_iter().find(|v| !self.vars.contains_key(v)) {
            Some(v) => Err(DomainError::MissingVariable(v)),
            None => Ok(()),
        }
    }

    /// Every interval of `self` lies within the corresponding one of `base`.
    pub fn is_narrower_than(&self, base: &DomainMap) -> bool {
        base.vars
            .iter()
            .all(|(v, b)| self.vars.get(v).is_some_and(|iv| iv.within(b)))
    }

    fn tighten(&mut self, var: &str, lo: Option<(f64, bool)>, hi: Option<(f64, bool)>) -> Result<(), DomainError> {
        let iv = self
            .vars
            .get_mut(var)
            .ok_or_else(|| DomainError::MissingVariable(var.to_string()))?;
        if let Some((b, open)) = lo {
            if b.is_nan() || b == f64::INFINITY {
                return Err(DomainError::EmptyDomain(var.to_string()));
            }
            if b > -MAX_DOUBLE || (b == -MAX_DOUBLE && open) {
                iv.raise_lo(b, open);
            }
        }
        if let Some((b, open)) = hi {
            if b.is_nan() || b == f64::NEG_INFINITY {
                return Err(DomainError::EmptyDomain(var.to_string()));
            }
            if b < MAX_DOUBLE || (b == MAX_DOUBLE && open) {
                iv.lower_hi(b, open);
            }
        }
        if iv.is_empty() {
            return Err(DomainError::EmptyDomain(var.to_string()));
        }
        Ok(())
    }
}

/// JSON shape used inside dataset records: a map from variable to interval.
impl Serialize for DomainMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.vars.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DomainMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(DomainMap {
            vars: BTreeMap::deserialize(d)?,
            residual: Vec::new(),
        })
    }
}

/// Every variable over the full finite binary64 range.
pub fn default_domain<S: AsRef<str>>(vars: &[S]) -> DomainMap {
    DomainMap {
        vars: vars
            .iter()
            .map(|v| (v.as_ref().to_string(), Interval::full()))
            .collect(),
        residual: Vec::new(),
    }
}

/// `sign * var + offset`, recognised through negation and literal shifts.
struct Affine<'a> {
    var: &'a str,
    sign: f64,
    offset: f64,
}

fn as_affine(e: &Expr) -> Option<Affine<'_>> {
    match e {
        Expr::Var(v) => Some(Affine { var: v, sign: 1.0, offset: 0.0 }),
        Expr::Op(Op::Neg, args) => {
            let a = as_affine(&args[0])?;
            Some(Affine { var: a.var, sign: -a.sign, offset: -a.offset })
        }
        Expr::Op(op @ (Op::Add | Op::Sub), args) => {
            let (lhs, rhs) = (&args[0], &args[1]);
            match (lhs, rhs, op) {
                (_, Expr::Literal(c), Op::Add) => {
                    let a = as_affine(lhs)?;
                    Some(Affine { offset: a.offset + c.to_f64(), ..a })
                }
                (Expr::Literal(c), _, Op::Add) => {
                    let a = as_affine(rhs)?;
                    Some(Affine { offset: a.offset + c.to_f64(), ..a })
                }
                (_, Expr::Literal(c), Op::Sub) => {
                    let a = as_affine(lhs)?;
                    Some(Affine { offset: a.offset - c.to_f64(), ..a })
                }
                (Expr::Literal(c), _, Op::Sub) => {
                    let a = as_affine(rhs)?;
                    Some(Affine { var: a.var, sign: -a.sign, offset: c.to_f64() - a.offset })
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Lower/upper bound requirement on an argument value.
#[derive(Clone, Copy)]
struct Bound {
    value: f64,
    strict: bool,
}

/// Applies `arg >= lo` and/or `arg <= hi` to the box when `arg` is affine in
/// one variable. Returns false when the argument is not affine.
fn tighten_affine(
    dm: &mut DomainMap,
    arg: &Expr,
    lo: Option<Bound>,
    hi: Option<Bound>,
) -> Result<bool, DomainError> {
    let Some(a) = as_affine(arg) else { return Ok(false) };
    if !dm.vars.contains_key(a.var) {
        return Err(DomainError::MissingVariable(a.var.to_string()));
    }
    // sign*v + offset >= k  <=>  v >= k - offset (sign 1) or v <= offset - k (sign -1)
    let (mut vlo, mut vhi) = (None, None);
    if let Some(b) = lo {
        if a.sign > 0.0 {
            vlo = Some((b.value - a.offset, b.strict));
        } else {
            vhi = Some((a.offset - b.value, b.strict));
        }
    }
    if let Some(b) = hi {
        if a.sign > 0.0 {
            vhi = Some((b.value - a.offset, b.strict));
        } else {
            vlo = Some((a.offset - b.value, b.strict));
        }
    }
    dm.tighten(a.var, vlo, vhi)?;
    Ok(true)
}

fn lit(x: f64) -> Expr {
    Expr::Literal(crate::expr::Literal::from_f64(x))
}

fn guarded(guards: &[Cond], pred: Cond) -> Cond {
    match Cond::all(guards.to_vec()) {
        None => pred,
        Some(g) => Cond::or(Cond::not(g), pred),
    }
}

fn visit_expr(e: &Expr, guards: &mut Vec<Cond>, dm: &mut DomainMap) -> Result<(), DomainError> {
    match e {
        Expr::Literal(_) | Expr::Var(_) => Ok(()),
        Expr::Op(op, args) => {
            for a in args {
                visit_expr(a, guards, dm)?;
            }
            apply_precondition(*op, args, guards, dm)
        }
        Expr::If(c, t, f) => {
            visit_cond(c, guards, dm)?;
            guards.push((**c).clone());
            let r = visit_expr(t, guards, dm);
            guards.pop();
            r?;
            guards.push(Cond::not((**c).clone()));
            let r = visit_expr(f, guards, dm);
            guards.pop();
            r
        }
    }
}

fn visit_cond(c: &Cond, guards: &mut Vec<Cond>, dm: &mut DomainMap) -> Result<(), DomainError> {
    match c {
        Cond::Cmp(_, a, b) => {
            visit_expr(a, guards, dm)?;
            visit_expr(b, guards, dm)
        }
        Cond::And(a, b) | Cond::Or(a, b) => {
            visit_cond(a, guards, dm)?;
            visit_cond(b, guards, dm)
        }
        Cond::Not(a) => visit_cond(a, guards, dm),
    }
}

fn apply_precondition(op: Op, args: &[Expr], guards: &[Cond], dm: &mut DomainMap) -> Result<(), DomainError> {
    let (arg, lo, hi, residual) = match op.precondition() {
        Precondition::None => return Ok(()),
        Precondition::Positive => (
            &args[0],
            Some(Bound { value: 0.0, strict: true }),
            None,
            Cond::cmp(CmpOp::Gt, args[0].clone(), lit(0.0)),
        ),
        Precondition::NonNegative => (
            &args[0],
            Some(Bound { value: 0.0, strict: false }),
            None,
            Cond::cmp(CmpOp::Ge, args[0].clone(), lit(0.0)),
        ),
        Precondition::GreaterThanMinusOne => (
            &args[0],
            Some(Bound { value: -1.0, strict: true }),
            None,
            Cond::cmp(CmpOp::Gt, args[0].clone(), lit(-1.0)),
        ),
        Precondition::UnitInterval => (
            &args[0],
            Some(Bound { value: -1.0, strict: false }),
            Some(Bound { value: 1.0, strict: false }),
            Cond::and(
                Cond::cmp(CmpOp::Ge, args[0].clone(), lit(-1.0)),
                Cond::cmp(CmpOp::Le, args[0].clone(), lit(1.0)),
            ),
        ),
        Precondition::NonZeroSecond => {
            dm.add_residual(guarded(guards, Cond::cmp(CmpOp::Ne, args[1].clone(), lit(0.0))));
            return Ok(());
        }
        Precondition::PowBase => {
            if matches!(&args[1], Expr::Literal(l) if l.is_integer()) {
                return Ok(());
            }
            (
                &args[0],
                Some(Bound { value: 0.0, strict: false }),
                None,
                Cond::cmp(CmpOp::Ge, args[0].clone(), lit(0.0)),
            )
        }
    };
    if guards.is_empty() && tighten_affine(dm, arg, lo, hi)? {
        return Ok(());
    }
    dm.add_residual(guarded(guards, residual));
    Ok(())
}

/// Tightens `base` with the real-domain preconditions of every operator in
/// `expr`. Sites reached only under a branch, and sites whose argument is not
/// an affine function of one variable, become residual conditions.
pub fn derive_constraints(expr: &Expr, base: &DomainMap) -> Result<DomainMap, DomainError> {
    base.covers(expr)?;
    let mut dm = base.clone();
    visit_expr(expr, &mut Vec::new(), &mut dm)?;
    Ok(dm)
}

/// Domains for `outer_expr` with some variables replaced by inner expressions.
///
/// The result maps the remaining outer variables and every inner variable.
/// Inner domains for a shared variable are intersected. Outer box
/// constraints are pulled back onto the inner variable when the inner
/// expression is affine in it, otherwise they become residual conditions.
pub fn propagate_through_composition(
    outer_expr: &Expr,
    outer: &DomainMap,
    substitution: &BTreeMap<String, (Expr, DomainMap)>,
) -> Result<DomainMap, DomainError> {
    outer.covers(outer_expr)?;
    let mut dm = DomainMap::default();
    for (v, iv) in &outer.vars {
        if !substitution.contains_key(v) {
            dm.vars.insert(v.clone(), *iv);
        }
    }
    for (g, inner) in substitution.values() {
        inner.covers(g)?;
        for (v, iv) in &inner.vars {
            let merged = match dm.vars.get(v) {
                Some(cur) => cur
                    .intersect(iv)
                    .ok_or_else(|| DomainError::EmptyDomain(v.clone()))?,
                None => *iv,
            };
            dm.vars.insert(v.clone(), merged);
        }
        for c in &inner.residual {
            dm.add_residual(c.clone());
        }
    }
    for (x, (g, _)) in substitution {
        let Some(iv) = outer.vars.get(x) else { continue };
        if iv.is_full() {
            continue;
        }
        let lo = Bound { value: iv.lo, strict: iv.lo_open };
        let hi = Bound { value: iv.hi, strict: iv.hi_open };
        if !tighten_affine(&mut dm, g, Some(lo), Some(hi))? {
            let lo_op = if iv.lo_open { CmpOp::Gt } else { CmpOp::Ge };
            let hi_op = if iv.hi_open { CmpOp::Lt } else { CmpOp::Le };
            dm.add_residual(Cond::and(
                Cond::cmp(lo_op, g.clone(), lit(iv.lo)),
                Cond::cmp(hi_op, g.clone(), lit(iv.hi)),
            ));
        }
    }
    let map: BTreeMap<String, Expr> = substitution
        .iter()
        .map(|(k, (g, _))| (k.clone(), g.clone()))
        .collect();
    for c in &outer.residual {
        dm.add_residual(c.substitute(&map));
    }
    derive_constraints(&outer_expr.substitute(&map), &dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn default_domain_is_full_float_range() {
        let d = default_domain(&["x"]);
        let iv = d.get("x").unwrap();
        assert_eq!(iv.lo.to_bits(), (-1.7976931348623157e308f64).to_bits());
        assert_eq!(iv.hi.to_bits(), 1.7976931348623157e308f64.to_bits());
        assert!(!iv.lo_open && !iv.hi_open);
        assert!(default_domain::<&str>(&[]).vars.is_empty());
        assert_eq!(default_domain(&["x", "y"]).vars.len(), 2);
    }

    #[test]
    fn log_tightens_lower_bound() {
        let e = p("(log x)");
        let d = derive_constraints(&e, &default_domain(&["x"])).unwrap();
        let iv = d.get("x").unwrap();
        assert_eq!((iv.lo, iv.lo_open, iv.hi), (0.0, true, MAX_DOUBLE));
        assert!(d.residual.is_empty());
    }

    #[test]
    fn shifted_and_negated_arguments() {
        let d = derive_constraints(&p("(log (+ x 3))"), &default_domain(&["x"])).unwrap();
        assert_eq!(d.get("x").unwrap().lo, -3.0);
        let d = derive_constraints(&p("(sqrt (- 2 x))"), &default_domain(&["x"])).unwrap();
        let iv = d.get("x").unwrap();
        assert_eq!((iv.hi, iv.hi_open), (2.0, false));
        let d = derive_constraints(&p("(asin (- x))"), &default_domain(&["x"])).unwrap();
        let iv = d.get("x").unwrap();
        assert_eq!((iv.lo, iv.hi), (-1.0, 1.0));
        let d = derive_constraints(&p("(log1p x)"), &default_domain(&["x"])).unwrap();
        assert_eq!(d.get("x").unwrap().lo, -1.0);
    }

    #[test]
    fn non_affine_sites_go_to_residual() {
        let d = derive_constraints(&p("(sqrt (cos y))"), &default_domain(&["y"])).unwrap();
        assert!(d.get("y").unwrap().is_full());
        assert_eq!(d.residual_text().unwrap(), "(>= (cos y) 0)");
    }

    #[test]
    fn plain_sum_is_unchanged() {
        let base = default_domain(&["x"]);
        assert_eq!(derive_constraints(&p("(+ x 1)"), &base).unwrap(), base);
    }

    #[test]
    fn division_is_residual() {
        let d = derive_constraints(&p("(/ 1 x)"), &default_domain(&["x"])).unwrap();
        assert!(d.get("x").unwrap().is_full());
        assert_eq!(d.residual_text().unwrap(), "(!= x 0)");
    }

    #[test]
    fn branch_sites_are_guarded() {
        let d = derive_constraints(&p("(if (> x 0) (log x) 0)"), &default_domain(&["x"])).unwrap();
        assert!(d.get("x").unwrap().is_full());
        assert_eq!(d.residual_text().unwrap(), "(or (not (> x 0)) (> x 0))");
        assert!(d.accepts(&BTreeMap::from([("x".into(), -5.0)])));
    }

    #[test]
    fn empty_domain_is_reported() {
        let mut base = default_domain(&["x"]);
        base.set("x", Interval::closed(-5.0, -1.0).unwrap());
        assert_eq!(
            derive_constraints(&p("(log x)"), &base),
            Err(DomainError::EmptyDomain("x".into()))
        );
        assert_eq!(
            derive_constraints(&p("(+ (sqrt x) (sqrt (- x)))"), &default_domain(&["x"])).map(|d| d.vars["x"]),
            Ok(Interval::point(0.0))
        );
        assert!(derive_constraints(&p("(+ (log x) (log (- x)))"), &default_domain(&["x"])).is_err());
    }

    #[test]
    fn pow_with_integer_exponent_is_unconstrained() {
        let d = derive_constraints(&p("(pow x 3)"), &default_domain(&["x"])).unwrap();
        assert!(d.get("x").unwrap().is_full());
        let d = derive_constraints(&p("(pow x 0.5)"), &default_domain(&["x"])).unwrap();
        assert_eq!(d.get("x").unwrap().lo, 0.0);
    }

    #[test]
    fn composition_through_square() {
        let outer = p("(log x)");
        let od = derive_constraints(&outer, &default_domain(&["x"])).unwrap();
        let sub = BTreeMap::from([("x".to_string(), (p("(* y y)"), default_domain(&["y"])))]);
        let d = propagate_through_composition(&outer, &od, &sub).unwrap();
        assert!(d.get("y").unwrap().is_full());
        assert!(d.get("x").is_none());
        let at = |y: f64| BTreeMap::from([("y".to_string(), y)]);
        assert!(!d.accepts(&at(0.0)));
        assert!(d.accepts(&at(2.0)));
        assert!(d.accepts(&at(-3.0)));
    }

    #[test]
    fn composition_routes_box_to_residual() {
        let outer = p("(+ x 1)");
        let mut od = default_domain(&["x"]);
        od.set("x", Interval::closed(1.0, 10.0).unwrap());
        let sub = BTreeMap::from([("x".to_string(), (p("(exp y)"), default_domain(&["y"])))]);
        let d = propagate_through_composition(&outer, &od, &sub).unwrap();
        assert!(d.get("y").unwrap().is_full());
        assert_eq!(d.residual_text().unwrap(), "(and (>= (exp y) 1) (<= (exp y) 10))");
        let at = |y: f64| BTreeMap::from([("y".to_string(), y)]);
        assert!(d.accepts(&at(1.0)));
        assert!(!d.accepts(&at(3.0)));
    }

    #[test]
    fn composition_pulls_back_affine_box() {
        let outer = p("(* x 2)");
        let mut od = default_domain(&["x"]);
        od.set("x", Interval::closed(1.0, 10.0).unwrap());
        let sub = BTreeMap::from([("x".to_string(), (p("(- y 1)"), default_domain(&["y"])))]);
        let d = propagate_through_composition(&outer, &od, &sub).unwrap();
        assert_eq!(*d.get("y").unwrap(), Interval::closed(2.0, 11.0).unwrap());
    }

    #[test]
    fn identity_composition_equals_derivation() {
        let outer = p("(sqrt x)");
        let od = default_domain(&["x"]);
        let sub = BTreeMap::from([("x".to_string(), (p("x"), default_domain(&["x"])))]);
        let d = propagate_through_composition(&outer, &od, &sub).unwrap();
        assert_eq!(d, derive_constraints(&outer, &od).unwrap());
    }

    #[test]
    fn serializes_endpoints_as_strings() {
        let mut d = default_domain(&["x"]);
        d.set("y", Interval::new(0.0, 1e6, true, false).unwrap());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(
            json,
            r#"{"x":{"lo":"-1.7976931348623157e308","hi":"1.7976931348623157e308","lo_open":false,"hi_open":false},"y":{"lo":"0","hi":"1e6","lo_open":true,"hi_open":false}}"#
        );
        let back: DomainMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let numeric: DomainMap = serde_json::from_str(r#"{"z":{"lo":-1,"hi":2.5}}"#).unwrap();
        assert_eq!(numeric.vars["z"], Interval::closed(-1.0, 2.5).unwrap());
    }

    #[test]
    fn residual_text_round_trips() {
        let mut d = default_domain(&["x", "y"]);
        d.add_residual(crate::expr::parse_cond("(> x 0)").unwrap());
        d.add_residual(crate::expr::parse_cond("(or (< y 1) (> y 2))").unwrap());
        let text = d.residual_text().unwrap();
        let mut back = default_domain(&["x", "y"]);
        back.set_residual_text(&text).unwrap();
        assert_eq!(back.residual, d.residual);
    }
}
