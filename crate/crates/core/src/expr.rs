//! Expression IR: a small prefix s-expression language over real-valued
//! arithmetic with conditionals, exact decimal literals and named variables.
//!
//! ```text
//! expr    := literal | ident | "(" op expr+ ")" | "(" "if" cond expr expr ")"
//! cond    := "(" cmp expr expr ")" | "(" ("and"|"or") cond cond ")" | "(" "not" cond ")"
//! cmp     := "<" | "<=" | ">" | ">=" | "==" | "!="
//! literal := ["-"] digits ["." digits] [("e"|"E") ["-"|"+"] digits]
//! ident   := letter (letter|digit|"_")*
//! ```
//!
//! Literals keep their source token verbatim. They are rounded to a binary
//! carrier only when an expression is evaluated.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown operator `{name}` at byte {offset}")]
    UnknownOperator { offset: usize, name: String },
    #[error("operator `{op}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        offset: usize,
        op: String,
        expected: String,
        found: usize,
    },
}

/// Operators understood by both evaluation carriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Cbrt,
    Fabs,
    Exp,
    Expm1,
    Log,
    Log1p,
    Pow,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Atan2,
    Sinh,
    Cosh,
    Tanh,
    Fmod,
    Fma,
    Hypot,
    Min,
    Max,
}

/// Syntactic class of an operator node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Unary,
    Binary,
    Call,
}

/// Real-domain requirement an operator places on its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precondition {
    None,
    /// argument 0 > 0
    Positive,
    /// argument 0 >= 0
    NonNegative,
    /// argument 0 > -1
    GreaterThanMinusOne,
    /// -1 <= argument 0 <= 1
    UnitInterval,
    /// argument 1 != 0
    NonZeroSecond,
    /// base >= 0 unless the exponent is an integer
    PowBase,
}

impl Op {
    pub const ALL: [Op; 28] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Neg,
        Op::Sqrt,
        Op::Cbrt,
        Op::Fabs,
        Op::Exp,
        Op::Expm1,
        Op::Log,
        Op::Log1p,
        Op::Pow,
        Op::Sin,
        Op::Cos,
        Op::Tan,
        Op::Asin,
        Op::Acos,
        Op::Atan,
        Op::Atan2,
        Op::Sinh,
        Op::Cosh,
        Op::Tanh,
        Op::Fmod,
        Op::Fma,
        Op::Hypot,
        Op::Min,
        Op::Max,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub | Op::Neg => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Sqrt => "sqrt",
            Op::Cbrt => "cbrt",
            Op::Fabs => "fabs",
            Op::Exp => "exp",
            Op::Expm1 => "expm1",
            Op::Log => "log",
            Op::Log1p => "log1p",
            Op::Pow => "pow",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tan => "tan",
            Op::Asin => "asin",
            Op::Acos => "acos",
            Op::Atan => "atan",
            Op::Atan2 => "atan2",
            Op::Sinh => "sinh",
            Op::Cosh => "cosh",
            Op::Tanh => "tanh",
            Op::Fmod => "fmod",
            Op::Fma => "fma",
            Op::Hypot => "hypot",
            Op::Min => "min",
            Op::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Neg
            | Op::Sqrt
            | Op::Cbrt
            | Op::Fabs
            | Op::Exp
            | Op::Expm1
            | Op::Log
            | Op::Log1p
            | Op::Sin
            | Op::Cos
            | Op::Tan
            | Op::Asin
            | Op::Acos
            | Op::Atan
            | Op::Sinh
            | Op::Cosh
            | Op::Tanh => 1,
            Op::Fma => 3,
            _ => 2,
        }
    }

    pub fn kind(self) -> OpKind {
        match self {
            Op::Neg => OpKind::Unary,
            Op::Add | Op::Sub | Op::Mul | Op::Div => OpKind::Binary,
            _ => OpKind::Call,
        }
    }

    pub fn precondition(self) -> Precondition {
        match self {
            Op::Log => Precondition::Positive,
            Op::Sqrt => Precondition::NonNegative,
            Op::Log1p => Precondition::GreaterThanMinusOne,
            Op::Asin | Op::Acos => Precondition::UnitInterval,
            Op::Div | Op::Fmod => Precondition::NonZeroSecond,
            Op::Pow => Precondition::PowBase,
            _ => Precondition::None,
        }
    }

    /// Resolves an operator name and argument count.
    fn resolve(name: &str, argc: usize) -> Option<Result<Op, String>> {
        let op = match name {
            "-" if argc == 1 => Op::Neg,
            "-" => Op::Sub,
            "neg" => Op::Neg,
            "fmin" => Op::Min,
            "fmax" => Op::Max,
            _ => *Op::ALL
                .iter()
                .find(|op| **op != Op::Neg && op.symbol() == name)?,
        };
        if op.arity() == argc {
            Some(Ok(op))
        } else if name == "-" {
            Some(Err("1 or 2".to_string()))
        } else {
            Some(Err(op.arity().to_string()))
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn from_symbol(s: &str) -> Option<CmpOp> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    /// Applies the comparison to an ordering; `None` (unordered, NaN) is false
    /// for every operator except `!=`.
    pub fn holds(self, ord: Option<std::cmp::Ordering>) -> bool {
        use std::cmp::Ordering::*;
        match (self, ord) {
            (CmpOp::Ne, None) => true,
            (_, None) => false,
            (CmpOp::Lt, Some(o)) => o == Less,
            (CmpOp::Le, Some(o)) => o != Greater,
            (CmpOp::Gt, Some(o)) => o == Greater,
            (CmpOp::Ge, Some(o)) => o != Less,
            (CmpOp::Eq, Some(o)) => o == Equal,
            (CmpOp::Ne, Some(o)) => o != Equal,
        }
    }
}

/// A decimal literal, stored as its source token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal(String);

impl Literal {
    pub fn new(token: &str) -> Option<Literal> {
        is_literal_token(token).then(|| Literal(token.to_string()))
    }

    /// Shortest decimal token that round-trips to `x`. Panics on non-finite input.
    pub fn from_f64(x: f64) -> Literal {
        assert!(x.is_finite(), "literal must be finite");
        Literal(shortest_decimal(x))
    }

    pub fn token(&self) -> &str {
        &self.0
    }

    /// Correctly rounded binary64 value.
    pub fn to_f64(&self) -> f64 {
        self.0.parse().expect("validated literal")
    }

    /// Significant digits of the significand: sign, decimal point and leading
    /// zeros stripped, trailing zeros kept.
    pub fn significant_digits(&self) -> usize {
        let significand = self.0.split(['e', 'E']).next().unwrap_or("");
        significand
            .chars()
            .filter(char::is_ascii_digit)
            .skip_while(|&c| c == '0')
            .count()
    }

    /// True when the token is an integer value (no fraction digits other than
    /// zeros once the exponent is applied).
    pub fn is_integer(&self) -> bool {
        let x = self.to_f64();
        x.is_finite() && x.fract() == 0.0
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shortest of the plain and scientific round-trip renderings of a finite
/// value; both are valid literal tokens.
pub fn shortest_decimal(x: f64) -> String {
    let plain = format!("{x}");
    let sci = format!("{x:e}");
    if plain.len() <= sci.len() {
        plain
    } else {
        sci
    }
}

fn is_literal_token(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    let digits = |i: &mut usize| {
        let start = *i;
        while *i < b.len() && b[*i].is_ascii_digit() {
            *i += 1;
        }
        *i > start
    };
    if i < b.len() && b[i] == b'-' {
        i += 1;
    }
    if !digits(&mut i) {
        return false;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        if !digits(&mut i) {
            return false;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
            i += 1;
        }
        if !digits(&mut i) {
            return false;
        }
    }
    i == b.len()
}

fn is_ident_token(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(s, "if" | "and" | "or" | "not")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Literal(Literal),
    Var(String),
    Op(Op, Vec<Expr>),
    If(Box<Cond>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Cond {
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    /// Panics if `token` is not a valid literal.
    pub fn lit(token: &str) -> Expr {
        Expr::Literal(Literal::new(token).unwrap_or_else(|| panic!("bad literal {token:?}")))
    }

    /// Panics on arity mismatch.
    pub fn op(op: Op, args: Vec<Expr>) -> Expr {
        assert_eq!(op.arity(), args.len(), "arity mismatch for {op:?}");
        Expr::Op(op, args)
    }

    pub fn if_(cond: Cond, then: Expr, otherwise: Expr) -> Expr {
        Expr::If(Box::new(cond), Box::new(then), Box::new(otherwise))
    }

    /// Number of operator nodes plus comparison nodes. Literals, variables and
    /// the `if` node itself are not counted.
    pub fn count_operations(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::Var(_) => 0,
            Expr::Op(_, args) => 1 + args.iter().map(Expr::count_operations).sum::<usize>(),
            Expr::If(c, t, e) => c.count_operations() + t.count_operations() + e.count_operations(),
        }
    }

    /// Variables in first-occurrence order, deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Literal(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Op(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            Expr::If(c, t, e) => {
                c.collect_vars(out);
                t.collect_vars(out);
                e.collect_vars(out);
            }
        }
    }

    pub fn has_conditional(&self) -> bool {
        self.conditional_depth() > 0
    }

    /// Maximum nesting of `if` nodes (conditions included), 0 when none.
    pub fn conditional_depth(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::Var(_) => 0,
            Expr::Op(_, args) => args.iter().map(Expr::conditional_depth).max().unwrap_or(0),
            Expr::If(c, t, e) => {
                1 + c
                    .conditional_depth()
                    .max(t.conditional_depth())
                    .max(e.conditional_depth())
            }
        }
    }

    pub fn literals(&self) -> Vec<&Literal> {
        let mut out = Vec::new();
        self.visit_literals(&mut |l| out.push(l));
        out
    }

    fn visit_literals<'a>(&'a self, f: &mut dyn FnMut(&'a Literal)) {
        match self {
            Expr::Literal(l) => f(l),
            Expr::Var(_) => {}
            Expr::Op(_, args) => args.iter().for_each(|a| a.visit_literals(f)),
            Expr::If(c, t, e) => {
                c.visit_literals(f);
                t.visit_literals(f);
                e.visit_literals(f);
            }
        }
    }

    /// Literal tokens with more significant digits than the policy threshold.
    pub fn high_precision_literals(&self, policy: LiteralPolicy) -> Vec<String> {
        self.literals()
            .into_iter()
            .filter(|l| l.significant_digits() > policy.threshold)
            .map(|l| l.token().to_string())
            .collect()
    }

    /// Simultaneous substitution of variables.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Literal(_) => self.clone(),
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Op(op, args) => Expr::Op(*op, args.iter().map(|a| a.substitute(map)).collect()),
            Expr::If(c, t, e) => Expr::If(
                Box::new(c.substitute(map)),
                Box::new(t.substitute(map)),
                Box::new(e.substitute(map)),
            ),
        }
    }

    pub fn rename_var(&self, from: &str, to: &str) -> Expr {
        let map = BTreeMap::from([(from.to_string(), Expr::var(to))]);
        self.substitute(&map)
    }
}

impl Cond {
    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Cond {
        Cond::Cmp(op, Box::new(a), Box::new(b))
    }

    pub fn and(a: Cond, b: Cond) -> Cond {
        Cond::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Cond, b: Cond) -> Cond {
        Cond::Or(Box::new(a), Box::new(b))
    }

    pub fn not(a: Cond) -> Cond {
        Cond::Not(Box::new(a))
    }

    /// Folds a non-empty list into a right-nested conjunction.
    pub fn all(mut conds: Vec<Cond>) -> Option<Cond> {
        let mut acc = conds.pop()?;
        while let Some(c) = conds.pop() {
            acc = Cond::and(c, acc);
        }
        Some(acc)
    }

    fn count_operations(&self) -> usize {
        match self {
            Cond::Cmp(_, a, b) => 1 + a.count_operations() + b.count_operations(),
            Cond::And(a, b) | Cond::Or(a, b) => a.count_operations() + b.count_operations(),
            Cond::Not(a) => a.count_operations(),
        }
    }

    fn conditional_depth(&self) -> usize {
        match self {
            Cond::Cmp(_, a, b) => a.conditional_depth().max(b.conditional_depth()),
            Cond::And(a, b) | Cond::Or(a, b) => a.conditional_depth().max(b.conditional_depth()),
            Cond::Not(a) => a.conditional_depth(),
        }
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Cond::Cmp(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Cond::Not(a) => a.collect_vars(out),
        }
    }

    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn visit_literals<'a>(&'a self, f: &mut dyn FnMut(&'a Literal)) {
        match self {
            Cond::Cmp(_, a, b) => {
                a.visit_literals(f);
                b.visit_literals(f);
            }
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.visit_literals(f);
                b.visit_literals(f);
            }
            Cond::Not(a) => a.visit_literals(f),
        }
    }

    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Cond {
        match self {
            Cond::Cmp(op, a, b) => Cond::cmp(*op, a.substitute(map), b.substitute(map)),
            Cond::And(a, b) => Cond::and(a.substitute(map), b.substitute(map)),
            Cond::Or(a, b) => Cond::or(a.substitute(map), b.substitute(map)),
            Cond::Not(a) => Cond::not(a.substitute(map)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteralPolicy {
    /// Literals with strictly more significant digits than this are
    /// high-precision.
    pub threshold: usize,
}

impl LiteralPolicy {
    pub fn new(threshold: usize) -> LiteralPolicy {
        assert!(threshold >= 1, "threshold must be at least 1");
        LiteralPolicy { threshold }
    }
}

impl Default for LiteralPolicy {
    fn default() -> Self {
        LiteralPolicy { threshold: 15 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralDiff {
    pub conditional_removed: bool,
    pub hp_literals_removed: usize,
    /// rewrite count minus original count
    pub operation_delta: i64,
}

/// Compares an original expression against a rewrite.
pub fn structural_diff(original: &Expr, rewrite: &Expr, policy: LiteralPolicy) -> StructuralDiff {
    let kept: Vec<String> = rewrite.high_precision_literals(policy);
    let hp_literals_removed = original
        .high_precision_literals(policy)
        .iter()
        .filter(|tok| !kept.contains(tok))
        .count();
    StructuralDiff {
        conditional_removed: original.has_conditional() && !rewrite.has_conditional(),
        hp_literals_removed,
        operation_delta: rewrite.count_operations() as i64 - original.count_operations() as i64,
    }
}

// ---------------------------------------------------------------------------
// Printing

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Op(op, args) => {
                write!(f, "({}", op.symbol())?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            Expr::If(c, t, e) => write!(f, "(if {c} {t} {e})"),
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Cmp(op, a, b) => write!(f, "({} {a} {b})", op.symbol()),
            Cond::And(a, b) => write!(f, "(and {a} {b})"),
            Cond::Or(a, b) => write!(f, "(or {a} {b})"),
            Cond::Not(a) => write!(f, "(not {a})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    peeked: Option<(usize, Tok<'a>)>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0, peeked: None }
    }

    fn scan(&mut self) -> (usize, Tok<'a>) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if start >= bytes.len() {
            return (start, Tok::End);
        }
        match bytes[start] {
            b'(' => {
                self.pos += 1;
                (start, Tok::Open)
            }
            b')' => {
                self.pos += 1;
                (start, Tok::Close)
            }
            _ => {
                while self.pos < bytes.len()
                    && !bytes[self.pos].is_ascii_whitespace()
                    && bytes[self.pos] != b'('
                    && bytes[self.pos] != b')'
                {
                    self.pos += 1;
                }
                // Atoms split on ASCII only, so multi-byte characters stay whole.
                while !self.src.is_char_boundary(self.pos) {
                    self.pos += 1;
                }
                (start, Tok::Atom(&self.src[start..self.pos]))
            }
        }
    }

    fn peek(&mut self) -> (usize, Tok<'a>) {
        if self.peeked.is_none() {
            self.peeked = Some(self.scan());
        }
        self.peeked.clone().expect("peeked")
    }

    fn next(&mut self) -> (usize, Tok<'a>) {
        match self.peeked.take() {
            Some(t) => t,
            None => self.scan(),
        }
    }
}

fn describe(tok: &Tok<'_>) -> String {
    match tok {
        Tok::Open => "`(`".into(),
        Tok::Close => "`)`".into(),
        Tok::Atom(a) => format!("`{a}`"),
        Tok::End => "end of input".into(),
    }
}

fn syntax(offset: usize, expected: &[&'static str], found: &Tok<'_>) -> ParseError {
    ParseError::Syntax {
        offset,
        expected: expected.to_vec(),
        found: describe(found),
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
}

impl<'a> Parser<'a> {
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let (off, tok) = self.lex.next();
        match tok {
            Tok::Atom(a) if is_literal_token(a) => Ok(Expr::Literal(Literal(a.to_string()))),
            Tok::Atom(a) if is_ident_token(a) => Ok(Expr::Var(a.to_string())),
            Tok::Open => self.expr_form(off),
            other => Err(syntax(off, &["literal", "identifier", "`(`"], &other)),
        }
    }

    fn expr_form(&mut self, open: usize) -> Result<Expr, ParseError> {
        let (off, tok) = self.lex.next();
        let name = match tok {
            Tok::Atom(a) => a,
            other => return Err(syntax(off, &["operator", "`if`"], &other)),
        };
        if name == "if" {
            let c = self.cond()?;
            let t = self.expr()?;
            let e = self.expr()?;
            self.close()?;
            return Ok(Expr::if_(c, t, e));
        }
        if Op::resolve(name, 1).is_none() {
            return Err(ParseError::UnknownOperator {
                offset: off,
                name: name.to_string(),
            });
        }
        let mut args = Vec::new();
        loop {
            match self.lex.peek() {
                (_, Tok::Close) => {
                    self.lex.next();
                    break;
                }
                (o, Tok::End) => return Err(syntax(o, &["expression", "`)`"], &Tok::End)),
                _ => args.push(self.expr()?),
            }
        }
        if args.is_empty() {
            return Err(ParseError::Arity {
                offset: open,
                op: name.to_string(),
                expected: "at least 1".into(),
                found: 0,
            });
        }
        match Op::resolve(name, args.len()).expect("known operator") {
            Ok(op) => Ok(Expr::Op(op, args)),
            Err(expected) => Err(ParseError::Arity {
                offset: open,
                op: name.to_string(),
                expected,
                found: args.len(),
            }),
        }
    }

    fn cond(&mut self) -> Result<Cond, ParseError> {
        let (off, tok) = self.lex.next();
        if tok != Tok::Open {
            return Err(syntax(off, &["`(`"], &tok));
        }
        let (off, tok) = self.lex.next();
        let name = match tok {
            Tok::Atom(a) => a,
            other => return Err(syntax(off, &["comparison", "`and`", "`or`", "`not`"], &other)),
        };
        let c = match name {
            "and" => Cond::and(self.cond()?, self.cond()?),
            "or" => Cond::or(self.cond()?, self.cond()?),
            "not" => Cond::not(self.cond()?),
            _ => match CmpOp::from_symbol(name) {
                Some(op) => Cond::cmp(op, self.expr()?, self.expr()?),
                None => {
                    return Err(ParseError::UnknownOperator {
                        offset: off,
                        name: name.to_string(),
                    })
                }
            },
        };
        self.close()?;
        Ok(c)
    }

    fn close(&mut self) -> Result<(), ParseError> {
        match self.lex.next() {
            (_, Tok::Close) => Ok(()),
            (o, other) => Err(syntax(o, &["`)`"], &other)),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.lex.next() {
            (_, Tok::End) => Ok(()),
            (o, other) => Err(syntax(o, &["end of input"], &other)),
        }
    }
}

/// Parses one expression; trailing input is an error.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { lex: Lexer::new(text) };
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parses one condition in the same grammar.
pub fn parse_cond(text: &str) -> Result<Cond, ParseError> {
    let mut p = Parser { lex: Lexer::new(text) };
    let c = p.cond()?;
    p.finish()?;
    Ok(c)
}

impl FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl FromStr for Cond {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_cond(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn parses_polynomial() {
        let e = p("(+ (* x x) (- x 1))");
        assert_eq!(
            e,
            Expr::op(
                Op::Add,
                vec![
                    Expr::op(Op::Mul, vec![Expr::var("x"), Expr::var("x")]),
                    Expr::op(Op::Sub, vec![Expr::var("x"), Expr::lit("1")]),
                ]
            )
        );
    }

    #[test]
    fn parses_conditional_abs() {
        let e = p("(if (< x 0) (- 0 x) x)");
        assert_eq!(
            e,
            Expr::if_(
                Cond::cmp(CmpOp::Lt, Expr::var("x"), Expr::lit("0")),
                Expr::op(Op::Sub, vec![Expr::lit("0"), Expr::var("x")]),
                Expr::var("x"),
            )
        );
    }

    #[test]
    fn literal_token_is_verbatim() {
        let e = p("1.2973149052617803e-303");
        match &e {
            Expr::Literal(l) => {
                assert_eq!(l.token(), "1.2973149052617803e-303");
                assert_eq!(l.significant_digits(), 17);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p("0.1").to_string(), "0.1");
    }

    #[test]
    fn unary_minus_is_negation() {
        assert_eq!(p("(- x)"), Expr::op(Op::Neg, vec![Expr::var("x")]));
        assert_eq!(p("(neg x)").to_string(), "(- x)");
        assert_eq!(p("(- -2.5)").to_string(), "(- -2.5)");
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("(+ x").unwrap_err() {
            ParseError::Syntax { offset, .. } => assert_eq!(offset, 4),
            e => panic!("{e:?}"),
        }
        match parse("(+ x 1))").unwrap_err() {
            ParseError::Syntax { offset, expected, .. } => {
                assert_eq!(offset, 7);
                assert_eq!(expected, vec!["end of input"]);
            }
            e => panic!("{e:?}"),
        }
        assert!(matches!(parse(")"), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("1."), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("(if x 1 2)"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn unknown_operator_and_arity() {
        assert_eq!(
            parse("(frob x)").unwrap_err(),
            ParseError::UnknownOperator { offset: 1, name: "frob".into() }
        );
        assert!(matches!(parse("(fma x y)"), Err(ParseError::Arity { found: 2, .. })));
        assert!(matches!(parse("(sqrt x y)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse("(- a b c)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse("(if (~ x 1) 1 2)"), Err(ParseError::UnknownOperator { .. })));
        assert!(matches!(parse("(+)"), Err(ParseError::Arity { found: 0, .. })));
    }

    #[test]
    fn counts_operations() {
        assert_eq!(Expr::var("x").count_operations(), 0);
        assert_eq!(p("(+ x 1)").count_operations(), 1);
        assert_eq!(p("(+ (* x x) (- x 1))").count_operations(), 3);
        // comparison counted, `if` not
        assert_eq!(p("(if (< x 0) (- x) x)").count_operations(), 2);
        assert_eq!(p("(if (and (< x 0) (not (> y 1))) 1 2)").count_operations(), 2);
    }

    #[test]
    fn variables_first_occurrence() {
        assert_eq!(p("(+ x 1)").variables(), vec!["x"]);
        assert_eq!(p("(- (+ x y) 2)").variables(), vec!["x", "y"]);
        assert_eq!(p("(+ y (* x y))").variables(), vec!["y", "x"]);
        assert!(p("2").variables().is_empty());
    }

    #[test]
    fn conditional_depth() {
        let plain = p("(+ x 1)");
        assert_eq!((plain.has_conditional(), plain.conditional_depth()), (false, 0));
        let single = p("(if (< x 0) 1 2)");
        assert_eq!((single.has_conditional(), single.conditional_depth()), (true, 1));
        let nested = p(CASE2);
        assert_eq!((nested.has_conditional(), nested.conditional_depth()), (true, 2));
    }

    pub(crate) const CASE2: &str = "(if (< (pow x 10) -1.5097698010473000e29) \
        (- (pow x 10) (/ (pow y 3) (* 2 (pow x 10)))) \
        (if (< (pow x 10) 5.582399551122500e29) \
            (sqrt (+ (pow x 20) (pow y 3))) \
            (+ (pow x 10) (/ (pow y 3) (* 2 (pow x 10))))))";

    #[test]
    fn high_precision_literals() {
        let pol = LiteralPolicy::default();
        assert!(p("3.14").high_precision_literals(pol).is_empty());
        assert_eq!(
            p("1.2973149052617803e-303").high_precision_literals(pol),
            vec!["1.2973149052617803e-303"]
        );
        // 16 digits because trailing zeros count
        assert_eq!(p("0.1000000000000000").high_precision_literals(pol), vec!["0.1000000000000000"]);
        // 15 digits is not above the threshold
        assert!(p("0.100000000000000").high_precision_literals(pol).is_empty());
        assert_eq!(Literal::new("-000.00120").unwrap().significant_digits(), 3);
        assert_eq!(Literal::new("0").unwrap().significant_digits(), 0);
        // the Case 2 thresholds have 17 and 16 digits
        assert_eq!(p(CASE2).high_precision_literals(pol).len(), 2);
    }

    #[test]
    fn structural_diffs() {
        let pol = LiteralPolicy::default();
        let cond = p("(if (< x 0) (- x) x)");
        let d = structural_diff(&cond, &p("(- x)"), pol);
        assert!(d.conditional_removed);
        assert_eq!(d.operation_delta, -1);

        let e = p("(+ x y)");
        assert_eq!(structural_diff(&e, &e, pol), StructuralDiff::default());

        let guarded = p("(if (< (log (+ y 1)) 1.2973149052617803e-303) (/ x (log (+ y 1))) (* x (log (+ y 1))))");
        let d = structural_diff(&guarded, &p("(/ x (log1p y))"), pol);
        assert_eq!(d.hp_literals_removed, 1);
        assert!(d.conditional_removed);
    }

    #[test]
    fn substitution_is_simultaneous() {
        let f = p("(+ x y)");
        let map = BTreeMap::from([("x".to_string(), p("y")), ("y".to_string(), p("x"))]);
        assert_eq!(f.substitute(&map).to_string(), "(+ y x)");
    }

    #[test]
    fn cond_round_trip() {
        let c = parse_cond("(or (<= x 1) (not (!= y 2)))").unwrap();
        assert_eq!(parse_cond(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn literal_from_f64_round_trips() {
        for x in [0.1, -2.5e-300, 1.7976931348623157e308, 5e-324, 0.0, 123456.0] {
            let l = Literal::from_f64(x);
            assert!(is_literal_token(l.token()), "{}", l.token());
            assert_eq!(l.to_f64().to_bits(), x.to_bits());
        }
    }
}
