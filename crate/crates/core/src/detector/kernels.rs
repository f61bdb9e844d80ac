//! Built-in numerical kernels. Each body is written once against [`Arith`]
//! and instantiated for binary64 and for the oracle.

use rug::Float;

use crate::eval::{Arith, Binary64, MultiPrecision};

/// Execution context: collects named intermediate values and control-flow
/// decisions. The oracle run replays the binary64 run's decisions.
pub struct Ctx<'a, A: Arith> {
    pub a: &'a A,
    probes: Vec<(String, A::Value)>,
    decisions: Vec<bool>,
    replay: Option<&'a [bool]>,
}

impl<'a, A: Arith> Ctx<'a, A> {
    pub fn new(a: &'a A, replay: Option<&'a [bool]>) -> Self {
        Ctx { a, probes: Vec::new(), decisions: Vec::new(), replay }
    }

    pub fn probe(&mut self, name: impl Into<String>, v: &A::Value) {
        self.probes.push((name.into(), v.clone()));
    }

    /// A branch condition. Evaluated only when not replaying.
    pub fn decide(&mut self, cond: impl FnOnce(&A) -> bool) -> bool {
        let taken = match self.replay {
            Some(r) => r.get(self.decisions.len()).copied().unwrap_or(false),
            None => cond(self.a),
        };
        self.decisions.push(taken);
        taken
    }

    pub fn into_parts(self) -> (Vec<(String, A::Value)>, Vec<bool>) {
        (self.probes, self.decisions)
    }

    fn c(&self, x: f64) -> A::Value {
        self.a.from_f64(x)
    }
}

pub type Body<A> = for<'a, 'b> fn(&'b mut Ctx<'a, A>, &'b [<A as Arith>::Value]) -> Vec<<A as Arith>::Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: &'static str,
    /// 0 for a scalar.
    pub len: usize,
}

impl Param {
    fn scalar(name: &'static str) -> Param {
        Param { name, len: 0 }
    }

    fn vector(name: &'static str, len: usize) -> Param {
        Param { name, len }
    }
}

#[derive(Clone)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<Param>,
    /// Pseudocode shown to candidate generators.
    pub source: String,
    pub body_fp: Body<Binary64>,
    pub body_hp: Body<MultiPrecision>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("name", &self.name).field("params", &self.params).finish()
    }
}

impl Kernel {
    /// Flattened input names, `v[i]` for vector elements.
    pub fn variables(&self) -> Vec<String> {
        self.params
            .iter()
            .flat_map(|p| {
                if p.len == 0 {
                    vec![p.name.to_string()]
                } else {
                    (0..p.len).map(|i| format!("{}[{i}]", p.name)).collect()
                }
            })
            .collect()
    }

    pub fn arity(&self) -> usize {
        self.params.iter().map(|p| p.len.max(1)).sum()
    }

    pub fn recursive_sum(n: usize) -> Kernel {
        assert!(n >= 2);
        Kernel {
            name: if n == 8 { "recursive_sum".into() } else { format!("recursive_sum{n}") },
            params: vec![Param::vector("x", n)],
            source: "s = x[0]\nfor i in 1..n: s = s + x[i]    # probe s_(i+1) before the last step\nreturn s".into(),
            body_fp: recursive_sum::<Binary64>,
            body_hp: recursive_sum::<MultiPrecision>,
        }
    }

    pub fn kahan_sum(n: usize) -> Kernel {
        assert!(n >= 2);
        Kernel {
            name: if n == 8 { "kahan_sum".into() } else { format!("kahan_sum{n}") },
            params: vec![Param::vector("x", n)],
            source: "sum = 0; c = 0\nfor i in 0..n:\n  y = x[i] - c\n  t = sum + y\n  c = (t - sum) - y\n  sum = t\nreturn sum".into(),
            body_fp: kahan_sum::<Binary64>,
            body_hp: kahan_sum::<MultiPrecision>,
        }
    }

    pub fn by_name(name: &str) -> Option<Kernel> {
        suite().into_iter().find(|k| k.name == name)
    }
}

macro_rules! kernel {
    ($name:expr, [$($param:expr),*], $src:expr, $f:ident) => {
        Kernel {
            name: $name.into(),
            params: vec![$($param),*],
            source: $src.into(),
            body_fp: $f::<Binary64>,
            body_hp: $f::<MultiPrecision>,
        }
    };
}

/// The built-in kernel suite.
pub fn suite() -> Vec<Kernel> {
    vec![
        Kernel::recursive_sum(8),
        Kernel::kahan_sum(8),
        kernel!("dot", [Param::vector("x", 8), Param::vector("y", 8)], "s = x[0]*y[0]\nfor i in 1..8: s = s + x[i]*y[i]\nreturn s", dot),
        kernel!(
            "matvec",
            [Param::vector("a", 9), Param::vector("v", 3)],
            "for r in 0..3: out[r] = a[3r]*v[0] + a[3r+1]*v[1] + a[3r+2]*v[2]\nreturn out",
            matvec
        ),
        kernel!(
            "conv1d",
            [Param::vector("s", 8), Param::vector("h", 3)],
            "for i in 0..6: out[i] = s[i]*h[0] + s[i+1]*h[1] + s[i+2]*h[2]\nreturn out",
            conv1d
        ),
        kernel!("mean", [Param::vector("x", 8)], "return (x[0] + ... + x[7]) / 8", mean),
        kernel!(
            "variance",
            [Param::vector("x", 8)],
            "m = (x[0] + ... + x[7]) / 8\nss = sum over i of (x[i] - m)^2\nreturn ss / 8",
            variance
        ),
        kernel!(
            "weighted_mean",
            [Param::vector("x", 4), Param::vector("w", 4)],
            "sw = sum w[i]\nswx = sum w[i]*x[i]\nreturn swx / sw",
            weighted_mean
        ),
        kernel!(
            "weighted_variance",
            [Param::vector("x", 4), Param::vector("w", 4)],
            "sw = sum w[i]\nm = (sum w[i]*x[i]) / sw\nreturn (sum w[i]*(x[i] - m)^2) / sw",
            weighted_variance
        ),
        kernel!(
            "quadratic_naive",
            [Param::scalar("a"), Param::scalar("b"), Param::scalar("c")],
            "d = b*b - 4*a*c\nreturn (-b + sqrt(d)) / (2*a)",
            quadratic_naive
        ),
        kernel!(
            "quadratic_stable",
            [Param::scalar("a"), Param::scalar("b"), Param::scalar("c")],
            "d = b*b - 4*a*c\nif b >= 0: return 2*c / (-b - sqrt(d))\nelse: return (-b + sqrt(d)) / (2*a)",
            quadratic_stable
        ),
        kernel!("cancellation", [Param::scalar("x"), Param::scalar("y")], "return (x + y) - x", cancellation),
    ]
}

fn running_sum<A: Arith>(cx: &mut Ctx<'_, A>, terms: &[A::Value], label: &str) -> A::Value {
    let a = cx.a;
    let mut s = terms[0].clone();
    for (i, t) in terms.iter().enumerate().skip(1) {
        s = a.add(&s, t);
        if i + 1 < terms.len() {
            cx.probe(format!("{label}{}", i + 1), &s);
        }
    }
    s
}

fn recursive_sum<A: Arith>(cx: &mut Ctx<'_, A>, x: &[A::Value]) -> Vec<A::Value> {
    vec![running_sum(cx, x, "s")]
}

fn kahan_sum<A: Arith>(cx: &mut Ctx<'_, A>, x: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let mut sum = cx.c(0.0);
    let mut c = cx.c(0.0);
    for (i, v) in x.iter().enumerate() {
        let y = a.sub(v, &c);
        let t = a.add(&sum, &y);
        c = a.sub(&a.sub(&t, &sum), &y);
        sum = t;
        if i >= 1 && i + 1 < x.len() {
            cx.probe(format!("s{}", i + 1), &sum);
        }
    }
    vec![sum]
}

fn products<A: Arith>(a: &A, x: &[A::Value], y: &[A::Value]) -> Vec<A::Value> {
    x.iter().zip(y).map(|(p, q)| a.mul(p, q)).collect()
}

fn dot<A: Arith>(cx: &mut Ctx<'_, A>, v: &[A::Value]) -> Vec<A::Value> {
    let (x, y) = v.split_at(8);
    let terms = products(cx.a, x, y);
    vec![running_sum(cx, &terms, "s")]
}

fn matvec<A: Arith>(cx: &mut Ctx<'_, A>, inp: &[A::Value]) -> Vec<A::Value> {
    let (m, v) = inp.split_at(9);
    (0..3)
        .map(|r| {
            let terms = products(cx.a, &m[3 * r..3 * r + 3], v);
            running_sum(cx, &terms, &format!("row{r}.s"))
        })
        .collect()
}

fn conv1d<A: Arith>(cx: &mut Ctx<'_, A>, inp: &[A::Value]) -> Vec<A::Value> {
    let (s, h) = inp.split_at(8);
    (0..6)
        .map(|i| {
            let terms = products(cx.a, &s[i..i + 3], h);
            running_sum(cx, &terms, &format!("out{i}.s"))
        })
        .collect()
}

fn mean_of<A: Arith>(cx: &mut Ctx<'_, A>, x: &[A::Value]) -> A::Value {
    let s = running_sum(cx, x, "s");
    cx.probe("sum", &s);
    let n = cx.c(x.len() as f64);
    cx.a.div(&s, &n)
}

fn mean<A: Arith>(cx: &mut Ctx<'_, A>, x: &[A::Value]) -> Vec<A::Value> {
    vec![mean_of(cx, x)]
}

fn variance<A: Arith>(cx: &mut Ctx<'_, A>, x: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let m = mean_of(cx, x);
    cx.probe("mean", &m);
    let sq: Vec<A::Value> = x
        .iter()
        .map(|v| {
            let d = a.sub(v, &m);
            a.mul(&d, &d)
        })
        .collect();
    let ss = running_sum(cx, &sq, "ss");
    cx.probe("ss", &ss);
    vec![a.div(&ss, &cx.c(x.len() as f64))]
}

fn weighted_mean_of<A: Arith>(cx: &mut Ctx<'_, A>, inp: &[A::Value]) -> (A::Value, A::Value) {
    let a = cx.a;
    let (x, w) = inp.split_at(inp.len() / 2);
    let sw = running_sum(cx, w, "sw");
    cx.probe("sw", &sw);
    let terms = products(a, w, x);
    let swx = running_sum(cx, &terms, "swx");
    cx.probe("swx", &swx);
    (a.div(&swx, &sw), sw)
}

fn weighted_mean<A: Arith>(cx: &mut Ctx<'_, A>, inp: &[A::Value]) -> Vec<A::Value> {
    vec![weighted_mean_of(cx, inp).0]
}

fn weighted_variance<A: Arith>(cx: &mut Ctx<'_, A>, inp: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let (m, sw) = weighted_mean_of(cx, inp);
    cx.probe("mean", &m);
    let (x, w) = inp.split_at(inp.len() / 2);
    let terms: Vec<A::Value> = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| {
            let d = a.sub(xi, &m);
            a.mul(wi, &a.mul(&d, &d))
        })
        .collect();
    let ss = running_sum(cx, &terms, "ss");
    cx.probe("ss", &ss);
    vec![a.div(&ss, &sw)]
}

fn discriminant<A: Arith>(cx: &mut Ctx<'_, A>, v: &[A::Value]) -> A::Value {
    let a = cx.a;
    let (qa, qb, qc) = (&v[0], &v[1], &v[2]);
    let four_ac = a.mul(&a.mul(&cx.c(4.0), qa), qc);
    let d = a.sub(&a.mul(qb, qb), &four_ac);
    cx.probe("disc", &d);
    let r = a.sqrt(&d);
    cx.probe("sqrt", &r);
    r
}

fn quadratic_naive<A: Arith>(cx: &mut Ctx<'_, A>, v: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let r = discriminant(cx, v);
    let num = a.add(&a.neg(&v[1]), &r);
    cx.probe("num", &num);
    vec![a.div(&num, &a.mul(&cx.c(2.0), &v[0]))]
}

fn quadratic_stable<A: Arith>(cx: &mut Ctx<'_, A>, v: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let r = discriminant(cx, v);
    let zero = cx.c(0.0);
    let b = v[1].clone();
    if cx.decide(|a| a.compare(&b, &zero).is_some_and(|o| o.is_ge())) {
        let den = a.sub(&a.neg(&v[1]), &r);
        cx.probe("den", &den);
        vec![a.div(&a.mul(&cx.c(2.0), &v[2]), &den)]
    } else {
        let num = a.add(&a.neg(&v[1]), &r);
        cx.probe("num", &num);
        vec![a.div(&num, &a.mul(&cx.c(2.0), &v[0]))]
    }
}

fn cancellation<A: Arith>(cx: &mut Ctx<'_, A>, v: &[A::Value]) -> Vec<A::Value> {
    let a = cx.a;
    let s = a.add(&v[0], &v[1]);
    cx.probe("x+y", &s);
    vec![a.sub(&s, &v[0])]
}

/// Runs a kernel body under the oracle, replaying `decisions`.
pub(crate) fn run_hp(k: &Kernel, inputs: &[f64], prec: u32, decisions: &[bool]) -> (Vec<Float>, Vec<(String, Float)>) {
    let mp = MultiPrecision::new(prec);
    let vals: Vec<Float> = inputs.iter().map(|x| mp.from_f64(*x)).collect();
    let mut cx = Ctx::new(&mp, Some(decisions));
    let out = (k.body_hp)(&mut cx, &vals);
    (out, cx.into_parts().0)
}

pub(crate) fn run_fp(k: &Kernel, inputs: &[f64]) -> (Vec<f64>, Vec<(String, f64)>, Vec<bool>) {
    let mut cx = Ctx::new(&Binary64, None);
    let out = (k.body_fp)(&mut cx, inputs);
    let (probes, decisions) = cx.into_parts();
    (out, probes, decisions)
}
