use std::collections::{BTreeMap, BTreeSet};

use fpstab::composer::{compose_full, compose_mixed, compose_unary, measure_expression, DatasetRecord, MeasureFailure, Provenance, Strategy as Composition};
use fpstab::detector::kernels::Kernel;
use fpstab::detector::{run_suite_random, DetectorConfig};
use fpstab::domain::{default_domain, DomainMap, Interval};
use fpstab::eval::{accuracy, bits_between, ordinal, ErrorReport, EvalConfig};
use fpstab::expr::{parse, CmpOp, Cond, Expr, LiteralPolicy, Op};
use fpstab::harness::backend::{MockBackend, MockBehavior};
use fpstab::harness::{run_few_shot, HarnessConfig, Mode, RecordSummary, RewriteCandidate, Scorer, Verdict, VerdictLabel};
use fpstab::report::aggregate;
use fpstab::sampler::{sample, SamplePlan};
use proptest::prelude::*;

const LITERALS: &[&str] = &["1", "2", "0.5", "-7.25", "1e-300", "3.14159265358979323846", "0.1000000000000000", "6.02214076e23"];

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x", "y", "z"]).prop_map(Expr::var),
        prop::sample::select(LITERALS.to_vec()).prop_map(Expr::lit),
    ];
    leaf.prop_recursive(4, 40, 3, |inner| {
        prop_oneof![
            4 => (prop::sample::select(Op::ALL.to_vec()), prop::collection::vec(inner.clone(), 3))
                .prop_map(|(op, args)| Expr::op(op, args[..op.arity()].to_vec())),
            1 => (
                prop::sample::select(vec![CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne]),
                inner.clone(),
                inner.clone(),
                inner.clone(),
                inner,
            )
                .prop_map(|(c, a, b, t, e)| Expr::if_(Cond::cmp(c, a, b), t, e)),
        ]
    })
}

/// Expressions over `x` alone.
fn arb_unary() -> impl Strategy<Value = Expr> {
    arb_expr().prop_map(|g| {
        let to_x = BTreeMap::from([("y".to_string(), Expr::var("x")), ("z".to_string(), Expr::var("x"))]);
        let g = g.substitute(&to_x);
        if g.variables().is_empty() {
            Expr::op(Op::Mul, vec![g, Expr::var("x")])
        } else {
            g
        }
    })
}

/// Expressions with at least two variables.
fn arb_multi() -> impl Strategy<Value = Expr> {
    arb_expr().prop_map(|f| match f.variables().len() {
        0 | 1 => Expr::op(Op::Sub, vec![f, Expr::op(Op::Add, vec![Expr::var("y"), Expr::var("z")])]),
        _ => f,
    })
}

fn var_occurrences(e: &Expr, v: &str) -> usize {
    fn cond(c: &Cond, v: &str) -> usize {
        match c {
            Cond::Cmp(_, a, b) => var_occurrences(a, v) + var_occurrences(b, v),
            Cond::And(a, b) | Cond::Or(a, b) => cond(a, v) + cond(b, v),
            Cond::Not(a) => cond(a, v),
        }
    }
    match e {
        Expr::Literal(_) => 0,
        Expr::Var(n) => usize::from(n == v),
        Expr::Op(_, args) => args.iter().map(|a| var_occurrences(a, v)).sum(),
        Expr::If(c, t, f) => cond(c, v) + var_occurrences(t, v) + var_occurrences(f, v),
    }
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("not NaN", |x| !x.is_nan())
}

proptest! {
    #[test]
    fn print_parse_round_trip(e in arb_expr()) {
        let text = e.to_string();
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(back.to_string(), text);
        let policy = LiteralPolicy::default();
        prop_assert_eq!(back.high_precision_literals(policy), e.high_precision_literals(policy));
        prop_assert_eq!(back.count_operations(), e.count_operations());
    }

    #[test]
    fn substitution_adds_operations(f in arb_expr(), g in arb_expr()) {
        let map = BTreeMap::from([("x".to_string(), g.clone())]);
        let r = f.substitute(&map);
        prop_assert_eq!(r.count_operations(), f.count_operations() + var_occurrences(&f, "x") * g.count_operations());
    }

    #[test]
    fn full_composition_keeps_variables(f in arb_expr(), g in arb_expr()) {
        let vars = f.variables();
        prop_assume!(!vars.is_empty());
        let gs: BTreeMap<String, Expr> = vars.iter().map(|v| (v.clone(), g.rename_var("x", v))).collect();
        prop_assume!(gs.values().all(|g| g.variables().len() <= 1));
        let r = compose_full(&f, &gs).unwrap();
        let extra: usize = vars.iter().map(|v| var_occurrences(&f, v) * gs[v].count_operations()).sum();
        prop_assert_eq!(r.count_operations(), f.count_operations() + extra);
        let got: BTreeSet<String> = r.variables().into_iter().collect();
        let want: BTreeSet<String> = vars.iter().filter(|v| !gs[*v].variables().is_empty()).cloned().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn unary_composition_has_one_variable(f in arb_multi(), g in arb_unary()) {
        let n = f.variables().len();
        let r = compose_unary(&f, &vec![g; n], "x").unwrap();
        prop_assert_eq!(r.variables(), vec!["x".to_string()]);
    }

    #[test]
    fn mixed_composition_keeps_untouched_variables(f in arb_multi(), g in arb_unary()) {
        let vars = f.variables();
        let keep = vars.last().unwrap().clone();
        let gs: BTreeMap<String, Expr> = vars[..vars.len() - 1].iter().map(|v| (v.clone(), g.rename_var("x", v))).collect();
        let r = compose_mixed(&f, &gs).unwrap();
        prop_assert!(r.variables().contains(&keep));
        prop_assert_eq!(r.variables(), vars);
    }

    #[test]
    fn bits_symmetric_bounded_and_zero_on_identity(a in finite(), b in finite()) {
        let e = bits_between(a, b);
        prop_assert_eq!(e, bits_between(b, a));
        prop_assert!((0.0..=53.0).contains(&e));
        prop_assert_eq!(bits_between(a, a), 0.0);
        prop_assert_eq!(e == 0.0, a == b);
    }

    #[test]
    fn bits_monotone_in_distance(a in finite(), b in finite(), c in finite()) {
        let mut v = [a, b, c];
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        prop_assert!(bits_between(v[0], v[1]) <= bits_between(v[0], v[2]));
        prop_assert!(bits_between(v[1], v[2]) <= bits_between(v[0], v[2]));
    }

    #[test]
    fn ordinal_is_order_preserving(a in finite(), b in finite()) {
        prop_assert_eq!(a.partial_cmp(&b), ordinal(a).partial_cmp(&ordinal(b)));
    }

    #[test]
    fn accuracy_is_affine_and_bounded(e in 0.0..=53.0f64) {
        let a = accuracy(e).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        prop_assert!((a - 100.0 * (1.0 - e / 53.0)).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_inside_and_repeat(
        lo in -1e300..1e300f64,
        width in 0.0..1.0f64,
        lo_open in any::<bool>(),
        hi_open in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let hi = lo + width * (1e300 - lo) + 1.0;
        let Ok(iv) = Interval::new(lo, hi, lo_open, hi_open) else { return Ok(()) };
        let mut dm = DomainMap::default();
        dm.set("x", iv);
        let plan = SamplePlan::new(64, seed, 3);
        let a = sample(&dm, &plan).unwrap();
        let b = sample(&dm, &plan).unwrap();
        prop_assert_eq!(a.points.len(), 64);
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(p["x"].to_bits(), q["x"].to_bits());
            prop_assert!(iv.contains(p["x"]), "{} outside {:?}", p["x"], iv);
        }
    }
}

fn report_of(acc: f64) -> ErrorReport {
    let bits = 53.0 * (1.0 - acc / 100.0);
    ErrorReport { bits, accuracy: acc, valid: 1, failed: 0, invalid: 0, point_bits: vec![bits] }
}

struct Table(BTreeMap<String, f64>);

impl Scorer for Table {
    fn score(&self, _: &DatasetRecord, e: &Expr, _: &DomainMap) -> Result<ErrorReport, MeasureFailure> {
        Ok(report_of(self.0[&e.to_string()]))
    }
}

fn record() -> DatasetRecord {
    let e = parse("(- (+ x 1) x)").unwrap();
    let dm = default_domain(&["x"]);
    let original = measure_expression(&e, &dm, "p1", 0, &EvalConfig { sample_count: 16, ..EvalConfig::default() }).unwrap();
    DatasetRecord {
        id: "p1".into(),
        expr: e.to_string(),
        domains: dm,
        residual: None,
        strategy: Composition::Unary,
        variables: 1,
        conditional: false,
        conditional_depth: 0,
        operations: 2,
        hp_literals: 0,
        original,
        provenance: Provenance { base: "c".into(), inner: BTreeMap::new(), seed: 0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn few_shot_keeps_the_best_iteration(accs in prop::collection::vec(0u32..100, 5)) {
        let r = record();
        let exprs: Vec<String> = (0..5).map(|i| format!("(+ x {i})")).collect();
        let scorer = Table(exprs.iter().cloned().zip(accs.iter().map(|&a| a as f64)).collect());
        let replies = exprs.iter().map(|e| format!("```\n{e}\n```")).collect();
        let backend = MockBackend { name: "m".into(), behavior: MockBehavior::Script { replies } };
        let run = run_few_shot(&r, &backend, &scorer, &HarnessConfig::default());
        let max = *accs.iter().max().unwrap();
        let first = accs.iter().position(|&a| a == max).unwrap() + 1;
        prop_assert_eq!(run.history.len(), 5);
        prop_assert_eq!(run.best.accuracy(), Some(max as f64));
        prop_assert_eq!(run.best.iteration, first);
    }

    #[test]
    fn report_shares_sum_to_one_hundred(labels in prop::collection::vec((0usize..4, 0usize..3, any::<bool>()), 1..40)) {
        let all = [VerdictLabel::Improved, VerdictLabel::Worse, VerdictLabel::Unchanged, VerdictLabel::Failed];
        let cands: Vec<RewriteCandidate> = labels
            .iter()
            .enumerate()
            .map(|(i, &(l, vars, cond))| candidate(&format!("r{i}"), all[l], vars + 1, cond))
            .collect();
        let rep = aggregate(&cands, None);
        for c in &rep.cells {
            let sum = c.improved + c.worse + c.unchanged + c.failed;
            prop_assert!((sum - 100.0).abs() < 1e-9, "{c:?}");
            prop_assert!(c.n > 0);
        }
        let total: usize = rep.cells.iter().filter(|c| c.group == "variables").map(|c| c.n).sum();
        prop_assert_eq!(total, cands.len());
    }
}

fn candidate(id: &str, label: VerdictLabel, variables: usize, conditional: bool) -> RewriteCandidate {
    let acc = match label {
        VerdictLabel::Improved => Some(90.0),
        VerdictLabel::Worse => Some(10.0),
        VerdictLabel::Unchanged => Some(50.0),
        VerdictLabel::Failed => None,
    };
    RewriteCandidate {
        record_id: id.into(),
        backend: "b".into(),
        mode: Mode::ZeroShot,
        iteration: 1,
        expr: acc.map(|_| "x".into()),
        domains: None,
        residual: None,
        raw: String::new(),
        report: acc.map(report_of),
        verdict: Verdict { label, bits_delta: None, accuracy_delta: acc.map(|a| a - 50.0) },
        failure: None,
        original: RecordSummary {
            expr: "x".into(),
            strategy: Composition::Full,
            variables,
            conditional,
            operations: 3,
            hp_literals: 0,
            bits: 26.5,
            accuracy: 50.0,
        },
        diff: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn detector_best_error_never_decreases(seed in any::<u64>(), trials in 1usize..300) {
        let kernels: Vec<Kernel> = ["cancellation", "recursive_sum", "quadratic_naive", "kahan_sum"]
            .iter()
            .map(|n| Kernel::by_name(n).unwrap())
            .collect();
        let cfg = DetectorConfig { seed, warmup: 50, max_trials: Some(trials), stagnation: 3, ..DetectorConfig::default() };
        for run in run_suite_random(&kernels, &cfg) {
            prop_assert_eq!(run.trace.len(), trials);
            for w in run.trace.windows(2) {
                prop_assert!(w[0].best_final <= w[1].best_final);
            }
            prop_assert_eq!(run.trace.last().unwrap().best_final, run.state.best_final);
            // symbolic and concrete partition the variable indices
            let st = &run.state;
            let sym: BTreeSet<usize> = st.symbolic.iter().copied().collect();
            let con: BTreeSet<usize> = st.concrete.iter().copied().collect();
            prop_assert!(sym.is_disjoint(&con));
            prop_assert_eq!(sym.len() + con.len(), st.variables.len());
            prop_assert!(sym.union(&con).all(|&i| i < st.variables.len()));
            prop_assert!(!sym.is_empty());
            if st.peak.is_some() {
                prop_assert!(st.best_intermediate() >= st.best_final_intermediate);
            }
        }
    }
}
