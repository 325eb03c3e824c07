//! Control-flow flattening and its nested-switch extension.
//!
//! [`flatten`] moves every non-entry block under one dispatcher switch on an
//! outer state local. [`nested_switch`] flattens first, then splits each
//! outer case into a head computing an inner selector from the outer state
//! and an inner switch with one live case and several decoys. Decoys run
//! junk arithmetic on the outer state followed by a mutated clone of a
//! sibling block; the inner selector can never reach them.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::bogus_flow::{mutate_clone, BogusBlockRecord, Guard};
use crate::error::PassError;
use crate::ir::{BasicBlock, BinOp, BlockRole, Inst, IrFunction, Literal, Place, Terminator, Type, Value};
use crate::rng::{self, PassRng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OuterCase {
    pub label: String,
    pub literal: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "op", content = "c", rename_all = "snake_case")]
pub enum JunkOp {
    Add(i64),
    Xor(i64),
    /// Multiplier is always odd.
    Mul(i64),
    And(i64),
    Or(i64),
}

impl JunkOp {
    fn inst(self, var: &str) -> Inst {
        let (op, c) = match self {
            JunkOp::Add(c) => (BinOp::Add, c),
            JunkOp::Xor(c) => (BinOp::Xor, c),
            JunkOp::Mul(c) => (BinOp::Mul, c),
            JunkOp::And(c) => (BinOp::And, c),
            JunkOp::Or(c) => (BinOp::Or, c),
        };
        Inst::Binop { dst: Place::local(var), op, lhs: Value::local(var), rhs: Value::int(c) }
    }
}

/// Junk arithmetic on the outer state that opens a decoy inner case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JunkOpRecipe {
    pub target_var: String,
    pub ops: Vec<JunkOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decoy {
    pub inner_case: i64,
    pub recipe: JunkOpRecipe,
    pub record: BogusBlockRecord,
}

/// Inner dispatch of one outer case: `inner = (a·outer + b) mod m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InnerPlan {
    pub outer_label: String,
    pub outer_case: i64,
    pub a: i64,
    pub b: i64,
    pub m: i64,
    pub real_inner_case: i64,
    /// Label of the block holding the original content.
    pub real_label: String,
    pub decoys: Vec<Decoy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DispatchPlan {
    pub outer_var: String,
    pub inner_var: Option<String>,
    pub dispatcher: String,
    pub outer_cases: Vec<OuterCase>,
    pub inner: Vec<InnerPlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlattenReport {
    pub function: String,
    pub seed: u64,
    pub skipped: Option<String>,
    pub outer_case_count: usize,
    pub decoys_added: usize,
    pub plan: Option<DispatchPlan>,
}

impl FlattenReport {
    fn skipped(f: &IrFunction, seed: u64, why: &str) -> Self {
        FlattenReport {
            function: f.mangled_name.clone(),
            seed,
            skipped: Some(why.to_string()),
            outer_case_count: 0,
            decoys_added: 0,
            plan: None,
        }
    }
}

struct Labels(HashSet<String>);

impl Labels {
    fn of(f: &IrFunction) -> Self {
        Labels(f.blocks.iter().map(|b| b.label.clone()).collect())
    }

    fn fresh(&mut self, hint: &str) -> String {
        let mut name = hint.to_string();
        let mut n = 0usize;
        while self.0.contains(&name) {
            n += 1;
            name = format!("{hint}.{n}");
        }
        self.0.insert(name.clone());
        name
    }
}

/// `n` distinct literals in `[lo, hi)`.
fn distinct_literals(n: usize, lo: i64, hi: i64, rng: &mut PassRng) -> Vec<i64> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = rng.gen_range(lo..hi);
        if seen.insert(v) {
            out.push(v);
        }
    }
    out
}

const LITERAL_LIMIT: i64 = 1 << 31;

fn set_state(var: &str, lit: i64) -> Inst {
    Inst::Const { dst: Place::local(var), value: Literal::Int(lit) }
}

fn too_few_blocks(f: &IrFunction) -> bool {
    f.blocks.len() < 3
}

/// Flatten with the caller's RNG; `None` when the function is skipped.
fn flatten_with(f: &IrFunction, rng: &mut PassRng) -> Option<(IrFunction, DispatchPlan)> {
    if too_few_blocks(f) {
        return None;
    }
    let mut g = f.clone();
    let mut labels = Labels::of(&g);

    // A branch back into the entry would re-bind nothing but must re-run the
    // entry's instructions, so the entry becomes an ordinary case.
    let entry = g.entry_label().to_string();
    if g.blocks.iter().any(|b| b.successors().contains(&entry.as_str())) {
        let start = labels.fresh(&format!("{entry}.start"));
        g.blocks.insert(0, BasicBlock::new(start, Vec::new(), Terminator::Br(entry)));
    }

    let state = g.fresh_local("outer", Type::Int);
    let dispatcher = labels.fresh("dispatch");
    let cases: Vec<String> = g.blocks.iter().skip(1).map(|b| b.label.clone()).collect();
    let literals = distinct_literals(cases.len(), 1, LITERAL_LIMIT, rng);
    let lit_of = |l: &str| literals[cases.iter().position(|c| c == l).expect("case label")];

    let old = std::mem::take(&mut g.blocks);
    let mut blocks = Vec::with_capacity(old.len() * 2 + 1);
    let mut dispatch_block = Some(BasicBlock::new(
        dispatcher.clone(),
        Vec::new(),
        Terminator::Switch {
            scrutinee: state.clone(),
            default: dispatcher.clone(),
            cases: literals.iter().copied().zip(cases.iter().cloned()).collect(),
        },
    )
    .with_role(BlockRole::Dispatcher));

    for mut b in old {
        let mut tail = Vec::new();
        let term = b.term.take().expect("validated block has a terminator");
        let new_term = match term {
            Terminator::Br(l) => {
                b.insts.push(set_state(&state, lit_of(&l)));
                Terminator::Br(dispatcher.clone())
            }
            Terminator::Cbr { cond, then_label, else_label } => {
                let t = labels.fresh(&format!("{}.t", b.label));
                let e = labels.fresh(&format!("{}.f", b.label));
                for (label, target) in [(&t, &then_label), (&e, &else_label)] {
                    tail.push(BasicBlock::new(
                        label.clone(),
                        vec![set_state(&state, lit_of(target))],
                        Terminator::Br(dispatcher.clone()),
                    ));
                }
                Terminator::Cbr { cond, then_label: t, else_label: e }
            }
            Terminator::Switch { scrutinee, default, cases: arms } => {
                let mut hop: Vec<(String, String)> = Vec::new();
                let mut hop_for = |target: &str, tail: &mut Vec<BasicBlock>| {
                    if let Some((_, h)) = hop.iter().find(|(t, _)| t == target) {
                        return h.clone();
                    }
                    let h = labels.fresh(&format!("{}.s{}", b.label, hop.len()));
                    tail.push(BasicBlock::new(
                        h.clone(),
                        vec![set_state(&state, lit_of(target))],
                        Terminator::Br(dispatcher.clone()),
                    ));
                    hop.push((target.to_string(), h.clone()));
                    h
                };
                let arms = arms.iter().map(|(v, l)| (*v, hop_for(l, &mut tail))).collect();
                let default = hop_for(&default, &mut tail);
                Terminator::Switch { scrutinee, default, cases: arms }
            }
            ret @ Terminator::Ret(_) => ret,
        };
        b.term = Some(new_term);
        blocks.push(b);
        blocks.extend(tail);
        if let Some(d) = dispatch_block.take() {
            blocks.push(d);
        }
    }
    g.blocks = blocks;

    let plan = DispatchPlan {
        outer_var: state,
        inner_var: None,
        dispatcher,
        outer_cases: cases.into_iter().zip(literals).map(|(label, literal)| OuterCase { label, literal }).collect(),
        inner: Vec::new(),
    };
    Some((g, plan))
}

/// Classic flattening under a single dispatcher switch.
pub fn flatten(f: &IrFunction, seed: u64) -> (IrFunction, FlattenReport) {
    let mut rng = rng::rng(seed);
    match flatten_with(f, &mut rng) {
        None => (f.clone(), FlattenReport::skipped(f, seed, "skipped: too few blocks")),
        Some((g, plan)) => {
            let report = FlattenReport {
                function: f.mangled_name.clone(),
                seed,
                skipped: None,
                outer_case_count: plan.outer_cases.len(),
                decoys_added: 0,
                plan: Some(plan),
            };
            (g, report)
        }
    }
}

fn junk_recipe(var: &str, rng: &mut PassRng) -> JunkOpRecipe {
    let ops = (0..rng.gen_range(1..=4))
        .map(|_| {
            let c = rng.gen_range(1..LITERAL_LIMIT);
            match rng.gen_range(0..5) {
                0 => JunkOp::Add(c),
                1 => JunkOp::Xor(c),
                2 => JunkOp::Mul(c | 1),
                3 => JunkOp::And(c),
                _ => JunkOp::Or(c),
            }
        })
        .collect();
    JunkOpRecipe { target_var: var.to_string(), ops }
}

/// Flatten, then give every outer case an inner switch with `bogus_count`
/// decoys (default: the number of outer cases).
pub fn nested_switch(
    f: &IrFunction,
    seed: u64,
    bogus_count: Option<usize>,
) -> Result<(IrFunction, FlattenReport), PassError> {
    if bogus_count == Some(0) {
        return Err(PassError::InvalidParameter("bogus count must be at least 1".into()));
    }
    let mut rng = rng::rng(seed);
    let Some((mut g, mut plan)) = flatten_with(f, &mut rng) else {
        return Ok((f.clone(), FlattenReport::skipped(f, seed, "skipped: too few blocks")));
    };
    let k = bogus_count.unwrap_or(plan.outer_cases.len());
    let m = i64::try_from((k + 1).next_power_of_two()).expect("decoy count fits in i64");
    let inner = g.fresh_local("inner", Type::Int);
    plan.inner_var = Some(inner.clone());
    let mut labels = Labels::of(&g);

    // Clone sources: the original content of every outer case.
    let bodies: Vec<(String, Vec<Inst>)> = plan
        .outer_cases
        .iter()
        .map(|c| (c.label.clone(), g.block(&c.label).expect("case block").insts.clone()))
        .collect();

    let mut decoys_added = 0;
    for case in plan.outer_cases.clone() {
        let at = g.block_index(&case.label).expect("case block");
        let a = rng.gen_range(0..LITERAL_LIMIT) | 1;
        let b = rng.gen_range(0..LITERAL_LIMIT);
        let real = a.wrapping_mul(case.literal).wrapping_add(b) & (m - 1);
        let mut pool: Vec<i64> = (0..m).filter(|&v| v != real).collect();
        pool.shuffle(&mut rng);
        pool.truncate(k);

        let real_label = labels.fresh(&format!("{}.in", case.label));
        let head = &mut g.blocks[at];
        let body = BasicBlock::new(real_label.clone(), std::mem::take(&mut head.insts), head.term.take().expect("term"));
        head.insts = vec![
            Inst::Binop { dst: Place::local(&inner), op: BinOp::Mul, lhs: Value::local(&plan.outer_var), rhs: Value::int(a) },
            Inst::Binop { dst: Place::local(&inner), op: BinOp::Add, lhs: Value::local(&inner), rhs: Value::int(b) },
            Inst::Binop { dst: Place::local(&inner), op: BinOp::And, lhs: Value::local(&inner), rhs: Value::int(m - 1) },
        ];

        let mut arms = vec![(real, real_label.clone())];
        let mut new_blocks = vec![body];
        let mut decoys = Vec::with_capacity(k);
        for (i, lit) in pool.into_iter().enumerate() {
            let label = labels.fresh(&format!("{}.d{i}", case.label));
            let recipe = junk_recipe(&plan.outer_var, &mut rng);
            let (src_label, src_insts) = bodies.choose(&mut rng).expect("at least two cases");
            let (clone, mutations) = mutate_clone(src_insts, &g, &mut rng);
            let mut insts: Vec<Inst> = recipe.ops.iter().map(|op| op.inst(&plan.outer_var)).collect();
            insts.extend(clone);
            new_blocks.push(
                BasicBlock::new(label.clone(), insts, Terminator::Br(plan.dispatcher.clone())).with_role(BlockRole::Bogus),
            );
            arms.push((lit, label.clone()));
            decoys.push(Decoy {
                inner_case: lit,
                recipe,
                record: BogusBlockRecord {
                    label,
                    cloned_from: src_label.clone(),
                    mutations,
                    guard: Guard::InnerCase { outer_case: case.literal, inner_case: lit },
                },
            });
        }
        arms.shuffle(&mut rng);
        let head = &mut g.blocks[at];
        head.term = Some(Terminator::Switch { scrutinee: inner.clone(), default: plan.dispatcher.clone(), cases: arms });
        decoys_added += decoys.len();
        plan.inner.push(InnerPlan {
            outer_label: case.label.clone(),
            outer_case: case.literal,
            a,
            b,
            m,
            real_inner_case: real,
            real_label,
            decoys,
        });
        let mut at = at + 1;
        for nb in new_blocks {
            g.blocks.insert(at, nb);
            at += 1;
        }
    }

    let report = FlattenReport {
        function: f.mangled_name.clone(),
        seed,
        skipped: None,
        outer_case_count: plan.outer_cases.len(),
        decoys_added,
        plan: Some(plan),
    };
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{build_cfg, EdgeKind};
    use crate::interp::{run_with, RunOptions, Status};
    use crate::ir::{parse_module, print_module, validate, IrModule};

    const SUM: &str = "func @f(%n: int) -> int { local %s: int\n local %c: bool\n\
        entry: %s = 0 br head\n\
        head: %c = cmp gt %n, 0 cbr %c, body, done\n\
        body: %s = add %s, %n %n = sub %n, 1 br head\n\
        done: ret %s }";

    fn func(text: &str) -> IrFunction {
        parse_module(text).unwrap().functions.remove(0)
    }

    fn module(f: IrFunction) -> IrModule {
        let m = IrModule { functions: vec![f], ..Default::default() };
        assert!(validate(&m).is_empty(), "{:?}\n{}", validate(&m), print_module(&m));
        parse_module(&print_module(&m)).unwrap()
    }

    fn sum(m: &IrModule, n: i64) -> ExecutionSummary {
        let r = run_with(m, "f", &[n], RunOptions::traced(1_000_000)).unwrap();
        ExecutionSummary { status: r.status, blocks: r.trace.into_iter().map(|v| v.block).collect() }
    }

    struct ExecutionSummary {
        status: Status,
        blocks: Vec<String>,
    }

    #[test]
    fn two_block_function_is_skipped() {
        let f = func("func @f() -> int { entry: br b b: ret 1 }");
        let (g, report) = flatten(&f, 1);
        assert_eq!(g, f);
        assert_eq!(report.skipped.as_deref(), Some("skipped: too few blocks"));
        let (g, report) = nested_switch(&f, 1, None).unwrap();
        assert_eq!(g, f);
        assert!(report.skipped.is_some());
    }

    #[test]
    fn flatten_shape() {
        let f = func(SUM);
        let (g, report) = flatten(&f, 3);
        let plan = report.plan.unwrap();
        assert_eq!(plan.outer_cases.len(), 3);
        let cfg = build_cfg(&g);
        let d = cfg.node(&plan.dispatcher).unwrap();
        assert_eq!(cfg.nodes[d].role, BlockRole::Dispatcher);
        let mut case_targets: Vec<String> = cfg
            .edges
            .iter()
            .filter(|e| e.from == d && matches!(e.kind, EdgeKind::SwitchCase(_)))
            .map(|e| cfg.nodes[e.to].label.clone())
            .collect();
        case_targets.sort();
        assert_eq!(case_targets, vec!["body", "done", "head"]);
        // No original block branches directly to another original block.
        for b in &g.blocks {
            for s in b.successors() {
                assert!(!["head", "body", "done"].contains(&s) || b.label == plan.dispatcher, "{} -> {s}", b.label);
            }
        }
        let lits: HashSet<i64> = plan.outer_cases.iter().map(|c| c.literal).collect();
        assert_eq!(lits.len(), 3);
        assert!(lits.iter().all(|&l| (1..LITERAL_LIMIT).contains(&l)));
        let orig = module(f);
        let g = module(g);
        for n in [0, 1, 10] {
            assert_eq!(sum(&g, n).status, sum(&orig, n).status);
        }
    }

    #[test]
    fn entry_loop_is_split() {
        let f = func(
            "func @f(%n: int) -> int { local %c: bool\n\
             top: %n = sub %n, 1 %c = cmp gt %n, 0 cbr %c, top, out out: br fin fin: ret %n }",
        );
        let (g, report) = flatten(&f, 0);
        assert!(report.plan.unwrap().outer_cases.iter().any(|c| c.label == "top"));
        assert_eq!(g.blocks[0].label, "top.start");
        let (orig, g) = (module(f), module(g));
        for n in [-3, 0, 4] {
            assert_eq!(sum(&g, n).status, sum(&orig, n).status);
        }
    }

    #[test]
    fn switch_terminators_flatten() {
        let f = func("func @f(%x: int) -> int { e: switch %x [1 -> a 2 -> b 3 -> a] default c a: ret 10 b: br c c: ret 30 }");
        let (g, _) = flatten(&f, 11);
        let (orig, g) = (module(f), module(g));
        for x in 0..5 {
            assert_eq!(sum(&g, x).status, sum(&orig, x).status);
        }
    }

    #[test]
    fn nested_shape_and_dead_decoys() {
        let f = func(SUM);
        for seed in 0..5 {
            let (g, report) = nested_switch(&f, seed, None).unwrap();
            let plan = report.plan.clone().unwrap();
            assert_eq!(report.decoys_added, 9);
            for ip in &plan.inner {
                assert_eq!(ip.decoys.len(), 3);
                assert_eq!(ip.m, 4);
                assert_eq!(ip.real_inner_case, ip.a.wrapping_mul(ip.outer_case).wrapping_add(ip.b).rem_euclid(ip.m));
                assert!(ip.decoys.iter().all(|d| d.inner_case != ip.real_inner_case && !d.recipe.ops.is_empty()));
                let head = g.block(&ip.outer_label).unwrap();
                let Terminator::Switch { cases, .. } = head.terminator() else { panic!("head lacks inner switch") };
                assert_eq!(cases.len(), 4);
                assert!(cases.contains(&(ip.real_inner_case, ip.real_label.clone())));
            }
            let (orig, g) = (module(f.clone()), module(g));
            let bogus: HashSet<&str> =
                g.functions[0].blocks.iter().filter(|b| b.role == BlockRole::Bogus).map(|b| b.label.as_str()).collect();
            assert_eq!(bogus.len(), 9);
            for n in [0, 1, 7] {
                let (want, got) = (sum(&orig, n), sum(&g, n));
                assert_eq!(got.status, want.status);
                assert!(got.blocks.iter().all(|b| !bogus.contains(b.as_str())));
            }
        }
    }

    #[test]
    fn bogus_count_floor() {
        let f = func(SUM);
        let (_, report) = nested_switch(&f, 2, Some(1)).unwrap();
        let plan = report.plan.unwrap();
        assert!(plan.inner.iter().all(|ip| ip.decoys.len() == 1 && ip.m == 2));
        assert!(matches!(nested_switch(&f, 2, Some(0)), Err(PassError::InvalidParameter(_))));
    }

    #[test]
    fn complexity_grows() {
        let f = func(SUM);
        let (p1, _) = flatten(&f, 5);
        let (p3, _) = nested_switch(&f, 5, None).unwrap();
        let edges = |f: &IrFunction| build_cfg(f).edges.len();
        assert!(p3.blocks.len() > p1.blocks.len() && p1.blocks.len() > f.blocks.len());
        assert!(edges(&p3) > edges(&p1) && edges(&p1) > edges(&f));
    }

    #[test]
    fn nested_starts_from_flatten() {
        let f = func(SUM);
        let (p1, r1) = flatten(&f, 9);
        let (_, r3) = nested_switch(&f, 9, None).unwrap();
        let (p1_plan, p3_plan) = (r1.plan.unwrap(), r3.plan.unwrap());
        assert_eq!(p1_plan.outer_cases, p3_plan.outer_cases);
        assert!(p1.block(&p1_plan.dispatcher).is_some());
    }

    #[test]
    fn deterministic() {
        let f = func(SUM);
        assert_eq!(nested_switch(&f, 4, None).unwrap(), nested_switch(&f, 4, None).unwrap());
        assert_ne!(flatten(&f, 4).0, flatten(&f, 5).0);
    }
}
