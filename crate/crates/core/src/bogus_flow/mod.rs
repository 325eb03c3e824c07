//! Bogus control flow and in-degree obfuscation.
//!
//! [`bogus_control_flow`] puts a guard in front of selected real blocks. The
//! guard evaluates an always-true opaque predicate and branches to the real
//! block or to a mutated clone of it; the clone jumps back to the real block.
//!
//! [`indegree_obfuscate`] then adds never-taken edges into every bogus block
//! until each one has more predecessors than any non-entry real block, which
//! defeats the "low in-degree means bogus" heuristic.

pub mod mutate;
pub mod opaque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::cfg::{build_cfg, in_degree_gap, InDegreeGap};
use crate::error::PassError;
use crate::ir::{BasicBlock, BlockRole, IrFunction, Terminator};
use crate::rng::{self, PassRng};

pub use mutate::{mutate_clone, Mutation};
pub use opaque::{emit_zero_selector, make_opaque_predicate, predicate_sources, OpaquePredicate, PredicateFamily, SEVEN_SQUARE_MASK_BITS};

/// What keeps a bogus block from executing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guard {
    Opaque { family: PredicateFamily, truth: bool },
    /// A decoy case of a nested switch; the inner selector never matches it.
    InnerCase { outer_case: i64, inner_case: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BogusBlockRecord {
    pub label: String,
    pub cloned_from: String,
    pub mutations: Vec<Mutation>,
    pub guard: Guard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcfReport {
    pub function: String,
    pub seed: u64,
    pub prob: f64,
    pub records: Vec<BogusBlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndegReport {
    pub function: String,
    pub seed: u64,
    pub margin: usize,
    pub skipped: Option<String>,
    /// Bogus blocks created because the input had none.
    pub injected: Vec<BogusBlockRecord>,
    pub before: InDegreeGap,
    pub after: InDegreeGap,
    pub edges_added: usize,
}

/// Guard the block `label`: every edge into it is redirected to a new guard
/// block, which branches on an always-true predicate to `label` or to a
/// mutated clone that falls back into `label`.
fn insert_bogus(f: &mut IrFunction, label: &str, rng: &mut PassRng) -> BogusBlockRecord {
    let guard = f.fresh_label(&format!("{label}.pre"));
    let mut alt = f.fresh_label(&format!("{label}.alt"));
    if alt == guard {
        alt = format!("{alt}.x");
    }
    for b in &mut f.blocks {
        if let Some(t) = &mut b.term {
            t.retarget(label, &guard);
        }
    }
    let pred = make_opaque_predicate(rng.gen(), true);
    let sources = predicate_sources(f, pred.family.arity(), rng);
    let (insts, p) = pred.instantiate(f, &sources);
    let at = f.block_index(label).expect("guarded block exists");
    let (clone, mutations) = mutate_clone(&f.blocks[at].insts, f, rng);
    let guard_block = BasicBlock::new(
        guard,
        insts,
        Terminator::Cbr { cond: p, then_label: label.to_string(), else_label: alt.clone() },
    );
    let clone_block = BasicBlock::new(alt.clone(), clone, Terminator::Br(label.to_string())).with_role(BlockRole::Bogus);
    f.blocks.insert(at + 1, clone_block);
    f.blocks.insert(at, guard_block);
    BogusBlockRecord {
        label: alt,
        cloned_from: label.to_string(),
        mutations,
        guard: Guard::Opaque { family: pred.family, truth: pred.truth },
    }
}

fn guardable(f: &IrFunction) -> Vec<String> {
    f.blocks.iter().skip(1).filter(|b| b.role == BlockRole::Real).map(|b| b.label.clone()).collect()
}

/// Add bogus flow to each non-entry real block with probability `prob`.
pub fn bogus_control_flow(f: &IrFunction, seed: u64, prob: f64) -> Result<(IrFunction, BcfReport), PassError> {
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(PassError::InvalidParameter(format!("prob must lie in (0, 1], got {prob}")));
    }
    let mut rng = rng::rng(seed);
    let mut out = f.clone();
    let mut records = Vec::new();
    for label in guardable(f) {
        if rng.gen_bool(prob) {
            records.push(insert_bogus(&mut out, &label, &mut rng));
        }
    }
    let report = BcfReport { function: f.mangled_name.clone(), seed, prob, records };
    Ok((out, report))
}

/// Raise the in-degree of every bogus block to at least `D + margin`, where
/// `D` is the largest in-degree of a non-entry real block.
pub fn indegree_obfuscate(f: &IrFunction, seed: u64, margin: usize) -> Result<(IrFunction, IndegReport), PassError> {
    if margin < 1 {
        return Err(PassError::InvalidParameter("indeg margin must be at least 1".into()));
    }
    let mut rng = rng::rng(seed);
    let mut out = f.clone();
    let mut report = IndegReport {
        function: f.mangled_name.clone(),
        seed,
        margin,
        skipped: None,
        injected: Vec::new(),
        before: in_degree_gap(&build_cfg(f)),
        after: in_degree_gap(&build_cfg(f)),
        edges_added: 0,
    };

    if !out.blocks.iter().any(|b| b.role == BlockRole::Bogus) {
        let candidates = guardable(&out);
        let Some(label) = candidates.choose(&mut rng).cloned() else {
            report.skipped = Some("skipped: no non-entry real block".into());
            return Ok((out, report));
        };
        report.injected.push(insert_bogus(&mut out, &label, &mut rng));
    }

    let cfg = build_cfg(&out);
    let gap = in_degree_gap(&cfg);
    let target = gap.max_real_indeg.max(1) + margin;
    let mut demand = Vec::new();
    for (i, node) in cfg.nodes.iter().enumerate() {
        if node.role == BlockRole::Bogus {
            demand.extend(std::iter::repeat(node.label.clone()).take(target.saturating_sub(cfg.indeg[i])));
        }
    }
    report.edges_added = demand.len();

    if !demand.is_empty() {
        let real: Vec<&BasicBlock> = out.blocks.iter().filter(|b| b.role == BlockRole::Real).collect();
        let simple: Vec<String> = real
            .iter()
            .filter(|b| matches!(b.terminator(), Terminator::Br(_) | Terminator::Cbr { .. }))
            .map(|b| b.label.clone())
            .collect();
        let mut sources = if simple.is_empty() { real.iter().map(|b| b.label.clone()).collect() } else { simple };
        sources.shuffle(&mut rng);
        let mut assigned: Vec<Vec<String>> = vec![Vec::new(); sources.len()];
        for (i, target) in demand.into_iter().enumerate() {
            assigned[i % sources.len()].push(target);
        }
        for (source, targets) in sources.iter().zip(assigned) {
            if !targets.is_empty() {
                add_false_edges(&mut out, source, targets, &mut rng);
            }
        }
    }

    report.after = in_degree_gap(&build_cfg(&out));
    debug_assert!(report.after.bogus_dominates());
    Ok((out, report))
}

/// Distinct never-matching case literals for a zero selector.
fn dead_literals(n: usize, rng: &mut PassRng) -> Vec<i64> {
    let mut lits = Vec::with_capacity(n);
    while lits.len() < n {
        let v = rng.gen_range(2..1i64 << 31);
        if !lits.contains(&v) {
            lits.push(v);
        }
    }
    lits
}

/// Give `source` one never-taken edge to each label in `targets`.
fn add_false_edges(f: &mut IrFunction, source: &str, mut targets: Vec<String>, rng: &mut PassRng) {
    let at = f.block_index(source).expect("source block exists");
    let term = f.blocks[at].terminator().clone();
    match term {
        Terminator::Br(next) if targets.len() == 1 => {
            let pred = make_opaque_predicate(rng.gen(), true);
            let sources = predicate_sources(f, pred.family.arity(), rng);
            let (insts, p) = pred.instantiate(f, &sources);
            let b = &mut f.blocks[at];
            b.insts.extend(insts);
            b.term = Some(Terminator::Cbr { cond: p, then_label: next, else_label: targets.remove(0) });
        }
        Terminator::Br(next) => {
            let (insts, sel) = emit_zero_selector(f, predicate_sources(f, 1, rng).remove(0));
            let b = &mut f.blocks[at];
            b.insts.extend(insts);
            b.term = Some(selector_switch(sel, next, targets, rng));
        }
        other => {
            let cont = f.fresh_label(&format!("{source}.cont"));
            let (insts, sel) = emit_zero_selector(f, predicate_sources(f, 1, rng).remove(0));
            let b = &mut f.blocks[at];
            b.insts.extend(insts);
            b.term = Some(selector_switch(sel, cont.clone(), targets, rng));
            f.blocks.insert(at + 1, BasicBlock::new(cont, Vec::new(), other));
        }
    }
}

/// `switch sel [0 -> live, k -> targets...] default <last target>`.
fn selector_switch(sel: String, live: String, mut targets: Vec<String>, rng: &mut PassRng) -> Terminator {
    let default = targets.pop().expect("at least one target");
    let lits = dead_literals(targets.len(), rng);
    let mut cases = vec![(0, live)];
    cases.extend(lits.into_iter().zip(targets));
    cases.shuffle(rng);
    Terminator::Switch { scrutinee: sel, default, cases }
}
