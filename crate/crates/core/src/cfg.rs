//! Per-function control-flow graphs and in-degree statistics.

use serde::Serialize;

use crate::ir::{BlockRole, IrFunction, Terminator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Br,
    CbrThen,
    CbrElse,
    SwitchCase(i64),
    SwitchDefault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CfgNode {
    pub label: String,
    pub role: BlockRole,
}

/// Nodes are in block order; node 0 is the entry. Parallel edges (two
/// switch cases to one target) are kept and counted separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cfg {
    pub nodes: Vec<CfgNode>,
    pub edges: Vec<Edge>,
    pub indeg: Vec<usize>,
    pub outdeg: Vec<usize>,
}

impl Cfg {
    pub fn node(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn indeg_of(&self, label: &str) -> Option<usize> {
        self.node(label).map(|i| self.indeg[i])
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.from == node).map(|e| e.to)
    }
}

pub fn build_cfg(f: &IrFunction) -> Cfg {
    let nodes: Vec<CfgNode> =
        f.blocks.iter().map(|b| CfgNode { label: b.label.clone(), role: b.role }).collect();
    let index = |label: &str| {
        f.block_index(label)
            .unwrap_or_else(|| panic!("label `{label}` missing from `@{}`", f.mangled_name))
    };
    let mut edges = Vec::new();
    for (from, b) in f.blocks.iter().enumerate() {
        let Some(term) = &b.term else { continue };
        match term {
            Terminator::Br(l) => edges.push(Edge { from, to: index(l), kind: EdgeKind::Br }),
            Terminator::Cbr { then_label, else_label, .. } => {
                edges.push(Edge { from, to: index(then_label), kind: EdgeKind::CbrThen });
                edges.push(Edge { from, to: index(else_label), kind: EdgeKind::CbrElse });
            }
            Terminator::Switch { default, cases, .. } => {
                for (v, l) in cases {
                    edges.push(Edge { from, to: index(l), kind: EdgeKind::SwitchCase(*v) });
                }
                edges.push(Edge { from, to: index(default), kind: EdgeKind::SwitchDefault });
            }
            Terminator::Ret(_) => {}
        }
    }
    let mut indeg = vec![0; nodes.len()];
    let mut outdeg = vec![0; nodes.len()];
    for e in &edges {
        indeg[e.to] += 1;
        outdeg[e.from] += 1;
    }
    Cfg { nodes, edges, indeg, outdeg }
}

/// The statistic an in-degree attacker relies on: bogus blocks usually have
/// fewer predecessors than real ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InDegreeGap {
    /// Largest in-degree over real blocks other than the entry (0 if none).
    pub max_real_indeg: usize,
    /// Smallest in-degree over bogus blocks; `None` when there are none.
    pub min_bogus_indeg: Option<usize>,
}

impl InDegreeGap {
    /// Whether every bogus block has strictly more predecessors than any
    /// non-entry real block.
    pub fn bogus_dominates(&self) -> bool {
        self.min_bogus_indeg.is_some_and(|b| b > self.max_real_indeg)
    }
}

pub fn in_degree_gap(cfg: &Cfg) -> InDegreeGap {
    let max_real_indeg = cfg
        .nodes
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, n)| n.role == BlockRole::Real)
        .map(|(i, _)| cfg.indeg[i])
        .max()
        .unwrap_or(0);
    let min_bogus_indeg = cfg
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role == BlockRole::Bogus)
        .map(|(i, _)| cfg.indeg[i])
        .min();
    InDegreeGap { max_real_indeg, min_bogus_indeg }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn cfg_of(text: &str) -> Cfg {
        build_cfg(&parse_module(text).unwrap().functions[0])
    }

    #[test]
    fn straight_line() {
        let cfg = cfg_of("func @f() -> void { A: br B1 B1: br C C: ret }");
        let pairs: Vec<_> = cfg.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
        assert_eq!(cfg.indeg_of("B1"), Some(1));
    }

    #[test]
    fn single_block_has_no_edges() {
        assert!(cfg_of("func @f() -> void { A: ret }").edges.is_empty());
    }

    #[test]
    fn parallel_switch_edges_count() {
        let cfg = cfg_of("func @f(%x: int) -> void { A: switch %x [1 -> B 2 -> B] default B B: ret }");
        assert_eq!(cfg.indeg_of("B"), Some(3));
        assert_eq!(cfg.outdeg[0], 3);
    }

    // Bogus B2 guarded from A, with a path back to the real B1.
    const BOGUS_SHAPE: &str = "func @f(%p: bool) -> void {\n\
        A: cbr %p, B1, B2\n B1: br C\n B2: !bogus br B1\n C: ret }";

    #[test]
    fn gap_after_bogus_flow() {
        let gap = in_degree_gap(&cfg_of(BOGUS_SHAPE));
        assert_eq!(gap, InDegreeGap { max_real_indeg: 2, min_bogus_indeg: Some(1) });
        assert!(!gap.bogus_dominates());
    }

    #[test]
    fn added_edge_raises_bogus_indegree() {
        let before = in_degree_gap(&cfg_of(BOGUS_SHAPE));
        let after = in_degree_gap(&cfg_of(
            "func @f(%p: bool) -> void {\n A: cbr %p, B1, B2\n B1: cbr %p, C, B2\n B2: !bogus br B1\n C: ret }",
        ));
        assert_eq!(after.min_bogus_indeg, before.min_bogus_indeg.map(|d| d + 1));
    }

    #[test]
    fn no_bogus_nodes() {
        let gap = in_degree_gap(&cfg_of("func @f() -> void { A: br B1 B1: br C C: ret }"));
        assert_eq!(gap, InDegreeGap { max_real_indeg: 1, min_bogus_indeg: None });
    }

    #[test]
    fn entry_indegree_is_excluded() {
        let gap = in_degree_gap(&cfg_of("func @f(%p: bool) -> void { A: cbr %p, A, B B: br A }"));
        assert_eq!(gap.max_real_indeg, 1);
    }
}
