//! Similarity and overhead metrics.
//!
//! Similarity is a name-blind proxy for binary diffing. Blocks are matched by
//! a canonical hash, jump instructions by terminator shape and functions by
//! (base name, arity). All three are multiset intersections divided by the
//! larger of the two counts.
//!
//! Canonical block form, one line per instruction then one for the
//! terminator, joined with `\n` and hashed with 64-bit FNV-1a:
//!
//! * every local or global is written `v<i>`, numbered by first appearance
//!   (destination before operands);
//! * integer literals become `0`, `1` or `k`, booleans `t` or `f`;
//! * `vD = const C`, `vD = <op> A, B`, `vD = cmp <rel> A, B`, `vD = A`;
//! * calls are `call/<argc> A, B -> vD` (or `-> _`) and omit the callee;
//! * terminators are `br`, `cbr vC`, `switch/<cases> vS`, `ret` or `ret A`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Duration;

use serde::Serialize;

use crate::interp::{timed_run_function, RunError};
use crate::ir::{BasicBlock, Inst, IrModule, Literal, Place, Terminator, Value};
use crate::rng::fnv1a64;

#[derive(Default)]
struct Namer(HashMap<String, usize>);

impl Namer {
    fn name(&mut self, key: String) -> String {
        let next = self.0.len();
        format!("v{}", self.0.entry(key).or_insert(next))
    }

    fn place(&mut self, p: &Place) -> String {
        match p {
            Place::Local(n) => self.name(format!("%{n}")),
            Place::Global(n) => self.name(format!("@{n}")),
        }
    }

    fn local(&mut self, n: &str) -> String {
        self.name(format!("%{n}"))
    }

    fn value(&mut self, v: &Value) -> String {
        match v {
            Value::Local(n) => self.name(format!("%{n}")),
            Value::Global(n) => self.name(format!("@{n}")),
            Value::Lit(l) => literal(l).to_string(),
        }
    }
}

fn literal(l: &Literal) -> &'static str {
    match l {
        Literal::Int(0) => "0",
        Literal::Int(1) => "1",
        Literal::Int(_) => "k",
        Literal::Bool(true) => "t",
        Literal::Bool(false) => "f",
    }
}

/// The canonical text hashed by [`canonical_block_hash`].
pub fn canonical_block_text(b: &BasicBlock) -> String {
    let mut n = Namer::default();
    let mut lines = Vec::with_capacity(b.insts.len() + 1);
    for inst in &b.insts {
        lines.push(match inst {
            Inst::Const { dst, value } => format!("{} = const {}", n.place(dst), literal(value)),
            Inst::Binop { dst, op, lhs, rhs } => {
                let d = n.place(dst);
                format!("{d} = {} {}, {}", op.keyword(), n.value(lhs), n.value(rhs))
            }
            Inst::Cmp { dst, rel, lhs, rhs } => {
                let d = n.place(dst);
                format!("{d} = cmp {} {}, {}", rel.keyword(), n.value(lhs), n.value(rhs))
            }
            Inst::Assign { dst, src } => {
                let d = n.place(dst);
                format!("{d} = {}", n.value(src))
            }
            Inst::Call { dst, args, .. } => {
                let d = dst.as_ref().map_or_else(|| "_".to_string(), |d| n.place(d));
                let args: Vec<String> = args.iter().map(|a| n.value(a)).collect();
                format!("call/{} {} -> {d}", args.len(), args.join(", "))
            }
        });
    }
    if let Some(term) = &b.term {
        lines.push(match term {
            Terminator::Br(_) => "br".to_string(),
            Terminator::Cbr { cond, .. } => format!("cbr {}", n.local(cond)),
            Terminator::Switch { scrutinee, cases, .. } => format!("switch/{} {}", cases.len(), n.local(scrutinee)),
            Terminator::Ret(None) => "ret".to_string(),
            Terminator::Ret(Some(v)) => format!("ret {}", n.value(v)),
        });
    }
    lines.join("\n")
}

/// Label- and name-independent digest of a block.
pub fn canonical_block_hash(b: &BasicBlock) -> u64 {
    fnv1a64(canonical_block_text(b).as_bytes())
}

/// Jump-instruction shape: terminator kind plus case count.
pub fn terminator_shape(t: &Terminator) -> String {
    match t {
        Terminator::Br(_) => "br".into(),
        Terminator::Cbr { .. } => "cbr".into(),
        Terminator::Switch { cases, .. } => format!("switch/{}", cases.len()),
        Terminator::Ret(_) => "ret".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub bb_sim: f64,
    pub ji_sim: f64,
    pub fn_sim: f64,
    pub prog_sim: f64,
}

/// Weights of the whole-program score.
pub const PROG_WEIGHTS: (f64, f64, f64) = (0.5, 0.3, 0.2);

/// `100 · |A ∩ B| / max(|A|, |B|)` over multisets; two empty sets score 100.
pub fn multiset_similarity<T: Hash + Eq>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> f64 {
    let mut counts: HashMap<T, (usize, usize)> = HashMap::new();
    let (mut na, mut nb) = (0, 0);
    for x in a {
        counts.entry(x).or_default().0 += 1;
        na += 1;
    }
    for x in b {
        counts.entry(x).or_default().1 += 1;
        nb += 1;
    }
    if na.max(nb) == 0 {
        return 100.0;
    }
    let common: usize = counts.values().map(|(x, y)| *x.min(y)).sum();
    100.0 * common as f64 / na.max(nb) as f64
}

fn blocks(m: &IrModule) -> impl Iterator<Item = &BasicBlock> {
    m.functions.iter().flat_map(|f| f.blocks.iter())
}

pub fn similarity(orig: &IrModule, obf: &IrModule) -> SimilarityReport {
    let bb_sim = multiset_similarity(blocks(orig).map(canonical_block_hash), blocks(obf).map(canonical_block_hash));
    let shapes = |m: &IrModule| -> Vec<String> {
        blocks(m).filter_map(|b| b.term.as_ref()).map(terminator_shape).collect()
    };
    let ji_sim = multiset_similarity(shapes(orig), shapes(obf));
    let sigs = |m: &IrModule| -> Vec<(String, usize)> {
        m.functions.iter().map(|f| (f.source_name.clone(), f.params.len())).collect()
    };
    let fn_sim = multiset_similarity(sigs(orig), sigs(obf));
    let (wb, wj, wf) = PROG_WEIGHTS;
    let prog_sim = (wb * bb_sim + wj * ji_sim + wf * fn_sim) / 100.0;
    SimilarityReport { bb_sim, ji_sim, fn_sim, prog_sim }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    /// `None` when timing was not requested.
    pub time_ratio: Option<f64>,
    pub space_ratio: f64,
}

/// Obfuscated over original instruction count (terminators included).
pub fn space_ratio(orig: &IrModule, obf: &IrModule) -> f64 {
    obf.inst_count() as f64 / orig.inst_count() as f64
}

/// Median wall time of running `entry` (a mangled name in each module) over
/// every input vector, `reps` times.
pub fn timed_inputs(m: &IrModule, entry: &str, inputs: &[Vec<i64>], reps: usize) -> Result<Duration, RunError> {
    inputs.iter().map(|args| timed_run_function(m, entry, args, reps)).sum()
}

/// Space ratio, plus the time ratio when `reps` is given. Entry names are
/// mangled names in the respective module.
pub fn overhead(
    orig: &IrModule,
    obf: &IrModule,
    orig_entry: &str,
    obf_entry: &str,
    inputs: &[Vec<i64>],
    reps: Option<usize>,
) -> Result<OverheadReport, RunError> {
    let time_ratio = match reps {
        None => None,
        Some(reps) => {
            let a = timed_inputs(orig, orig_entry, inputs, reps)?;
            let b = timed_inputs(obf, obf_entry, inputs, reps)?;
            Some(b.as_secs_f64() / a.as_secs_f64().max(f64::MIN_POSITIVE))
        }
    };
    Ok(OverheadReport { time_ratio, space_ratio: space_ratio(orig, obf) })
}

/// One row of a corpus report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub file: String,
    pub pass: String,
    pub seed: u64,
    pub bb_sim: f64,
    pub ji_sim: f64,
    pub fn_sim: f64,
    pub prog_sim: f64,
    pub time_ratio: Option<f64>,
    pub space_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stats {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stddev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub indicator: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
}

pub const INDICATORS: [&str; 6] = ["bb_sim", "ji_sim", "fn_sim", "prog_sim", "time_ratio", "space_ratio"];

fn indicator(row: &ReportRow, name: &str) -> Option<f64> {
    match name {
        "bb_sim" => Some(row.bb_sim),
        "ji_sim" => Some(row.ji_sim),
        "fn_sim" => Some(row.fn_sim),
        "prog_sim" => Some(row.prog_sim),
        "time_ratio" => row.time_ratio,
        "space_ratio" => Some(row.space_ratio),
        _ => None,
    }
}

/// Mean, min, max and stddev per indicator. Indicators with no values
/// (time when not measured) are left out.
pub fn aggregate(rows: &[ReportRow]) -> Vec<AggregateRow> {
    INDICATORS
        .iter()
        .filter_map(|&name| {
            let values: Vec<f64> = rows.iter().filter_map(|r| indicator(r, name)).collect();
            Stats::of(&values).map(|s| AggregateRow {
                indicator: name.to_string(),
                mean: s.mean,
                min: s.min,
                max: s.max,
                stddev: s.stddev,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: Vec<AggregateRow>,
    /// Files that could not be processed, with the reason.
    pub failures: Vec<(String, String)>,
}

impl CorpusReport {
    pub fn new(rows: Vec<ReportRow>, failures: Vec<(String, String)>) -> Self {
        let aggregate = aggregate(&rows);
        CorpusReport { rows, aggregate, failures }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering: per-file rows then the aggregate.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let mut cells: Vec<Vec<String>> =
            vec![["file", "pass", "seed", "bb_sim", "ji_sim", "fn_sim", "prog_sim", "time", "space"]
                .iter()
                .map(|s| s.to_string())
                .collect()];
        for r in &self.rows {
            cells.push(vec![
                r.file.clone(),
                r.pass.clone(),
                r.seed.to_string(),
                format!("{:.2}", r.bb_sim),
                format!("{:.2}", r.ji_sim),
                format!("{:.2}", r.fn_sim),
                format!("{:.3}", r.prog_sim),
                fmt_opt(r.time_ratio),
                format!("{:.3}", r.space_ratio),
            ]);
        }
        let mut out = render(&cells);
        let mut agg: Vec<Vec<String>> =
            vec![["indicator", "mean", "min", "max", "stddev"].iter().map(|s| s.to_string()).collect()];
        for a in &self.aggregate {
            agg.push(vec![
                a.indicator.clone(),
                format!("{:.3}", a.mean),
                format!("{:.3}", a.min),
                format!("{:.3}", a.max),
                format!("{:.3}", a.stddev),
            ]);
        }
        out.push('\n');
        out.push_str(&render(&agg));
        for (file, why) in &self.failures {
            let _ = writeln!(out, "FAILED {file}: {why}");
        }
        out
    }
}

fn render(cells: &[Vec<String>]) -> String {
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn block(body: &str) -> BasicBlock {
        let text = format!("extern @print_int(int) -> void\nglobal @g = 0\nfunc @f(%a: int, %b: int) -> int {{ local %x: int\n local %y: bool\n e: {body} }}");
        parse_module(&text).unwrap().functions.remove(0).blocks.remove(0)
    }

    #[test]
    fn golden_digests() {
        assert_eq!(canonical_block_hash(&block("ret 0")), fnv1a64(b"ret 0"));
        let ret_only = parse_module("func @f() -> void { e: ret }").unwrap().functions[0].blocks[0].clone();
        assert_eq!(canonical_block_text(&ret_only), "ret");
        assert_eq!(canonical_block_hash(&ret_only), 0x89e9_ae19_60f4_a6ec);
        let b = block("%x = add %a, 1 %y = cmp lt %x, 7 cbr %y, e, e");
        assert_eq!(canonical_block_text(&b), "v0 = add v1, 1\nv2 = cmp lt v0, k\ncbr v2");
        assert_eq!(canonical_block_hash(&b), 0x18b7_0165_c182_8254);
        let c = block("%x = 0 call @print_int(%x) ret %x");
        assert_eq!(canonical_block_text(&c), "v0 = const 0\ncall/1 v0 -> _\nret v0");
        assert_eq!(canonical_block_hash(&c), 0x10fe_41a9_6bab_c208);
    }

    #[test]
    fn alpha_renaming_is_invisible() {
        let a = block("%x = add %a, 5 %x = mul %x, %b ret %x");
        let text = "func @h(%p: int, %q: int) -> int { local %r.1: int\n other: %r.1 = add %q, 9 %r.1 = mul %r.1, %p ret %r.1 }";
        let b = parse_module(text).unwrap().functions.remove(0).blocks.remove(0);
        assert_eq!(canonical_block_hash(&a), canonical_block_hash(&b));
    }

    #[test]
    fn mutation_changes_digest() {
        let a = block("%x = add %a, 5 ret %x");
        let b = block("%x = sub %a, 5 ret %x");
        assert_ne!(canonical_block_hash(&a), canonical_block_hash(&b));
        let c = block("%x = add %a, 6 ret %x");
        assert_eq!(canonical_block_hash(&a), canonical_block_hash(&c));
        let d = block("%x = add %a, 1 ret %x");
        assert_ne!(canonical_block_hash(&a), canonical_block_hash(&d));
    }

    const M: &str = "func @f(%n: int) -> int { local %c: bool\n e: %c = cmp gt %n, 0 cbr %c, a, b a: ret 1 b: %n = sub %n, 2 br c c: ret %n }";

    #[test]
    fn reflexive() {
        let m = parse_module(M).unwrap();
        let s = similarity(&m, &m);
        assert_eq!(s, SimilarityReport { bb_sim: 100.0, ji_sim: 100.0, fn_sim: 100.0, prog_sim: 1.0 });
        let empty = IrModule::default();
        assert_eq!(similarity(&empty, &empty).prog_sim, 1.0);
    }

    #[test]
    fn flattening_lowers_block_similarity() {
        let m = parse_module(M).unwrap();
        let (g, _) = crate::flatten::flatten(&m.functions[0], 1);
        let obf = IrModule { functions: vec![g], ..m.clone() };
        let s = similarity(&m, &obf);
        assert!(s.bb_sim < 100.0);
        assert_eq!(s.fn_sim, 100.0);
        assert!(space_ratio(&m, &obf) > 1.0);
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multiset_similarity([1, 1, 2], [1, 2, 2, 3]), 50.0);
        assert_eq!(multiset_similarity(Vec::<u8>::new(), [1]), 0.0);
    }

    #[test]
    fn space_ratio_exact() {
        let m = parse_module(M).unwrap();
        assert_eq!(space_ratio(&m, &m), 1.0);
        let r = overhead(&m, &m, "f", "f", &[vec![3]], None).unwrap();
        assert_eq!(r, OverheadReport { time_ratio: None, space_ratio: 1.0 });
        let t = overhead(&m, &m, "f", "f", &[vec![3]], Some(3)).unwrap().time_ratio.unwrap();
        assert!(t.is_finite() && t > 0.0);
    }

    fn row(file: &str, bb: f64) -> ReportRow {
        ReportRow {
            file: file.into(),
            pass: "flatten".into(),
            seed: 0,
            bb_sim: bb,
            ji_sim: 50.0,
            fn_sim: 100.0,
            prog_sim: 0.5,
            time_ratio: None,
            space_ratio: 1.5,
        }
    }

    #[test]
    fn single_file_stats() {
        let agg = aggregate(&[row("a", 40.0)]);
        assert_eq!(agg.len(), 5);
        for a in &agg {
            assert!(a.mean == a.min && a.min == a.max && a.stddev == 0.0);
        }
    }

    #[test]
    fn population_stddev() {
        let s = Stats::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!((s.mean, s.stddev, s.min, s.max), (5.0, 2.0, 2.0, 9.0));
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn table_is_aligned() {
        let report = CorpusReport::new(vec![row("a.ir", 40.0), row("longer_name.ir", 12.5)], vec![]);
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().take(3).collect();
        let col = lines[0].find("pass").unwrap();
        assert!(lines[1..].iter().all(|l| l[col..].starts_with("flatten")));
        assert!(table.contains("bb_sim") && table.contains("stddev"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["rows"][0]["time_ratio"], serde_json::Value::Null);
        assert_eq!(json["aggregate"].as_array().unwrap().len(), 5);
    }
}
