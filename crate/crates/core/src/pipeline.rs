//! Pass sequencing, semantic oracle and corpus batch runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::bogus_flow::{bogus_control_flow, indegree_obfuscate, BcfReport, IndegReport};
use crate::corpus::{load_corpus, CorpusEntry, CORPUS_FUEL};
use crate::error::PassError;
use crate::flatten::{flatten, nested_switch, FlattenReport};
use crate::identifier::{
    add_overloads, obfuscate_identifiers_default, rename_dictionary, rename_homoglyph, rename_random, DefaultReport,
    Dictionary, OverloadReport, RenameMap,
};
use crate::interp::{run_function, Program, RunError, RunOptions, Status};
use crate::ir::{parse_module, print_module, validate, Diagnostic, IrFunction, IrModule, ParseError};
use crate::metrics::{overhead, similarity, CorpusReport, ReportRow};
use crate::rng::fork;

/// Obfuscated code may take this many times the original's step budget.
pub const FUEL_FACTOR: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassName {
    Flatten,
    Nested,
    Bcf,
    Indeg,
    IdentRandom,
    IdentDict,
    IdentIllegal,
    IdentOverload,
    IdentDefault,
}

impl PassName {
    pub const ALL: [PassName; 9] = [
        PassName::Flatten,
        PassName::Nested,
        PassName::Bcf,
        PassName::Indeg,
        PassName::IdentRandom,
        PassName::IdentDict,
        PassName::IdentIllegal,
        PassName::IdentOverload,
        PassName::IdentDefault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PassName::Flatten => "flatten",
            PassName::Nested => "nested",
            PassName::Bcf => "bcf",
            PassName::Indeg => "indeg",
            PassName::IdentRandom => "ident-random",
            PassName::IdentDict => "ident-dict",
            PassName::IdentIllegal => "ident-illegal",
            PassName::IdentOverload => "ident-overload",
            PassName::IdentDefault => "ident-default",
        }
    }

    pub fn is_identifier_pass(self) -> bool {
        self.as_str().starts_with("ident-")
    }
}

impl fmt::Display for PassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PassName {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PassName::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| PipelineError::UnknownPass(s.to_string()))
    }
}

/// Parse a comma-separated pass list, rejecting unknown names.
pub fn parse_passes(list: &str) -> Result<Vec<PassName>, PipelineError> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub passes: Vec<PassName>,
    pub seed: u64,
    /// Restrict control-flow passes to functions with these source base names.
    pub funcs: Option<Vec<String>>,
    pub bogus_count: Option<usize>,
    pub indeg_margin: usize,
    pub prob: f64,
    pub dict: Dictionary,
    pub decoys_per_fn: usize,
    /// Repetitions for timing in batch reports; `None` leaves time out.
    pub time_reps: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            passes: Vec::new(),
            seed: 0,
            funcs: None,
            bogus_count: None,
            indeg_margin: 1,
            prob: 0.3,
            dict: Dictionary::bundled(),
            decoys_per_fn: 2,
            time_reps: None,
        }
    }
}

impl PipelineConfig {
    pub fn new(passes: Vec<PassName>, seed: u64) -> Self {
        PipelineConfig { passes, seed, ..Default::default() }
    }

    /// Check parameters before any pass runs.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Parameter(PassError::InvalidParameter(m)));
        if !(self.prob > 0.0 && self.prob <= 1.0) {
            return bad(format!("prob must lie in (0, 1], got {}", self.prob));
        }
        if self.bogus_count == Some(0) {
            return bad("bogus count must be at least 1".into());
        }
        if self.indeg_margin < 1 {
            return bad("indeg margin must be at least 1".into());
        }
        if self.decoys_per_fn < 1 {
            return bad("decoys per function must be at least 1".into());
        }
        if self.time_reps.is_some_and(|r| r < 3) {
            return bad("timing needs at least 3 repetitions".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Parameter(#[from] PassError),
    #[error("pass `{pass}` produced an invalid module: {}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    BrokenPass { pass: String, diagnostics: Vec<Diagnostic> },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse(_) | PipelineError::BrokenPass { .. } => 2,
            PipelineError::UnknownPass(_) | PipelineError::Parameter(_) => 3,
        }
    }
}

/// A module-level transformation that can be added to a pipeline in place
/// of a built-in pass.
pub trait ModulePass: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, m: &IrModule, seed: u64) -> Result<IrModule, PassError>;
}

#[derive(Clone)]
pub enum Step {
    Builtin(PassName),
    Custom(Arc<dyn ModulePass>),
}

impl Step {
    pub fn name(&self) -> String {
        match self {
            Step::Builtin(p) => p.to_string(),
            Step::Custom(p) => p.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "pass", rename_all = "kebab-case")]
pub enum PassReport {
    Flatten { functions: Vec<FlattenReport> },
    Nested { functions: Vec<FlattenReport> },
    Bcf { functions: Vec<BcfReport> },
    Indeg { functions: Vec<IndegReport> },
    IdentRandom { map: RenameMap },
    IdentDict { map: RenameMap },
    IdentIllegal { map: RenameMap },
    IdentOverload { report: OverloadReport },
    IdentDefault { map: RenameMap, report: DefaultReport },
    Custom { name: String },
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub module: IrModule,
    pub text: String,
    pub reports: Vec<PassReport>,
    /// Original mangled name → final mangled name for every input function.
    pub names: BTreeMap<String, String>,
}

#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub steps: Vec<Step>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let steps = config.passes.iter().copied().map(Step::Builtin).collect();
        Pipeline { config, steps }
    }

    pub fn with_custom(mut self, pass: Arc<dyn ModulePass>) -> Self {
        self.steps.push(Step::Custom(pass));
        self
    }

    pub fn label(&self) -> String {
        let names: Vec<String> = self.steps.iter().map(Step::name).collect();
        if names.is_empty() { "none".to_string() } else { names.join("+") }
    }

    /// Parse, validate and transform `input`.
    pub fn run_text(&self, input: &str) -> Result<PipelineOutput, PipelineError> {
        self.config.check()?;
        let module = parse_module(input)?;
        self.run_module(&module)
    }

    /// Apply every step in order to an already valid module.
    pub fn run_module(&self, input: &IrModule) -> Result<PipelineOutput, PipelineError> {
        self.config.check()?;
        let cfg = &self.config;
        let mut names: BTreeMap<String, String> =
            input.functions.iter().map(|f| (f.mangled_name.clone(), f.mangled_name.clone())).collect();
        let mut selected: BTreeSet<String> = input
            .functions
            .iter()
            .filter(|f| cfg.funcs.as_ref().is_none_or(|fs| fs.iter().any(|n| *n == f.source_name)))
            .map(|f| f.mangled_name.clone())
            .collect();
        let mut m = input.clone();
        let mut reports = Vec::with_capacity(self.steps.len());

        for (index, step) in self.steps.iter().enumerate() {
            let step_name = step.name();
            let pass_seed = fork(cfg.seed, &[&index.to_string(), &step_name]);
            let fn_seed = |f: &IrFunction| fork(pass_seed, &[&f.mangled_name]);
            let mut rename = None;
            let report = match step {
                Step::Custom(p) => {
                    m = p.apply(&m, pass_seed)?;
                    PassReport::Custom { name: step_name.clone() }
                }
                Step::Builtin(pass) => match pass {
                    PassName::Flatten => PassReport::Flatten {
                        functions: map_selected(&mut m, &selected, |f| Ok(flatten(f, fn_seed(f))))?,
                    },
                    PassName::Nested => PassReport::Nested {
                        functions: map_selected(&mut m, &selected, |f| nested_switch(f, fn_seed(f), cfg.bogus_count))?,
                    },
                    PassName::Bcf => PassReport::Bcf {
                        functions: map_selected(&mut m, &selected, |f| bogus_control_flow(f, fn_seed(f), cfg.prob))?,
                    },
                    PassName::Indeg => PassReport::Indeg {
                        functions: map_selected(&mut m, &selected, |f| {
                            indegree_obfuscate(f, fn_seed(f), cfg.indeg_margin)
                        })?,
                    },
                    PassName::IdentRandom => {
                        let (out, map) = rename_random(&m, pass_seed);
                        m = out;
                        rename = Some(map.clone());
                        PassReport::IdentRandom { map }
                    }
                    PassName::IdentDict => {
                        let (out, map) = rename_dictionary(&m, &cfg.dict, pass_seed)?;
                        m = out;
                        rename = Some(map.clone());
                        PassReport::IdentDict { map }
                    }
                    PassName::IdentIllegal => {
                        let (out, map) = rename_homoglyph(&m);
                        m = out;
                        rename = Some(map.clone());
                        PassReport::IdentIllegal { map }
                    }
                    PassName::IdentOverload => {
                        let (out, report) = add_overloads(&m, pass_seed, cfg.decoys_per_fn)?;
                        m = out;
                        PassReport::IdentOverload { report }
                    }
                    PassName::IdentDefault => {
                        let (out, map, report) = obfuscate_identifiers_default(&m, pass_seed, &cfg.dict)?;
                        m = out;
                        rename = Some(map.clone());
                        PassReport::IdentDefault { map, report }
                    }
                },
            };
            if let Some(map) = rename {
                for current in names.values_mut() {
                    if let Some(new) = map.entries.get(current) {
                        *current = new.clone();
                    }
                }
                selected = selected.iter().map(|n| map.entries.get(n).cloned().unwrap_or_else(|| n.clone())).collect();
            }
            let diagnostics = validate(&m);
            if !diagnostics.is_empty() {
                return Err(PipelineError::BrokenPass { pass: step_name, diagnostics });
            }
            reports.push(report);
        }
        let text = print_module(&m);
        Ok(PipelineOutput { module: m, text, reports, names })
    }
}

/// Replace each selected function with the pass result, collecting reports.
fn map_selected<R>(
    m: &mut IrModule,
    selected: &BTreeSet<String>,
    mut pass: impl FnMut(&IrFunction) -> Result<(IrFunction, R), PassError>,
) -> Result<Vec<R>, PassError> {
    let mut reports = Vec::new();
    for f in &mut m.functions {
        if selected.contains(&f.mangled_name) {
            let (g, r) = pass(f)?;
            *f = g;
            reports.push(r);
        }
    }
    Ok(reports)
}

/// One input vector whose obfuscated behavior differs from the original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleMismatch {
    pub file: String,
    pub seed: u64,
    pub input: Vec<i64>,
    pub expected: String,
    pub actual: String,
}

/// Mangled name of the manifest entry in the original module.
pub fn entry_function(entry: &CorpusEntry) -> Result<String, RunError> {
    let arity = entry.manifest.inputs.first().map_or(0, Vec::len);
    let program = Program::link(&entry.module)?;
    let index = program.resolve_entry(&entry.manifest.entry, arity)?;
    Ok(entry.module.functions[index].mangled_name.clone())
}

fn describe(r: &Result<crate::interp::ExecutionResult, RunError>) -> String {
    match r {
        Ok(r) => format!("{:?} output={:?}", r.status, r.output),
        Err(e) => format!("error: {e}"),
    }
}

/// Run every manifest input against the original and the obfuscated module
/// and report each disagreement in status or output.
pub fn oracle_check(entry: &CorpusEntry, out: &PipelineOutput, seed: u64) -> Vec<OracleMismatch> {
    let mut mismatches = Vec::new();
    let orig_fn = match entry_function(entry) {
        Ok(f) => f,
        Err(e) => {
            return vec![OracleMismatch {
                file: entry.manifest.ir.clone(),
                seed,
                input: Vec::new(),
                expected: "resolvable entry".into(),
                actual: e.to_string(),
            }]
        }
    };
    let obf_fn = out.names.get(&orig_fn).cloned().unwrap_or(orig_fn.clone());
    for args in &entry.manifest.inputs {
        let want = run_function(&entry.module, &orig_fn, args, RunOptions::fuel(CORPUS_FUEL));
        let got = run_function(&out.module, &obf_fn, args, RunOptions::fuel(CORPUS_FUEL * FUEL_FACTOR));
        let same = match (&want, &got) {
            (Ok(a), Ok(b)) => a.observable() == b.observable() && !matches!(a.status, Status::FuelExhausted),
            _ => false,
        };
        if !same {
            mismatches.push(OracleMismatch {
                file: entry.manifest.ir.clone(),
                seed,
                input: args.clone(),
                expected: describe(&want),
                actual: describe(&got),
            });
        }
    }
    mismatches
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub report: CorpusReport,
    pub mismatches: Vec<OracleMismatch>,
    /// (ir file, seed, obfuscated text) for every processed file and seed.
    pub outputs: Vec<(String, u64, String)>,
    pub load_failures: usize,
}

impl BatchOutcome {
    /// 0 on success, 4 if any oracle check failed, 2 if any file failed to
    /// load or transform.
    pub fn exit_code(&self) -> i32 {
        if !self.mismatches.is_empty() {
            4
        } else if self.load_failures > 0 || !self.report.failures.is_empty() {
            2
        } else {
            0
        }
    }
}

/// Run `pipeline` over an in-memory corpus for each seed.
pub fn batch_entries(entries: &[CorpusEntry], pipeline: &Pipeline, seeds: &[u64]) -> BatchOutcome {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut mismatches = Vec::new();
    let mut outputs = Vec::new();
    for entry in entries {
        for &seed in seeds {
            let mut p = pipeline.clone();
            p.config.seed = seed;
            let file = entry.manifest.ir.clone();
            let out = match p.run_module(&entry.module) {
                Ok(out) => out,
                Err(e) => {
                    failures.push((file, e.to_string()));
                    continue;
                }
            };
            let found = oracle_check(entry, &out, seed);
            let orig_fn = entry_function(entry).unwrap_or_default();
            let obf_fn = out.names.get(&orig_fn).cloned().unwrap_or_default();
            let sim = similarity(&entry.module, &out.module);
            match overhead(&entry.module, &out.module, &orig_fn, &obf_fn, &entry.manifest.inputs, p.config.time_reps) {
                Ok(over) => rows.push(ReportRow {
                    file: file.clone(),
                    pass: pipeline.label(),
                    seed,
                    bb_sim: sim.bb_sim,
                    ji_sim: sim.ji_sim,
                    fn_sim: sim.fn_sim,
                    prog_sim: sim.prog_sim,
                    time_ratio: over.time_ratio,
                    space_ratio: over.space_ratio,
                }),
                Err(e) => failures.push((file.clone(), e.to_string())),
            }
            mismatches.extend(found);
            outputs.push((file, seed, out.text));
        }
    }
    BatchOutcome { report: CorpusReport::new(rows, failures), mismatches, outputs, load_failures: 0 }
}

/// Load `dir` and run [`batch_entries`]; load failures become report
/// failures and processing continues with the rest.
pub fn batch(dir: &Path, pipeline: &Pipeline, seeds: &[u64]) -> std::io::Result<BatchOutcome> {
    let (entries, diagnostics) = load_corpus(dir)?;
    let mut outcome = batch_entries(&entries, pipeline, seeds);
    outcome.load_failures = diagnostics.len();
    outcome.report.failures.extend(diagnostics.into_iter().map(|d| (d.file, d.message)));
    Ok(outcome)
}

/// Per-file and aggregate metrics for `pipeline` over the corpus in `dir`.
pub fn corpus_report(dir: &Path, pipeline: &Pipeline, seeds: &[u64]) -> std::io::Result<CorpusReport> {
    batch(dir, pipeline, seeds).map(|o| o.report)
}
