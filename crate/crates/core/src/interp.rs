//! Reference interpreter: the semantics oracle for every pass.
//!
//! A module is first linked into an index-resolved form, then executed with
//! an explicit frame stack. Every instruction and terminator costs one step;
//! execution stops with [`Status::FuelExhausted`] before the step that would
//! exceed the fuel limit. Booleans are carried as `0`/`1`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::ir::{BinOp, Inst, IrFunction, IrModule, Literal, Place, Rel, RetType, Terminator, Type, Value};

/// Default step budget for ad-hoc runs.
pub const DEFAULT_FUEL: u64 = 10_000_000;

/// Frames deeper than this trap instead of exhausting memory.
pub const MAX_CALL_DEPTH: usize = 100_000;

/// Functions the interpreter provides to `extern` declarations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    PrintInt,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "print_int" => Some(Builtin::PrintInt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::PrintInt => "print_int",
        }
    }

    pub fn params(self) -> &'static [Type] {
        match self {
            Builtin::PrintInt => &[Type::Int],
        }
    }

    pub fn ret(self) -> RetType {
        match self {
            Builtin::PrintInt => RetType::Void,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trap {
    DivisionByZero,
    CallDepthExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Returned(Option<i64>),
    Trapped(Trap),
    FuelExhausted,
}

/// One block entry, recorded when tracing is enabled.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockVisit {
    pub function: String,
    pub block: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub status: Status,
    /// Integers passed to `print_int`, in order.
    pub output: Vec<i64>,
    pub steps: u64,
    /// Empty unless [`RunOptions::trace`] was set.
    pub trace: Vec<BlockVisit>,
}

impl ExecutionResult {
    /// Status and output, the part of a run that obfuscation must preserve.
    pub fn observable(&self) -> (&Status, &[i64]) {
        (&self.status, &self.output)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub fuel: u64,
    pub trace: bool,
}

impl RunOptions {
    pub fn fuel(fuel: u64) -> Self {
        RunOptions { fuel, trace: false }
    }

    pub fn traced(fuel: u64) -> Self {
        RunOptions { fuel, trace: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("no function named `{0}` accepts the given arguments")]
    UnresolvedEntry(String),
    #[error("`{0}` matches more than one function")]
    AmbiguousEntry(String),
    #[error("`{name}` takes {expected} arguments, got {got}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error("argument {index} of `{name}` is bool but got {value}")]
    BadArgument { name: String, index: usize, value: i64 },
    #[error("module cannot be linked: {0}")]
    Link(String),
    #[error("timing needs at least 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
}

#[derive(Debug, Clone, Copy)]
enum Operand {
    Slot(u32),
    Global(u32),
    Imm(i64),
}

#[derive(Debug, Clone, Copy)]
enum Dest {
    Slot(u32),
    Global(u32),
}

#[derive(Debug, Clone, Copy)]
enum Callee {
    Func(u32),
    Builtin(Builtin),
}

#[derive(Debug, Clone)]
enum Op {
    Set(Dest, Operand),
    Bin(Dest, BinOp, Operand, Operand),
    Cmp(Dest, Rel, Operand, Operand),
    Call(Option<Dest>, Callee, Vec<Operand>),
}

#[derive(Debug, Clone)]
enum Term {
    Br(u32),
    Cbr(u32, u32, u32),
    /// Cases sorted by value for binary search.
    Switch(u32, Vec<(i64, u32)>, u32),
    Ret(Option<Operand>),
}

#[derive(Debug, Clone)]
struct Block {
    ops: Vec<Op>,
    term: Term,
}

#[derive(Debug, Clone)]
struct Func {
    slot_count: usize,
    blocks: Vec<Block>,
}

/// A module with all names resolved to indices, ready to execute.
#[derive(Debug, Clone)]
pub struct Program<'m> {
    module: &'m IrModule,
    funcs: Vec<Func>,
    globals: Vec<i64>,
}

struct Linker<'m> {
    module: &'m IrModule,
    funcs: HashMap<&'m str, u32>,
    globals: HashMap<&'m str, u32>,
}

impl<'m> Linker<'m> {
    fn func(&self, f: &'m IrFunction) -> Result<Func, RunError> {
        let slots: HashMap<&str, u32> = f
            .params
            .iter()
            .chain(f.locals.iter())
            .enumerate()
            .map(|(i, p)| (p.name.as_str(), i as u32))
            .collect();
        let labels: HashMap<&str, u32> =
            f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i as u32)).collect();
        let err = |what: &str| RunError::Link(format!("{what} in `@{}`", f.mangled_name));
        let label = |l: &str| labels.get(l).copied().ok_or_else(|| err(&format!("unknown label `{l}`")));
        let slot = |n: &str| slots.get(n).copied().ok_or_else(|| err(&format!("unknown local `%{n}`")));
        let global = |n: &str| {
            self.globals.get(n).copied().ok_or_else(|| err(&format!("unknown global `@{n}`")))
        };
        let operand = |v: &Value| -> Result<Operand, RunError> {
            Ok(match v {
                Value::Local(n) => Operand::Slot(slot(n)?),
                Value::Global(n) => Operand::Global(global(n)?),
                Value::Lit(Literal::Int(i)) => Operand::Imm(*i),
                Value::Lit(Literal::Bool(b)) => Operand::Imm(i64::from(*b)),
            })
        };
        let dest = |p: &Place| -> Result<Dest, RunError> {
            Ok(match p {
                Place::Local(n) => Dest::Slot(slot(n)?),
                Place::Global(n) => Dest::Global(global(n)?),
            })
        };

        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let mut ops = Vec::with_capacity(b.insts.len());
            for inst in &b.insts {
                ops.push(match inst {
                    Inst::Const { dst, value } => Op::Set(dest(dst)?, operand(&Value::Lit(*value))?),
                    Inst::Assign { dst, src } => Op::Set(dest(dst)?, operand(src)?),
                    Inst::Binop { dst, op, lhs, rhs } => Op::Bin(dest(dst)?, *op, operand(lhs)?, operand(rhs)?),
                    Inst::Cmp { dst, rel, lhs, rhs } => Op::Cmp(dest(dst)?, *rel, operand(lhs)?, operand(rhs)?),
                    Inst::Call { dst, callee, args } => {
                        let target = if let Some(&i) = self.funcs.get(callee.as_str()) {
                            Callee::Func(i)
                        } else if self.module.extern_decl(callee).is_some() {
                            Callee::Builtin(
                                Builtin::from_name(callee).ok_or_else(|| err(&format!("unsupported extern `@{callee}`")))?,
                            )
                        } else {
                            return Err(err(&format!("unknown callee `@{callee}`")));
                        };
                        let dst = dst.as_ref().map(dest).transpose()?;
                        let args = args.iter().map(operand).collect::<Result<_, _>>()?;
                        Op::Call(dst, target, args)
                    }
                });
            }
            let term = match b.term.as_ref().ok_or_else(|| err(&format!("block `{}` has no terminator", b.label)))? {
                Terminator::Br(l) => Term::Br(label(l)?),
                Terminator::Cbr { cond, then_label, else_label } => {
                    Term::Cbr(slot(cond)?, label(then_label)?, label(else_label)?)
                }
                Terminator::Switch { scrutinee, default, cases } => {
                    let mut table = cases
                        .iter()
                        .map(|(v, l)| Ok((*v, label(l)?)))
                        .collect::<Result<Vec<_>, RunError>>()?;
                    table.sort_by_key(|(v, _)| *v);
                    Term::Switch(slot(scrutinee)?, table, label(default)?)
                }
                Terminator::Ret(v) => Term::Ret(v.as_ref().map(operand).transpose()?),
            };
            blocks.push(Block { ops, term });
        }
        Ok(Func { slot_count: slots.len(), blocks })
    }
}

struct Frame {
    func: u32,
    block: u32,
    ip: usize,
    slots: Vec<i64>,
    ret_dst: Option<Dest>,
}

impl<'m> Program<'m> {
    pub fn link(module: &'m IrModule) -> Result<Self, RunError> {
        let linker = Linker {
            module,
            funcs: module
                .functions
                .iter()
                .enumerate()
                .map(|(i, f)| (f.mangled_name.as_str(), i as u32))
                .collect(),
            globals: module.globals.iter().enumerate().map(|(i, g)| (g.name.as_str(), i as u32)).collect(),
        };
        let funcs = module.functions.iter().map(|f| linker.func(f)).collect::<Result<_, _>>()?;
        Ok(Program { module, funcs, globals: module.globals.iter().map(|g| g.init).collect() })
    }

    /// Resolve a source base name plus argument count to one function.
    /// Overloads sharing the base name are told apart by arity, then by
    /// preferring an all-`int` signature.
    pub fn resolve_entry(&self, base: &str, arity: usize) -> Result<usize, RunError> {
        let candidates: Vec<usize> = self
            .module
            .functions
            .iter()
            .enumerate()
            .filter(|(_, f)| f.source_name == base && f.params.len() == arity)
            .map(|(i, _)| i)
            .collect();
        let pick = match candidates.len() {
            0 => return Err(RunError::UnresolvedEntry(base.to_string())),
            1 => candidates,
            _ => candidates
                .into_iter()
                .filter(|&i| self.module.functions[i].params.iter().all(|p| p.ty == Type::Int))
                .collect(),
        };
        match pick.as_slice() {
            [one] => Ok(*one),
            [] => Err(RunError::UnresolvedEntry(base.to_string())),
            _ => Err(RunError::AmbiguousEntry(base.to_string())),
        }
    }

    pub fn function_index(&self, mangled: &str) -> Result<usize, RunError> {
        self.module
            .functions
            .iter()
            .position(|f| f.mangled_name == mangled)
            .ok_or_else(|| RunError::UnresolvedEntry(mangled.to_string()))
    }

    fn operand(&self, frame: &Frame, globals: &[i64], op: Operand) -> i64 {
        match op {
            Operand::Slot(s) => frame.slots[s as usize],
            Operand::Global(g) => globals[g as usize],
            Operand::Imm(v) => v,
        }
    }

    /// Execute function `index` with `args`.
    pub fn execute(&self, index: usize, args: &[i64], opts: RunOptions) -> Result<ExecutionResult, RunError> {
        let f = &self.module.functions[index];
        if f.params.len() != args.len() {
            return Err(RunError::ArityMismatch {
                name: f.mangled_name.clone(),
                expected: f.params.len(),
                got: args.len(),
            });
        }
        for (i, (p, &v)) in f.params.iter().zip(args).enumerate() {
            if p.ty == Type::Bool && v != 0 && v != 1 {
                return Err(RunError::BadArgument { name: f.mangled_name.clone(), index: i, value: v });
            }
        }

        let mut globals = self.globals.clone();
        let mut output = Vec::new();
        let mut trace = Vec::new();
        let mut steps = 0u64;
        let mut frames = vec![self.new_frame(index as u32, args.iter().copied(), None)];
        if opts.trace {
            trace.push((index as u32, 0u32));
        }

        let status = 'run: loop {
            if steps >= opts.fuel {
                break Status::FuelExhausted;
            }
            steps += 1;
            let depth = frames.len();
            let frame = frames.last_mut().expect("a frame is live until return");
            let block = &self.funcs[frame.func as usize].blocks[frame.block as usize];

            if let Some(op) = block.ops.get(frame.ip) {
                let (dst, value) = match op {
                    Op::Set(d, a) => (Some(*d), self.operand(frame, &globals, *a)),
                    Op::Bin(d, op, a, b) => {
                        let (a, b) = (self.operand(frame, &globals, *a), self.operand(frame, &globals, *b));
                        match eval_binop(*op, a, b) {
                            Some(v) => (Some(*d), v),
                            None => break 'run Status::Trapped(Trap::DivisionByZero),
                        }
                    }
                    Op::Cmp(d, rel, a, b) => {
                        let (a, b) = (self.operand(frame, &globals, *a), self.operand(frame, &globals, *b));
                        (Some(*d), i64::from(eval_rel(*rel, a, b)))
                    }
                    Op::Call(d, Callee::Builtin(Builtin::PrintInt), args) => {
                        output.push(self.operand(frame, &globals, args[0]));
                        frame.ip += 1;
                        if let Some(d) = d {
                            store(frame, &mut globals, *d, 0);
                        }
                        continue;
                    }
                    Op::Call(d, Callee::Func(target), args) => {
                        if depth >= MAX_CALL_DEPTH {
                            break 'run Status::Trapped(Trap::CallDepthExceeded);
                        }
                        let values: Vec<i64> = args.iter().map(|a| self.operand(frame, &globals, *a)).collect();
                        let callee = self.new_frame(*target, values.into_iter(), *d);
                        frames.push(callee);
                        if opts.trace {
                            trace.push((*target, 0));
                        }
                        continue;
                    }
                };
                if let Some(d) = dst {
                    store(frame, &mut globals, d, value);
                }
                frame.ip += 1;
                continue;
            }

            let next = match &block.term {
                Term::Br(l) => *l,
                Term::Cbr(c, t, e) => {
                    if frame.slots[*c as usize] != 0 {
                        *t
                    } else {
                        *e
                    }
                }
                Term::Switch(s, cases, default) => {
                    let v = frame.slots[*s as usize];
                    match cases.binary_search_by_key(&v, |(k, _)| *k) {
                        Ok(i) => cases[i].1,
                        Err(_) => *default,
                    }
                }
                Term::Ret(v) => {
                    let value = v.map(|v| self.operand(frame, &globals, v));
                    let done = frames.pop().expect("returning frame");
                    match frames.last_mut() {
                        None => break 'run Status::Returned(value),
                        Some(caller) => {
                            if let (Some(d), Some(v)) = (done.ret_dst, value) {
                                store(caller, &mut globals, d, v);
                            }
                            caller.ip += 1;
                            continue;
                        }
                    }
                }
            };
            frame.block = next;
            frame.ip = 0;
            if opts.trace {
                trace.push((frame.func, next));
            }
        };

        let trace = trace
            .into_iter()
            .map(|(f, b)| {
                let func = &self.module.functions[f as usize];
                BlockVisit { function: func.mangled_name.clone(), block: func.blocks[b as usize].label.clone() }
            })
            .collect();
        Ok(ExecutionResult { status, output, steps, trace })
    }

    fn new_frame(&self, func: u32, args: impl Iterator<Item = i64>, ret_dst: Option<Dest>) -> Frame {
        let mut slots = vec![0; self.funcs[func as usize].slot_count];
        for (slot, v) in slots.iter_mut().zip(args) {
            *slot = v;
        }
        Frame { func, block: 0, ip: 0, slots, ret_dst }
    }
}

fn store(frame: &mut Frame, globals: &mut [i64], d: Dest, v: i64) {
    match d {
        Dest::Slot(s) => frame.slots[s as usize] = v,
        Dest::Global(g) => globals[g as usize] = v,
    }
}

/// Wrapping 64-bit semantics; `None` on division by zero. Shift amounts are
/// taken modulo 64 and `shr` is arithmetic.
pub fn eval_binop(op: BinOp, a: i64, b: i64) -> Option<i64> {
    Some(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Sdiv => {
            if b == 0 {
                return None;
            }
            a.wrapping_div(b)
        }
        BinOp::Srem => {
            if b == 0 {
                return None;
            }
            a.wrapping_rem(b)
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a.wrapping_shl(b as u32),
        BinOp::Shr => a.wrapping_shr(b as u32),
    })
}

pub fn eval_rel(rel: Rel, a: i64, b: i64) -> bool {
    match rel {
        Rel::Eq => a == b,
        Rel::Ne => a != b,
        Rel::Lt => a < b,
        Rel::Le => a <= b,
        Rel::Gt => a > b,
        Rel::Ge => a >= b,
    }
}

/// Run the function whose source base name is `entry`.
pub fn run(m: &IrModule, entry: &str, args: &[i64], fuel: u64) -> Result<ExecutionResult, RunError> {
    run_with(m, entry, args, RunOptions::fuel(fuel))
}

pub fn run_with(m: &IrModule, entry: &str, args: &[i64], opts: RunOptions) -> Result<ExecutionResult, RunError> {
    let program = Program::link(m)?;
    let index = program.resolve_entry(entry, args.len())?;
    program.execute(index, args, opts)
}

/// Run a function by its mangled name.
pub fn run_function(m: &IrModule, mangled: &str, args: &[i64], opts: RunOptions) -> Result<ExecutionResult, RunError> {
    let program = Program::link(m)?;
    let index = program.function_index(mangled)?;
    program.execute(index, args, opts)
}

/// Median wall time of `repetitions` executions. The module is linked once,
/// outside the timed region.
pub fn timed_run(m: &IrModule, entry: &str, args: &[i64], repetitions: usize) -> Result<Duration, RunError> {
    let program = Program::link(m)?;
    let index = program.resolve_entry(entry, args.len())?;
    timed(repetitions, || program.execute(index, args, RunOptions::fuel(DEFAULT_FUEL)).map(drop))
}

pub fn timed_run_function(m: &IrModule, mangled: &str, args: &[i64], repetitions: usize) -> Result<Duration, RunError> {
    let program = Program::link(m)?;
    let index = program.function_index(mangled)?;
    timed(repetitions, || program.execute(index, args, RunOptions::fuel(DEFAULT_FUEL)).map(drop))
}

fn timed(repetitions: usize, mut once: impl FnMut() -> Result<(), RunError>) -> Result<Duration, RunError> {
    if repetitions < 3 {
        return Err(RunError::TooFewRepetitions(repetitions));
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        once()?;
        samples.push(start.elapsed());
    }
    samples.sort();
    Ok(samples[repetitions / 2])
}
