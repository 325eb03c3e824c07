//! The textual IR: in-memory form, parser, printer, validator and DOT export.
//!
//! Programs are non-SSA. Every function declares its mutable locals up front
//! and they start zeroed (`0` / `false`), so reads never observe an
//! undefined register. Values are signed 64-bit integers with wrapping
//! arithmetic, or booleans.

mod dot;
mod parse;
mod print;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dot::export_dot;
pub use parse::{parse_module, parse_unchecked, ParseError};
pub use print::print_module;
pub use validate::{validate, Diagnostic, DiagnosticCode, Location};

/// Value type of a local, parameter or literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Type {
    Int,
    Bool,
}

impl Type {
    /// Single-character code used by the simulated name mangling.
    pub fn mangle_code(self) -> char {
        match self {
            Type::Int => 'i',
            Type::Bool => 'b',
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Type::Int => "int",
            Type::Bool => "bool",
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Return type of a function or extern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetType {
    Int,
    Bool,
    Void,
}

impl RetType {
    pub fn value_type(self) -> Option<Type> {
        match self {
            RetType::Int => Some(Type::Int),
            RetType::Bool => Some(Type::Bool),
            RetType::Void => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            RetType::Int => "int",
            RetType::Bool => "bool",
            RetType::Void => "void",
        }
    }
}

impl From<Type> for RetType {
    fn from(ty: Type) -> Self {
        match ty {
            Type::Int => RetType::Int,
            Type::Bool => RetType::Bool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Literal {
    Int(i64),
    Bool(bool),
}

impl Literal {
    pub fn ty(self) -> Type {
        match self {
            Literal::Int(_) => Type::Int,
            Literal::Bool(_) => Type::Bool,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// An instruction operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Local(String),
    Global(String),
    Lit(Literal),
}

impl Value {
    pub fn local(name: impl Into<String>) -> Self {
        Value::Local(name.into())
    }

    pub fn int(v: i64) -> Self {
        Value::Lit(Literal::Int(v))
    }

    pub fn bool(b: bool) -> Self {
        Value::Lit(Literal::Bool(b))
    }
}

/// Assignable storage: a function local or a module global.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Place {
    Local(String),
    Global(String),
}

impl Place {
    pub fn local(name: impl Into<String>) -> Self {
        Place::Local(name.into())
    }

    pub fn as_value(&self) -> Value {
        match self {
            Place::Local(n) => Value::Local(n.clone()),
            Place::Global(n) => Value::Global(n.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Sdiv,
    Srem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Sdiv,
        BinOp::Srem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Sdiv => "sdiv",
            BinOp::Srem => "srem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        BinOp::ALL.into_iter().find(|op| op.keyword() == s)
    }

    /// `and`, `or` and `xor` also accept two booleans.
    pub fn accepts_bool(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or | BinOp::Xor)
    }

    pub fn is_division(self) -> bool {
        matches!(self, BinOp::Sdiv | BinOp::Srem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Rel {
    pub const ALL: [Rel; 6] = [Rel::Eq, Rel::Ne, Rel::Lt, Rel::Le, Rel::Gt, Rel::Ge];

    pub fn keyword(self) -> &'static str {
        match self {
            Rel::Eq => "eq",
            Rel::Ne => "ne",
            Rel::Lt => "lt",
            Rel::Le => "le",
            Rel::Gt => "gt",
            Rel::Ge => "ge",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Rel::ALL.into_iter().find(|r| r.keyword() == s)
    }

    /// Only `eq` and `ne` compare booleans.
    pub fn accepts_bool(self) -> bool {
        matches!(self, Rel::Eq | Rel::Ne)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Inst {
    Const { dst: Place, value: Literal },
    Binop { dst: Place, op: BinOp, lhs: Value, rhs: Value },
    Cmp { dst: Place, rel: Rel, lhs: Value, rhs: Value },
    Assign { dst: Place, src: Value },
    Call { dst: Option<Place>, callee: String, args: Vec<Value> },
}

impl Inst {
    pub fn dst(&self) -> Option<&Place> {
        match self {
            Inst::Const { dst, .. }
            | Inst::Binop { dst, .. }
            | Inst::Cmp { dst, .. }
            | Inst::Assign { dst, .. } => Some(dst),
            Inst::Call { dst, .. } => dst.as_ref(),
        }
    }

    /// Operands read by the instruction, in textual order.
    pub fn operands(&self) -> Vec<&Value> {
        match self {
            Inst::Const { .. } => Vec::new(),
            Inst::Binop { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Assign { src, .. } => vec![src],
            Inst::Call { args, .. } => args.iter().collect(),
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Value> {
        match self {
            Inst::Const { .. } => Vec::new(),
            Inst::Binop { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Assign { src, .. } => vec![src],
            Inst::Call { args, .. } => args.iter_mut().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Terminator {
    Br(String),
    Cbr { cond: String, then_label: String, else_label: String },
    Switch { scrutinee: String, default: String, cases: Vec<(i64, String)> },
    Ret(Option<Value>),
}

impl Terminator {
    /// Successor labels in edge order (switch: cases then default).
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Terminator::Br(l) => vec![l.as_str()],
            Terminator::Cbr { then_label, else_label, .. } => {
                vec![then_label.as_str(), else_label.as_str()]
            }
            Terminator::Switch { default, cases, .. } => cases
                .iter()
                .map(|(_, l)| l.as_str())
                .chain(std::iter::once(default.as_str()))
                .collect(),
            Terminator::Ret(_) => Vec::new(),
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut String> {
        match self {
            Terminator::Br(l) => vec![l],
            Terminator::Cbr { then_label, else_label, .. } => vec![then_label, else_label],
            Terminator::Switch { default, cases, .. } => cases
                .iter_mut()
                .map(|(_, l)| l)
                .chain(std::iter::once(default))
                .collect(),
            Terminator::Ret(_) => Vec::new(),
        }
    }

    /// Replace every successor equal to `from` with `to`.
    pub fn retarget(&mut self, from: &str, to: &str) {
        for l in self.successors_mut() {
            if l == from {
                *l = to.to_string();
            }
        }
    }
}

/// Why a block exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRole {
    #[default]
    Real,
    Bogus,
    Dispatcher,
}

impl BlockRole {
    pub fn keyword(self) -> &'static str {
        match self {
            BlockRole::Real => "real",
            BlockRole::Bogus => "bogus",
            BlockRole::Dispatcher => "dispatcher",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub label: String,
    pub insts: Vec<Inst>,
    /// `None` only in unvalidated modules; validation reports it.
    pub term: Option<Terminator>,
    pub role: BlockRole,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, insts: Vec<Inst>, term: Terminator) -> Self {
        BasicBlock { label: label.into(), insts, term: Some(term), role: BlockRole::Real }
    }

    pub fn with_role(mut self, role: BlockRole) -> Self {
        self.role = role;
        self
    }

    /// The block's terminator. Validated modules always have one.
    pub fn terminator(&self) -> &Terminator {
        self.term.as_ref().expect("validated block has a terminator")
    }

    pub fn terminator_mut(&mut self) -> &mut Terminator {
        self.term.as_mut().expect("validated block has a terminator")
    }

    pub fn successors(&self) -> Vec<&str> {
        self.term.as_ref().map(Terminator::successors).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub mangled_name: String,
    /// Name the function had in source; overloads share it.
    pub source_name: String,
    pub params: Vec<Param>,
    pub ret: RetType,
    pub locals: Vec<Param>,
    /// Entry block first.
    pub blocks: Vec<BasicBlock>,
}

impl IrFunction {
    pub fn entry(&self) -> &BasicBlock {
        &self.blocks[0]
    }

    pub fn entry_label(&self) -> &str {
        &self.blocks[0].label
    }

    pub fn param_types(&self) -> Vec<Type> {
        self.params.iter().map(|p| p.ty).collect()
    }

    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// Type of a parameter or local.
    pub fn local_type(&self, name: &str) -> Option<Type> {
        self.params
            .iter()
            .chain(self.locals.iter())
            .find(|p| p.name == name)
            .map(|p| p.ty)
    }

    /// Whether the mangled name is exactly the simulated mangling of its
    /// source name and parameter types.
    pub fn is_mangled(&self) -> bool {
        self.mangled_name == mangle(&self.source_name, &self.param_types())
    }

    pub fn inst_count(&self) -> usize {
        self.blocks.iter().map(|b| b.insts.len() + usize::from(b.term.is_some())).sum()
    }

    /// Declare a fresh local named after `hint`, avoiding existing names.
    pub fn fresh_local(&mut self, hint: &str, ty: Type) -> String {
        let mut name = hint.to_string();
        let mut n = 0usize;
        while self.local_type(&name).is_some() {
            n += 1;
            name = format!("{hint}.{n}");
        }
        self.locals.push(Param { name: name.clone(), ty });
        name
    }

    /// A block label not used in this function, derived from `hint`.
    pub fn fresh_label(&self, hint: &str) -> String {
        let mut name = hint.to_string();
        let mut n = 0usize;
        while self.block(&name).is_some() {
            n += 1;
            name = format!("{hint}.{n}");
        }
        name
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extern {
    pub name: String,
    pub params: Vec<Type>,
    pub ret: RetType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub init: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrModule {
    pub externs: Vec<Extern>,
    pub globals: Vec<Global>,
    pub functions: Vec<IrFunction>,
}

/// Recorded source identity of a function: base name plus parameter types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceName {
    pub base: String,
    pub params: Vec<Type>,
}

impl IrModule {
    pub fn function(&self, mangled: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.mangled_name == mangled)
    }

    pub fn function_mut(&mut self, mangled: &str) -> Option<&mut IrFunction> {
        self.functions.iter_mut().find(|f| f.mangled_name == mangled)
    }

    pub fn extern_decl(&self, name: &str) -> Option<&Extern> {
        self.externs.iter().find(|e| e.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// Mangled name → (base name, parameter types) for every defined function.
    pub fn source_names(&self) -> BTreeMap<String, SourceName> {
        self.functions
            .iter()
            .map(|f| {
                (
                    f.mangled_name.clone(),
                    SourceName { base: f.source_name.clone(), params: f.param_types() },
                )
            })
            .collect()
    }

    /// Every `@`-level name in the module: functions (mangled and source),
    /// externs and globals.
    pub fn symbol_names(&self) -> std::collections::BTreeSet<String> {
        self.functions
            .iter()
            .flat_map(|f| [f.mangled_name.clone(), f.source_name.clone()])
            .chain(self.externs.iter().map(|e| e.name.clone()))
            .chain(self.globals.iter().map(|g| g.name.clone()))
            .collect()
    }

    /// Total instructions plus terminators, the module's size measure.
    pub fn inst_count(&self) -> usize {
        self.functions.iter().map(IrFunction::inst_count).sum()
    }

    pub fn block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }
}

/// Simulated name mangling: `_O` + base-name length in characters + base
/// name + one type code per parameter.
///
/// ```
/// use iobf::ir::{mangle, Type};
/// assert_eq!(mangle("kthSmallest", &[Type::Int, Type::Int]), "_O11kthSmallestii");
/// ```
pub fn mangle(base: &str, params: &[Type]) -> String {
    let mut out = format!("_O{}{}", base.chars().count(), base);
    out.extend(params.iter().map(|t| t.mangle_code()));
    out
}

/// Whether `name` is a legal identifier in the textual IR.
pub fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => chars.all(is_ident_continue),
        _ => false,
    }
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

pub(crate) fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$' || c == '.'
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mangling_counts_characters_not_bytes() {
        assert_eq!(mangle("cουητ", &[Type::Bool]), "_O5cουητb");
        assert_eq!(mangle("f", &[]), "_O1f");
    }

    #[test]
    fn identifiers() {
        assert!(is_ident("kthSmallest"));
        assert!(is_ident("_O11kthSmallestii"));
        assert!(is_ident("κτhSmαllesτ"));
        assert!(is_ident("dispatch.1"));
        assert!(!is_ident("1abc"));
        assert!(!is_ident(""));
        assert!(!is_ident("a-b"));
    }

    #[test]
    fn switch_successors_list_default_last() {
        let t = Terminator::Switch {
            scrutinee: "s".into(),
            default: "d".into(),
            cases: vec![(1, "a".into()), (2, "a".into())],
        };
        assert_eq!(t.successors(), vec!["a", "a", "d"]);
    }
}
