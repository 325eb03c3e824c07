use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::*;
use crate::interp::Builtin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DiagnosticCode {
    Syntax,
    InvalidIdentifier,
    DuplicateSymbol,
    DuplicateLabel,
    DuplicateLocal,
    DuplicateCase,
    EmptyFunction,
    MissingTerminator,
    UndefinedLabel,
    UndefinedLocal,
    UndefinedGlobal,
    UnknownCallee,
    UnsupportedExtern,
    ArityMismatch,
    TypeMismatch,
    DivisionByZero,
}

/// Where a diagnostic points. Syntax errors carry line/column; semantic
/// ones carry function, block and instruction index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inst: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let (Some(l), Some(c)) = (self.line, self.col) {
            parts.push(format!("{l}:{c}"));
        }
        if let Some(func) = &self.function {
            parts.push(format!("@{func}"));
        }
        if let Some(b) = &self.block {
            parts.push(b.clone());
        }
        if let Some(i) = self.inst {
            parts.push(format!("#{i}"));
        }
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.code, self.location, self.message)
    }
}

struct Checker<'m> {
    module: &'m IrModule,
    out: Vec<Diagnostic>,
}

struct FnScope<'f> {
    func: &'f IrFunction,
    locals: HashMap<&'f str, Type>,
    labels: HashSet<&'f str>,
}

impl<'m> Checker<'m> {
    fn emit(&mut self, code: DiagnosticCode, location: Location, message: impl Into<String>) {
        self.out.push(Diagnostic { code, location, message: message.into() });
    }

    fn module(&mut self) {
        let m = self.module;
        let mut seen = HashSet::new();
        let names = m
            .externs
            .iter()
            .map(|e| &e.name)
            .chain(m.globals.iter().map(|g| &g.name))
            .chain(m.functions.iter().map(|f| &f.mangled_name));
        for name in names {
            let at = Location { function: Some(name.clone()), ..Default::default() };
            if !is_ident(name) {
                self.emit(DiagnosticCode::InvalidIdentifier, at.clone(), format!("`{name}` is not an identifier"));
            }
            if !seen.insert(name.as_str()) {
                self.emit(DiagnosticCode::DuplicateSymbol, at, format!("`@{name}` defined twice"));
            }
        }
        for e in &m.externs {
            let supported = Builtin::from_name(&e.name)
                .is_some_and(|b| b.params() == e.params.as_slice() && b.ret() == e.ret);
            if !supported {
                self.emit(
                    DiagnosticCode::UnsupportedExtern,
                    Location { function: Some(e.name.clone()), ..Default::default() },
                    format!("no built-in matches extern `@{}`", e.name),
                );
            }
        }
        for f in &m.functions {
            self.function(f);
        }
    }

    fn function(&mut self, f: &IrFunction) {
        let at = || Location { function: Some(f.mangled_name.clone()), ..Default::default() };
        if f.source_name.contains(['"', '\n']) || f.source_name.is_empty() {
            self.emit(DiagnosticCode::InvalidIdentifier, at(), "source name cannot be printed");
        }
        if f.blocks.is_empty() {
            self.emit(DiagnosticCode::EmptyFunction, at(), "function has no blocks");
            return;
        }

        let mut locals = HashMap::new();
        for p in f.params.iter().chain(f.locals.iter()) {
            if !is_ident(&p.name) {
                self.emit(DiagnosticCode::InvalidIdentifier, at(), format!("`%{}` is not an identifier", p.name));
            }
            if locals.insert(p.name.as_str(), p.ty).is_some() {
                self.emit(DiagnosticCode::DuplicateLocal, at(), format!("`%{}` declared twice", p.name));
            }
        }
        let mut labels = HashSet::new();
        for b in &f.blocks {
            if !is_ident(&b.label) {
                self.emit(DiagnosticCode::InvalidIdentifier, at(), format!("`{}` is not a label", b.label));
            }
            if !labels.insert(b.label.as_str()) {
                self.emit(DiagnosticCode::DuplicateLabel, at(), format!("label `{}` defined twice", b.label));
            }
        }

        let scope = FnScope { func: f, locals, labels };
        for b in &f.blocks {
            self.block(&scope, b);
        }
    }

    fn block(&mut self, s: &FnScope<'_>, b: &BasicBlock) {
        let loc = |inst: Option<usize>| Location {
            function: Some(s.func.mangled_name.clone()),
            block: Some(b.label.clone()),
            inst,
            ..Default::default()
        };
        for (i, inst) in b.insts.iter().enumerate() {
            self.inst(s, inst, loc(Some(i)));
        }
        let Some(term) = &b.term else {
            self.emit(DiagnosticCode::MissingTerminator, loc(None), format!("block `{}` has no terminator", b.label));
            return;
        };
        let at = loc(Some(b.insts.len()));
        for target in term.successors() {
            if !s.labels.contains(target) {
                self.emit(DiagnosticCode::UndefinedLabel, at.clone(), format!("no block `{target}`"));
            }
        }
        match term {
            Terminator::Br(_) => {}
            Terminator::Cbr { cond, .. } => {
                self.expect_type(s, &Value::Local(cond.clone()), Type::Bool, &at);
            }
            Terminator::Switch { scrutinee, cases, .. } => {
                self.expect_type(s, &Value::Local(scrutinee.clone()), Type::Int, &at);
                let mut seen = HashSet::new();
                for (v, _) in cases {
                    if !seen.insert(*v) {
                        self.emit(DiagnosticCode::DuplicateCase, at.clone(), format!("case {v} appears twice"));
                    }
                }
            }
            Terminator::Ret(value) => match (value, s.func.ret.value_type()) {
                (None, None) => {}
                (Some(v), Some(ty)) => self.expect_type(s, v, ty, &at),
                (Some(_), None) => {
                    self.emit(DiagnosticCode::TypeMismatch, at, "void function returns a value");
                }
                (None, Some(ty)) => {
                    self.emit(DiagnosticCode::TypeMismatch, at, format!("missing {ty} return value"));
                }
            },
        }
    }

    /// Type of an operand, reporting undefined names.
    fn value_type(&mut self, s: &FnScope<'_>, v: &Value, at: &Location) -> Option<Type> {
        match v {
            Value::Lit(l) => Some(l.ty()),
            Value::Local(n) => {
                let ty = s.locals.get(n.as_str()).copied();
                if ty.is_none() {
                    self.emit(DiagnosticCode::UndefinedLocal, at.clone(), format!("`%{n}` is not declared"));
                }
                ty
            }
            Value::Global(n) => {
                if self.module.global(n).is_some() {
                    Some(Type::Int)
                } else {
                    self.emit(DiagnosticCode::UndefinedGlobal, at.clone(), format!("no global `@{n}`"));
                    None
                }
            }
        }
    }

    fn expect_type(&mut self, s: &FnScope<'_>, v: &Value, want: Type, at: &Location) {
        if let Some(got) = self.value_type(s, v, at) {
            if got != want {
                self.emit(DiagnosticCode::TypeMismatch, at.clone(), format!("expected {want}, found {got}"));
            }
        }
    }

    fn store(&mut self, s: &FnScope<'_>, dst: &Place, ty: Option<Type>, at: &Location) {
        let dst_ty = self.value_type(s, &dst.as_value(), at);
        if let (Some(d), Some(t)) = (dst_ty, ty) {
            if d != t {
                self.emit(DiagnosticCode::TypeMismatch, at.clone(), format!("cannot store {t} into {d}"));
            }
        }
    }

    fn inst(&mut self, s: &FnScope<'_>, inst: &Inst, at: Location) {
        match inst {
            Inst::Const { dst, value } => self.store(s, dst, Some(value.ty()), &at),
            Inst::Assign { dst, src } => {
                let ty = self.value_type(s, src, &at);
                self.store(s, dst, ty, &at);
            }
            Inst::Binop { dst, op, lhs, rhs } => {
                let (l, r) = (self.value_type(s, lhs, &at), self.value_type(s, rhs, &at));
                let ty = match (l, r) {
                    (Some(l), Some(r)) if l == r && (l == Type::Int || op.accepts_bool()) => Some(l),
                    (Some(l), Some(r)) => {
                        self.emit(DiagnosticCode::TypeMismatch, at.clone(), format!("`{}` on {l} and {r}", op.keyword()));
                        None
                    }
                    _ => None,
                };
                if op.is_division() && *rhs == Value::int(0) {
                    self.emit(DiagnosticCode::DivisionByZero, at.clone(), "division by constant zero");
                }
                self.store(s, dst, ty, &at);
            }
            Inst::Cmp { dst, rel, lhs, rhs } => {
                let (l, r) = (self.value_type(s, lhs, &at), self.value_type(s, rhs, &at));
                if let (Some(l), Some(r)) = (l, r) {
                    if l != r || (l == Type::Bool && !rel.accepts_bool()) {
                        self.emit(DiagnosticCode::TypeMismatch, at.clone(), format!("`cmp {}` on {l} and {r}", rel.keyword()));
                    }
                }
                self.store(s, dst, Some(Type::Bool), &at);
            }
            Inst::Call { dst, callee, args } => {
                let sig = if let Some(f) = self.module.function(callee) {
                    Some((f.param_types(), f.ret))
                } else {
                    self.module.extern_decl(callee).map(|e| (e.params.clone(), e.ret))
                };
                let Some((params, ret)) = sig else {
                    self.emit(DiagnosticCode::UnknownCallee, at, format!("no function or extern `@{callee}`"));
                    return;
                };
                if params.len() != args.len() {
                    self.emit(
                        DiagnosticCode::ArityMismatch,
                        at.clone(),
                        format!("`@{callee}` takes {} arguments, got {}", params.len(), args.len()),
                    );
                } else {
                    for (arg, ty) in args.iter().zip(params) {
                        self.expect_type(s, arg, ty, &at);
                    }
                }
                if let Some(dst) = dst {
                    match ret.value_type() {
                        Some(ty) => self.store(s, dst, Some(ty), &at),
                        None => {
                            self.emit(DiagnosticCode::TypeMismatch, at, format!("`@{callee}` returns void"));
                        }
                    }
                }
            }
        }
    }
}

/// Check every structural and typing invariant. Empty means valid.
pub fn validate(m: &IrModule) -> Vec<Diagnostic> {
    let mut checker = Checker { module: m, out: Vec::new() };
    checker.module();
    checker.out
}

#[cfg(test)]
mod tests {
    use super::super::parse_unchecked;
    use super::*;

    fn codes(text: &str) -> Vec<DiagnosticCode> {
        validate(&parse_unchecked(text).unwrap()).into_iter().map(|d| d.code).collect()
    }

    #[test]
    fn well_formed_module_has_no_diagnostics() {
        assert!(codes("extern @print_int(int) -> void\nfunc @main() -> int { entry: call @print_int(1) ret 0 }").is_empty());
    }

    #[test]
    fn missing_terminator() {
        let m = IrModule {
            functions: vec![IrFunction {
                mangled_name: "f".into(),
                source_name: "f".into(),
                params: vec![],
                ret: RetType::Void,
                locals: vec![],
                blocks: vec![BasicBlock { label: "entry".into(), insts: vec![], term: None, role: BlockRole::Real }],
            }],
            ..Default::default()
        };
        let diags = validate(&m);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagnosticCode::MissingTerminator);
    }

    #[test]
    fn unknown_callee() {
        assert_eq!(codes("func @f() -> void { entry: call @ghost() ret }"), vec![DiagnosticCode::UnknownCallee]);
    }

    #[test]
    fn undefined_names() {
        assert_eq!(codes("func @f() -> int { entry: ret %x }"), vec![DiagnosticCode::UndefinedLocal]);
        assert_eq!(codes("func @f() -> int { entry: ret @x }"), vec![DiagnosticCode::UndefinedGlobal]);
        assert_eq!(codes("func @f() -> void { entry: br nowhere }"), vec![DiagnosticCode::UndefinedLabel]);
    }

    #[test]
    fn duplicates() {
        assert_eq!(
            codes("func @f() -> void { a: br b b: ret b: ret }"),
            vec![DiagnosticCode::DuplicateLabel]
        );
        assert_eq!(
            codes("func @f(%x: int) -> void { local %x: bool a: ret }"),
            vec![DiagnosticCode::DuplicateLocal]
        );
        assert_eq!(
            codes("func @f() -> void { a: ret } func @f() -> void { a: ret }"),
            vec![DiagnosticCode::DuplicateSymbol]
        );
    }

    #[test]
    fn type_errors() {
        assert_eq!(
            codes("func @f(%x: int) -> void { e: cbr %x, a, a a: ret }"),
            vec![DiagnosticCode::TypeMismatch]
        );
        assert_eq!(
            codes("func @f(%b: bool) -> void { e: %b = add %b, %b ret }"),
            vec![DiagnosticCode::TypeMismatch]
        );
        assert_eq!(
            codes("func @f(%b: bool) -> void { e: %b = cmp lt %b, %b ret }"),
            vec![DiagnosticCode::TypeMismatch]
        );
        assert!(codes("func @f(%b: bool) -> void { e: %b = xor %b, true ret }").is_empty());
        assert_eq!(codes("func @f() -> int { e: ret }"), vec![DiagnosticCode::TypeMismatch]);
        assert_eq!(
            codes("func @g() -> void { e: ret } func @f() -> int { local %x: int e: %x = call @g() ret %x }"),
            vec![DiagnosticCode::TypeMismatch]
        );
    }

    #[test]
    fn static_division_by_zero() {
        assert_eq!(
            codes("func @f(%x: int) -> int { e: %x = srem %x, 0 ret %x }"),
            vec![DiagnosticCode::DivisionByZero]
        );
    }

    #[test]
    fn arity_and_extern_checks() {
        assert_eq!(
            codes("extern @print_int(int) -> void func @f() -> void { e: call @print_int() ret }"),
            vec![DiagnosticCode::ArityMismatch]
        );
        assert_eq!(codes("extern @puts(int) -> void"), vec![DiagnosticCode::UnsupportedExtern]);
    }
}
