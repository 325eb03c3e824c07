use std::fmt::Write;

use super::*;

fn value(v: &Value) -> String {
    match v {
        Value::Local(n) => format!("%{n}"),
        Value::Global(n) => format!("@{n}"),
        Value::Lit(l) => l.to_string(),
    }
}

fn place(p: &Place) -> String {
    match p {
        Place::Local(n) => format!("%{n}"),
        Place::Global(n) => format!("@{n}"),
    }
}

fn call(callee: &str, args: &[Value]) -> String {
    let args: Vec<_> = args.iter().map(value).collect();
    format!("call @{callee}({})", args.join(", "))
}

pub(crate) fn inst_text(inst: &Inst) -> String {
    match inst {
        Inst::Const { dst, value: lit } => format!("{} = {lit}", place(dst)),
        Inst::Assign { dst, src } => format!("{} = {}", place(dst), value(src)),
        Inst::Binop { dst, op, lhs, rhs } => {
            format!("{} = {} {}, {}", place(dst), op.keyword(), value(lhs), value(rhs))
        }
        Inst::Cmp { dst, rel, lhs, rhs } => {
            format!("{} = cmp {} {}, {}", place(dst), rel.keyword(), value(lhs), value(rhs))
        }
        Inst::Call { dst: Some(dst), callee, args } => format!("{} = {}", place(dst), call(callee, args)),
        Inst::Call { dst: None, callee, args } => call(callee, args),
    }
}

pub(crate) fn term_text(term: &Terminator) -> String {
    match term {
        Terminator::Br(l) => format!("br {l}"),
        Terminator::Cbr { cond, then_label, else_label } => format!("cbr %{cond}, {then_label}, {else_label}"),
        Terminator::Switch { scrutinee, default, cases } => {
            let cases: Vec<_> = cases.iter().map(|(v, l)| format!("{v} -> {l}")).collect();
            format!("switch %{scrutinee} [{}] default {default}", cases.join(" "))
        }
        Terminator::Ret(None) => "ret".to_string(),
        Terminator::Ret(Some(v)) => format!("ret {}", value(v)),
    }
}

fn function(out: &mut String, f: &IrFunction) {
    let params: Vec<_> = f.params.iter().map(|p| format!("%{}: {}", p.name, p.ty)).collect();
    let _ = write!(out, "func @{}", f.mangled_name);
    if f.source_name != f.mangled_name {
        let _ = write!(out, " src \"{}\"", f.source_name);
    }
    let _ = writeln!(out, "({}) -> {} {{", params.join(", "), f.ret.keyword());
    for l in &f.locals {
        let _ = writeln!(out, "  local %{}: {}", l.name, l.ty);
    }
    for b in &f.blocks {
        match b.role {
            BlockRole::Real => {
                let _ = writeln!(out, "{}:", b.label);
            }
            role => {
                let _ = writeln!(out, "{}: !{}", b.label, role.keyword());
            }
        }
        for inst in &b.insts {
            let _ = writeln!(out, "  {}", inst_text(inst));
        }
        if let Some(t) = &b.term {
            let _ = writeln!(out, "  {}", term_text(t));
        }
    }
    out.push_str("}\n");
}

/// Canonical text of a module: externs, then globals, then functions, each
/// group in declaration order and separated by a blank line.
pub fn print_module(m: &IrModule) -> String {
    let mut sections = Vec::new();
    if !m.externs.is_empty() {
        let mut s = String::new();
        for e in &m.externs {
            let params: Vec<_> = e.params.iter().map(|t| t.keyword()).collect();
            let _ = writeln!(s, "extern @{}({}) -> {}", e.name, params.join(", "), e.ret.keyword());
        }
        sections.push(s);
    }
    if !m.globals.is_empty() {
        let mut s = String::new();
        for g in &m.globals {
            let _ = writeln!(s, "global @{} = {}", g.name, g.init);
        }
        sections.push(s);
    }
    for f in &m.functions {
        let mut s = String::new();
        function(&mut s, f);
        sections.push(s);
    }
    sections.join("\n")
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    fn squash(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn round_trip_modulo_whitespace() {
        let src = "func @f() -> void { entry: ret }";
        let printed = print_module(&parse_module(src).unwrap());
        assert_eq!(squash(&printed), squash(src));
        assert_eq!(printed, "func @f() -> void {\nentry:\n  ret\n}\n");
    }

    #[test]
    fn functions_keep_declared_order() {
        let m = parse_module("func @zeta() -> void { e: ret }\nfunc @alpha() -> void { e: ret }").unwrap();
        let printed = print_module(&m);
        assert!(printed.find("@zeta").unwrap() < printed.find("@alpha").unwrap());
    }

    #[test]
    fn normalization_is_a_fixed_point() {
        let src = "global @g = 3 ; counter\nextern @print_int(int) -> void\n\
                   func @_O1gi src \"g\" (%x: int) -> int { local %t: int\n e: !dispatcher %t = mul %x, @g\n \
                   switch %t [1 -> a, 2 -> b] default a\n a: ret %t\n b: !bogus call @print_int(%t) ret 0 }";
        let once = print_module(&parse_module(src).unwrap());
        let twice = print_module(&parse_module(&once).unwrap());
        assert_eq!(once, twice);
        assert!(once.starts_with("extern"));
        assert!(once.contains("b: !bogus"));
    }
}
