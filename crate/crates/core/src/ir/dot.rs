use std::fmt::Write;

use super::*;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz DOT for a function's control-flow graph. Bogus blocks are
/// filled grey, dispatcher blocks drawn as diamonds.
pub fn export_dot(f: &IrFunction) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&f.mangled_name));
    out.push_str("  node [shape=box];\n");
    for b in &f.blocks {
        let attrs = match b.role {
            BlockRole::Real => String::new(),
            BlockRole::Bogus => ", style=filled, fillcolor=grey".to_string(),
            BlockRole::Dispatcher => ", shape=diamond".to_string(),
        };
        let _ = writeln!(out, "  {} [label={}{}];", quote(&b.label), quote(&b.label), attrs);
    }
    for b in &f.blocks {
        let Some(term) = &b.term else { continue };
        let edges: Vec<(String, &str)> = match term {
            Terminator::Br(l) => vec![(String::new(), l.as_str())],
            Terminator::Cbr { then_label, else_label, .. } => {
                vec![("T".into(), then_label.as_str()), ("F".into(), else_label.as_str())]
            }
            Terminator::Switch { default, cases, .. } => cases
                .iter()
                .map(|(v, l)| (v.to_string(), l.as_str()))
                .chain(std::iter::once(("default".to_string(), default.as_str())))
                .collect(),
            Terminator::Ret(_) => Vec::new(),
        };
        for (label, to) in edges {
            let attr = if label.is_empty() { String::new() } else { format!(" [label={}]", quote(&label)) };
            let _ = writeln!(out, "  {} -> {}{};", quote(&b.label), quote(to), attr);
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    #[test]
    fn single_block() {
        let m = parse_module("func @f() -> void { entry: ret }").unwrap();
        let dot = export_dot(&m.functions[0]);
        assert_eq!(dot.matches("[label=").count(), 1);
        assert_eq!(dot.matches("->").count(), 0);
    }

    #[test]
    fn straight_line_chain() {
        let m = parse_module("func @f() -> void { A: br B1 B1: br C C: ret }").unwrap();
        let dot = export_dot(&m.functions[0]);
        assert_eq!(dot.lines().filter(|l| l.contains(" [label=") && !l.contains("->")).count(), 3);
        assert_eq!(dot.matches(" -> ").count(), 2);
        assert!(dot.contains("\"A\" -> \"B1\";"));
    }

    #[test]
    fn bogus_nodes_are_grey() {
        let m = parse_module("func @f() -> void { A: br B B: ret G: !bogus br B }").unwrap();
        let dot = export_dot(&m.functions[0]);
        assert!(dot.contains("\"G\" [label=\"G\", style=filled, fillcolor=grey];"));
        assert!(!dot.contains("\"B\" [label=\"B\", style"));
    }
}
