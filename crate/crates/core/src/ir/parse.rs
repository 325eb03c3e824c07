use std::fmt;

use super::validate::{validate, Diagnostic, DiagnosticCode, Location};
use super::*;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    At(String),
    Percent(String),
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Arrow,
    Eq,
    Bang,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::At(s) => write!(f, "`@{s}`"),
            Tok::Percent(s) => write!(f, "`%{s}`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Bang => f.write_str("`!`"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

/// Failure to turn text into a valid module.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", render(.diagnostics))]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ParseError {
    fn syntax(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            diagnostics: vec![Diagnostic {
                code: DiagnosticCode::Syntax,
                location: Location { line: Some(pos.line), col: Some(pos.col), ..Default::default() },
                message: message.into(),
            }],
        }
    }

    pub fn codes(&self) -> Vec<DiagnosticCode> {
        self.diagnostics.iter().map(|d| d.code).collect()
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            c if c.is_whitespace() => {
                bump!();
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump!();
                }
            }
            '@' | '%' => {
                bump!();
                let mut name = String::new();
                while let Some(&c) = chars.peek() {
                    let ok = if name.is_empty() { is_ident_start(c) } else { is_ident_continue(c) };
                    if !ok {
                        break;
                    }
                    name.push(c);
                    bump!();
                }
                if name.is_empty() {
                    return Err(ParseError::syntax(pos, format!("expected identifier after `{c}`")));
                }
                out.push((if c == '@' { Tok::At(name) } else { Tok::Percent(name) }, pos));
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        Some('"') => break,
                        Some('\n') | None => {
                            return Err(ParseError::syntax(pos, "unterminated string"));
                        }
                        Some(c) => s.push(c),
                    }
                }
                out.push((Tok::Str(s), pos));
            }
            '-' => {
                bump!();
                if chars.peek() == Some(&'>') {
                    bump!();
                    out.push((Tok::Arrow, pos));
                } else if chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                    let mut digits = String::from("-");
                    while let Some(&d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                        digits.push(d);
                        bump!();
                    }
                    let v = digits
                        .parse::<i64>()
                        .map_err(|_| ParseError::syntax(pos, format!("integer out of range: {digits}")))?;
                    out.push((Tok::Int(v), pos));
                } else {
                    return Err(ParseError::syntax(pos, "stray `-`"));
                }
            }
            c if c.is_ascii_digit() => {
                let mut digits = String::new();
                while let Some(&d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                    digits.push(d);
                    bump!();
                }
                let v = digits
                    .parse::<i64>()
                    .map_err(|_| ParseError::syntax(pos, format!("integer out of range: {digits}")))?;
                out.push((Tok::Int(v), pos));
            }
            c if is_ident_start(c) => {
                let mut name = String::new();
                while let Some(&c) = chars.peek().filter(|c| is_ident_continue(**c)) {
                    name.push(c);
                    bump!();
                }
                out.push((Tok::Ident(name), pos));
            }
            _ => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    '=' => Tok::Eq,
                    '!' => Tok::Bang,
                    other => {
                        return Err(ParseError::syntax(pos, format!("unexpected character {other:?}")));
                    }
                };
                bump!();
                out.push((tok, pos));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.at + n).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> PResult<Tok> {
        let pos = self.pos();
        let tok = self
            .toks
            .get(self.at)
            .map(|(t, _)| t.clone())
            .ok_or_else(|| ParseError::syntax(pos, "unexpected end of input"))?;
        self.at += 1;
        Ok(tok)
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        let found = self.peek().map(ToString::to_string).unwrap_or_else(|| "end of input".into());
        Err(ParseError::syntax(self.pos(), format!("expected {expected}, found {found}")))
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            self.error(&tok.to_string())
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.at += 1;
                Ok(())
            }
            _ => self.error(&format!("`{kw}`")),
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.error("identifier"),
        }
    }

    fn global_name(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::At(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.error("`@name`"),
        }
    }

    fn local_name(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Percent(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.error("`%name`"),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.at += 1;
                Ok(v)
            }
            _ => self.error("integer"),
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "int" => {
                self.at += 1;
                Ok(Type::Int)
            }
            Some(Tok::Ident(s)) if s == "bool" => {
                self.at += 1;
                Ok(Type::Bool)
            }
            _ => self.error("type `int` or `bool`"),
        }
    }

    fn ret_type(&mut self) -> PResult<RetType> {
        if let Some(Tok::Ident(s)) = self.peek() {
            if s == "void" {
                self.at += 1;
                return Ok(RetType::Void);
            }
        }
        Ok(self.ty()?.into())
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek().cloned() {
            Some(Tok::Percent(s)) => {
                self.at += 1;
                Ok(Value::Local(s))
            }
            Some(Tok::At(s)) => {
                self.at += 1;
                Ok(Value::Global(s))
            }
            Some(Tok::Int(v)) => {
                self.at += 1;
                Ok(Value::int(v))
            }
            Some(Tok::Ident(s)) if s == "true" || s == "false" => {
                self.at += 1;
                Ok(Value::bool(s == "true"))
            }
            _ => self.error("operand"),
        }
    }

    fn module(&mut self) -> PResult<IrModule> {
        let mut m = IrModule::default();
        while let Some(tok) = self.peek() {
            match tok {
                Tok::Ident(kw) if kw == "extern" => m.externs.push(self.extern_decl()?),
                Tok::Ident(kw) if kw == "global" => m.globals.push(self.global_decl()?),
                Tok::Ident(kw) if kw == "func" => m.functions.push(self.function()?),
                _ => return self.error("`func`, `global` or `extern`"),
            }
        }
        Ok(m)
    }

    fn extern_decl(&mut self) -> PResult<Extern> {
        self.keyword("extern")?;
        let name = self.global_name()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                params.push(self.ty()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        self.expect(Tok::Arrow)?;
        let ret = self.ret_type()?;
        Ok(Extern { name, params, ret })
    }

    fn global_decl(&mut self) -> PResult<Global> {
        self.keyword("global")?;
        let name = self.global_name()?;
        self.expect(Tok::Eq)?;
        let init = self.int()?;
        Ok(Global { name, init })
    }

    fn typed_name(&mut self) -> PResult<Param> {
        let name = self.local_name()?;
        self.expect(Tok::Colon)?;
        let ty = self.ty()?;
        Ok(Param { name, ty })
    }

    fn function(&mut self) -> PResult<IrFunction> {
        self.keyword("func")?;
        let mangled_name = self.global_name()?;
        let source_name = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "src") {
            self.at += 1;
            match self.next()? {
                Tok::Str(s) => s,
                _ => {
                    self.at -= 1;
                    return self.error("quoted source name");
                }
            }
        } else {
            mangled_name.clone()
        };
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                params.push(self.typed_name()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        self.expect(Tok::Arrow)?;
        let ret = self.ret_type()?;
        self.expect(Tok::LBrace)?;

        let mut locals = Vec::new();
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "local") {
            self.at += 1;
            locals.push(self.typed_name()?);
        }

        let mut blocks = Vec::new();
        while !self.eat(&Tok::RBrace) {
            blocks.push(self.block()?);
        }
        if blocks.is_empty() {
            return Err(ParseError::syntax(self.pos(), "function has no blocks"));
        }
        Ok(IrFunction { mangled_name, source_name, params, ret, locals, blocks })
    }

    fn at_label(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(_))) && self.peek_at(1) == Some(&Tok::Colon)
    }

    fn block(&mut self) -> PResult<BasicBlock> {
        if !self.at_label() {
            return self.error("block label");
        }
        let label = self.ident()?;
        self.expect(Tok::Colon)?;
        let mut role = BlockRole::Real;
        if self.eat(&Tok::Bang) {
            role = match self.ident()?.as_str() {
                "bogus" => BlockRole::Bogus,
                "dispatcher" => BlockRole::Dispatcher,
                "real" => BlockRole::Real,
                other => {
                    self.at -= 1;
                    return Err(ParseError::syntax(self.pos(), format!("unknown block role `{other}`")));
                }
            };
        }

        let mut insts = Vec::new();
        loop {
            if self.at_label() || self.peek() == Some(&Tok::RBrace) || self.peek().is_none() {
                return Ok(BasicBlock { label, insts, term: None, role });
            }
            match self.peek() {
                Some(Tok::Ident(kw)) if matches!(kw.as_str(), "br" | "cbr" | "switch" | "ret") => {
                    let term = self.terminator()?;
                    return Ok(BasicBlock { label, insts, term: Some(term), role });
                }
                Some(Tok::Ident(kw)) if kw == "call" => {
                    let (callee, args) = self.call()?;
                    insts.push(Inst::Call { dst: None, callee, args });
                }
                Some(Tok::Percent(_)) | Some(Tok::At(_)) => insts.push(self.inst()?),
                _ => return self.error("instruction or terminator"),
            }
        }
    }

    fn call(&mut self) -> PResult<(String, Vec<Value>)> {
        self.keyword("call")?;
        let callee = self.global_name()?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.value()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok((callee, args))
    }

    fn inst(&mut self) -> PResult<Inst> {
        let dst = match self.next()? {
            Tok::Percent(s) => Place::Local(s),
            Tok::At(s) => Place::Global(s),
            _ => unreachable!("caller checked the destination token"),
        };
        self.expect(Tok::Eq)?;
        match self.peek().cloned() {
            Some(Tok::Ident(kw)) if kw == "call" => {
                let (callee, args) = self.call()?;
                Ok(Inst::Call { dst: Some(dst), callee, args })
            }
            Some(Tok::Ident(kw)) if kw == "cmp" => {
                self.at += 1;
                let rel_pos = self.pos();
                let rel = self.ident()?;
                let rel = Rel::from_keyword(&rel)
                    .ok_or_else(|| ParseError::syntax(rel_pos, format!("unknown relation `{rel}`")))?;
                let lhs = self.value()?;
                self.expect(Tok::Comma)?;
                let rhs = self.value()?;
                Ok(Inst::Cmp { dst, rel, lhs, rhs })
            }
            Some(Tok::Ident(kw)) if kw != "true" && kw != "false" => {
                let op = BinOp::from_keyword(&kw).map_or_else(|| self.error("operation"), Ok)?;
                self.at += 1;
                let lhs = self.value()?;
                self.expect(Tok::Comma)?;
                let rhs = self.value()?;
                Ok(Inst::Binop { dst, op, lhs, rhs })
            }
            _ => match self.value()? {
                Value::Lit(value) => Ok(Inst::Const { dst, value }),
                src => Ok(Inst::Assign { dst, src }),
            },
        }
    }

    fn terminator(&mut self) -> PResult<Terminator> {
        let kw = self.ident()?;
        match kw.as_str() {
            "br" => Ok(Terminator::Br(self.ident()?)),
            "cbr" => {
                let cond = self.local_name()?;
                self.expect(Tok::Comma)?;
                let then_label = self.ident()?;
                self.expect(Tok::Comma)?;
                let else_label = self.ident()?;
                Ok(Terminator::Cbr { cond, then_label, else_label })
            }
            "switch" => {
                let scrutinee = self.local_name()?;
                self.expect(Tok::LBracket)?;
                let mut cases = Vec::new();
                while !self.eat(&Tok::RBracket) {
                    let v = self.int()?;
                    self.expect(Tok::Arrow)?;
                    cases.push((v, self.ident()?));
                    self.eat(&Tok::Comma);
                }
                self.keyword("default")?;
                let default = self.ident()?;
                Ok(Terminator::Switch { scrutinee, default, cases })
            }
            "ret" => {
                let has_value = match self.peek() {
                    Some(Tok::Percent(_)) | Some(Tok::At(_)) | Some(Tok::Int(_)) => true,
                    Some(Tok::Ident(s)) => {
                        (s == "true" || s == "false") && self.peek_at(1) != Some(&Tok::Colon)
                    }
                    _ => false,
                };
                Ok(Terminator::Ret(if has_value { Some(self.value()?) } else { None }))
            }
            _ => unreachable!("caller checked the terminator keyword"),
        }
    }
}

/// Parse without semantic validation. Only syntax errors are reported;
/// blocks without a terminator come back with `term: None`.
pub fn parse_unchecked(text: &str) -> Result<IrModule, ParseError> {
    let toks = lex(text)?;
    let end = {
        let lines = text.split('\n').count();
        let last = text.rsplit('\n').next().unwrap_or("");
        Pos { line: lines, col: last.chars().count() + 1 }
    };
    Parser { toks, at: 0, end }.module()
}

/// Parse and validate a module.
pub fn parse_module(text: &str) -> Result<IrModule, ParseError> {
    let m = parse_unchecked(text)?;
    let diagnostics = validate(&m);
    if diagnostics.is_empty() {
        Ok(m)
    } else {
        Err(ParseError { diagnostics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_module() {
        let m = parse_module("func @main() -> int { entry: ret 0 }").unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].blocks.len(), 1);
        assert_eq!(m.functions[0].source_name, "main");
        assert_eq!(m.functions[0].blocks[0].term, Some(Terminator::Ret(Some(Value::int(0)))));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_module("func @main() -> int {\n entry:\n  %x = frob 1, 2\n ret 0 }").unwrap_err();
        assert_eq!(err.codes(), vec![DiagnosticCode::Syntax]);
        let loc = &err.diagnostics[0].location;
        assert_eq!((loc.line, loc.col), (Some(3), Some(8)));
    }

    #[test]
    fn duplicate_case_is_rejected() {
        let text = "func @f(%x: int) -> int {\nentry:\n  switch %x [3 -> a 3 -> b] default a\na:\n  ret 1\nb:\n  ret 2\n}";
        let err = parse_module(text).unwrap_err();
        assert_eq!(err.codes(), vec![DiagnosticCode::DuplicateCase]);
    }

    #[test]
    fn missing_terminator_survives_unchecked_parse() {
        let m = parse_unchecked("func @f() -> void {\nentry:\n  call @f()\nnext:\n  ret\n}").unwrap();
        assert!(m.functions[0].blocks[0].term.is_none());
        let err = parse_module("func @f() -> void {\nentry:\n  call @f()\nnext:\n  ret\n}").unwrap_err();
        assert!(err.codes().contains(&DiagnosticCode::MissingTerminator));
    }

    #[test]
    fn instruction_forms() {
        let text = r#"
extern @print_int(int) -> void
global @g = -5
func @_O1fi src "f" (%a: int) -> bool {
  local %x: int
  local %b: bool
entry: !real
  %x = 7
  %x = %a
  @g = add @g, -1
  %b = cmp le %x, @g
  %b = xor %b, true
  call @print_int(%x)
  %x = call @_O1fi2(%x)
  ret %b
}
func @_O1fi2 src "f" (%a: int) -> int {
entry:
  ret %a
}
"#;
        let m = parse_module(text).unwrap();
        let f = &m.functions[0];
        assert_eq!(f.source_name, "f");
        assert_eq!(f.blocks[0].insts.len(), 7);
        assert!(matches!(f.blocks[0].insts[0], Inst::Const { value: Literal::Int(7), .. }));
        assert!(matches!(f.blocks[0].insts[1], Inst::Assign { .. }));
        assert!(matches!(f.blocks[0].insts[2], Inst::Binop { op: BinOp::Add, .. }));
        assert_eq!(m.globals[0].init, -5);
    }

    #[test]
    fn ret_followed_by_label_named_like_a_literal() {
        let text = "func @f(%c: bool) -> void {\nentry:\n  cbr %c, true, b\ntrue:\n  ret\nb:\n  ret\n}";
        let m = parse_module(text).unwrap();
        assert_eq!(m.functions[0].blocks.len(), 3);
        assert_eq!(m.functions[0].blocks[1].term, Some(Terminator::Ret(None)));
    }

    #[test]
    fn greek_identifiers_parse() {
        let m = parse_module("func @cουητ() -> void { entry: ret }").unwrap();
        assert_eq!(m.functions[0].mangled_name, "cουητ");
    }

    #[test]
    fn integer_bounds() {
        assert!(parse_module("func @f() -> int { entry: ret -9223372036854775808 }").is_ok());
        let err = parse_module("func @f() -> int { entry: ret 9223372036854775808 }").unwrap_err();
        assert_eq!(err.codes(), vec![DiagnosticCode::Syntax]);
    }
}
