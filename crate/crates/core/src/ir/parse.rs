//! Text format reader.
//!
//! ```text
//! type Obj { i32 a @0; i32 b @4; size 8 }
//! global @table : i8[16]
//! entry @main
//!
//! fn @main() -> void {
//! entry:
//!   %buf = alloc 16
//!   %p = ptradd i8, %buf, 32
//!   store i8 120, %p
//!   ret
//! }
//! ```
//!
//! Comments start with `//`. Instructions are one per line.

use std::collections::HashMap;

use thiserror::Error;

use super::{
    BinOp, Block, BlockId, Callee, CmpPred, Field, FuncId, Function, Global, GlobalId, Inst,
    InstKind, IntWidth, Operand, Program, RecordKind, Site, Ty, TypeDef, TypeId, ValueId,
    ValueInfo,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown value `{0}`")]
    UnknownValue(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("int-to-pointer cast forbidden")]
    IntToPtr,
    #[error("invalid pointer arithmetic: {0}")]
    BadPtrAdd(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Local(String),
    GlobalName(String),
    Str(String),
    Punct(&'static str),
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line_no = ln + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let err = |msg: String| ParseError {
                line: line_no,
                col,
                kind: ParseErrorKind::Syntax(msg),
            };
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            }
            let ident_char = |c: char| c.is_ascii_alphanumeric() || c == '_' || c == '.';
            let tok = if c == '%' || c == '@' {
                let start = i + 1;
                i += 1;
                while i < chars.len() && ident_char(chars[i]) {
                    i += 1;
                }
                if i == start {
                    return Err(err(format!("empty name after `{c}`")));
                }
                let name: String = chars[start..i].iter().collect();
                if c == '%' {
                    Tok::Local(name)
                } else {
                    Tok::GlobalName(name)
                }
            } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect::<String>().replace('_', "");
                let (neg, body) = match text.strip_prefix('-') {
                    Some(rest) => (true, rest.to_string()),
                    None => (false, text.clone()),
                };
                let magnitude = if let Some(hex) = body.strip_prefix("0x") {
                    u64::from_str_radix(hex, 16)
                } else {
                    body.parse::<u64>()
                }
                .map_err(|_| err(format!("bad integer literal `{text}`")))?;
                let value = if neg {
                    if magnitude > i64::MAX as u64 + 1 {
                        return Err(err(format!("integer literal `{text}` out of range")));
                    }
                    (magnitude as i64).wrapping_neg()
                } else {
                    magnitude as i64
                };
                Tok::Int(value)
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && ident_char(chars[i]) {
                    i += 1;
                }
                Tok::Ident(chars[start..i].iter().collect())
            } else if c == '"' {
                let start = i + 1;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    i += 1;
                }
                if i >= chars.len() {
                    return Err(err("unterminated string".into()));
                }
                let s: String = chars[start..i].iter().collect();
                i += 1;
                Tok::Str(s)
            } else if c == '-' && chars.get(i + 1) == Some(&'>') {
                i += 2;
                Tok::Punct("->")
            } else {
                let p = match c {
                    '{' => "{",
                    '}' => "}",
                    '(' => "(",
                    ')' => ")",
                    '[' => "[",
                    ']' => "]",
                    ',' => ",",
                    ':' => ":",
                    ';' => ";",
                    '=' => "=",
                    '*' => "*",
                    '!' => "!",
                    '+' => "+",
                    _ => return Err(err(format!("unexpected character `{c}`"))),
                };
                i += 1;
                Tok::Punct(p)
            };
            out.push(Token {
                tok,
                line: line_no,
                col,
            });
        }
        out.push(Token {
            tok: Tok::Newline,
            line: line_no,
            col: chars.len() + 1,
        });
    }
    let (line, col) = out.last().map(|t| (t.line + 1, 1)).unwrap_or((1, 1));
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

// Syntax tree, resolved into the IR in a second step so that names may be
// used before their definition.

#[derive(Debug, Clone)]
enum AstTy {
    Named(String, usize, usize),
    Ptr(Box<AstTy>),
}

#[derive(Debug, Clone)]
enum AstOp {
    Local(String),
    Global(String),
    Imm(i64),
}

#[derive(Debug, Clone)]
struct Located<T> {
    node: T,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
enum AstInst {
    Alloc(AstOp),
    Free(AstOp),
    Slot(AstTy),
    PtrAdd(AstTy, AstOp, Vec<AstOp>),
    Cast(AstOp, AstTy),
    Load(AstTy, AstOp),
    Store(AstTy, AstOp, AstOp),
    Const(AstTy, i64),
    Bin(BinOp, AstTy, AstOp, AstOp),
    Cmp(CmpPred, AstTy, AstOp, AstOp),
    Br(String),
    CondBr(AstOp, String, String),
    Phi(AstTy, Vec<(AstOp, String)>),
    Call(String, Vec<AstOp>),
    Ret(Option<AstOp>),
    CheckRange(AstOp, AstOp, u64, Site),
    CastCheck(AstOp, u64, Site),
    Escape(AstOp, AstOp, Site),
    GetRange(AstOp),
    AssertRange(AstOp, AstOp, u64, Site),
}

#[derive(Debug, Clone)]
struct AstBlock {
    label: Located<String>,
    insts: Vec<Located<(Option<String>, AstInst)>>,
}

#[derive(Debug, Clone)]
struct AstFn {
    name: Located<String>,
    params: Vec<(Located<String>, AstTy)>,
    ret: AstTy,
    blocks: Vec<AstBlock>,
}

#[derive(Debug, Clone)]
struct AstField {
    ty: AstTy,
    name: String,
    trailing: bool,
    offset: u64,
}

#[derive(Debug, Clone)]
struct AstType {
    name: Located<String>,
    kind: RecordKind,
    fields: Vec<AstField>,
    size: u64,
    align: Option<u64>,
}

#[derive(Debug, Clone)]
struct AstGlobal {
    name: Located<String>,
    elem: AstTy,
    count: Option<u64>,
    init: Vec<u8>,
}

#[derive(Debug, Default)]
struct Ast {
    instrumented: bool,
    entry: Option<Located<String>>,
    types: Vec<AstType>,
    globals: Vec<AstGlobal>,
    fns: Vec<AstFn>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError {
            line,
            col,
            kind: ParseErrorKind::Syntax(msg.into()),
        })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Local(s) => format!("`%{s}`"),
            Tok::GlobalName(s) => format!("`@{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", self.describe()))
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", self.describe()))
        }
    }

    fn expect_ident(&mut self) -> Result<Located<String>, ParseError> {
        let (line, col) = self.here();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Located { node: s, line, col })
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    fn expect_global_name(&mut self) -> Result<Located<String>, ParseError> {
        let (line, col) = self.here();
        match self.peek().clone() {
            Tok::GlobalName(s) => {
                self.bump();
                Ok(Located { node: s, line, col })
            }
            _ => self.err(format!("expected `@name`, found {}", self.describe())),
        }
    }

    fn expect_local(&mut self) -> Result<Located<String>, ParseError> {
        let (line, col) = self.here();
        match self.peek().clone() {
            Tok::Local(s) => {
                self.bump();
                Ok(Located { node: s, line, col })
            }
            _ => self.err(format!("expected `%name`, found {}", self.describe())),
        }
    }

    fn expect_int(&mut self) -> Result<i64, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(i)
            }
            _ => self.err(format!("expected integer, found {}", self.describe())),
        }
    }

    fn expect_uint(&mut self) -> Result<u64, ParseError> {
        let i = self.expect_int()?;
        u64::try_from(i).or_else(|_| self.err(format!("expected non-negative integer, found {i}")))
    }

    fn end_of_line(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Newline | Tok::Eof => {
                self.skip_newlines();
                Ok(())
            }
            _ => self.err(format!("expected end of line, found {}", self.describe())),
        }
    }

    fn ty(&mut self) -> Result<AstTy, ParseError> {
        let name = self.expect_ident()?;
        let mut ty = AstTy::Named(name.node, name.line, name.col);
        while self.eat_punct("*") {
            ty = AstTy::Ptr(Box::new(ty));
        }
        Ok(ty)
    }

    fn operand(&mut self) -> Result<AstOp, ParseError> {
        match self.peek().clone() {
            Tok::Local(s) => {
                self.bump();
                Ok(AstOp::Local(s))
            }
            Tok::GlobalName(s) => {
                self.bump();
                Ok(AstOp::Global(s))
            }
            Tok::Int(i) => {
                self.bump();
                Ok(AstOp::Imm(i))
            }
            _ => self.err(format!("expected operand, found {}", self.describe())),
        }
    }

    fn site(&mut self) -> Result<Site, ParseError> {
        self.expect_punct("!")?;
        let id = self.expect_uint()? as u32;
        let mut absorbed = Vec::new();
        while self.eat_punct("+") {
            absorbed.push(self.expect_uint()? as u32);
        }
        Ok(Site { id, absorbed })
    }

    fn program(&mut self) -> Result<Ast, ParseError> {
        let mut ast = Ast::default();
        loop {
            self.skip_newlines();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) => match kw.as_str() {
                    "instrumented" => {
                        self.bump();
                        ast.instrumented = true;
                        self.end_of_line()?;
                    }
                    "entry" => {
                        self.bump();
                        ast.entry = Some(self.expect_global_name()?);
                        self.end_of_line()?;
                    }
                    "type" => {
                        self.bump();
                        let t = self.type_decl()?;
                        ast.types.push(t);
                    }
                    "global" => {
                        self.bump();
                        let g = self.global_decl()?;
                        ast.globals.push(g);
                    }
                    "fn" => {
                        self.bump();
                        let f = self.fn_decl()?;
                        ast.fns.push(f);
                    }
                    other => return self.err(format!("unexpected `{other}` at top level")),
                },
                _ => return self.err(format!("unexpected {} at top level", self.describe())),
            }
        }
        Ok(ast)
    }

    fn type_decl(&mut self) -> Result<AstType, ParseError> {
        let name = self.expect_ident()?;
        let kind = if self.eat_keyword("flex") {
            RecordKind::Flexible
        } else {
            RecordKind::Record
        };
        self.expect_punct("{")?;
        self.skip_newlines();
        let mut fields = Vec::new();
        let mut size = None;
        let mut align = None;
        loop {
            self.skip_newlines();
            if self.eat_punct("}") {
                break;
            }
            if self.eat_keyword("size") {
                size = Some(self.expect_uint()?);
            } else if self.eat_keyword("align") {
                align = Some(self.expect_uint()?);
            } else {
                let ty = self.ty()?;
                let fname = self.expect_ident()?;
                let trailing = if self.eat_punct("[") {
                    self.expect_punct("]")?;
                    true
                } else {
                    false
                };
                let offset = match self.peek().clone() {
                    Tok::GlobalName(digits) => match parse_uint(&digits) {
                        Some(n) => {
                            self.bump();
                            n
                        }
                        None => return self.err(format!("bad field offset `@{digits}`")),
                    },
                    _ => return self.err("expected `@offset` after field name"),
                };
                fields.push(AstField {
                    ty,
                    name: fname.node,
                    trailing,
                    offset,
                });
            }
            self.skip_newlines();
            if self.eat_punct(";") {
                continue;
            }
            self.skip_newlines();
            if self.eat_punct("}") {
                break;
            }
        }
        let Some(size) = size else {
            return self.err(format!("type `{}` is missing `size`", name.node));
        };
        self.end_of_line()?;
        Ok(AstType {
            name,
            kind,
            fields,
            size,
            align,
        })
    }

    fn global_decl(&mut self) -> Result<AstGlobal, ParseError> {
        let name = self.expect_global_name()?;
        self.expect_punct(":")?;
        let elem = self.ty()?;
        let count = if self.eat_punct("[") {
            let n = self.expect_uint()?;
            self.expect_punct("]")?;
            Some(n)
        } else {
            None
        };
        let mut init = Vec::new();
        if self.eat_punct("=") {
            let (line, col) = self.here();
            let Tok::Str(hex) = self.peek().clone() else {
                return self.err("expected hex string initializer");
            };
            self.bump();
            init = decode_hex(&hex).ok_or(ParseError {
                line,
                col,
                kind: ParseErrorKind::Syntax(format!("bad hex initializer `{hex}`")),
            })?;
        }
        self.end_of_line()?;
        Ok(AstGlobal {
            name,
            elem,
            count,
            init,
        })
    }

    fn fn_decl(&mut self) -> Result<AstFn, ParseError> {
        let name = self.expect_global_name()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.eat_punct(")") {
            loop {
                let p = self.expect_local()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                params.push((p, ty));
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        let ret = if self.eat_punct("->") {
            self.ty()?
        } else {
            AstTy::Named("void".into(), name.line, name.col)
        };
        self.expect_punct("{")?;
        self.skip_newlines();
        let mut blocks: Vec<AstBlock> = Vec::new();
        loop {
            self.skip_newlines();
            if self.eat_punct("}") {
                break;
            }
            // A label is `ident :` at the start of a line.
            if let Tok::Ident(_) = self.peek() {
                if matches!(self.toks[self.pos + 1].tok, Tok::Punct(":")) {
                    let label = self.expect_ident()?;
                    self.expect_punct(":")?;
                    self.end_of_line()?;
                    blocks.push(AstBlock {
                        label,
                        insts: Vec::new(),
                    });
                    continue;
                }
            }
            let (line, col) = self.here();
            let inst = self.inst()?;
            let Some(block) = blocks.last_mut() else {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::Syntax("instruction before first label".into()),
                });
            };
            block.insts.push(Located {
                node: inst,
                line,
                col,
            });
            self.end_of_line()?;
        }
        Ok(AstFn {
            name,
            params,
            ret,
            blocks,
        })
    }

    fn inst(&mut self) -> Result<(Option<String>, AstInst), ParseError> {
        let mut result = None;
        if let Tok::Local(name) = self.peek().clone() {
            self.bump();
            self.expect_punct("=")?;
            result = Some(name);
        }
        let op = self.expect_ident()?;
        let inst = match op.node.as_str() {
            "alloc" => AstInst::Alloc(self.operand()?),
            "free" => AstInst::Free(self.operand()?),
            "slot" => AstInst::Slot(self.ty()?),
            "ptradd" => {
                let elem = self.ty()?;
                self.expect_punct(",")?;
                let base = self.operand()?;
                let mut idx = Vec::new();
                while self.eat_punct(",") {
                    idx.push(self.operand()?);
                }
                if idx.is_empty() {
                    return self.err("ptradd needs at least one index");
                }
                AstInst::PtrAdd(elem, base, idx)
            }
            "cast" => {
                let v = self.operand()?;
                self.expect_keyword("to")?;
                AstInst::Cast(v, self.ty()?)
            }
            "load" => {
                let ty = self.ty()?;
                self.expect_punct(",")?;
                AstInst::Load(ty, self.operand()?)
            }
            "store" => {
                let ty = self.ty()?;
                let v = self.operand()?;
                self.expect_punct(",")?;
                AstInst::Store(ty, v, self.operand()?)
            }
            "const" => {
                let ty = self.ty()?;
                AstInst::Const(ty, self.expect_int()?)
            }
            "binop" => {
                let name = self.expect_ident()?;
                let Some(bop) = BinOp::ALL.iter().find(|b| b.name() == name.node) else {
                    return self.err(format!("unknown binop `{}`", name.node));
                };
                let ty = self.ty()?;
                let a = self.operand()?;
                self.expect_punct(",")?;
                AstInst::Bin(*bop, ty, a, self.operand()?)
            }
            "cmp" => {
                let name = self.expect_ident()?;
                let Some(pred) = CmpPred::ALL.iter().find(|p| p.name() == name.node) else {
                    return self.err(format!("unknown predicate `{}`", name.node));
                };
                let ty = self.ty()?;
                let a = self.operand()?;
                self.expect_punct(",")?;
                AstInst::Cmp(*pred, ty, a, self.operand()?)
            }
            "br" => AstInst::Br(self.expect_ident()?.node),
            "condbr" => {
                let c = self.operand()?;
                self.expect_punct(",")?;
                let t = self.expect_ident()?.node;
                self.expect_punct(",")?;
                AstInst::CondBr(c, t, self.expect_ident()?.node)
            }
            "phi" => {
                let ty = self.ty()?;
                let mut incoming = Vec::new();
                loop {
                    self.expect_punct("[")?;
                    let v = self.operand()?;
                    self.expect_punct(",")?;
                    let l = self.expect_ident()?.node;
                    self.expect_punct("]")?;
                    incoming.push((v, l));
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                AstInst::Phi(ty, incoming)
            }
            "call" => {
                let callee = self.expect_global_name()?.node;
                self.expect_punct("(")?;
                let mut args = Vec::new();
                if !self.eat_punct(")") {
                    loop {
                        args.push(self.operand()?);
                        if self.eat_punct(")") {
                            break;
                        }
                        self.expect_punct(",")?;
                    }
                }
                AstInst::Call(callee, args)
            }
            "ret" => {
                if matches!(self.peek(), Tok::Newline | Tok::Eof) {
                    AstInst::Ret(None)
                } else {
                    AstInst::Ret(Some(self.operand()?))
                }
            }
            "checkrange" => {
                let s = self.operand()?;
                self.expect_punct(",")?;
                let d = self.operand()?;
                self.expect_punct(",")?;
                let n = self.expect_uint()?;
                AstInst::CheckRange(s, d, n, self.site()?)
            }
            "castcheck" => {
                let p = self.operand()?;
                self.expect_punct(",")?;
                let n = self.expect_uint()?;
                AstInst::CastCheck(p, n, self.site()?)
            }
            "escape" => {
                let l = self.operand()?;
                self.expect_punct(",")?;
                let v = self.operand()?;
                AstInst::Escape(l, v, self.site()?)
            }
            "getrange" => AstInst::GetRange(self.operand()?),
            "assertrange" => {
                let r = self.operand()?;
                self.expect_punct(",")?;
                let d = self.operand()?;
                self.expect_punct(",")?;
                let n = self.expect_uint()?;
                AstInst::AssertRange(r, d, n, self.site()?)
            }
            other => {
                return Err(ParseError {
                    line: op.line,
                    col: op.col,
                    kind: ParseErrorKind::Syntax(format!("unknown opcode `{other}`")),
                })
            }
        };
        Ok((result, inst))
    }
}

fn parse_uint(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

struct Resolver<'a> {
    types: &'a HashMap<String, TypeId>,
    globals: &'a HashMap<String, GlobalId>,
}

impl Resolver<'_> {
    fn ty(&self, t: &AstTy) -> Result<Ty, ParseError> {
        match t {
            AstTy::Ptr(inner) => Ok(Ty::ptr_to(self.ty(inner)?)),
            AstTy::Named(name, line, col) => Ok(match name.as_str() {
                "i8" => Ty::Int(IntWidth::I8),
                "i16" => Ty::Int(IntWidth::I16),
                "i32" => Ty::Int(IntWidth::I32),
                "i64" => Ty::Int(IntWidth::I64),
                "void" => Ty::Void,
                "range" => Ty::Range,
                other => match self.types.get(other) {
                    Some(id) => Ty::Record(*id),
                    None => {
                        return Err(ParseError {
                            line: *line,
                            col: *col,
                            kind: ParseErrorKind::UnknownType(other.to_string()),
                        })
                    }
                },
            }),
        }
    }
}

fn at(line: usize, col: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, col, kind }
}

/// Parses a program from its text form.
///
/// Resolves every name and computes result types and constant `ptradd`
/// offsets. Structural rules (SSA dominance, operand types, type layouts)
/// are left to [`validate_program`](super::validate_program), except the
/// integer-to-pointer cast ban, which is rejected here.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let ast = Parser { toks, pos: 0 }.program()?;

    let mut type_ids = HashMap::new();
    for (i, t) in ast.types.iter().enumerate() {
        if type_ids.insert(t.name.node.clone(), TypeId(i as u32)).is_some()
            || matches!(t.name.node.as_str(), "i8" | "i16" | "i32" | "i64" | "void" | "range")
        {
            return Err(at(
                t.name.line,
                t.name.col,
                ParseErrorKind::Duplicate(t.name.node.clone()),
            ));
        }
    }
    let mut global_ids = HashMap::new();
    for (i, g) in ast.globals.iter().enumerate() {
        if global_ids.insert(g.name.node.clone(), GlobalId(i as u32)).is_some() {
            return Err(at(
                g.name.line,
                g.name.col,
                ParseErrorKind::Duplicate(format!("@{}", g.name.node)),
            ));
        }
    }
    let mut fn_ids = HashMap::new();
    for (i, f) in ast.fns.iter().enumerate() {
        if fn_ids.insert(f.name.node.clone(), FuncId(i as u32)).is_some()
            || f.name.node == "print_i64"
        {
            return Err(at(
                f.name.line,
                f.name.col,
                ParseErrorKind::Duplicate(format!("@{}", f.name.node)),
            ));
        }
    }
    let rs = Resolver {
        types: &type_ids,
        globals: &global_ids,
    };

    let mut program = Program {
        instrumented: ast.instrumented,
        ..Program::default()
    };
    for t in &ast.types {
        let fields = t
            .fields
            .iter()
            .map(|f| {
                Ok(Field {
                    name: f.name.clone(),
                    ty: rs.ty(&f.ty)?,
                    offset: f.offset,
                    trailing: f.trailing,
                })
            })
            .collect::<Result<Vec<_>, ParseError>>()?;
        program.types.push(TypeDef {
            name: t.name.node.clone(),
            kind: t.kind,
            fields,
            byte_size: t.size,
            align: 0,
        });
    }
    // Alignment defaults to the largest field alignment, which needs every
    // type resolved first.
    for (i, t) in ast.types.iter().enumerate() {
        let align = match t.align {
            Some(a) => a,
            None => {
                let fields = program.types[i].fields.clone();
                fields
                    .iter()
                    .map(|f| natural_align(&program, &f.ty, 0))
                    .max()
                    .unwrap_or(1)
            }
        };
        program.types[i].align = align;
    }
    for g in &ast.globals {
        program.globals.push(Global {
            name: g.name.node.clone(),
            elem: rs.ty(&g.elem)?,
            count: g.count,
            init: g.init.clone(),
        });
    }

    // Signatures first so calls can be typed.
    let mut sigs = Vec::new();
    for f in &ast.fns {
        let params = f
            .params
            .iter()
            .map(|(_, t)| rs.ty(t))
            .collect::<Result<Vec<_>, _>>()?;
        sigs.push((params, rs.ty(&f.ret)?));
    }

    for (fi, f) in ast.fns.iter().enumerate() {
        let func = lower_fn(&program, &rs, &fn_ids, &sigs, fi, f)?;
        program.functions.push(func);
    }

    program.entry = match &ast.entry {
        Some(e) => e.node.clone(),
        None => "main".to_string(),
    };
    Ok(program)
}

fn natural_align(p: &Program, ty: &Ty, depth: usize) -> u64 {
    match ty {
        Ty::Int(w) => w.bytes(),
        Ty::Ptr(_) => 8,
        Ty::Record(id) if depth < 16 => p
            .type_def(*id)
            .fields
            .iter()
            .map(|f| natural_align(p, &f.ty, depth + 1))
            .max()
            .unwrap_or(1),
        _ => 1,
    }
}

fn lower_fn(
    program: &Program,
    rs: &Resolver<'_>,
    fn_ids: &HashMap<String, FuncId>,
    sigs: &[(Vec<Ty>, Ty)],
    fi: usize,
    f: &AstFn,
) -> Result<Function, ParseError> {
    let mut values: Vec<ValueInfo> = Vec::new();
    let mut names: HashMap<String, ValueId> = HashMap::new();
    let mut params = Vec::new();
    for ((p, _), ty) in f.params.iter().zip(&sigs[fi].0) {
        if names.contains_key(&p.node) {
            return Err(at(p.line, p.col, ParseErrorKind::Duplicate(format!("%{}", p.node))));
        }
        let id = ValueId(values.len() as u32);
        names.insert(p.node.clone(), id);
        values.push(ValueInfo {
            name: p.node.clone(),
            ty: ty.clone(),
        });
        params.push(id);
    }

    let mut labels = HashMap::new();
    for (i, b) in f.blocks.iter().enumerate() {
        if labels.insert(b.label.node.clone(), BlockId(i as u32)).is_some() {
            return Err(at(
                b.label.line,
                b.label.col,
                ParseErrorKind::Duplicate(b.label.node.clone()),
            ));
        }
    }

    // Result types depend only on the instruction itself and function
    // signatures, so they can be assigned before operands are resolved.
    for b in &f.blocks {
        for li in &b.insts {
            let (res, inst) = &li.node;
            let Some(name) = res else { continue };
            let ty = match inst {
                AstInst::Alloc(_) => Ty::ptr_to(Ty::I8),
                AstInst::Slot(t) => Ty::ptr_to(rs.ty(t)?),
                AstInst::PtrAdd(elem, _, idx) => {
                    let elem = rs.ty(elem)?;
                    let idx: Vec<Operand> = idx
                        .iter()
                        .map(|o| match o {
                            AstOp::Imm(i) => Operand::Imm(*i),
                            _ => Operand::Value(ValueId(u32::MAX)),
                        })
                        .collect();
                    program
                        .ptradd_layout(&elem, &idx)
                        .map_err(|m| at(li.line, li.col, ParseErrorKind::BadPtrAdd(m)))?
                        .0
                }
                AstInst::Cast(_, t) => rs.ty(t)?,
                AstInst::Load(t, _) => rs.ty(t)?,
                AstInst::Const(t, _) | AstInst::Bin(_, t, _, _) | AstInst::Phi(t, _) => rs.ty(t)?,
                AstInst::Cmp(..) => Ty::I64,
                AstInst::Call(callee, _) => match fn_ids.get(callee) {
                    Some(id) => sigs[id.0 as usize].1.clone(),
                    None if callee == "print_i64" => Ty::Void,
                    None => {
                        return Err(at(
                            li.line,
                            li.col,
                            ParseErrorKind::UnknownFunction(format!("@{callee}")),
                        ))
                    }
                },
                AstInst::GetRange(_) => Ty::Range,
                _ => {
                    return Err(at(
                        li.line,
                        li.col,
                        ParseErrorKind::Syntax(format!("instruction `%{name} = ...` produces no value")),
                    ))
                }
            };
            if names.contains_key(name) {
                return Err(at(li.line, li.col, ParseErrorKind::Duplicate(format!("%{name}"))));
            }
            names.insert(name.clone(), ValueId(values.len() as u32));
            values.push(ValueInfo {
                name: name.clone(),
                ty,
            });
        }
    }

    let op = |o: &AstOp, line: usize, col: usize| -> Result<Operand, ParseError> {
        match o {
            AstOp::Imm(i) => Ok(Operand::Imm(*i)),
            AstOp::Local(n) => names
                .get(n)
                .map(|v| Operand::Value(*v))
                .ok_or_else(|| at(line, col, ParseErrorKind::UnknownValue(format!("%{n}")))),
            AstOp::Global(n) => rs
                .globals
                .get(n)
                .map(|g| Operand::Global(*g))
                .ok_or_else(|| at(line, col, ParseErrorKind::UnknownGlobal(format!("@{n}")))),
        }
    };
    let label = |l: &str, line: usize, col: usize| -> Result<BlockId, ParseError> {
        labels
            .get(l)
            .copied()
            .ok_or_else(|| at(line, col, ParseErrorKind::UnknownLabel(l.to_string())))
    };

    let mut blocks = Vec::new();
    for b in &f.blocks {
        let mut insts = Vec::new();
        for li in &b.insts {
            let (line, col) = (li.line, li.col);
            let (res, inst) = &li.node;
            let o = |x: &AstOp| op(x, line, col);
            let kind = match inst {
                AstInst::Alloc(s) => InstKind::Alloc { size: o(s)? },
                AstInst::Free(p) => InstKind::Free { ptr: o(p)? },
                AstInst::Slot(t) => InstKind::Slot { ty: rs.ty(t)? },
                AstInst::PtrAdd(elem, base, idx) => {
                    let elem = rs.ty(elem)?;
                    let indices = idx.iter().map(o).collect::<Result<Vec<_>, _>>()?;
                    let (_, static_offset) = program
                        .ptradd_layout(&elem, &indices)
                        .map_err(|m| at(line, col, ParseErrorKind::BadPtrAdd(m)))?;
                    InstKind::PtrAdd {
                        elem,
                        base: o(base)?,
                        indices,
                        static_offset,
                    }
                }
                AstInst::Cast(v, t) => InstKind::Cast {
                    value: o(v)?,
                    to: rs.ty(t)?,
                },
                AstInst::Load(t, p) => InstKind::Load {
                    ty: rs.ty(t)?,
                    ptr: o(p)?,
                },
                AstInst::Store(t, v, p) => InstKind::Store {
                    ty: rs.ty(t)?,
                    value: o(v)?,
                    ptr: o(p)?,
                },
                AstInst::Const(t, v) => InstKind::Const {
                    ty: rs.ty(t)?,
                    value: *v,
                },
                AstInst::Bin(bop, t, a, c) => InstKind::Bin {
                    op: *bop,
                    ty: rs.ty(t)?,
                    lhs: o(a)?,
                    rhs: o(c)?,
                },
                AstInst::Cmp(pred, t, a, c) => InstKind::Cmp {
                    pred: *pred,
                    ty: rs.ty(t)?,
                    lhs: o(a)?,
                    rhs: o(c)?,
                },
                AstInst::Br(l) => InstKind::Br {
                    target: label(l, line, col)?,
                },
                AstInst::CondBr(c, t, e) => InstKind::CondBr {
                    cond: o(c)?,
                    then_to: label(t, line, col)?,
                    else_to: label(e, line, col)?,
                },
                AstInst::Phi(t, inc) => InstKind::Phi {
                    ty: rs.ty(t)?,
                    incoming: inc
                        .iter()
                        .map(|(v, l)| Ok((o(v)?, label(l, line, col)?)))
                        .collect::<Result<Vec<_>, ParseError>>()?,
                },
                AstInst::Call(callee, args) => InstKind::Call {
                    callee: match fn_ids.get(callee) {
                        Some(id) => Callee::Func(*id),
                        None => Callee::PrintI64,
                    },
                    args: args.iter().map(o).collect::<Result<Vec<_>, _>>()?,
                },
                AstInst::Ret(v) => InstKind::Ret {
                    value: v.as_ref().map(o).transpose()?,
                },
                AstInst::CheckRange(s, d, n, site) => InstKind::CheckRange {
                    src: o(s)?,
                    dst: o(d)?,
                    size: *n,
                    site: site.clone(),
                },
                AstInst::CastCheck(p, n, site) => InstKind::CastCheck {
                    ptr: o(p)?,
                    size: *n,
                    site: site.clone(),
                },
                AstInst::Escape(l, v, site) => InstKind::Escape {
                    loc: o(l)?,
                    value: o(v)?,
                    site: site.clone(),
                },
                AstInst::GetRange(p) => InstKind::GetRange { ptr: o(p)? },
                AstInst::AssertRange(r, d, n, site) => InstKind::AssertRange {
                    range: o(r)?,
                    dst: o(d)?,
                    size: *n,
                    site: site.clone(),
                },
            };
            if let InstKind::Cast { value, to } = &kind {
                let from = match value {
                    Operand::Value(v) => values[v.index()].ty.clone(),
                    Operand::Global(g) => program.global_ty(*g),
                    Operand::Imm(_) => Ty::I64,
                };
                if from.is_int() && to.is_ptr() {
                    return Err(at(line, col, ParseErrorKind::IntToPtr));
                }
            }
            let result = res.as_ref().map(|n| names[n]);
            insts.push(Inst { result, kind });
        }
        blocks.push(Block {
            label: b.label.node.clone(),
            insts,
        });
    }

    Ok(Function {
        name: f.name.node.clone(),
        params,
        ret: sigs[fi].1.clone(),
        values,
        blocks,
    })
}
