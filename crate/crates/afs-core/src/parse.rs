//! Lexer and recursive-descent parser for programs and types.
//!
//! Comments run from `#` to end of line. Prefix continuations are optional;
//! `send a 5` means `send a 5. 0`. Parallel composition binds loosest, so a
//! parallel continuation needs parentheses: `send a 5. (P | Q)`.

use std::collections::BTreeMap;

use crate::syntax::{freshen_binders, Expr, Object, Prefix, Process, Program};
use crate::types::{GroundType, Interface, Name, PayloadType, SessionType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Nat(u64),
    Str(String),
    // keywords
    Send,
    Recv,
    Sel,
    BranchKw,
    Req,
    Acc,
    New,
    Cancel,
    Do,
    Catch,
    If,
    Then,
    Else,
    InterfaceKw,
    In,
    True,
    False,
    End,
    NatTy,
    StringTy,
    BoolTy,
    // punctuation
    Dot,
    Comma,
    Colon,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Pipe,
    Plus,
    Amp,
    Bang,
    Question,
    Lt,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tok::Ident(n) => return write!(f, "identifier {n}"),
            Tok::Nat(n) => return write!(f, "number {n}"),
            Tok::Str(_) => "string literal",
            Tok::Send => "send",
            Tok::Recv => "recv",
            Tok::Sel => "sel",
            Tok::BranchKw => "branch",
            Tok::Req => "req",
            Tok::Acc => "acc",
            Tok::New => "new",
            Tok::Cancel => "cancel",
            Tok::Do => "do",
            Tok::Catch => "catch",
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::InterfaceKw => "interface",
            Tok::In => "in",
            Tok::True => "true",
            Tok::False => "false",
            Tok::End => "end",
            Tok::NatTy => "nat",
            Tok::StringTy => "string",
            Tok::BoolTy => "bool",
            Tok::Dot => "'.'",
            Tok::Comma => "','",
            Tok::Colon => "':'",
            Tok::LParen => "'('",
            Tok::RParen => "')'",
            Tok::LBrace => "'{'",
            Tok::RBrace => "'}'",
            Tok::Pipe => "'|'",
            Tok::Plus => "'+'",
            Tok::Amp => "'&'",
            Tok::Bang => "'!'",
            Tok::Question => "'?'",
            Tok::Lt => "'<'",
            Tok::Eof => "end of input",
        };
        write!(f, "{s}")
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn error(&self, message: String) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            message,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn next_token(&mut self) -> Result<(Tok, usize, usize), ParseError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        let Some(b) = self.peek() else {
            return Ok((Tok::Eof, line, col));
        };
        let tok = match b {
            b'.' => {
                self.bump();
                Tok::Dot
            }
            b',' => {
                self.bump();
                Tok::Comma
            }
            b':' => {
                self.bump();
                Tok::Colon
            }
            b'(' => {
                self.bump();
                Tok::LParen
            }
            b')' => {
                self.bump();
                Tok::RParen
            }
            b'{' => {
                self.bump();
                Tok::LBrace
            }
            b'}' => {
                self.bump();
                Tok::RBrace
            }
            b'|' => {
                self.bump();
                Tok::Pipe
            }
            b'+' => {
                self.bump();
                Tok::Plus
            }
            b'&' => {
                self.bump();
                Tok::Amp
            }
            b'!' => {
                self.bump();
                Tok::Bang
            }
            b'?' => {
                self.bump();
                Tok::Question
            }
            b'<' => {
                self.bump();
                Tok::Lt
            }
            b'"' => {
                self.bump();
                let mut out = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.error("unterminated string literal".into())),
                        Some(b'"') => break,
                        Some(b'\\') => match self.bump() {
                            Some(b'"') => out.push('"'),
                            Some(b'\\') => out.push('\\'),
                            Some(b'n') => out.push('\n'),
                            Some(b't') => out.push('\t'),
                            other => {
                                return Err(self.error(format!(
                                    "unknown escape {:?}",
                                    other.map(|c| c as char)
                                )))
                            }
                        },
                        Some(c) => out.push(c as char),
                    }
                }
                Tok::Str(out)
            }
            b'0'..=b'9' => {
                let mut n: u64 = 0;
                while let Some(d @ b'0'..=b'9') = self.peek() {
                    n = n
                        .checked_mul(10)
                        .and_then(|n| n.checked_add(u64::from(d - b'0')))
                        .ok_or_else(|| self.error("number literal too large".into()))?;
                    self.bump();
                }
                Tok::Nat(n)
            }
            b if b.is_ascii_alphabetic() || b == b'_' => {
                let mut word = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' || c == b'\'' {
                        word.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                match word.as_str() {
                    "send" => Tok::Send,
                    "recv" => Tok::Recv,
                    "sel" => Tok::Sel,
                    "branch" => Tok::BranchKw,
                    "req" => Tok::Req,
                    "acc" => Tok::Acc,
                    "new" => Tok::New,
                    "cancel" => Tok::Cancel,
                    "do" => Tok::Do,
                    "catch" => Tok::Catch,
                    "if" => Tok::If,
                    "then" => Tok::Then,
                    "else" => Tok::Else,
                    "interface" => Tok::InterfaceKw,
                    "in" => Tok::In,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "end" => Tok::End,
                    "nat" => Tok::NatTy,
                    "string" => Tok::StringTy,
                    "bool" => Tok::BoolTy,
                    _ => Tok::Ident(word),
                }
            }
            other => {
                return Err(self.error(format!("unexpected character {:?}", other as char)));
            }
        };
        Ok((tok, line, col))
    }
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Parser, ParseError> {
        let mut lexer = Lexer::new(src);
        let mut toks = Vec::new();
        loop {
            let t = lexer.next_token()?;
            let done = t.0 == Tok::Eof;
            toks.push(t);
            if done {
                break;
            }
        }
        Ok(Parser { toks, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: String) -> ParseError {
        let (_, line, col) = &self.toks[self.pos];
        ParseError {
            line: *line,
            col: *col,
            message,
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(format!("expected {want}, found {}", self.peek())))
        }
    }

    fn ident(&mut self, role: &str) -> Result<Name, ParseError> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                Ok(n)
            }
            other => Err(self.error_here(format!("expected {role}, found {other}"))),
        }
    }

    /// Labels live in their own namespace, so keywords that read naturally
    /// as protocol labels are admitted.
    fn label(&mut self) -> Result<Name, ParseError> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                Ok(n)
            }
            Tok::Cancel => {
                self.bump();
                Ok("cancel".to_string())
            }
            Tok::True => {
                self.bump();
                Ok("true".to_string())
            }
            Tok::False => {
                self.bump();
                Ok("false".to_string())
            }
            other => Err(self.error_here(format!("expected a label, found {other}"))),
        }
    }

    // ---- types ----

    fn session_type(&mut self) -> Result<SessionType, ParseError> {
        match self.peek().clone() {
            Tok::End => {
                self.bump();
                Ok(SessionType::End)
            }
            Tok::Bang => {
                self.bump();
                self.expect(Tok::LParen)?;
                let p = self.payload()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Dot)?;
                let t = self.session_type()?;
                Ok(SessionType::output(p, t))
            }
            Tok::Question => {
                self.bump();
                self.expect(Tok::LParen)?;
                let p = self.payload()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Dot)?;
                let t = self.session_type()?;
                Ok(SessionType::input(p, t))
            }
            Tok::Plus => {
                self.bump();
                Ok(SessionType::Select(self.type_arms()?))
            }
            Tok::Amp => {
                self.bump();
                Ok(SessionType::Branch(self.type_arms()?))
            }
            Tok::Req => {
                self.bump();
                Ok(SessionType::Request(self.service_body()?))
            }
            Tok::Acc => {
                self.bump();
                Ok(SessionType::Accept(self.service_body()?))
            }
            Tok::LParen => {
                self.bump();
                let t = self.session_type()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            other => Err(self.error_here(format!("expected a session type, found {other}"))),
        }
    }

    fn payload(&mut self) -> Result<PayloadType, ParseError> {
        match self.peek() {
            Tok::NatTy => {
                self.bump();
                Ok(PayloadType::Ground(GroundType::Nat))
            }
            Tok::StringTy => {
                self.bump();
                Ok(PayloadType::Ground(GroundType::Str))
            }
            Tok::BoolTy => {
                self.bump();
                Ok(PayloadType::Ground(GroundType::Bool))
            }
            _ => Ok(PayloadType::session(self.session_type()?)),
        }
    }

    /// Request and accept bodies: a bare ground type, bare `end`, or a
    /// parenthesized payload.
    fn service_body(&mut self) -> Result<PayloadType, ParseError> {
        match self.peek() {
            Tok::NatTy | Tok::StringTy | Tok::BoolTy => self.payload(),
            Tok::End => {
                self.bump();
                Ok(PayloadType::session(SessionType::End))
            }
            Tok::LParen => {
                self.bump();
                let p = self.payload()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            other => Err(self.error_here(format!(
                "expected a service body (ground type, end, or parenthesized type), found {other}"
            ))),
        }
    }

    fn type_arms(&mut self) -> Result<BTreeMap<Name, SessionType>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut arms = BTreeMap::new();
        loop {
            let label = self.label()?;
            self.expect(Tok::Colon)?;
            let t = self.session_type()?;
            if arms.insert(label.clone(), t).is_some() {
                return Err(self.error_here(format!("duplicate label {label}")));
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => break,
                other => {
                    return Err(self.error_here(format!("expected ',' or '}}', found {other}")))
                }
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(arms)
    }

    // ---- expressions ----

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        if *self.peek() == Tok::Lt {
            self.bump();
            let rhs = self.add_expr()?;
            Ok(Expr::Less(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom_expr()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.atom_expr()?;
            e = Expr::Add(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn atom_expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Nat(n) => {
                self.bump();
                Ok(Expr::Nat(n))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Bool(false))
            }
            Tok::Ident(n) => {
                self.bump();
                Ok(Expr::Var(n))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            other => Err(self.error_here(format!("expected an expression, found {other}"))),
        }
    }

    /// Message objects: an atomic expression; a bare identifier is an
    /// endpoint name, everything else a value expression.
    fn object(&mut self) -> Result<Object, ParseError> {
        let e = match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                e
            }
            _ => self.atom_expr()?,
        };
        Ok(match e {
            Expr::Var(n) => Object::Name(n),
            e => Object::Expr(e),
        })
    }

    // ---- processes ----

    fn par(&mut self) -> Result<Process, ParseError> {
        let mut p = self.seq()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            let q = self.seq()?;
            p = Process::par(p, q);
        }
        Ok(p)
    }

    fn continuation(&mut self) -> Result<Process, ParseError> {
        if *self.peek() == Tok::Dot {
            self.bump();
            self.seq()
        } else {
            Ok(Process::Stop)
        }
    }

    fn prefix(&mut self) -> Result<Prefix, ParseError> {
        match self.peek().clone() {
            Tok::Send => {
                self.bump();
                let subject = self.ident("a channel name")?;
                let object = self.object()?;
                let cont = self.continuation()?;
                Ok(Prefix::Send {
                    subject,
                    object,
                    cont: Box::new(cont),
                })
            }
            Tok::Recv => {
                self.bump();
                let subject = self.ident("a channel name")?;
                self.expect(Tok::LParen)?;
                let binder = self.ident("a binder")?;
                self.expect(Tok::RParen)?;
                let cont = self.continuation()?;
                Ok(Prefix::Recv {
                    subject,
                    binder,
                    cont: Box::new(cont),
                })
            }
            Tok::Sel => {
                self.bump();
                let subject = self.ident("a channel name")?;
                let label = self.label()?;
                let cont = self.continuation()?;
                Ok(Prefix::Sel {
                    subject,
                    label,
                    cont: Box::new(cont),
                })
            }
            Tok::BranchKw => {
                self.bump();
                let subject = self.ident("a channel name")?;
                self.expect(Tok::LBrace)?;
                let mut arms = BTreeMap::new();
                loop {
                    let label = self.label()?;
                    self.expect(Tok::Colon)?;
                    let body = self.par()?;
                    if arms.insert(label.clone(), body).is_some() {
                        return Err(self.error_here(format!("duplicate label {label}")));
                    }
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RBrace => break,
                        other => {
                            return Err(
                                self.error_here(format!("expected ',' or '}}', found {other}"))
                            )
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(Prefix::Branch { subject, arms })
            }
            Tok::Req => {
                self.bump();
                let subject = self.ident("a channel name")?;
                let object = self.object()?;
                let cont = self.continuation()?;
                Ok(Prefix::Req {
                    subject,
                    object,
                    cont: Box::new(cont),
                })
            }
            other => Err(self.error_here(format!("expected an action, found {other}"))),
        }
    }

    fn seq(&mut self) -> Result<Process, ParseError> {
        match self.peek().clone() {
            Tok::Nat(0) => {
                self.bump();
                Ok(Process::Stop)
            }
            Tok::Send | Tok::Recv | Tok::Sel | Tok::BranchKw | Tok::Req => {
                Ok(Process::Act(self.prefix()?))
            }
            Tok::Acc => {
                self.bump();
                let subject = self.ident("a channel name")?;
                self.expect(Tok::LParen)?;
                let binder = self.ident("a binder")?;
                self.expect(Tok::RParen)?;
                let body = self.continuation()?;
                Ok(Process::Accept {
                    subject,
                    binder,
                    body: Box::new(body),
                })
            }
            Tok::New => {
                self.bump();
                self.expect(Tok::LParen)?;
                let left = self.ident("an endpoint name")?;
                self.expect(Tok::Colon)?;
                if matches!(self.peek(), Tok::NatTy | Tok::StringTy | Tok::BoolTy) {
                    return Err(self.error_here(
                        "restrictions bind session endpoints; a ground type cannot annotate one"
                            .into(),
                    ));
                }
                let annot = self.session_type()?;
                self.expect(Tok::Comma)?;
                let right = self.ident("an endpoint name")?;
                self.expect(Tok::RParen)?;
                let body = self.seq()?;
                Ok(Process::New {
                    left,
                    annot,
                    right,
                    body: Box::new(body),
                })
            }
            Tok::Cancel => {
                self.bump();
                let n = self.ident("a channel name")?;
                Ok(Process::Cancel(n))
            }
            Tok::Do => {
                self.bump();
                let action = self.prefix()?;
                self.expect(Tok::Catch)?;
                let handler = self.seq()?;
                Ok(Process::Catch {
                    action,
                    handler: Box::new(handler),
                })
            }
            Tok::If => {
                self.bump();
                let test = self.expr()?;
                self.expect(Tok::Then)?;
                let then_branch = self.seq()?;
                self.expect(Tok::Else)?;
                let else_branch = self.seq()?;
                Ok(Process::If {
                    test,
                    then_branch: Box::new(then_branch),
                    else_branch: Box::new(else_branch),
                })
            }
            Tok::LParen => {
                self.bump();
                let p = self.par()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            other => Err(self.error_here(format!("expected a process, found {other}"))),
        }
    }

    fn interface(&mut self) -> Result<Interface, ParseError> {
        let mut out = Interface::new();
        self.expect(Tok::LBrace)?;
        if *self.peek() == Tok::RBrace {
            self.bump();
            return Ok(out);
        }
        loop {
            let name = self.ident("a name")?;
            self.expect(Tok::Colon)?;
            let ty = self.payload()?;
            if let Err(e) = out.add(name, ty) {
                return Err(self.error_here(e.to_string()));
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => break,
                other => {
                    return Err(self.error_here(format!("expected ',' or '}}', found {other}")))
                }
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(out)
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let interface = if *self.peek() == Tok::InterfaceKw {
            self.bump();
            let i = self.interface()?;
            self.expect(Tok::In)?;
            i
        } else {
            Interface::new()
        };
        let process = self.par()?;
        self.expect(Tok::Eof)?;
        Ok(Program {
            interface,
            process: freshen_binders(&process),
        })
    }
}

/// Parses a full program: an optional interface block followed by a process.
/// Binders come out globally distinct.
pub fn program(src: &str) -> Result<Program, ParseError> {
    Parser::new(src)?.program()
}

/// Parses a bare process with no interface block.
pub fn process(src: &str) -> Result<Process, ParseError> {
    let mut p = Parser::new(src)?;
    let out = p.par()?;
    p.expect(Tok::Eof)?;
    Ok(freshen_binders(&out))
}

/// Parses a payload type: a session type or a ground type.
pub fn payload_type(src: &str) -> Result<PayloadType, ParseError> {
    let mut p = Parser::new(src)?;
    let out = p.payload()?;
    p.expect(Tok::Eof)?;
    Ok(out)
}

/// Parses a session type.
pub fn session_type(src: &str) -> Result<SessionType, ParseError> {
    let mut p = Parser::new(src)?;
    let out = p.session_type()?;
    p.expect(Tok::Eof)?;
    Ok(out)
}
