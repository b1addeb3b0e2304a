//! Concrete syntax of models.
//!
//! ```text
//! model      := { decl }
//! decl       := "values" "{" (ATOM | NAT ".." NAT) {"," …} "}"
//!             | "statevar" NAME "in" "{" value {"," value} "}" "init" value
//!             | "sensor" NAME ["when" NAME "=" value]
//!               "gives" "{" value ":" PROB {"," value ":" PROB} "}"
//!             | "def" NAME ["(" NAME {"," NAME} ")"] "=" process
//!             | "system" NAME "=" process
//!             | "attack" NAME "=" process
//! process    := par
//! par        := restr { "|" restr }                      (left associative)
//! restr      := prefixed { "\" "{" NAME {"," NAME} "}" }
//! prefixed   := "nil"
//!             | "tick" ["^" NAT] "." prefixed
//!             | "[" prefix "." process "]" prefixed      (prefix with timeout)
//!             | prefix "." prefixed                      (persistent prefix)
//!             | "if" bexpr "then" prefixed "else" prefixed
//!             | NAME ["(" vexpr {"," vexpr} ")"]         (recursive call)
//!             | "(" process ")"
//! prefix     := NAME "!" vexpr | NAME "?" NAME
//! bexpr      := band { "or" band }
//! band       := bnot { "and" bnot }
//! bnot       := "not" bnot | "(" bexpr ")" | vexpr "=" vexpr
//! vexpr      := vterm { ("+" | "-") vterm }
//! vterm      := NAT | NAME                               (declared atom, else variable)
//! PROB       := NAT [ "/" NAT ]
//! ```
//!
//! `#` starts a line comment. The `values` declaration must precede any use
//! of a value. The persistent prefix `pfx.P` is an abbreviation for a fresh
//! definition `H = [pfx.P]H`; parsing expands it, so a parsed model contains
//! only prefixes with timeouts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::Zero;

use super::{
    BoolExpr, Definition, Model, Prefix, Process, SensorRow, StateVarDecl, Universe, Value,
    ValueExpr,
};
use crate::plts::{rat_display, Rat};

/// A parse or validation diagnostic, with a source position when one exists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            col,
            message: message.into(),
        }
    }

    pub fn unpositioned(message: impl Into<String>) -> Self {
        Diagnostic::new(0, 0, message.into())
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}:{}: {}", self.line, self.col, self.message)
        }
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Nat(u32),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    DotDot,
    Colon,
    Bang,
    Question,
    Pipe,
    Backslash,
    Caret,
    Plus,
    Minus,
    Slash,
    Eq,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{}`", s),
            Tok::Nat(n) => write!(f, "`{}`", n),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::DotDot => write!(f, "`..`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Question => write!(f, "`?`"),
            Tok::Pipe => write!(f, "`|`"),
            Tok::Backslash => write!(f, "`\\`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "values", "statevar", "in", "init", "sensor", "when", "gives", "def", "system", "attack",
    "nil", "tick", "if", "then", "else", "or", "and", "not",
];

fn lex(text: &str) -> Result<Vec<(Tok, usize, usize)>, Diagnostic> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        if c == '#' {
            while let Some(&c) = chars.peek() {
                bump(&mut chars);
                if c == '\n' {
                    break;
                }
            }
            continue;
        }
        if c.is_ascii_alphabetic() {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' || c == '\'' {
                    word.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            out.push((Tok::Ident(word), tl, tc));
            continue;
        }
        if c.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            let n: u32 = digits
                .parse()
                .map_err(|_| Diagnostic::new(tl, tc, format!("number {} is too large", digits)))?;
            out.push((Tok::Nat(n), tl, tc));
            continue;
        }
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '!' => Tok::Bang,
            '?' => Tok::Question,
            '|' => Tok::Pipe,
            '\\' => Tok::Backslash,
            '^' => Tok::Caret,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '/' => Tok::Slash,
            '=' => Tok::Eq,
            '.' => {
                bump(&mut chars);
                if chars.peek() == Some(&'.') {
                    bump(&mut chars);
                    out.push((Tok::DotDot, tl, tc));
                } else {
                    out.push((Tok::Dot, tl, tc));
                }
                continue;
            }
            other => {
                return Err(Diagnostic::new(
                    tl,
                    tc,
                    format!("unexpected character `{}`", other),
                ))
            }
        };
        bump(&mut chars);
        out.push((tok, tl, tc));
    }
    out.push((Tok::Eof, line, col));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    universe: Universe,
    universe_declared: bool,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].0
    }

    fn here(&self) -> (usize, usize) {
        let (_, l, c) = self.toks[self.pos];
        (l, c)
    }

    fn err(&self, message: impl Into<String>) -> Diagnostic {
        let (l, c) = self.here();
        Diagnostic::new(l, c, message)
    }

    fn bump(&mut self) -> Tok {
        let tok = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), Diagnostic> {
        if self.peek() == &tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {}, found {}", tok, self.peek())))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), Diagnostic> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`, found {}", kw, self.peek())))
        }
    }

    fn expect_name(&mut self) -> Result<String, Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.err(format!("expected a name, found {}", other))),
        }
    }

    fn expect_nat(&mut self) -> Result<u32, Diagnostic> {
        match self.peek().clone() {
            Tok::Nat(n) => {
                self.bump();
                Ok(n)
            }
            other => Err(self.err(format!("expected a number, found {}", other))),
        }
    }

    fn parse_value(&mut self) -> Result<Value, Diagnostic> {
        let (l, c) = self.here();
        match self.peek().clone() {
            Tok::Nat(n) => {
                self.bump();
                let v = Value::Nat(n);
                if !self.universe.contains(&v) {
                    return Err(Diagnostic::new(
                        l,
                        c,
                        format!("value {} is outside the declared universe", n),
                    ));
                }
                Ok(v)
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                if !self.universe.atoms.contains(&s) {
                    return Err(Diagnostic::new(
                        l,
                        c,
                        format!("value {} is outside the declared universe", s),
                    ));
                }
                Ok(Value::Atom(s))
            }
            other => Err(self.err(format!("expected a value, found {}", other))),
        }
    }

    fn parse_prob(&mut self) -> Result<Rat, Diagnostic> {
        let (l, c) = self.here();
        let num = self.expect_nat()?;
        let den = if self.eat(&Tok::Slash) {
            self.expect_nat()?
        } else {
            1
        };
        if den == 0 {
            return Err(Diagnostic::new(l, c, "probability has denominator 0"));
        }
        let p = Rat::new(num.into(), den.into());
        if p <= Rat::zero() || p > Rat::new(1.into(), 1.into()) {
            return Err(Diagnostic::new(
                l,
                c,
                format!("probability {} is not in (0, 1]", rat_display(&p)),
            ));
        }
        Ok(p)
    }

    fn parse_vterm(&mut self) -> Result<ValueExpr, Diagnostic> {
        let (l, c) = self.here();
        match self.peek().clone() {
            Tok::Nat(n) => {
                self.bump();
                if !self.universe.contains(&Value::Nat(n)) {
                    return Err(Diagnostic::new(
                        l,
                        c,
                        format!("value {} is outside the declared universe", n),
                    ));
                }
                Ok(ValueExpr::nat(n))
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                if self.universe.atoms.contains(&s) {
                    Ok(ValueExpr::atom(s))
                } else {
                    Ok(ValueExpr::Var(s))
                }
            }
            other => Err(self.err(format!("expected a value expression, found {}", other))),
        }
    }

    fn parse_vexpr(&mut self) -> Result<ValueExpr, Diagnostic> {
        let mut e = self.parse_vterm()?;
        loop {
            if self.eat(&Tok::Plus) {
                let rhs = self.parse_vterm()?;
                e = ValueExpr::Add(Box::new(e), Box::new(rhs));
            } else if self.eat(&Tok::Minus) {
                let rhs = self.parse_vterm()?;
                e = ValueExpr::Sub(Box::new(e), Box::new(rhs));
            } else {
                return Ok(e);
            }
        }
    }

    fn parse_bool(&mut self) -> Result<BoolExpr, Diagnostic> {
        let mut e = self.parse_band()?;
        while self.eat_keyword("or") {
            let rhs = self.parse_band()?;
            e = BoolExpr::Or(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_band(&mut self) -> Result<BoolExpr, Diagnostic> {
        let mut e = self.parse_bnot()?;
        while self.eat_keyword("and") {
            let rhs = self.parse_bnot()?;
            e = BoolExpr::And(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_bnot(&mut self) -> Result<BoolExpr, Diagnostic> {
        if self.eat_keyword("not") {
            let inner = self.parse_bnot()?;
            return Ok(BoolExpr::Not(Box::new(inner)));
        }
        if self.eat(&Tok::LParen) {
            let inner = self.parse_bool()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let lhs = self.parse_vexpr()?;
        self.expect(Tok::Eq)?;
        let rhs = self.parse_vexpr()?;
        Ok(BoolExpr::Eq(lhs, rhs))
    }

    fn parse_prefix(&mut self) -> Result<Prefix, Diagnostic> {
        let target = self.expect_name()?;
        if self.eat(&Tok::Bang) {
            let value = self.parse_vexpr()?;
            Ok(Prefix::Write { target, value })
        } else if self.eat(&Tok::Question) {
            let var = self.expect_name()?;
            Ok(Prefix::Read { target, var })
        } else {
            Err(self.err("expected `!` or `?` in a prefix"))
        }
    }

    fn parse_process(&mut self) -> Result<Process, Diagnostic> {
        let mut p = self.parse_restr()?;
        while self.eat(&Tok::Pipe) {
            let rhs = self.parse_restr()?;
            p = Process::par(p, rhs);
        }
        Ok(p)
    }

    fn parse_restr(&mut self) -> Result<Process, Diagnostic> {
        let mut p = self.parse_prefixed()?;
        while self.eat(&Tok::Backslash) {
            self.expect(Tok::LBrace)?;
            loop {
                let channel = self.expect_name()?;
                p = Process::Restrict {
                    proc: Box::new(p),
                    channel,
                };
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RBrace)?;
        }
        Ok(p)
    }

    fn parse_prefixed(&mut self) -> Result<Process, Diagnostic> {
        if self.eat_keyword("nil") {
            return Ok(Process::Nil);
        }
        if self.eat_keyword("tick") {
            let k = if self.eat(&Tok::Caret) {
                let (l, c) = self.here();
                let k = self.expect_nat()?;
                if k == 0 {
                    return Err(Diagnostic::new(l, c, "tick^0 is not a prefix"));
                }
                k
            } else {
                1
            };
            self.expect(Tok::Dot)?;
            let cont = self.parse_prefixed()?;
            return Ok(Process::ticks(k, cont));
        }
        if self.eat(&Tok::LBracket) {
            let prefix = self.parse_prefix()?;
            self.expect(Tok::Dot)?;
            let then = self.parse_process()?;
            self.expect(Tok::RBracket)?;
            let alt = self.parse_prefixed()?;
            return Ok(Process::Timeout {
                prefix,
                then: Box::new(then),
                alt: Box::new(alt),
            });
        }
        if self.eat_keyword("if") {
            let cond = self.parse_bool()?;
            self.expect_keyword("then")?;
            let then = self.parse_prefixed()?;
            self.expect_keyword("else")?;
            let alt = self.parse_prefixed()?;
            return Ok(Process::If {
                cond,
                then: Box::new(then),
                alt: Box::new(alt),
            });
        }
        if self.eat(&Tok::LParen) {
            let p = self.parse_process()?;
            self.expect(Tok::RParen)?;
            return Ok(p);
        }
        if matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str())) {
            // A name starts either a prefix (`o!…` / `o?…`) or a call.
            if matches!(self.peek2(), Tok::Bang | Tok::Question) {
                let prefix = self.parse_prefix()?;
                self.expect(Tok::Dot)?;
                let body = self.parse_prefixed()?;
                return Ok(Process::Persist {
                    prefix,
                    body: Box::new(body),
                });
            }
            let id = self.expect_name()?;
            let mut args = Vec::new();
            if self.eat(&Tok::LParen) {
                loop {
                    args.push(self.parse_vexpr()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RParen)?;
            }
            return Ok(Process::Call { id, args });
        }
        Err(self.err(format!("expected a process, found {}", self.peek())))
    }

    fn parse_model(&mut self) -> Result<Model, Diagnostic> {
        let mut model = Model::default();
        loop {
            if self.peek() == &Tok::Eof {
                break;
            }
            if self.eat_keyword("values") {
                if self.universe_declared {
                    return Err(self.err("duplicate values declaration"));
                }
                self.expect(Tok::LBrace)?;
                loop {
                    match self.peek().clone() {
                        Tok::Nat(lo) => {
                            let (l, c) = self.here();
                            self.bump();
                            self.expect(Tok::DotDot)?;
                            let hi = self.expect_nat()?;
                            if lo != 0 {
                                return Err(Diagnostic::new(
                                    l,
                                    c,
                                    "natural ranges must start at 0",
                                ));
                            }
                            if self.universe.nat_max.replace(hi).is_some() {
                                return Err(Diagnostic::new(l, c, "duplicate natural range"));
                            }
                        }
                        _ => {
                            let name = self.expect_name()?;
                            self.universe.atoms.insert(name);
                        }
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                self.universe_declared = true;
                model.universe = self.universe.clone();
                continue;
            }
            if !self.universe_declared {
                return Err(self.err("the values declaration must come first"));
            }
            if self.eat_keyword("statevar") {
                let name = self.expect_name()?;
                self.expect_keyword("in")?;
                self.expect(Tok::LBrace)?;
                let mut range = Vec::new();
                loop {
                    range.push(self.parse_value()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                range.sort();
                range.dedup();
                self.expect_keyword("init")?;
                let init = self.parse_value()?;
                if model.statevars.iter().any(|v| v.name == name) {
                    return Err(self.err(format!("duplicate state variable {}", name)));
                }
                model.statevars.push(StateVarDecl { name, range, init });
                continue;
            }
            if self.eat_keyword("sensor") {
                let (l, c) = self.here();
                let name = self.expect_name()?;
                let when = if self.eat_keyword("when") {
                    let var = self.expect_name()?;
                    self.expect(Tok::Eq)?;
                    let value = self.parse_value()?;
                    Some((var, value))
                } else {
                    None
                };
                self.expect_keyword("gives")?;
                self.expect(Tok::LBrace)?;
                let mut dist = BTreeMap::new();
                let mut mass = Rat::zero();
                loop {
                    let value = self.parse_value()?;
                    self.expect(Tok::Colon)?;
                    let p = self.parse_prob()?;
                    mass += p.clone();
                    if dist.insert(value, p).is_some() {
                        return Err(self.err("duplicate value in measurement row"));
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                if mass != Rat::new(1.into(), 1.into()) {
                    return Err(Diagnostic::new(
                        l,
                        c,
                        format!(
                            "measurement row of sensor {} has mass {}, expected 1",
                            name,
                            rat_display(&mass)
                        ),
                    ));
                }
                model
                    .sensors
                    .entry(name)
                    .or_default()
                    .push(SensorRow { when, dist });
                continue;
            }
            if self.eat_keyword("def") {
                let (l, c) = self.here();
                let name = self.expect_name()?;
                let mut params = Vec::new();
                if self.eat(&Tok::LParen) {
                    loop {
                        params.push(self.expect_name()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(Tok::RParen)?;
                }
                self.expect(Tok::Eq)?;
                let body = self.parse_process()?;
                if model
                    .defs
                    .insert(
                        name.clone(),
                        Definition {
                            name: name.clone(),
                            params,
                            body,
                        },
                    )
                    .is_some()
                {
                    return Err(Diagnostic::new(l, c, format!("duplicate definition {}", name)));
                }
                continue;
            }
            if self.eat_keyword("system") {
                let name = self.expect_name()?;
                self.expect(Tok::Eq)?;
                let body = self.parse_process()?;
                if model.systems.insert(name.clone(), body).is_some() {
                    return Err(self.err(format!("duplicate system {}", name)));
                }
                continue;
            }
            if self.eat_keyword("attack") {
                let name = self.expect_name()?;
                self.expect(Tok::Eq)?;
                let body = self.parse_process()?;
                if model.attacks.insert(name.clone(), body).is_some() {
                    return Err(self.err(format!("duplicate attack {}", name)));
                }
                continue;
            }
            return Err(self.err(format!("expected a declaration, found {}", self.peek())));
        }
        Ok(model)
    }
}

/// Replaces every persistent prefix `pfx.P` with a call to a fresh
/// definition `H = [pfx.P]H`, per the notation of the calculus.
fn desugar(model: &mut Model) {
    let mut taken: BTreeSet<String> = model.defs.keys().cloned().collect();
    let mut generated: Vec<Definition> = Vec::new();

    fn fresh(base: &str, counter: &mut u32, taken: &mut BTreeSet<String>) -> String {
        loop {
            *counter += 1;
            let candidate = format!("{}'{}", base, counter);
            if taken.insert(candidate.clone()) {
                return candidate;
            }
        }
    }

    fn walk(
        p: Process,
        base: &str,
        counter: &mut u32,
        taken: &mut BTreeSet<String>,
        out: &mut Vec<Definition>,
    ) -> Process {
        match p {
            Process::Nil | Process::Call { .. } => p,
            Process::Tick(q) => Process::Tick(Box::new(walk(*q, base, counter, taken, out))),
            Process::Par(l, r) => Process::Par(
                Box::new(walk(*l, base, counter, taken, out)),
                Box::new(walk(*r, base, counter, taken, out)),
            ),
            Process::Timeout { prefix, then, alt } => Process::Timeout {
                prefix,
                then: Box::new(walk(*then, base, counter, taken, out)),
                alt: Box::new(walk(*alt, base, counter, taken, out)),
            },
            Process::If { cond, then, alt } => Process::If {
                cond,
                then: Box::new(walk(*then, base, counter, taken, out)),
                alt: Box::new(walk(*alt, base, counter, taken, out)),
            },
            Process::Restrict { proc, channel } => Process::Restrict {
                proc: Box::new(walk(*proc, base, counter, taken, out)),
                channel,
            },
            Process::Persist { prefix, body } => {
                let body = walk(*body, base, counter, taken, out);
                let name = fresh(base, counter, taken);
                let timeout = Process::Timeout {
                    prefix,
                    then: Box::new(body),
                    alt: Box::new(Process::Nil), // patched below once params are known
                };
                let mut fv = BTreeSet::new();
                timeout.collect_free_vars(&mut fv);
                let params: Vec<String> = fv.into_iter().collect();
                let args: Vec<ValueExpr> = params.iter().cloned().map(ValueExpr::Var).collect();
                let call = Process::Call {
                    id: name.clone(),
                    args,
                };
                let body = match timeout {
                    Process::Timeout { prefix, then, .. } => Process::Timeout {
                        prefix,
                        then,
                        alt: Box::new(call.clone()),
                    },
                    _ => unreachable!(),
                };
                out.push(Definition {
                    name,
                    params,
                    body,
                });
                call
            }
        }
    }

    let def_names: Vec<String> = model.defs.keys().cloned().collect();
    for name in def_names {
        let mut counter = 0;
        let def = model.defs.get(&name).unwrap().clone();
        let body = walk(def.body, &name, &mut counter, &mut taken, &mut generated);
        model.defs.get_mut(&name).unwrap().body = body;
    }
    let system_names: Vec<String> = model.systems.keys().cloned().collect();
    for name in system_names {
        let mut counter = 0;
        let body = model.systems.remove(&name).unwrap();
        let body = walk(body, &name, &mut counter, &mut taken, &mut generated);
        model.systems.insert(name, body);
    }
    let attack_names: Vec<String> = model.attacks.keys().cloned().collect();
    for name in attack_names {
        let mut counter = 0;
        let body = model.attacks.remove(&name).unwrap();
        let body = walk(body, &name, &mut counter, &mut taken, &mut generated);
        model.attacks.insert(name, body);
    }
    for def in generated {
        model.defs.insert(def.name.clone(), def);
    }
}

/// Parses a model source text. The result contains no persistent-prefix
/// nodes; printing it and parsing the output is the identity.
pub fn parse(text: &str) -> Result<Model, Diagnostic> {
    let toks = lex(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        universe: Universe::default(),
        universe_declared: false,
    };
    let mut model = parser.parse_model()?;
    desugar(&mut model);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plts::rat;

    #[test]
    fn smallest_recursive_model() {
        let model = parse("values { on }\ndef H = [c!on.H]H\n").unwrap();
        assert_eq!(model.defs.len(), 1);
        let def = &model.defs["H"];
        assert!(matches!(def.body, Process::Timeout { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse("values { on }\ndef H = tick.\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("expected a process"));
    }

    #[test]
    fn value_outside_universe_is_rejected() {
        let err = parse("values { on }\ndef H = [c!off.H]H\n").unwrap_err();
        assert!(err.message.contains("outside the declared universe"));
        let err = parse("values { on, 0..3 }\ndef H(j) = tick.H(j-7)\n").unwrap_err();
        assert!(err.message.contains("outside the declared universe"));
    }

    #[test]
    fn persistent_prefix_expands_to_fresh_definition() {
        let model = parse("values { on }\ndef H = c!on.tick.H\n").unwrap();
        // H = H'1 with H'1 = [c!on.tick.H]H'1
        assert_eq!(model.defs.len(), 2);
        let gen = &model.defs["H'1"];
        match &gen.body {
            Process::Timeout { prefix, then, alt } => {
                assert_eq!(prefix.target(), "c");
                assert_eq!(**then, Process::tick(Process::call("H")));
                assert_eq!(**alt, Process::call("H'1"));
            }
            other => panic!("unexpected desugaring: {:?}", other),
        }
        assert_eq!(model.defs["H"].body, Process::call("H'1"));
    }

    #[test]
    fn persistent_read_keeps_free_variables_as_parameters() {
        let model = parse("values { on, off }\ndef M(x) = c?z.d!x.tick.M(z)\n").unwrap();
        // Expansion is innermost-first. The persistent write d!x sits under
        // the read binding z, so its generated definition carries both x and
        // z, while the outer read binds z itself.
        let inner = &model.defs["M'1"];
        assert_eq!(inner.params, vec!["x".to_string(), "z".to_string()]);
        let outer = &model.defs["M'2"];
        assert_eq!(outer.params, vec!["x".to_string()]);
    }

    #[test]
    fn sensor_row_must_be_a_distribution() {
        let err = parse(
            "values { presence, absence }\nstatevar r in { absence } init absence\nsensor s when r=absence gives { presence: 1/10 }\n",
        )
        .unwrap_err();
        assert!(err.message.contains("mass"));
    }

    #[test]
    fn roundtrip_on_representative_model() {
        let src = "\
values { absence, off, on, presence, 0..4 }
statevar r1 in { absence, presence } init absence
sensor s1 when r1=absence gives { absence: 9/10, presence: 1/10 }
sensor s1 when r1=presence gives { absence: 1/10, presence: 9/10 }
def B1(j) = if j=0 then nil else [s1!presence.tick.B1(j-1)]B1(j-1)
def Ctrl1 = [s1?z.if z=presence then Ctrl1'1 else Ctrl1'2]Ctrl1
def Ctrl1'1 = [c1!on.tick.Ctrl1]Ctrl1'1
def Ctrl1'2 = [c1!off.tick.Ctrl1]Ctrl1'2
system M1 = Ctrl1
system M1A = Ctrl1 | tick.B1(3)
attack Afp1 = tick.B1(3)
";
        let model = parse(src).unwrap();
        let printed = model.to_string();
        let reparsed = parse(&printed).unwrap();
        assert_eq!(model, reparsed);
        assert_eq!(printed, reparsed.to_string());
    }

    #[test]
    fn probabilities_parse_exactly() {
        let model = parse(
            "values { a, b }\nstatevar x in { a } init a\nsensor s gives { a: 2/5, b: 3/5 }\n",
        )
        .unwrap();
        let row = &model.sensors["s"][0];
        assert_eq!(row.dist[&Value::Atom("a".into())], rat(2, 5));
        assert_eq!(row.dist[&Value::Atom("b".into())], rat(3, 5));
    }

    #[test]
    fn restriction_groups_and_parallel_associativity() {
        let model = parse(
            "values { on }\ndef A = nil\ndef B = nil\ndef C = nil\nsystem S = ((A | B) | C) \\ {c1, c2}\n",
        )
        .unwrap();
        let sys = &model.systems["S"];
        match sys {
            Process::Restrict { proc, channel } => {
                assert_eq!(channel, "c2");
                match proc.as_ref() {
                    Process::Restrict { channel, .. } => assert_eq!(channel, "c1"),
                    other => panic!("expected nested restriction, got {}", other),
                }
            }
            other => panic!("expected restriction, got {}", other),
        }
        let printed = model.to_string();
        assert!(printed.contains("(A | B | C) \\ {c1, c2}"));
        assert_eq!(parse(&printed).unwrap(), model);
    }
}
