//! The concurrent-program DSL: source syntax, parser, lowering to per-thread
//! location graphs, and a pretty-printer that round-trips through the parser.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        pub struct $name(pub u32);

        impl $name {
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Thread identifier, `1..=N`. Thread 1 is the first declared thread.
    ThreadId
);
id_type!(VarId);
id_type!(MutexId);
id_type!(CondId);
id_type!(
    /// Index into the owning thread's register file.
    RegId
);
id_type!(StmtId);
id_type!(
    /// Program location within one thread.
    Loc
);

impl ThreadId {
    /// Zero-based position, for indexing per-thread vectors.
    pub fn pos(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_pos(pos: usize) -> Self {
        ThreadId(pos as u32 + 1)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("undeclared name `{0}`")]
    Reference(String),
    #[error("invalid program structure: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Ge => ">=",
            BinOp::Gt => ">",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Lt => (a < b) as i64,
            BinOp::Le => (a <= b) as i64,
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::Ge => (a >= b) as i64,
            BinOp::Gt => (a > b) as i64,
            BinOp::And => (a != 0 && b != 0) as i64,
            BinOp::Or => (a != 0 || b != 0) as i64,
        }
    }
}

/// Integer expression over references of type `R` (names in source form,
/// resolved [`Ref`]s after lowering).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr<R> {
    Int(i64),
    Ref(R),
    Neg(Box<Expr<R>>),
    Not(Box<Expr<R>>),
    Bin(BinOp, Box<Expr<R>>, Box<Expr<R>>),
}

/// A resolved variable reference: shared memory or a thread register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ref {
    Var(VarId),
    Reg(RegId),
}

impl<R> Expr<R> {
    fn try_map<S, E>(&self, f: &mut impl FnMut(&R) -> Result<S, E>) -> Result<Expr<S>, E> {
        Ok(match self {
            Expr::Int(n) => Expr::Int(*n),
            Expr::Ref(r) => Expr::Ref(f(r)?),
            Expr::Neg(e) => Expr::Neg(Box::new(e.try_map(f)?)),
            Expr::Not(e) => Expr::Not(Box::new(e.try_map(f)?)),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.try_map(f)?), Box::new(b.try_map(f)?)),
        })
    }

    fn for_each_ref(&self, f: &mut impl FnMut(&R)) {
        match self {
            Expr::Int(_) => {}
            Expr::Ref(r) => f(r),
            Expr::Neg(e) | Expr::Not(e) => e.for_each_ref(f),
            Expr::Bin(_, a, b) => {
                a.for_each_ref(f);
                b.for_each_ref(f);
            }
        }
    }

    /// Writes the expression using `name` for references. Binary operands
    /// that are themselves compound get parentheses, so the output parses
    /// back to the same tree.
    fn write_with(&self, out: &mut String, name: &impl Fn(&R) -> String) {
        match self {
            Expr::Int(n) => {
                let _ = write!(out, "{n}");
            }
            Expr::Ref(r) => out.push_str(&name(r)),
            Expr::Neg(e) => {
                out.push('-');
                e.write_operand(out, name, true);
            }
            Expr::Not(e) => {
                out.push_str("not ");
                e.write_operand(out, name, false);
            }
            Expr::Bin(op, a, b) => {
                a.write_operand(out, name, false);
                let _ = write!(out, " {} ", op.symbol());
                b.write_operand(out, name, false);
            }
        }
    }

    fn write_operand(&self, out: &mut String, name: &impl Fn(&R) -> String, after_minus: bool) {
        let atomic = match self {
            Expr::Int(n) => !after_minus && *n >= 0,
            Expr::Ref(_) => true,
            _ => false,
        };
        if atomic {
            self.write_with(out, name);
        } else {
            out.push('(');
            self.write_with(out, name);
            out.push(')');
        }
    }
}

impl Expr<Ref> {
    /// Evaluates with wrapping arithmetic; booleans are 0/1, any non-zero is true.
    pub fn eval(&self, vars: &[i64], regs: &[i64]) -> i64 {
        match self {
            Expr::Int(n) => *n,
            Expr::Ref(Ref::Var(v)) => vars[v.idx()],
            Expr::Ref(Ref::Reg(r)) => regs[r.idx()],
            Expr::Neg(e) => e.eval(vars, regs).wrapping_neg(),
            Expr::Not(e) => (e.eval(vars, regs) == 0) as i64,
            Expr::Bin(op, a, b) => op.apply(a.eval(vars, regs), b.eval(vars, regs)),
        }
    }
}

/// Source-level statements, kept for pretty-printing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SrcStmt {
    Assign {
        target: String,
        value: Expr<String>,
    },
    Choose {
        target: String,
        values: Vec<i64>,
    },
    Lock(String),
    Unlock(String),
    Wait {
        cond: String,
        mutex: String,
    },
    Signal(String),
    Broadcast(String),
    If {
        cond: Expr<String>,
        then_body: Vec<SrcStmt>,
        else_body: Vec<SrcStmt>,
    },
    While {
        cond: Expr<String>,
        body: Vec<SrcStmt>,
    },
    Loop {
        body: Vec<SrcStmt>,
    },
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub init: i64,
}

/// Local computation: optional guard that must evaluate non-zero, then an
/// optional assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalOp {
    pub guard: Option<Expr<Ref>>,
    pub assign: Option<(Ref, Expr<Ref>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operation {
    Local(LocalOp),
    Lock(MutexId),
    Unlock(MutexId),
    Wait(CondId, MutexId),
    Signal(CondId),
    Broadcast(CondId),
}

/// Shared variables touched by a local statement. Registers are excluded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessInfo {
    pub reads: BTreeSet<VarId>,
    pub writes: BTreeSet<VarId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub id: StmtId,
    pub thread: ThreadId,
    pub from: Loc,
    pub to: Loc,
    pub op: Operation,
    pub access: AccessInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thread {
    pub id: ThreadId,
    pub name: String,
    pub regs: Vec<VarDecl>,
    pub source: Vec<SrcStmt>,
    pub entry: Loc,
    /// Terminal location; a thread sitting here has exited.
    pub exit: Loc,
    /// Outgoing statements per location, in declaration order.
    pub locations: Vec<Vec<StmtId>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub vars: Vec<VarDecl>,
    pub mutexes: Vec<String>,
    pub conds: Vec<String>,
    pub threads: Vec<Thread>,
    pub statements: Vec<Statement>,
}

impl Program {
    pub fn parse(text: &str) -> Result<Program, ModelError> {
        parse_program(text)
    }

    pub fn thread(&self, t: ThreadId) -> &Thread {
        &self.threads[t.pos()]
    }

    pub fn statement(&self, id: StmtId) -> &Statement {
        &self.statements[id.idx()]
    }

    pub fn num_threads(&self) -> usize {
        self.threads.len()
    }

    pub fn thread_ids(&self) -> impl Iterator<Item = ThreadId> {
        (0..self.threads.len()).map(ThreadId::from_pos)
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(|i| VarId(i as u32))
    }

    pub fn mutex_id(&self, name: &str) -> Option<MutexId> {
        self.mutexes.iter().position(|m| m == name).map(|i| MutexId(i as u32))
    }

    pub fn cond_id(&self, name: &str) -> Option<CondId> {
        self.conds.iter().position(|c| c == name).map(|i| CondId(i as u32))
    }

    pub fn thread_by_name(&self, name: &str) -> Option<ThreadId> {
        self.threads.iter().find(|t| t.name == name).map(|t| t.id)
    }

    fn ref_name(&self, thread: ThreadId, r: &Ref) -> String {
        match r {
            Ref::Var(v) => self.vars[v.idx()].name.clone(),
            Ref::Reg(g) => self.thread(thread).regs[g.idx()].name.clone(),
        }
    }

    /// Short human-readable rendering of a lowered statement, used in labels.
    pub fn describe(&self, id: StmtId) -> String {
        let st = self.statement(id);
        let name = |r: &Ref| self.ref_name(st.thread, r);
        match &st.op {
            Operation::Local(op) => {
                let mut out = String::new();
                if let Some(g) = &op.guard {
                    out.push('[');
                    g.write_with(&mut out, &name);
                    out.push(']');
                }
                if let Some((target, value)) = &op.assign {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&name(target));
                    out.push_str(" = ");
                    value.write_with(&mut out, &name);
                }
                if out.is_empty() {
                    out.push_str("skip");
                }
                out
            }
            Operation::Lock(m) => format!("lock {}", self.mutexes[m.idx()]),
            Operation::Unlock(m) => format!("unlock {}", self.mutexes[m.idx()]),
            Operation::Wait(c, m) => format!("wait {} {}", self.conds[c.idx()], self.mutexes[m.idx()]),
            Operation::Signal(c) => format!("signal {}", self.conds[c.idx()]),
            Operation::Broadcast(c) => format!("broadcast {}", self.conds[c.idx()]),
        }
    }

    /// Renders the program back to DSL source.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        for v in &self.vars {
            let _ = writeln!(out, "var {} = {}", v.name, v.init);
        }
        for m in &self.mutexes {
            let _ = writeln!(out, "mutex {m}");
        }
        for c in &self.conds {
            let _ = writeln!(out, "cond {c}");
        }
        for t in &self.threads {
            let _ = writeln!(out, "\nthread {} {{", t.name);
            for r in &t.regs {
                let _ = writeln!(out, "  reg {} = {}", r.name, r.init);
            }
            print_block(&mut out, &t.source, 1);
            out.push_str("}\n");
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

fn print_block(out: &mut String, body: &[SrcStmt], depth: usize) {
    let pad = "  ".repeat(depth);
    let ident = |s: &String| s.clone();
    for st in body {
        out.push_str(&pad);
        match st {
            SrcStmt::Assign { target, value } => {
                let _ = write!(out, "{target} = ");
                value.write_with(out, &ident);
            }
            SrcStmt::Choose { target, values } => {
                let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                let _ = write!(out, "{target} = choose({})", vals.join(", "));
            }
            SrcStmt::Lock(m) => {
                let _ = write!(out, "lock {m}");
            }
            SrcStmt::Unlock(m) => {
                let _ = write!(out, "unlock {m}");
            }
            SrcStmt::Wait { cond, mutex } => {
                let _ = write!(out, "wait {cond} {mutex}");
            }
            SrcStmt::Signal(c) => {
                let _ = write!(out, "signal {c}");
            }
            SrcStmt::Broadcast(c) => {
                let _ = write!(out, "broadcast {c}");
            }
            SrcStmt::If {
                cond,
                then_body,
                else_body,
            } => {
                out.push_str("if ");
                cond.write_with(out, &ident);
                out.push_str(" {\n");
                print_block(out, then_body, depth + 1);
                if !else_body.is_empty() {
                    let _ = writeln!(out, "{pad}}} else {{");
                    print_block(out, else_body, depth + 1);
                }
                out.push_str(&pad);
                out.push('}');
            }
            SrcStmt::While { cond, body } => {
                out.push_str("while ");
                cond.write_with(out, &ident);
                out.push_str(" {\n");
                print_block(out, body, depth + 1);
                out.push_str(&pad);
                out.push('}');
            }
            SrcStmt::Loop { body } => {
                out.push_str("loop {\n");
                print_block(out, body, depth + 1);
                out.push_str(&pad);
                out.push('}');
            }
            SrcStmt::Exit => out.push_str("exit"),
        }
        out.push('\n');
    }
}

/// All statements of `thread` leaving `loc`, in declaration order.
pub fn statements_of(p: &Program, thread: ThreadId, loc: Loc) -> Vec<&Statement> {
    p.thread(thread)
        .locations
        .get(loc.idx())
        .map(|ids| ids.iter().map(|id| p.statement(*id)).collect())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "≤", "≥", "≠", "=", "<", ">", "+", "-", "*", "(", ")", "{", "}",
    ",", ";", "!",
];

const KEYWORDS: &[&str] = &[
    "var", "mutex", "cond", "thread", "reg", "lock", "unlock", "wait", "signal", "broadcast", "if",
    "else", "while", "loop", "exit", "choose", "and", "or", "not",
];

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ModelError> {
    let mut toks = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let (byte, c) = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
                let end = chars.get(i).map(|(b, _)| *b).unwrap_or(line.len());
                let digits = &line[chars[start].0..end];
                let n: u64 = digits
                    .parse()
                    .map_err(|_| syntax(line_no, col, format!("integer literal `{digits}` out of range")))?;
                toks.push(Token {
                    tok: Tok::Int(n),
                    line: line_no,
                    col,
                });
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let end = chars.get(i).map(|(b, _)| *b).unwrap_or(line.len());
                toks.push(Token {
                    tok: Tok::Ident(line[chars[start].0..end].to_string()),
                    line: line_no,
                    col,
                });
                continue;
            }
            let rest = &line[byte..];
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(sym) => {
                    toks.push(Token {
                        tok: Tok::Sym(sym),
                        line: line_no,
                        col,
                    });
                    i += sym.chars().count();
                }
                None => return Err(syntax(line_no, col, format!("unexpected character `{c}`"))),
            }
        }
    }
    let (line, col) = match text.lines().enumerate().last() {
        Some((n, l)) => (n + 1, l.chars().count() + 1),
        None => (1, 1),
    };
    toks.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

struct SrcThread {
    name: String,
    regs: Vec<VarDecl>,
    body: Vec<SrcStmt>,
}

struct SrcProgram {
    vars: Vec<VarDecl>,
    mutexes: Vec<String>,
    conds: Vec<String>,
    threads: Vec<SrcThread>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> ModelError {
        let t = self.peek();
        syntax(t.line, t.col, message)
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == kw)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ModelError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error_here(format!("expected `{s}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ModelError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(format!("expected `{kw}`")))
        }
    }

    fn name(&mut self) -> Result<String, ModelError> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error_here("expected a name")),
        }
    }

    fn signed_int(&mut self) -> Result<i64, ModelError> {
        let neg = self.eat_sym("-");
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(n) => {
                self.bump();
                literal_value(n, neg).ok_or_else(|| syntax(t.line, t.col, "integer literal out of range"))
            }
            _ => Err(self.error_here("expected an integer")),
        }
    }

    fn program(&mut self) -> Result<SrcProgram, ModelError> {
        let (mut vars, mut mutexes, mut conds, mut threads) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        loop {
            if matches!(self.peek().tok, Tok::Eof) {
                break;
            }
            if self.eat_sym(";") {
                continue;
            }
            if self.is_kw("var") {
                self.bump();
                let name = self.name()?;
                self.expect_sym("=")?;
                let init = self.signed_int()?;
                vars.push(VarDecl { name, init });
            } else if self.is_kw("mutex") {
                self.bump();
                mutexes.push(self.name()?);
            } else if self.is_kw("cond") {
                self.bump();
                conds.push(self.name()?);
            } else if self.is_kw("thread") {
                self.bump();
                let name = self.name()?;
                let mut regs = Vec::new();
                let body = self.block(Some(&mut regs))?;
                threads.push(SrcThread { name, regs, body });
            } else {
                return Err(self.error_here("expected `var`, `mutex`, `cond` or `thread`"));
            }
        }
        Ok(SrcProgram {
            vars,
            mutexes,
            conds,
            threads,
        })
    }

    /// Parses `{ stmt* }`. Register declarations are only legal at thread level
    /// (`regs` is `Some`) but may appear anywhere in the thread body.
    fn block(&mut self, mut regs: Option<&mut Vec<VarDecl>>) -> Result<Vec<SrcStmt>, ModelError> {
        self.expect_sym("{")?;
        let mut body = Vec::new();
        loop {
            if self.eat_sym("}") {
                return Ok(body);
            }
            if self.eat_sym(";") {
                continue;
            }
            if matches!(self.peek().tok, Tok::Eof) {
                return Err(self.error_here("unexpected end of input, expected `}`"));
            }
            if self.is_kw("reg") {
                let Some(regs) = regs.as_deref_mut() else {
                    return Err(self.error_here("`reg` declarations must appear directly in a thread body"));
                };
                self.bump();
                let name = self.name()?;
                self.expect_sym("=")?;
                let init = self.signed_int()?;
                regs.push(VarDecl { name, init });
                continue;
            }
            body.push(self.statement()?);
        }
    }

    fn statement(&mut self) -> Result<SrcStmt, ModelError> {
        let kw = match &self.peek().tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.error_here("expected a statement")),
        };
        match kw.as_str() {
            "lock" => {
                self.bump();
                Ok(SrcStmt::Lock(self.name()?))
            }
            "unlock" => {
                self.bump();
                Ok(SrcStmt::Unlock(self.name()?))
            }
            "wait" => {
                self.bump();
                let cond = self.name()?;
                let mutex = self.name()?;
                Ok(SrcStmt::Wait { cond, mutex })
            }
            "signal" => {
                self.bump();
                Ok(SrcStmt::Signal(self.name()?))
            }
            "broadcast" => {
                self.bump();
                Ok(SrcStmt::Broadcast(self.name()?))
            }
            "exit" => {
                self.bump();
                Ok(SrcStmt::Exit)
            }
            "if" => self.if_statement(),
            "while" => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block(None)?;
                Ok(SrcStmt::While { cond, body })
            }
            "loop" => {
                self.bump();
                let body = self.block(None)?;
                Ok(SrcStmt::Loop { body })
            }
            _ => {
                let target = self.name()?;
                self.expect_sym("=")?;
                if self.is_kw("choose") {
                    self.bump();
                    self.expect_sym("(")?;
                    let mut values = vec![self.signed_int()?];
                    while self.eat_sym(",") {
                        values.push(self.signed_int()?);
                    }
                    self.expect_sym(")")?;
                    Ok(SrcStmt::Choose { target, values })
                } else {
                    let value = self.expr()?;
                    Ok(SrcStmt::Assign { target, value })
                }
            }
        }
    }

    fn if_statement(&mut self) -> Result<SrcStmt, ModelError> {
        self.expect_kw("if")?;
        let cond = self.expr()?;
        let then_body = self.block(None)?;
        let else_body = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                vec![self.if_statement()?]
            } else {
                self.block(None)?
            }
        } else {
            Vec::new()
        };
        Ok(SrcStmt::If {
            cond,
            then_body,
            else_body,
        })
    }

    fn expr(&mut self) -> Result<Expr<String>, ModelError> {
        let mut lhs = self.and_expr()?;
        while self.is_kw("or") || self.is_sym("||") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr<String>, ModelError> {
        let mut lhs = self.not_expr()?;
        while self.is_kw("and") || self.is_sym("&&") {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr<String>, ModelError> {
        if self.is_kw("not") || self.is_sym("!") {
            self.bump();
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr<String>, ModelError> {
        let lhs = self.add_expr()?;
        let op = match &self.peek().tok {
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym("<=") | Tok::Sym("≤") => BinOp::Le,
            Tok::Sym("==") => BinOp::Eq,
            Tok::Sym("!=") | Tok::Sym("≠") => BinOp::Ne,
            Tok::Sym(">=") | Tok::Sym("≥") => BinOp::Ge,
            Tok::Sym(">") => BinOp::Gt,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add_expr(&mut self) -> Result<Expr<String>, ModelError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = if self.is_sym("+") {
                BinOp::Add
            } else if self.is_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> Result<Expr<String>, ModelError> {
        let mut lhs = self.unary()?;
        while self.eat_sym("*") {
            let rhs = self.unary()?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr<String>, ModelError> {
        if self.eat_sym("-") {
            // `-5` is the literal -5; `-(5)` and `-x` are negations.
            let t = self.peek().clone();
            if let Tok::Int(n) = t.tok {
                self.bump();
                return literal_value(n, true)
                    .map(Expr::Int)
                    .ok_or_else(|| syntax(t.line, t.col, "integer literal out of range"));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr<String>, ModelError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(n) => {
                self.bump();
                literal_value(n, false)
                    .map(Expr::Int)
                    .ok_or_else(|| syntax(t.line, t.col, "integer literal out of range"))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(_) => Ok(Expr::Ref(self.name()?)),
            _ => Err(self.error_here("expected an expression")),
        }
    }
}

fn literal_value(n: u64, negative: bool) -> Option<i64> {
    if negative {
        0i64.checked_sub_unsigned(n)
    } else {
        i64::try_from(n).ok()
    }
}

// ---------------------------------------------------------------------------
// Lowering

struct Scope<'a> {
    vars: &'a HashMap<String, VarId>,
    mutexes: &'a HashMap<String, MutexId>,
    conds: &'a HashMap<String, CondId>,
    regs: HashMap<String, RegId>,
}

impl Scope<'_> {
    fn resolve(&self, name: &str) -> Result<Ref, ModelError> {
        if let Some(r) = self.regs.get(name) {
            return Ok(Ref::Reg(*r));
        }
        self.vars
            .get(name)
            .map(|v| Ref::Var(*v))
            .ok_or_else(|| ModelError::Reference(name.to_string()))
    }

    fn mutex(&self, name: &str) -> Result<MutexId, ModelError> {
        self.mutexes.get(name).copied().ok_or_else(|| ModelError::Reference(name.to_string()))
    }

    fn cond(&self, name: &str) -> Result<CondId, ModelError> {
        self.conds.get(name).copied().ok_or_else(|| ModelError::Reference(name.to_string()))
    }

    fn expr(&self, e: &Expr<String>) -> Result<Expr<Ref>, ModelError> {
        e.try_map(&mut |n: &String| self.resolve(n))
    }
}

struct RawStmt {
    from: usize,
    to: usize,
    op: Operation,
}

/// Builds one thread's location graph. Locations are allocated on the fly and
/// block ends are merged with their join points through a union-find, then
/// renumbered in breadth-first order from the entry.
struct Lowerer<'a> {
    scope: Scope<'a>,
    parent: Vec<usize>,
    stmts: Vec<RawStmt>,
    exit: usize,
}

impl Lowerer<'_> {
    fn fresh(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[a] = b;
        }
    }

    fn emit(&mut self, from: usize, op: Operation) -> usize {
        let to = self.fresh();
        self.stmts.push(RawStmt { from, to, op });
        to
    }

    fn local(guard: Option<Expr<Ref>>, assign: Option<(Ref, Expr<Ref>)>) -> Operation {
        Operation::Local(LocalOp { guard, assign })
    }

    /// Compiles `body` starting at `cur`; returns the location after it, or
    /// `None` when control cannot fall through (after `exit` or `loop`).
    fn block(&mut self, body: &[SrcStmt], mut cur: Option<usize>) -> Result<Option<usize>, ModelError> {
        for st in body {
            let Some(at) = cur else {
                return Err(ModelError::Structure(format!(
                    "unreachable statement `{}`",
                    first_line(st)
                )));
            };
            cur = self.statement(st, at)?;
        }
        Ok(cur)
    }

    fn statement(&mut self, st: &SrcStmt, at: usize) -> Result<Option<usize>, ModelError> {
        Ok(match st {
            SrcStmt::Assign { target, value } => {
                let target = self.scope.resolve(target)?;
                let value = self.scope.expr(value)?;
                Some(self.emit(at, Self::local(None, Some((target, value)))))
            }
            SrcStmt::Choose { target, values } => {
                let distinct: BTreeSet<i64> = values.iter().copied().collect();
                if distinct.len() != values.len() {
                    return Err(ModelError::Structure(format!("choose for `{target}` repeats a value")));
                }
                let target = self.scope.resolve(target)?;
                let to = self.fresh();
                for v in values {
                    self.stmts.push(RawStmt {
                        from: at,
                        to,
                        op: Self::local(None, Some((target, Expr::Int(*v)))),
                    });
                }
                Some(to)
            }
            SrcStmt::Lock(m) => {
                let m = self.scope.mutex(m)?;
                Some(self.emit(at, Operation::Lock(m)))
            }
            SrcStmt::Unlock(m) => {
                let m = self.scope.mutex(m)?;
                Some(self.emit(at, Operation::Unlock(m)))
            }
            SrcStmt::Wait { cond, mutex } => {
                let c = self.scope.cond(cond)?;
                let m = self.scope.mutex(mutex)?;
                Some(self.emit(at, Operation::Wait(c, m)))
            }
            SrcStmt::Signal(c) => {
                let c = self.scope.cond(c)?;
                Some(self.emit(at, Operation::Signal(c)))
            }
            SrcStmt::Broadcast(c) => {
                let c = self.scope.cond(c)?;
                Some(self.emit(at, Operation::Broadcast(c)))
            }
            SrcStmt::If {
                cond,
                then_body,
                else_body,
            } => {
                let g = self.scope.expr(cond)?;
                let then_start = self.emit(at, Self::local(Some(g.clone()), None));
                let else_start = self.emit(at, Self::local(Some(Expr::Not(Box::new(g))), None));
                let then_end = self.block(then_body, Some(then_start))?;
                let else_end = self.block(else_body, Some(else_start))?;
                match (then_end, else_end) {
                    (Some(a), Some(b)) => {
                        self.union(a, b);
                        Some(a)
                    }
                    (a, b) => a.or(b),
                }
            }
            SrcStmt::While { cond, body } => {
                let g = self.scope.expr(cond)?;
                let body_start = self.emit(at, Self::local(Some(g.clone()), None));
                let after = self.emit(at, Self::local(Some(Expr::Not(Box::new(g))), None));
                if let Some(end) = self.block(body, Some(body_start))? {
                    self.union(end, at);
                }
                Some(after)
            }
            SrcStmt::Loop { body } => {
                if body.is_empty() {
                    return Err(ModelError::Structure("`loop` with an empty body".into()));
                }
                if let Some(end) = self.block(body, Some(at))? {
                    self.union(end, at);
                }
                None
            }
            SrcStmt::Exit => {
                let exit = self.exit;
                self.union(at, exit);
                None
            }
        })
    }
}

fn first_line(st: &SrcStmt) -> String {
    let mut out = String::new();
    print_block(&mut out, std::slice::from_ref(st), 0);
    out.lines().next().unwrap_or_default().trim_end_matches(" {").to_string()
}

fn access_of(op: &Operation) -> AccessInfo {
    let mut acc = AccessInfo::default();
    if let Operation::Local(l) = op {
        let mut read = |r: &Ref| {
            if let Ref::Var(v) = r {
                acc.reads.insert(*v);
            }
        };
        if let Some(g) = &l.guard {
            g.for_each_ref(&mut read);
        }
        if let Some((target, value)) = &l.assign {
            value.for_each_ref(&mut read);
            if let Ref::Var(v) = target {
                acc.writes.insert(*v);
            }
        }
    }
    acc
}

fn index_names<T: Copy>(
    names: &[String],
    make: impl Fn(u32) -> T,
    kind: &str,
) -> Result<HashMap<String, T>, ModelError> {
    let mut map = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), make(i as u32)).is_some() {
            return Err(ModelError::Structure(format!("duplicate {kind} `{n}`")));
        }
    }
    Ok(map)
}

/// Parses and validates DSL source, lowering control flow to guard pairs and
/// `choose` to sibling local statements.
pub fn parse_program(text: &str) -> Result<Program, ModelError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let SrcProgram {
        vars,
        mutexes,
        conds,
        threads: src_threads,
    } = parser.program()?;

    let var_names: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
    let var_map = index_names(&var_names, VarId, "variable")?;
    let mutex_map = index_names(&mutexes, MutexId, "mutex")?;
    let cond_map = index_names(&conds, CondId, "condition variable")?;
    let thread_names: Vec<String> = src_threads.iter().map(|t| t.name.clone()).collect();
    index_names(&thread_names, ThreadId, "thread")?;

    let mut threads = Vec::new();
    let mut statements = Vec::new();
    for (pos, src) in src_threads.into_iter().enumerate() {
        let tid = ThreadId::from_pos(pos);
        let reg_names: Vec<String> = src.regs.iter().map(|r| r.name.clone()).collect();
        let regs = index_names(&reg_names, RegId, "register")?;
        let mut lw = Lowerer {
            scope: Scope {
                vars: &var_map,
                mutexes: &mutex_map,
                conds: &cond_map,
                regs,
            },
            parent: Vec::new(),
            stmts: Vec::new(),
            exit: 0,
        };
        lw.exit = lw.fresh();
        let entry = lw.fresh();
        if let Some(end) = lw.block(&src.body, Some(entry))? {
            lw.union(end, lw.exit);
        }

        // Renumber representatives breadth-first from the entry.
        let raw: Vec<(usize, usize, Operation)> = std::mem::take(&mut lw.stmts)
            .into_iter()
            .map(|s| (s.from, s.to, s.op))
            .collect();
        let raw: Vec<(usize, usize, Operation)> =
            raw.into_iter().map(|(f, t, op)| (lw.find(f), lw.find(t), op)).collect();
        let mut number: HashMap<usize, u32> = HashMap::new();
        let mut queue = VecDeque::new();
        let root = lw.find(entry);
        number.insert(root, 0);
        queue.push_back(root);
        while let Some(l) = queue.pop_front() {
            for (f, t, _) in &raw {
                if *f == l && !number.contains_key(t) {
                    number.insert(*t, number.len() as u32);
                    queue.push_back(*t);
                }
            }
        }
        let exit_root = lw.find(lw.exit);
        if !number.contains_key(&exit_root) {
            number.insert(exit_root, number.len() as u32);
        }
        let mut locations = vec![Vec::new(); number.len()];
        for (f, t, op) in raw {
            let (Some(&from), Some(&to)) = (number.get(&f), number.get(&t)) else {
                return Err(ModelError::Structure(format!(
                    "thread `{}` has an unreachable location",
                    src.name
                )));
            };
            let id = StmtId(statements.len() as u32);
            locations[from as usize].push(id);
            statements.push(Statement {
                id,
                thread: tid,
                from: Loc(from),
                to: Loc(to),
                access: access_of(&op),
                op,
            });
        }
        threads.push(Thread {
            id: tid,
            name: src.name,
            regs: src.regs,
            source: src.body,
            entry: Loc(0),
            exit: Loc(number[&exit_root]),
            locations,
        });
    }

    Ok(Program {
        vars,
        mutexes,
        conds,
        threads,
        statements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = "
var x = 0
var y = 0
mutex m
cond c

thread t1 {
  x = choose(-1, 0)
  lock m
  if x < 0 {
    wait c m
  }
  unlock m
}

thread t2 {
  y = 1
  lock m
  signal c
  unlock m
}
";

    #[test]
    fn parses_condvar_example() {
        let p = parse_program(FIG3).unwrap();
        assert_eq!(p.threads.len(), 2);
        assert_eq!(p.mutexes, vec!["m"]);
        assert_eq!(p.conds, vec!["c"]);
        let t1 = ThreadId(1);
        let at_choose = statements_of(&p, t1, p.thread(t1).entry);
        assert_eq!(at_choose.len(), 2);
        let values: Vec<String> = at_choose.iter().map(|s| p.describe(s.id)).collect();
        assert_eq!(values, vec!["x = -1", "x = 0"]);
        // choose -> lock -> branch
        let branch = statements_of(&p, t1, Loc(2));
        assert_eq!(branch.len(), 2);
        assert_eq!(p.describe(branch[0].id), "[x < 0]");
        assert_eq!(p.describe(branch[1].id), "[not (x < 0)]");
    }

    #[test]
    fn declarations_only() {
        let p = parse_program("var x = 0\n").unwrap();
        assert!(p.threads.is_empty());
        assert_eq!(p.vars, vec![VarDecl { name: "x".into(), init: 0 }]);
    }

    #[test]
    fn undeclared_mutex() {
        let err = parse_program("thread a {\n lock q\n}\n").unwrap_err();
        assert_eq!(err, ModelError::Reference("q".into()));
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_program("var x = 0\nthread a {\n  x = = 1\n}\n").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 3, col: 7, .. }), "{err:?}");
    }

    #[test]
    fn exit_location_has_no_statements() {
        let p = parse_program("var x = 0\nthread a {\n x = 1\n exit\n}\n").unwrap();
        let t = p.thread(ThreadId(1));
        assert!(statements_of(&p, t.id, t.exit).is_empty());
        assert_eq!(p.statements.len(), 1);
    }

    #[test]
    fn code_after_exit_is_rejected() {
        let err = parse_program("var x = 0\nthread a {\n exit\n x = 1\n}\n").unwrap_err();
        assert!(matches!(err, ModelError::Structure(_)));
    }

    #[test]
    fn while_loops_back() {
        let p = parse_program("var x = 0\nthread a {\n while x < 3 {\n  x = x + 1\n }\n}\n").unwrap();
        let head = statements_of(&p, ThreadId(1), Loc(0));
        assert_eq!(head.len(), 2);
        let body = statements_of(&p, ThreadId(1), head[0].to);
        assert_eq!(body.len(), 1);
        assert_eq!(body[0].to, Loc(0));
        assert_eq!(head[1].to, p.thread(ThreadId(1)).exit);
    }

    #[test]
    fn registers_are_not_shared_accesses() {
        let p = parse_program("var x = 0\nthread a {\n reg r = 0\n r = x + 1\n x = r\n}\n").unwrap();
        let s0 = &p.statements[0];
        assert_eq!(s0.access.reads, [VarId(0)].into_iter().collect());
        assert!(s0.access.writes.is_empty());
        let s1 = &p.statements[1];
        assert!(s1.access.reads.is_empty());
        assert_eq!(s1.access.writes, [VarId(0)].into_iter().collect());
    }

    #[test]
    fn pretty_print_round_trip() {
        let src = "var x = -3\nmutex m\ncond c\nthread a {\n reg r = 2\n if x < 0 and not (r == 2) { x = -(x * 2) - -1 } else if x > 1 { exit } else { r = choose(1, 2, 3) }\n while r != 0 { r = r - 1 }\n loop { lock m\n wait c m\n unlock m }\n}\nthread b { signal c; broadcast c }\n";
        let p = parse_program(src).unwrap();
        let again = parse_program(&p.pretty()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn duplicate_choose_values_rejected() {
        let err = parse_program("var x = 0\nthread a { x = choose(1, 1) }\n").unwrap_err();
        assert!(matches!(err, ModelError::Structure(_)));
    }
}
