//! Parser for `.edl` modules: multi-clause functions, contract
//! directives, `-spec` attributes, and the expression grammar.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::ast::{
    BinOp, CallTarget, CaseClause, Clause, Contract, Expr, FunDef, IfClause, ModuleAst,
    Pattern, UnOp,
};
use crate::lexer::{lex, LexError, Tok, Token};
use crate::typespec::{parse_typespec, TypeSpec};
use crate::value::Value;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("parse error at {line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl From<LexError> for ParseError {
    fn from(e: LexError) -> Self {
        ParseError {
            line: e.line,
            col: e.col,
            msg: e.msg,
        }
    }
}

/// Parses one module from source text.
pub fn parse_module(source: &str) -> Result<ModuleAst, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let m = p.module()?;
    validate_module(&m)?;
    Ok(m)
}

/// Parses a single expression (used for CLI argument literals).
pub fn parse_expr_str(source: &str) -> Result<Expr, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(p.err_here("trailing input after expression"));
    }
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// A contract directive together with its position in the source, used
/// to keep contract lists in source order.
struct Pending {
    seq: usize,
    contract: Contract,
}

impl Parser {
    fn err_here(&self, msg: &str) -> ParseError {
        let (line, col) = self
            .toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| (t.line, t.col))
            .unwrap_or((1, 1));
        ParseError {
            line,
            col,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.tok)
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.err_here("unexpected end of input"))?;
        self.pos += 1;
        Ok(t.tok)
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ParseError> {
        let got = self
            .peek()
            .cloned()
            .ok_or_else(|| self.err_here(&format!("expected `{t}`, found end of input")))?;
        if &got == t {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(&format!("expected `{t}`, found `{got}`")))
        }
    }

    fn expect_atom(&mut self) -> Result<String, ParseError> {
        match self.next()? {
            Tok::Atom(a) => Ok(a),
            other => Err(self.err_here(&format!("expected atom, found `{other}`"))),
        }
    }

    fn at_atom(&self, name: &str) -> bool {
        matches!(self.peek(), Some(Tok::Atom(a)) if a == name)
    }

    fn eat_atom(&mut self, name: &str) -> bool {
        if self.at_atom(name) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // ---- module structure ----

    fn module(&mut self) -> Result<ModuleAst, ParseError> {
        // -module(name).
        self.expect(&Tok::Minus)?;
        let kw = self.expect_atom()?;
        if kw != "module" {
            return Err(self.err_here("module must start with -module(name)."));
        }
        self.expect(&Tok::LParen)?;
        let name = self.expect_atom()?;
        self.expect(&Tok::RParen)?;
        self.expect(&Tok::Dot)?;

        let mut seq = 0usize;
        let mut pending_pre: Vec<Pending> = Vec::new();
        let mut posts_for_last: Vec<Pending> = Vec::new();
        let mut specs: Vec<(usize, String, Vec<TypeSpec>, TypeSpec)> = Vec::new();
        let mut module_invariant: Option<Expr> = None;
        // (fundef, contracts with seq)
        let mut funs: Vec<(FunDef, Vec<Pending>)> = Vec::new();

        while self.pos < self.toks.len() {
            seq += 1;
            match self.peek().cloned() {
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let attr = self.expect_atom()?;
                    if attr != "spec" {
                        return Err(self.err_here(&format!("unsupported attribute -{attr}")));
                    }
                    let (fname, argtypes, ret) = self.spec_attr()?;
                    specs.push((seq, fname, argtypes, ret));
                }
                Some(Tok::Macro(m)) => {
                    self.pos += 1;
                    match m.as_str() {
                        "PRE" | "POST" | "EXPECTED_TIME" | "TIMEOUT" => {
                            self.expect(&Tok::LParen)?;
                            let cond = self.expr()?;
                            if !matches!(cond, Expr::Fun { .. } | Expr::FunRef { .. }) {
                                return Err(self.err_here(
                                    "contract argument must be a fun expression or fun reference",
                                ));
                            }
                            self.expect(&Tok::RParen)?;
                            self.expect(&Tok::Dot)?;
                            let c = match m.as_str() {
                                "PRE" => Contract::Pre { cond },
                                "POST" => Contract::Post { cond },
                                "EXPECTED_TIME" => Contract::ExpectedTime { timefun: cond },
                                _ => Contract::Timeout { timefun: cond },
                            };
                            if matches!(c, Contract::Post { .. }) {
                                if funs.is_empty() {
                                    return Err(self.err_here(
                                        "?POST placed before its function's clauses",
                                    ));
                                }
                                posts_for_last.push(Pending { seq, contract: c });
                            } else {
                                pending_pre.push(Pending { seq, contract: c });
                            }
                        }
                        "PURE" => {
                            self.expect(&Tok::Dot)?;
                            pending_pre.push(Pending {
                                seq,
                                contract: Contract::Pure,
                            });
                        }
                        "DECREASES" | "SDECREASES" | "DECREASE" | "SDECREASE" => {
                            let strict = m.starts_with('S');
                            self.expect(&Tok::LParen)?;
                            let params = self.decrease_params()?;
                            self.expect(&Tok::RParen)?;
                            self.expect(&Tok::Dot)?;
                            pending_pre.push(Pending {
                                seq,
                                contract: Contract::Decreases { params, strict },
                            });
                        }
                        "INVARIANT" => {
                            self.expect(&Tok::LParen)?;
                            let invfun = self.expr()?;
                            if !matches!(invfun, Expr::Fun { .. } | Expr::FunRef { .. }) {
                                return Err(self.err_here(
                                    "?INVARIANT argument must be a fun expression or fun reference",
                                ));
                            }
                            self.expect(&Tok::RParen)?;
                            self.expect(&Tok::Dot)?;
                            if module_invariant.is_some() {
                                return Err(self.err_here("duplicate ?INVARIANT in module"));
                            }
                            module_invariant = Some(invfun);
                        }
                        other => {
                            return Err(self.err_here(&format!("unknown directive ?{other}")))
                        }
                    }
                }
                Some(Tok::Atom(_)) => {
                    // Attach accumulated POSTs to the previous function
                    // before starting a new one.
                    if let Some(last) = funs.last_mut() {
                        last.1.append(&mut posts_for_last);
                    }
                    let f = self.fundef()?;
                    let mut contracts = Vec::new();
                    contracts.append(&mut pending_pre);
                    funs.push((f, contracts));
                }
                Some(other) => {
                    return Err(self.err_here(&format!("unexpected token `{other}` at form start")))
                }
                None => break,
            }
        }

        if !pending_pre.is_empty() {
            return Err(self.err_here(
                "contract directive placed after its function's clauses (no function follows)",
            ));
        }
        if let Some(last) = funs.last_mut() {
            last.1.append(&mut posts_for_last);
        } else if !posts_for_last.is_empty() {
            return Err(self.err_here("?POST placed before its function's clauses"));
        }

        // Attach specs by (name, arity).
        for (sseq, fname, argtypes, ret) in specs {
            let arity = argtypes.len();
            let slot = funs
                .iter_mut()
                .find(|(f, _)| f.name == fname && f.arity == arity);
            match slot {
                Some((_, contracts)) => contracts.push(Pending {
                    seq: sseq,
                    contract: Contract::Spec {
                        argtypes,
                        rettype: ret,
                    },
                }),
                None => {
                    return Err(ParseError {
                        line: 1,
                        col: 1,
                        msg: format!("-spec for unknown function {fname}/{arity}"),
                    })
                }
            }
        }

        let fundefs = funs
            .into_iter()
            .map(|(mut f, mut contracts)| {
                contracts.sort_by_key(|p| p.seq);
                f.contracts = contracts.into_iter().map(|p| p.contract).collect();
                f
            })
            .collect();

        Ok(ModuleAst {
            name,
            fundefs,
            module_invariant,
        })
    }

    /// `name(T1,...,Tn) -> T.` after the `-spec` keyword.
    fn spec_attr(&mut self) -> Result<(String, Vec<TypeSpec>, TypeSpec), ParseError> {
        let fname = self.expect_atom()?;
        self.expect(&Tok::LParen)?;
        let mut argtypes = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                argtypes.push(self.type_expr()?);
                match self.peek() {
                    Some(Tok::Comma) => self.pos += 1,
                    _ => break,
                }
            }
        }
        self.expect(&Tok::RParen)?;
        self.expect(&Tok::Arrow)?;
        let ret = self.type_expr()?;
        self.expect(&Tok::Dot)?;
        Ok((fname, argtypes, ret))
    }

    /// Collects the tokens of one type expression (up to a top-level
    /// `,`, `)`, or `->`) and hands the text to the typespec parser.
    fn type_expr(&mut self) -> Result<TypeSpec, ParseError> {
        let start = self.pos;
        let mut depth = 0usize;
        loop {
            match self.peek() {
                None => return Err(self.err_here("unexpected end of -spec")),
                Some(Tok::LParen) | Some(Tok::LBracket) | Some(Tok::LBrace) => depth += 1,
                Some(Tok::RParen) | Some(Tok::RBracket) | Some(Tok::RBrace) => {
                    if depth == 0 {
                        break;
                    }
                    depth -= 1;
                }
                Some(Tok::Comma | Tok::Arrow | Tok::Dot) if depth == 0 => break,
                _ => {}
            }
            self.pos += 1;
        }
        let text: String = self.toks[start..self.pos]
            .iter()
            .map(|t| t.tok.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let (line, col) = (self.toks[start].line, self.toks[start].col);
        parse_typespec(&text).map_err(|e| ParseError {
            line,
            col,
            msg: e.to_string(),
        })
    }

    /// `?P(i)` or `[?P(i), ...]`.
    fn decrease_params(&mut self) -> Result<Vec<usize>, ParseError> {
        let mut params = Vec::new();
        if self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            loop {
                params.push(self.param_ref()?);
                match self.next()? {
                    Tok::Comma => continue,
                    Tok::RBracket => break,
                    other => {
                        return Err(self.err_here(&format!("expected `,` or `]`, found `{other}`")))
                    }
                }
            }
        } else {
            params.push(self.param_ref()?);
        }
        Ok(params)
    }

    fn param_ref(&mut self) -> Result<usize, ParseError> {
        match self.next()? {
            Tok::Macro(m) if m == "P" => {}
            other => return Err(self.err_here(&format!("expected ?P(i), found `{other}`"))),
        }
        self.expect(&Tok::LParen)?;
        let idx = match self.next()? {
            Tok::Int(i) if i >= 1 => i as usize,
            other => {
                return Err(self.err_here(&format!(
                    "?P index must be a positive integer, found `{other}`"
                )))
            }
        };
        self.expect(&Tok::RParen)?;
        Ok(idx)
    }

    // ---- functions ----

    fn fundef(&mut self) -> Result<FunDef, ParseError> {
        let mut clauses = Vec::new();
        let name = match self.peek() {
            Some(Tok::Atom(a)) => a.clone(),
            _ => return Err(self.err_here("expected function name")),
        };
        loop {
            let cname = self.expect_atom()?;
            if cname != name {
                return Err(self.err_here(&format!(
                    "clause name `{cname}` does not match function `{name}`"
                )));
            }
            let clause = self.clause()?;
            clauses.push(clause);
            match self.next()? {
                Tok::Semi => continue,
                Tok::Dot => break,
                other => {
                    return Err(self.err_here(&format!("expected `;` or `.`, found `{other}`")))
                }
            }
        }
        let arity = clauses[0].patterns.len();
        if clauses.iter().any(|c| c.patterns.len() != arity) {
            return Err(self.err_here(&format!(
                "clauses of {name} disagree on arity"
            )));
        }
        Ok(FunDef {
            name,
            arity,
            clauses,
            contracts: Vec::new(),
        })
    }

    fn clause(&mut self) -> Result<Clause, ParseError> {
        self.expect(&Tok::LParen)?;
        let mut patterns = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                patterns.push(self.pattern()?);
                match self.peek() {
                    Some(Tok::Comma) => self.pos += 1,
                    _ => break,
                }
            }
        }
        self.expect(&Tok::RParen)?;
        let guard = if self.eat_atom("when") {
            Some(self.guard_seq()?)
        } else {
            None
        };
        self.expect(&Tok::Arrow)?;
        let body = self.body()?;
        Ok(Clause {
            patterns,
            guard,
            body,
        })
    }

    /// Comma-separated guard tests desugar to `andalso`.
    fn guard_seq(&mut self) -> Result<Expr, ParseError> {
        let mut g = self.expr_no_match()?;
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            let rhs = self.expr_no_match()?;
            g = Expr::BinOp {
                op: BinOp::AndAlso,
                lhs: Box::new(g),
                rhs: Box::new(rhs),
            };
        }
        Ok(g)
    }

    /// Comma-separated expressions up to a terminator the caller owns.
    fn body(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut body = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            body.push(self.expr()?);
        }
        Ok(body)
    }

    // ---- patterns ----

    fn pattern(&mut self) -> Result<Pattern, ParseError> {
        match self.next()? {
            Tok::Var(v) => {
                if v == "_" {
                    Ok(Pattern::Wildcard)
                } else {
                    Ok(Pattern::Var(v))
                }
            }
            Tok::Atom(a) => match a.as_str() {
                "true" => Ok(Pattern::LitBool(true)),
                "false" => Ok(Pattern::LitBool(false)),
                _ => Ok(Pattern::LitAtom(a)),
            },
            Tok::Int(i) => Ok(Pattern::LitInt(i)),
            Tok::Minus => match self.next()? {
                Tok::Int(i) => Ok(Pattern::LitInt(-i)),
                other => Err(self.err_here(&format!("expected integer after `-`, found `{other}`"))),
            },
            Tok::Str(s) => Ok(Pattern::LitStr(s)),
            Tok::LBracket => {
                if self.peek() == Some(&Tok::RBracket) {
                    self.pos += 1;
                    return Ok(Pattern::NilPat);
                }
                let mut elems = vec![self.pattern()?];
                let mut tail = Pattern::NilPat;
                loop {
                    match self.next()? {
                        Tok::Comma => elems.push(self.pattern()?),
                        Tok::Bar => {
                            tail = self.pattern()?;
                            self.expect(&Tok::RBracket)?;
                            break;
                        }
                        Tok::RBracket => break,
                        other => {
                            return Err(self.err_here(&format!(
                                "expected `,`, `|` or `]` in list pattern, found `{other}`"
                            )))
                        }
                    }
                }
                let mut pat = tail;
                for e in elems.into_iter().rev() {
                    pat = Pattern::ListPat {
                        head: Box::new(e),
                        tail: Box::new(pat),
                    };
                }
                Ok(pat)
            }
            Tok::LBrace => {
                let mut elems = Vec::new();
                if self.peek() == Some(&Tok::RBrace) {
                    self.pos += 1;
                    return Ok(Pattern::TuplePat(elems));
                }
                loop {
                    elems.push(self.pattern()?);
                    match self.next()? {
                        Tok::Comma => continue,
                        Tok::RBrace => break,
                        other => {
                            return Err(self.err_here(&format!(
                                "expected `,` or `}}` in tuple pattern, found `{other}`"
                            )))
                        }
                    }
                }
                Ok(Pattern::TuplePat(elems))
            }
            other => Err(self.err_here(&format!("expected pattern, found `{other}`"))),
        }
    }

    // ---- expressions ----

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.expr_no_match()?;
        if self.peek() == Some(&Tok::Equals) {
            self.pos += 1;
            let pattern = expr_to_pattern(&lhs)
                .ok_or_else(|| self.err_here("left side of `=` is not a pattern"))?;
            let rhs = self.expr()?;
            Ok(Expr::Match {
                pattern,
                expr: Box::new(rhs),
            })
        } else {
            Ok(lhs)
        }
    }

    fn expr_no_match(&mut self) -> Result<Expr, ParseError> {
        self.expr_orelse()
    }

    fn expr_orelse(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.expr_andalso()?;
        while self.at_atom("orelse") {
            self.pos += 1;
            let rhs = self.expr_andalso()?;
            lhs = Expr::BinOp {
                op: BinOp::OrElse,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn expr_andalso(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.expr_cmp()?;
        while self.at_atom("andalso") {
            self.pos += 1;
            let rhs = self.expr_cmp()?;
            lhs = Expr::BinOp {
                op: BinOp::AndAlso,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn expr_cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.expr_append()?;
        let op = match self.peek() {
            Some(Tok::EqEq) => Some(BinOp::Eq),
            Some(Tok::SlashEq) => Some(BinOp::Ne),
            Some(Tok::Lt) => Some(BinOp::Lt),
            Some(Tok::Le) => Some(BinOp::Le),
            Some(Tok::Gt) => Some(BinOp::Gt),
            Some(Tok::Ge) => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.expr_append()?;
            Ok(Expr::BinOp {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            })
        } else {
            Ok(lhs)
        }
    }

    fn expr_append(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.expr_add()?;
        if self.peek() == Some(&Tok::PlusPlus) {
            self.pos += 1;
            // Right-associative.
            let rhs = self.expr_append()?;
            Ok(Expr::BinOp {
                op: BinOp::Append,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            })
        } else {
            Ok(lhs)
        }
    }

    fn expr_add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.expr_mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.expr_mul()?;
            lhs = Expr::BinOp {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn expr_mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.expr_unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                Some(Tok::Atom(a)) if a == "rem" => BinOp::Rem,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.expr_unary()?;
            lhs = Expr::BinOp {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn expr_unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                let e = self.expr_unary()?;
                Ok(Expr::UnOp {
                    op: UnOp::Neg,
                    expr: Box::new(e),
                })
            }
            Some(Tok::Atom(a)) if a == "not" => {
                self.pos += 1;
                let e = self.expr_unary()?;
                Ok(Expr::UnOp {
                    op: UnOp::Not,
                    expr: Box::new(e),
                })
            }
            _ => self.expr_apply(),
        }
    }

    /// Primary expression followed by call applications.
    fn expr_apply(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.expr_primary()?;
        while self.peek() == Some(&Tok::LParen) {
            // An atom/remote name followed by parens was already turned
            // into a call in expr_primary; anything else is dynamic.
            let args = self.call_args()?;
            e = Expr::Call {
                target: CallTarget::Dynamic(Box::new(e)),
                args,
            };
        }
        Ok(e)
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                match self.peek() {
                    Some(Tok::Comma) => self.pos += 1,
                    _ => break,
                }
            }
        }
        self.expect(&Tok::RParen)?;
        Ok(args)
    }

    fn expr_primary(&mut self) -> Result<Expr, ParseError> {
        match self.next()? {
            Tok::Int(i) => Ok(Expr::Lit(Value::Int(i))),
            Tok::Float(x) => Ok(Expr::Lit(Value::Float(x))),
            Tok::Str(s) => Ok(Expr::Lit(Value::Str(s))),
            Tok::Var(v) => {
                if v == "_" {
                    return Err(self.err_here("`_` is not a valid expression"));
                }
                Ok(Expr::Var(v))
            }
            Tok::Macro(m) => match m.as_str() {
                "P" => {
                    self.expect(&Tok::LParen)?;
                    let idx = match self.next()? {
                        Tok::Int(i) if i >= 1 => i as usize,
                        other => {
                            return Err(self.err_here(&format!(
                                "?P index must be a positive integer, found `{other}`"
                            )))
                        }
                    };
                    self.expect(&Tok::RParen)?;
                    Ok(Expr::ParamRef(idx))
                }
                "R" => Ok(Expr::ResultRef),
                other => Err(self.err_here(&format!("unknown macro ?{other} in expression"))),
            },
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::LBrace => {
                let mut elems = Vec::new();
                if self.peek() == Some(&Tok::RBrace) {
                    self.pos += 1;
                    return Ok(Expr::TupleExpr(elems));
                }
                loop {
                    elems.push(self.expr()?);
                    match self.next()? {
                        Tok::Comma => continue,
                        Tok::RBrace => break,
                        other => {
                            return Err(self.err_here(&format!(
                                "expected `,` or `}}` in tuple, found `{other}`"
                            )))
                        }
                    }
                }
                Ok(Expr::TupleExpr(elems))
            }
            Tok::LBracket => self.list_or_comp(),
            Tok::Atom(a) => self.atom_headed(a),
            other => Err(self.err_here(&format!("unexpected token `{other}` in expression"))),
        }
    }

    fn list_or_comp(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::RBracket) {
            self.pos += 1;
            return Ok(Expr::ListExpr {
                elems: Vec::new(),
                tail: None,
            });
        }
        let first = self.expr()?;
        if self.peek() == Some(&Tok::DoubleBar) {
            self.pos += 1;
            let pattern = self.pattern()?;
            self.expect(&Tok::LeftArrow)?;
            let source = self.expr()?;
            let mut filters = Vec::new();
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                filters.push(self.expr()?);
            }
            self.expect(&Tok::RBracket)?;
            return Ok(Expr::ListComp {
                template: Box::new(first),
                pattern,
                source: Box::new(source),
                filters,
            });
        }
        let mut elems = vec![first];
        let mut tail = None;
        loop {
            match self.next()? {
                Tok::Comma => elems.push(self.expr()?),
                Tok::Bar => {
                    tail = Some(Box::new(self.expr()?));
                    self.expect(&Tok::RBracket)?;
                    break;
                }
                Tok::RBracket => break,
                other => {
                    return Err(self.err_here(&format!(
                        "expected `,`, `|` or `]` in list, found `{other}`"
                    )))
                }
            }
        }
        Ok(Expr::ListExpr { elems, tail })
    }

    fn atom_headed(&mut self, a: String) -> Result<Expr, ParseError> {
        match a.as_str() {
            "fun" => return self.fun_expr(),
            "case" => return self.case_expr(),
            "if" => return self.if_expr(),
            _ => {}
        }
        // m:f(...) remote call.
        if self.peek() == Some(&Tok::Colon) {
            if let Some(Tok::Atom(_)) = self.peek2() {
                self.pos += 1;
                let fname = self.expect_atom()?;
                if self.peek() == Some(&Tok::LParen) {
                    let args = self.call_args()?;
                    return Ok(Expr::Call {
                        target: CallTarget::Remote(a, fname),
                        args,
                    });
                }
                return Err(self.err_here("expected `(` after remote function name"));
            }
        }
        if self.peek() == Some(&Tok::LParen) {
            let args = self.call_args()?;
            return Ok(Expr::Call {
                target: CallTarget::Local(a),
                args,
            });
        }
        Ok(Expr::Lit(Value::atom(&a)))
    }

    fn fun_expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let mut params = Vec::new();
                if self.peek() != Some(&Tok::RParen) {
                    loop {
                        params.push(self.pattern()?);
                        match self.peek() {
                            Some(Tok::Comma) => self.pos += 1,
                            _ => break,
                        }
                    }
                }
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Arrow)?;
                let body = self.body()?;
                if !self.eat_atom("end") {
                    return Err(self.err_here("expected `end` to close fun"));
                }
                Ok(Expr::Fun { params, body })
            }
            Some(Tok::Atom(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Colon) {
                    self.pos += 1;
                    let fname = self.expect_atom()?;
                    self.expect(&Tok::Slash)?;
                    let arity = self.expect_arity()?;
                    Ok(Expr::FunRef {
                        module: Some(name),
                        name: fname,
                        arity,
                    })
                } else {
                    self.expect(&Tok::Slash)?;
                    let arity = self.expect_arity()?;
                    Ok(Expr::FunRef {
                        module: None,
                        name,
                        arity,
                    })
                }
            }
            _ => Err(self.err_here("expected `(` or function name after `fun`")),
        }
    }

    fn expect_arity(&mut self) -> Result<usize, ParseError> {
        match self.next()? {
            Tok::Int(i) if i >= 0 => Ok(i as usize),
            other => Err(self.err_here(&format!("expected arity, found `{other}`"))),
        }
    }

    fn case_expr(&mut self) -> Result<Expr, ParseError> {
        let scrutinee = self.expr()?;
        if !self.eat_atom("of") {
            return Err(self.err_here("expected `of` in case expression"));
        }
        let mut clauses = Vec::new();
        loop {
            let pattern = self.pattern()?;
            let guard = if self.eat_atom("when") {
                Some(self.guard_seq()?)
            } else {
                None
            };
            self.expect(&Tok::Arrow)?;
            let body = self.body()?;
            clauses.push(CaseClause {
                pattern,
                guard,
                body,
            });
            if self.peek() == Some(&Tok::Semi) {
                self.pos += 1;
                continue;
            }
            if !self.eat_atom("end") {
                return Err(self.err_here("expected `;` or `end` in case expression"));
            }
            break;
        }
        Ok(Expr::Case {
            scrutinee: Box::new(scrutinee),
            clauses,
        })
    }

    fn if_expr(&mut self) -> Result<Expr, ParseError> {
        let mut clauses = Vec::new();
        loop {
            let guard = self.guard_seq()?;
            self.expect(&Tok::Arrow)?;
            let body = self.body()?;
            clauses.push(IfClause { guard, body });
            if self.peek() == Some(&Tok::Semi) {
                self.pos += 1;
                continue;
            }
            if !self.eat_atom("end") {
                return Err(self.err_here("expected `;` or `end` in if expression"));
            }
            break;
        }
        Ok(Expr::If { clauses })
    }
}

/// Converts an already-parsed expression to a pattern for `=` matches.
fn expr_to_pattern(e: &Expr) -> Option<Pattern> {
    match e {
        Expr::Var(v) => Some(if v == "_" {
            Pattern::Wildcard
        } else {
            Pattern::Var(v.clone())
        }),
        Expr::Lit(Value::Atom(a)) => Some(Pattern::LitAtom(a.clone())),
        Expr::Lit(Value::Bool(b)) => Some(Pattern::LitBool(*b)),
        Expr::Lit(Value::Int(i)) => Some(Pattern::LitInt(*i)),
        Expr::Lit(Value::Str(s)) => Some(Pattern::LitStr(s.clone())),
        Expr::TupleExpr(xs) => xs
            .iter()
            .map(expr_to_pattern)
            .collect::<Option<Vec<_>>>()
            .map(Pattern::TuplePat),
        Expr::ListExpr { elems, tail } => {
            let mut pat = match tail {
                Some(t) => expr_to_pattern(t)?,
                None => Pattern::NilPat,
            };
            for e in elems.iter().rev() {
                pat = Pattern::ListPat {
                    head: Box::new(expr_to_pattern(e)?),
                    tail: Box::new(pat),
                };
            }
            Some(pat)
        }
        _ => None,
    }
}

// ---- post-parse validation ----

/// Context for `?P`/`?R` placement checks.
#[derive(Clone, Copy)]
struct RefCtx {
    arity: usize,
    allow_result: bool,
    in_contract: bool,
}

fn validate_module(m: &ModuleAst) -> Result<(), ParseError> {
    let mut seen = BTreeSet::new();
    for f in &m.fundefs {
        if !seen.insert((f.name.clone(), f.arity)) {
            return Err(verr(format!(
                "duplicate function {}/{}",
                f.name, f.arity
            )));
        }
    }

    // Named functions referenced from contract directives: their bodies
    // are contract bodies; they may not carry contracts of their own.
    let mut named_ctx: HashMap<(String, usize), RefCtx> = HashMap::new();
    let mut record_named = |cond: &Expr, ctx: RefCtx| {
        if let Expr::FunRef {
            module: None,
            name,
            arity,
        } = cond
        {
            named_ctx.insert((name.clone(), *arity), ctx);
        }
    };

    for f in &m.fundefs {
        let mut decrease_count = 0;
        for c in &f.contracts {
            match c {
                Contract::Pre { cond } => record_named(
                    cond,
                    RefCtx {
                        arity: f.arity,
                        allow_result: false,
                        in_contract: true,
                    },
                ),
                Contract::Post { cond } => record_named(
                    cond,
                    RefCtx {
                        arity: f.arity,
                        allow_result: true,
                        in_contract: true,
                    },
                ),
                Contract::ExpectedTime { timefun } | Contract::Timeout { timefun } => {
                    record_named(
                        timefun,
                        RefCtx {
                            arity: f.arity,
                            allow_result: false,
                            in_contract: true,
                        },
                    )
                }
                Contract::Decreases { params, .. } => {
                    decrease_count += 1;
                    let mut uniq = BTreeSet::new();
                    for p in params {
                        if *p > f.arity {
                            return Err(verr(format!(
                                "?P({p}) exceeds arity of {}/{}",
                                f.name, f.arity
                            )));
                        }
                        if !uniq.insert(*p) {
                            return Err(verr(format!(
                                "duplicate ?P({p}) in decrease contract of {}/{}",
                                f.name, f.arity
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        if decrease_count > 1 {
            return Err(verr(format!(
                "multiple decrease contracts on {}/{}",
                f.name, f.arity
            )));
        }
    }
    if let Some(inv) = &m.module_invariant {
        record_named(
            inv,
            RefCtx {
                arity: 0,
                allow_result: false,
                in_contract: true,
            },
        );
        if let Expr::Fun { params, .. } = inv {
            if params.len() != 1 {
                return Err(verr("?INVARIANT function must take one argument".into()));
            }
        }
    }

    for (name, arity) in named_ctx.keys() {
        match m.lookup(name, *arity) {
            None => {
                return Err(verr(format!(
                    "contract references unknown function {name}/{arity}"
                )))
            }
            Some(f) if !f.contracts.is_empty() => {
                return Err(verr(format!(
                    "contract-function {name}/{arity} may not carry contracts"
                )))
            }
            _ => {}
        }
    }

    // Walk every body with the right context.
    for f in &m.fundefs {
        let ctx = named_ctx
            .get(&(f.name.clone(), f.arity))
            .copied()
            .unwrap_or(RefCtx {
                arity: 0,
                allow_result: false,
                in_contract: false,
            });
        for cl in &f.clauses {
            if let Some(g) = &cl.guard {
                check_refs(g, ctx)?;
            }
            for e in &cl.body {
                check_refs(e, ctx)?;
            }
        }
        for c in &f.contracts {
            let (cond, allow_result) = match c {
                Contract::Pre { cond } => (Some(cond), false),
                Contract::Post { cond } => (Some(cond), true),
                Contract::ExpectedTime { timefun } | Contract::Timeout { timefun } => {
                    (Some(timefun), false)
                }
                _ => (None, false),
            };
            if let Some(Expr::Fun { body, .. }) = cond {
                let cctx = RefCtx {
                    arity: f.arity,
                    allow_result,
                    in_contract: true,
                };
                for e in body {
                    check_refs(e, cctx)?;
                }
            }
        }
    }
    if let Some(Expr::Fun { body, .. }) = &m.module_invariant {
        let cctx = RefCtx {
            arity: 0,
            allow_result: false,
            in_contract: true,
        };
        for e in body {
            check_refs(e, cctx)?;
        }
    }
    Ok(())
}

fn verr(msg: String) -> ParseError {
    ParseError {
        line: 1,
        col: 1,
        msg,
    }
}

impl From<&str> for ParseError {
    fn from(s: &str) -> Self {
        verr(s.to_string())
    }
}

fn check_refs(e: &Expr, ctx: RefCtx) -> Result<(), ParseError> {
    match e {
        Expr::ParamRef(i) => {
            if !ctx.in_contract {
                return Err(verr("?P may appear only inside contract bodies".into()));
            }
            if *i < 1 || *i > ctx.arity {
                return Err(verr(format!(
                    "?P({i}) out of range for contracted arity {}",
                    ctx.arity
                )));
            }
            Ok(())
        }
        Expr::ResultRef => {
            if !ctx.in_contract || !ctx.allow_result {
                return Err(verr("?R may appear only in POST contract bodies".into()));
            }
            Ok(())
        }
        Expr::Lit(_) | Expr::Var(_) | Expr::FunRef { .. } => Ok(()),
        Expr::ListExpr { elems, tail } => {
            for x in elems {
                check_refs(x, ctx)?;
            }
            if let Some(t) = tail {
                check_refs(t, ctx)?;
            }
            Ok(())
        }
        Expr::TupleExpr(xs) => xs.iter().try_for_each(|x| check_refs(x, ctx)),
        Expr::BinOp { lhs, rhs, .. } => {
            check_refs(lhs, ctx)?;
            check_refs(rhs, ctx)
        }
        Expr::UnOp { expr, .. } => check_refs(expr, ctx),
        Expr::Call { target, args } => {
            if let CallTarget::Dynamic(t) = target {
                check_refs(t, ctx)?;
            }
            args.iter().try_for_each(|a| check_refs(a, ctx))
        }
        Expr::Fun { body, .. } => body.iter().try_for_each(|b| check_refs(b, ctx)),
        Expr::Case { scrutinee, clauses } => {
            check_refs(scrutinee, ctx)?;
            for c in clauses {
                if let Some(g) = &c.guard {
                    check_refs(g, ctx)?;
                }
                c.body.iter().try_for_each(|b| check_refs(b, ctx))?;
            }
            Ok(())
        }
        Expr::If { clauses } => {
            for c in clauses {
                check_refs(&c.guard, ctx)?;
                c.body.iter().try_for_each(|b| check_refs(b, ctx))?;
            }
            Ok(())
        }
        Expr::ListComp {
            template,
            source,
            filters,
            ..
        } => {
            check_refs(template, ctx)?;
            check_refs(source, ctx)?;
            filters.iter().try_for_each(|f| check_refs(f, ctx))
        }
        Expr::Match { expr, .. } => check_refs(expr, ctx),
    }
}
