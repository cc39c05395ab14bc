//! Abstract syntax of the mini-language, including contract annotations.

use std::collections::BTreeSet;

use crate::typespec::TypeSpec;
use crate::value::Value;

/// Binary operators of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    AndAlso,
    OrElse,
    Append,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "rem",
            BinOp::Eq => "==",
            BinOp::Ne => "/=",
            BinOp::Lt => "<",
            BinOp::Le => "=<",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::AndAlso => "andalso",
            BinOp::OrElse => "orelse",
            BinOp::Append => "++",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

/// Where a call is directed.
#[derive(Debug, Clone, PartialEq)]
pub enum CallTarget {
    /// `f(...)` — resolved in the current module, falling back to builtins.
    Local(String),
    /// `m:f(...)`.
    Remote(String, String),
    /// `(Expr)(...)` where the expression evaluates to a fun value.
    Dynamic(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseClause {
    pub pattern: Pattern,
    pub guard: Option<Expr>,
    pub body: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfClause {
    pub guard: Expr,
    pub body: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Var(String),
    /// `[e1,e2|tail]`; `tail` is `None` for a proper list literal.
    ListExpr {
        elems: Vec<Expr>,
        tail: Option<Box<Expr>>,
    },
    TupleExpr(Vec<Expr>),
    BinOp {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    UnOp {
        op: UnOp,
        expr: Box<Expr>,
    },
    Call {
        target: CallTarget,
        args: Vec<Expr>,
    },
    /// `fun(P1,...) -> body end`
    Fun {
        params: Vec<Pattern>,
        body: Vec<Expr>,
    },
    /// `fun name/arity` or `fun m:name/arity`
    FunRef {
        module: Option<String>,
        name: String,
        arity: usize,
    },
    Case {
        scrutinee: Box<Expr>,
        clauses: Vec<CaseClause>,
    },
    If {
        clauses: Vec<IfClause>,
    },
    /// One generator plus optional filters: `[T || P <- Src, F1, F2]`.
    ListComp {
        template: Box<Expr>,
        pattern: Pattern,
        source: Box<Expr>,
        filters: Vec<Expr>,
    },
    /// `Pattern = Expr`
    Match {
        pattern: Pattern,
        expr: Box<Expr>,
    },
    /// `?P(i)` — only valid inside contract-function bodies.
    ParamRef(usize),
    /// `?R` — only valid inside POST contract bodies.
    ResultRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Wildcard,
    Var(String),
    LitAtom(String),
    LitInt(i64),
    LitBool(bool),
    LitStr(String),
    NilPat,
    ListPat {
        head: Box<Pattern>,
        tail: Box<Pattern>,
    },
    TuplePat(Vec<Pattern>),
}

impl Pattern {
    pub fn bound_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Pattern::Var(n) => {
                out.insert(n.clone());
            }
            Pattern::ListPat { head, tail } => {
                head.bound_vars(out);
                tail.bound_vars(out);
            }
            Pattern::TuplePat(ps) => {
                for p in ps {
                    p.bound_vars(out);
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub patterns: Vec<Pattern>,
    pub guard: Option<Expr>,
    pub body: Vec<Expr>,
}

/// One contract annotation, as attached to a function (or the module,
/// for invariants).
#[derive(Debug, Clone, PartialEq)]
pub enum Contract {
    /// `?PRE(F)` — F is a zero-arg fun expression or `fun name/0`.
    Pre { cond: Expr },
    /// `?POST(F)` — as `Pre`, but the body may use `?R`.
    Post { cond: Expr },
    /// `?DECREASES(...)` / `?SDECREASES(...)`; params are 1-based indices.
    Decreases { params: Vec<usize>, strict: bool },
    ExpectedTime { timefun: Expr },
    Timeout { timefun: Expr },
    Pure,
    /// `?INVARIANT(F)` — F is a one-arg fun over the behaviour state.
    Invariant { invfun: Expr },
    /// `-spec name(T1,...) -> T.`
    Spec {
        argtypes: Vec<TypeSpec>,
        rettype: TypeSpec,
    },
}

impl Contract {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Contract::Pre { .. } => "pre",
            Contract::Post { .. } => "post",
            Contract::Decreases { .. } => "decreases",
            Contract::ExpectedTime { .. } => "expected_time",
            Contract::Timeout { .. } => "timeout",
            Contract::Pure => "pure",
            Contract::Invariant { .. } => "invariant",
            Contract::Spec { .. } => "spec",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunDef {
    pub name: String,
    pub arity: usize,
    pub clauses: Vec<Clause>,
    /// Contracts in source order.
    pub contracts: Vec<Contract>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleAst {
    pub name: String,
    pub fundefs: Vec<FunDef>,
    /// `?INVARIANT(F)` — at most one per module.
    pub module_invariant: Option<Expr>,
}

impl ModuleAst {
    pub fn lookup(&self, name: &str, arity: usize) -> Option<&FunDef> {
        self.fundefs
            .iter()
            .find(|f| f.name == name && f.arity == arity)
    }
}

/// Free variables of a body, walked in evaluation order: a `Match`
/// binds its pattern vars for the expressions that follow it.
/// Case/if/comprehension clauses bind only locally.
pub fn free_vars(body: &[Expr]) -> BTreeSet<String> {
    let mut free = BTreeSet::new();
    let mut bound = BTreeSet::new();
    for e in body {
        free_vars_expr(e, &mut bound, &mut free);
    }
    free
}

fn free_vars_expr(e: &Expr, bound: &mut BTreeSet<String>, free: &mut BTreeSet<String>) {
    match e {
        Expr::Lit(_) | Expr::ParamRef(_) | Expr::ResultRef | Expr::FunRef { .. } => {}
        Expr::Var(n) => {
            if !bound.contains(n) {
                free.insert(n.clone());
            }
        }
        Expr::ListExpr { elems, tail } => {
            for x in elems {
                free_vars_expr(x, bound, free);
            }
            if let Some(t) = tail {
                free_vars_expr(t, bound, free);
            }
        }
        Expr::TupleExpr(xs) => {
            for x in xs {
                free_vars_expr(x, bound, free);
            }
        }
        Expr::BinOp { lhs, rhs, .. } => {
            free_vars_expr(lhs, bound, free);
            free_vars_expr(rhs, bound, free);
        }
        Expr::UnOp { expr, .. } => free_vars_expr(expr, bound, free),
        Expr::Call { target, args } => {
            if let CallTarget::Dynamic(t) = target {
                free_vars_expr(t, bound, free);
            }
            for a in args {
                free_vars_expr(a, bound, free);
            }
        }
        Expr::Fun { params, body } => {
            let mut inner_bound = bound.clone();
            for p in params {
                p.bound_vars(&mut inner_bound);
            }
            for b in body {
                free_vars_expr(b, &mut inner_bound, free);
            }
        }
        Expr::Case { scrutinee, clauses } => {
            free_vars_expr(scrutinee, bound, free);
            for c in clauses {
                let mut inner = bound.clone();
                c.pattern.bound_vars(&mut inner);
                if let Some(g) = &c.guard {
                    free_vars_expr(g, &mut inner, free);
                }
                for b in &c.body {
                    free_vars_expr(b, &mut inner, free);
                }
            }
        }
        Expr::If { clauses } => {
            for c in clauses {
                let mut inner = bound.clone();
                free_vars_expr(&c.guard, &mut inner, free);
                for b in &c.body {
                    free_vars_expr(b, &mut inner, free);
                }
            }
        }
        Expr::ListComp {
            template,
            pattern,
            source,
            filters,
        } => {
            free_vars_expr(source, bound, free);
            let mut inner = bound.clone();
            pattern.bound_vars(&mut inner);
            for f in filters {
                free_vars_expr(f, &mut inner, free);
            }
            free_vars_expr(template, &mut inner, free);
        }
        Expr::Match { pattern, expr } => {
            free_vars_expr(expr, bound, free);
            pattern.bound_vars(bound);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_binds_for_later_exprs() {
        let body = vec![
            Expr::Match {
                pattern: Pattern::Var("X".into()),
                expr: Box::new(Expr::Lit(Value::Int(1))),
            },
            Expr::BinOp {
                op: BinOp::Add,
                lhs: Box::new(Expr::Var("X".into())),
                rhs: Box::new(Expr::Var("Y".into())),
            },
        ];
        let fv = free_vars(&body);
        assert!(!fv.contains("X"));
        assert!(fv.contains("Y"));
    }

    #[test]
    fn fun_params_shadow() {
        let body = vec![Expr::Fun {
            params: vec![Pattern::Var("N".into())],
            body: vec![Expr::Var("N".into())],
        }];
        assert!(free_vars(&body).is_empty());
    }
}
