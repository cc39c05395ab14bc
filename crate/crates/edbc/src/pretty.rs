//! Canonical source renderer. `parse_module(pretty_print(m))` is
//! structurally equal to `m`.

use std::fmt::Write;

use crate::ast::{BinOp, CallTarget, Contract, Expr, FunDef, ModuleAst, Pattern, UnOp};
use crate::value::Value;

pub fn pretty_print(m: &ModuleAst) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "-module({}).", m.name);
    out.push('\n');
    if let Some(inv) = &m.module_invariant {
        let _ = writeln!(out, "?INVARIANT({}).", print_expr(inv, 0));
        out.push('\n');
    }
    for f in &m.fundefs {
        print_fundef(&mut out, f);
        out.push('\n');
    }
    out
}

fn print_fundef(out: &mut String, f: &FunDef) {
    // Pre-positioned annotations keep their relative source order;
    // POSTs go after the clauses.
    for c in &f.contracts {
        match c {
            Contract::Post { .. } => {}
            Contract::Pre { cond } => {
                let _ = writeln!(out, "?PRE({}).", print_expr(cond, 0));
            }
            Contract::Decreases { params, strict } => {
                let macro_name = if *strict { "SDECREASES" } else { "DECREASES" };
                let body = if params.len() == 1 {
                    format!("?P({})", params[0])
                } else {
                    let items: Vec<String> =
                        params.iter().map(|p| format!("?P({p})")).collect();
                    format!("[{}]", items.join(", "))
                };
                let _ = writeln!(out, "?{macro_name}({body}).");
            }
            Contract::ExpectedTime { timefun } => {
                let _ = writeln!(out, "?EXPECTED_TIME({}).", print_expr(timefun, 0));
            }
            Contract::Timeout { timefun } => {
                let _ = writeln!(out, "?TIMEOUT({}).", print_expr(timefun, 0));
            }
            Contract::Pure => {
                let _ = writeln!(out, "?PURE.");
            }
            Contract::Invariant { invfun } => {
                let _ = writeln!(out, "?INVARIANT({}).", print_expr(invfun, 0));
            }
            Contract::Spec { argtypes, rettype } => {
                let args: Vec<String> = argtypes.iter().map(|t| t.to_string()).collect();
                let _ = writeln!(
                    out,
                    "-spec {}({}) -> {}.",
                    f.name,
                    args.join(", "),
                    rettype
                );
            }
        }
    }
    let n = f.clauses.len();
    for (i, cl) in f.clauses.iter().enumerate() {
        let pats: Vec<String> = cl.patterns.iter().map(print_pattern).collect();
        let _ = write!(out, "{}({})", f.name, pats.join(", "));
        if let Some(g) = &cl.guard {
            let _ = write!(out, " when {}", print_expr(g, 0));
        }
        let _ = write!(out, " -> {}", print_body(&cl.body));
        out.push_str(if i + 1 == n { ".\n" } else { ";\n" });
    }
    for c in &f.contracts {
        if let Contract::Post { cond } = c {
            let _ = writeln!(out, "?POST({}).", print_expr(cond, 0));
        }
    }
}

fn print_body(body: &[Expr]) -> String {
    body.iter()
        .map(|e| print_expr(e, 0))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_atom(a: &str) -> String {
    let bare = a
        .chars()
        .next()
        .map(|c| c.is_ascii_lowercase())
        .unwrap_or(false)
        && a.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '@');
    if bare {
        a.to_string()
    } else {
        format!("'{a}'")
    }
}

fn print_pattern(p: &Pattern) -> String {
    match p {
        Pattern::Wildcard => "_".to_string(),
        Pattern::Var(v) => v.clone(),
        Pattern::LitAtom(a) => print_atom(a),
        Pattern::LitInt(i) => i.to_string(),
        Pattern::LitBool(b) => b.to_string(),
        Pattern::LitStr(s) => print_str(s),
        Pattern::NilPat => "[]".to_string(),
        Pattern::ListPat { .. } => {
            let mut heads = Vec::new();
            let mut cur = p;
            while let Pattern::ListPat { head, tail } = cur {
                heads.push(print_pattern(head));
                cur = tail;
            }
            match cur {
                Pattern::NilPat => format!("[{}]", heads.join(", ")),
                other => format!("[{}|{}]", heads.join(", "), print_pattern(other)),
            }
        }
        Pattern::TuplePat(ps) => {
            let items: Vec<String> = ps.iter().map(print_pattern).collect();
            format!("{{{}}}", items.join(", "))
        }
    }
}

fn print_str(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::OrElse => 2,
        BinOp::AndAlso => 3,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
        BinOp::Append => 5,
        BinOp::Add | BinOp::Sub => 6,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 7,
    }
}

/// Renders `e`, parenthesizing when its precedence is below `min_prec`.
pub fn print_expr(e: &Expr, min_prec: u8) -> String {
    let (text, prec) = match e {
        Expr::Lit(v) => (print_lit(v), 9),
        Expr::Var(v) => (v.clone(), 9),
        Expr::ParamRef(i) => (format!("?P({i})"), 9),
        Expr::ResultRef => ("?R".to_string(), 9),
        Expr::ListExpr { elems, tail } => {
            let items: Vec<String> = elems.iter().map(|x| print_expr(x, 0)).collect();
            let text = match tail {
                None => format!("[{}]", items.join(", ")),
                Some(t) => format!("[{}|{}]", items.join(", "), print_expr(t, 0)),
            };
            (text, 9)
        }
        Expr::TupleExpr(xs) => {
            let items: Vec<String> = xs.iter().map(|x| print_expr(x, 0)).collect();
            (format!("{{{}}}", items.join(", ")), 9)
        }
        Expr::BinOp { op, lhs, rhs } => {
            let p = binop_prec(*op);
            let (lp, rp) = match op {
                // ++ is right-associative; comparisons are non-associative.
                BinOp::Append => (p + 1, p),
                BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    (p + 1, p + 1)
                }
                _ => (p, p + 1),
            };
            (
                format!(
                    "{} {} {}",
                    print_expr(lhs, lp),
                    op.symbol(),
                    print_expr(rhs, rp)
                ),
                p,
            )
        }
        Expr::UnOp { op, expr } => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "not ",
            };
            (format!("{sym}{}", print_expr(expr, 9)), 8)
        }
        Expr::Call { target, args } => {
            let argtext: Vec<String> = args.iter().map(|a| print_expr(a, 0)).collect();
            let head = match target {
                CallTarget::Local(f) => print_atom(f),
                CallTarget::Remote(m, f) => format!("{}:{}", print_atom(m), print_atom(f)),
                CallTarget::Dynamic(e) => print_expr(e, 9),
            };
            (format!("{head}({})", argtext.join(", ")), 9)
        }
        Expr::Fun { params, body } => {
            let pats: Vec<String> = params.iter().map(print_pattern).collect();
            (
                format!("fun({}) -> {} end", pats.join(", "), print_body(body)),
                9,
            )
        }
        Expr::FunRef {
            module,
            name,
            arity,
        } => {
            let text = match module {
                Some(m) => format!("fun {}:{}/{arity}", print_atom(m), print_atom(name)),
                None => format!("fun {}/{arity}", print_atom(name)),
            };
            (text, 9)
        }
        Expr::Case { scrutinee, clauses } => {
            let mut text = format!("case {} of ", print_expr(scrutinee, 0));
            let parts: Vec<String> = clauses
                .iter()
                .map(|c| {
                    let mut s = print_pattern(&c.pattern);
                    if let Some(g) = &c.guard {
                        s.push_str(&format!(" when {}", print_expr(g, 0)));
                    }
                    s.push_str(&format!(" -> {}", print_body(&c.body)));
                    s
                })
                .collect();
            text.push_str(&parts.join("; "));
            text.push_str(" end");
            (text, 9)
        }
        Expr::If { clauses } => {
            let parts: Vec<String> = clauses
                .iter()
                .map(|c| format!("{} -> {}", print_expr(&c.guard, 0), print_body(&c.body)))
                .collect();
            (format!("if {} end", parts.join("; ")), 9)
        }
        Expr::ListComp {
            template,
            pattern,
            source,
            filters,
        } => {
            let mut text = format!(
                "[{} || {} <- {}",
                print_expr(template, 0),
                print_pattern(pattern),
                print_expr(source, 0)
            );
            for f in filters {
                text.push_str(&format!(", {}", print_expr(f, 0)));
            }
            text.push(']');
            (text, 9)
        }
        Expr::Match { pattern, expr } => (
            format!("{} = {}", print_pattern(pattern), print_expr(expr, 1)),
            1,
        ),
    };
    if prec < min_prec {
        format!("({text})")
    } else {
        text
    }
}

fn print_lit(v: &Value) -> String {
    match v {
        Value::Atom(a) => print_atom(a),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(x) => {
            if x.fract() == 0.0 && x.is_finite() {
                format!("{x:.1}")
            } else {
                format!("{x}")
            }
        }
        Value::Str(s) => print_str(s),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_module;

    fn roundtrip(src: &str) {
        let m1 = parse_module(src).unwrap();
        let printed = pretty_print(&m1);
        let m2 = parse_module(&printed).unwrap_or_else(|e| {
            panic!("reparse failed: {e}\n--- printed ---\n{printed}")
        });
        assert_eq!(m1, m2, "round-trip mismatch for:\n{printed}");
    }

    #[test]
    fn roundtrips_fib() {
        roundtrip(
            "-module(fib).\n\
             ?PRE(fun() -> ?P(1) >= 0 end).\n\
             ?SDECREASES(?P(1)).\n\
             fib(0) -> 0;\n\
             fib(1) -> 1;\n\
             fib(N) -> fib(N - 1) + fib(N - 2).\n",
        );
    }

    #[test]
    fn roundtrips_empty_module() {
        let m = parse_module("-module(empty).").unwrap();
        let printed = pretty_print(&m);
        assert_eq!(printed.trim(), "-module(empty).");
        assert_eq!(parse_module(&printed).unwrap(), m);
    }

    #[test]
    fn roundtrips_mixed_constructs() {
        roundtrip(
            "-module(mix).\n\
             f(X) -> case X of {a, N} when N > 0 -> [N|[1, 2]]; _ -> [] end.\n\
             g(L) -> [Y * 2 || Y <- L, Y rem 2 == 0].\n\
             h() -> F = fun(A) -> not A end, F(true) orelse 1 < 2.\n\
             i() -> lists:map(fun erlang:'*'/2, []).\n",
        );
    }

    #[test]
    fn negative_unary_parenthesized_correctly() {
        roundtrip("-module(m).\nf(N) -> -N + 2 * (N - 1).\n");
    }
}
