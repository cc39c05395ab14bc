//! Violation report templates and contract documentation generation.

use std::fmt::Write;

use crate::ast::{Contract, FunDef, ModuleAst};
use crate::pretty::print_expr;
use crate::runtime::{Detail, Kind, Violation};
use crate::value::{format_args, Value};

/// Renders a violation to its fixed template. Deterministic.
pub fn format_violation(v: &Violation) -> String {
    let mut out = match (&v.kind, &v.detail) {
        (Kind::Precondition, _) => format!(
            "The precondition does not hold. Last call: {}.",
            v.call.qualified()
        ),
        (Kind::Postcondition, _) => format!(
            "The postcondition does not hold. Last call: {}.",
            v.call.qualified()
        ),
        (Kind::Decrease, Detail::Decrease { fname, prev, next }) => format!(
            "Decreasing condition does not hold. Previous call: {fname}({}). Current call: {fname}({}).",
            format_args(prev),
            format_args(next)
        ),
        (Kind::SpecPre, Detail::Spec { value, ty }) => format!(
            "The spec precondition does not hold. Last call: {}. The value {value} is not of type {ty}.",
            v.call.qualified()
        ),
        (Kind::SpecPost, Detail::Spec { value, ty }) => format!(
            "The spec postcondition does not hold. Last call: {}. The value {value} is not of type {ty}.",
            v.call.qualified()
        ),
        (Kind::ExpectedTime, Detail::Time { real_ms, expected_ms }) => format!(
            "The execution of {} took too much time. Real: {} ms. Expected: {expected_ms} ms. Difference: {} ms)",
            v.call.qualified(),
            format_ms(*real_ms),
            format_ms(real_ms - *expected_ms as f64)
        ),
        (Kind::Timeout, Detail::TimeoutHit { expected_ms }) => format!(
            "The execution of {} took too much time. Timeout: {expected_ms} ms.",
            v.call.qualified()
        ),
        (Kind::Purity, Detail::Purity { bif }) => format!(
            "The function is not pure. Last call: {}. It has call the impure BIF {bif} when evaluating {}.",
            v.call.qualified(),
            v.call.unqualified()
        ),
        (Kind::Invariant, Detail::Invariant { result }) => {
            let args = &v.call.args;
            // handle_call/3 elides the From argument, per the report shape.
            let call_text = if args.len() == 3 {
                format!(
                    "{}:{}({}, ..., {})",
                    v.call.module, v.call.name, args[0], args[2]
                )
            } else {
                v.call.qualified()
            };
            format!(
                "The invariant does not hold.\nLast call: {call_text}.\nResult: {result}"
            )
        }
        // A malformed pairing still renders usably.
        (kind, _) => format!("Contract violation ({kind:?}). Last call: {}.", v.call.qualified()),
    };
    if let Some(reason) = &v.user_reason {
        let _ = write!(out, " Reason: {reason}");
    }
    out
}

/// Multi-line wrapper printed when a server terminates on a failed
/// check inside a callback.
pub fn format_server_termination(
    module: &str,
    last_msg: &Value,
    state: &Value,
    reason: &str,
) -> String {
    format!(
        "** Generic server {module} terminating\n\
         ** Last message in was {last_msg}\n\
         ** When Server state == {state}\n\
         ** Reason for termination ==\n\
         {reason}"
    )
}

fn format_ms(ms: f64) -> String {
    format!("{ms:.3}")
}

/// Markdown contract documentation for a parsed (un-instrumented)
/// module: one section per function, in source order.
pub fn generate_docs(m: &ModuleAst) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Module `{}`\n", m.name);
    if let Some(inv) = &m.module_invariant {
        let _ = writeln!(out, "**Invariant:** `{}`\n", print_expr(inv, 0));
    }
    for f in &m.fundefs {
        doc_function(&mut out, f);
    }
    out
}

fn doc_function(out: &mut String, f: &FunDef) {
    let _ = writeln!(out, "## `{}/{}`\n", f.name, f.arity);
    for c in &f.contracts {
        match c {
            Contract::Spec { argtypes, rettype } => {
                let args: Vec<String> = argtypes.iter().map(|t| t.to_string()).collect();
                let _ = writeln!(
                    out,
                    "- **Spec:** `{}({}) -> {}`",
                    f.name,
                    args.join(", "),
                    rettype
                );
            }
            Contract::Pre { cond } => {
                let _ = writeln!(out, "- **Precondition:** `{}`", print_expr(cond, 0));
            }
            Contract::Post { cond } => {
                let _ = writeln!(out, "- **Postcondition:** `{}`", print_expr(cond, 0));
            }
            Contract::Decreases { params, strict } => {
                let items: Vec<String> = params.iter().map(|p| format!("?P({p})")).collect();
                let _ = writeln!(
                    out,
                    "- **Decreases{}:** {}",
                    if *strict { " (strictly)" } else { "" },
                    items.join(", ")
                );
            }
            Contract::ExpectedTime { timefun } => {
                let _ = writeln!(out, "- **Expected time:** `{}`", print_expr(timefun, 0));
            }
            Contract::Timeout { timefun } => {
                let _ = writeln!(out, "- **Timeout:** `{}`", print_expr(timefun, 0));
            }
            Contract::Pure => {
                let _ = writeln!(out, "- **Pure.**");
            }
            Contract::Invariant { invfun } => {
                let _ = writeln!(out, "- **Invariant:** `{}`", print_expr(invfun, 0));
            }
        }
    }
    if !f.contracts.is_empty() {
        out.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::CallInfo;

    fn call(module: &str, name: &str, args: Vec<Value>) -> CallInfo {
        CallInfo {
            module: module.to_string(),
            name: name.to_string(),
            args,
        }
    }

    #[test]
    fn decrease_template_matches_expected_text() {
        let v = Violation {
            kind: Kind::Decrease,
            call: call("ex", "fib", vec![Value::Int(2)]),
            user_reason: None,
            detail: Detail::Decrease {
                fname: "fib".into(),
                prev: vec![Value::Int(2)],
                next: vec![Value::Int(4)],
            },
        };
        assert_eq!(
            format_violation(&v),
            "Decreasing condition does not hold. Previous call: fib(2). Current call: fib(4)."
        );
    }

    #[test]
    fn purity_template_matches_fig_shape() {
        let v = Violation {
            kind: Kind::Purity,
            call: call("ex", "g3", vec![]),
            user_reason: None,
            detail: Detail::Purity {
                bif: "erlang:put/2".into(),
            },
        };
        assert_eq!(
            format_violation(&v),
            "The function is not pure. Last call: ex:g3(). \
             It has call the impure BIF erlang:put/2 when evaluating g3()."
        );
    }

    #[test]
    fn spec_template_names_value_and_type() {
        let v = Violation {
            kind: Kind::SpecPre,
            call: call("ex", "fib", vec![Value::atom("a")]),
            user_reason: None,
            detail: Detail::Spec {
                value: Value::atom("a"),
                ty: crate::typespec::TypeSpec::IntegerT,
            },
        };
        let text = format_violation(&v);
        assert!(text.contains("The value a is not of type integer()."), "{text}");
        assert!(text.starts_with("The spec precondition does not hold. Last call: ex:fib(a)."));
    }

    #[test]
    fn invariant_template_is_multiline() {
        let state0 = Value::Tuple(vec![Value::atom("state"), Value::Int(0), Value::Bool(true)]);
        let state1 = Value::Tuple(vec![Value::atom("state"), Value::Int(1), Value::Bool(true)]);
        let result = Value::Tuple(vec![Value::atom("reply"), Value::atom("pass"), state1]);
        let v = Violation {
            kind: Kind::Invariant,
            call: call(
                "readers_writers",
                "handle_call",
                vec![
                    Value::atom("request_read"),
                    Value::atom("from"),
                    state0,
                ],
            ),
            user_reason: None,
            detail: Detail::Invariant { result },
        };
        let text = format_violation(&v);
        assert!(text.contains("The invariant does not hold."));
        assert!(text.contains(
            "Last call: readers_writers:handle_call(request_read, ..., {state,0,true})."
        ));
        assert!(text.contains("Result: {reply,pass,{state,1,true}}"));
    }

    #[test]
    fn reason_appended_when_present() {
        let v = Violation {
            kind: Kind::Precondition,
            call: call("ex", "fib", vec![Value::Int(-3)]),
            user_reason: Some("negative input".into()),
            detail: Detail::None,
        };
        assert_eq!(
            format_violation(&v),
            "The precondition does not hold. Last call: ex:fib(-3). Reason: negative input"
        );
    }

    #[test]
    fn docs_list_contract_blocks() {
        let src = "-module(findmod).\n\
            ?PRE(fun() -> length(?P(1)) > 0 end).\n\
            find(L, K) -> 1.\n\
            ?POST(fun() -> ?R < 0 orelse ?R < length(?P(1)) end).\n\
            ?POST(fun() -> ?R > 0 orelse lists:all(fun(X) -> X /= ?P(2) end, ?P(1)) end).\n\
            helper(X) -> X.\n";
        let m = crate::parser::parse_module(src).unwrap();
        let docs = generate_docs(&m);
        assert!(docs.contains("# Module `findmod`"));
        assert_eq!(docs.matches("**Precondition:**").count(), 1);
        assert_eq!(docs.matches("**Postcondition:**").count(), 2);
        assert!(docs.contains("## `helper/1`"));
        // Deterministic output.
        assert_eq!(docs, generate_docs(&m));
    }
}
