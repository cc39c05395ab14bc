//! Tree-walking evaluator, builtin table, and the contract runtime
//! library the instrumented code calls into.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded};

use crate::ast::{free_vars, BinOp, CallTarget, Clause, Expr, Pattern, UnOp};
use crate::instrument;
use crate::runtime::{
    CallInfo, Detail, EResult, EvalError, Kind, ProcCtx, RuntimeError, Violation,
};
use crate::typespec::{type_check, TypeSpec};
use crate::value::{Closure, Env, Pid, PidPort, Value};

/// Entry point: evaluates `module:name(args)` in the given process.
pub fn call_function(ctx: &mut ProcCtx, module: &str, name: &str, args: Vec<Value>) -> EResult<Value> {
    ctx.check_abort()?;
    let m = ctx.rt.get_module(module)?;
    if m.lookup(name, args.len()).is_some() {
        call_user_function(ctx, module, name, args)
    } else {
        call_builtin(ctx, module, None, name, args)
    }
}

fn call_user_function(
    ctx: &mut ProcCtx,
    module: &str,
    name: &str,
    args: Vec<Value>,
) -> EResult<Value> {
    ctx.check_abort()?;
    ctx.rt.trace_call(name);
    let m = ctx.rt.get_module(module)?;
    let f = m
        .lookup(name, args.len())
        .ok_or_else(|| RuntimeError::Undef {
            name: name.to_string(),
            arity: args.len(),
        })?;
    let depth = ctx.call_stack.len();
    for clause in &f.clauses {
        if let Some(mut env) = try_clause(ctx, module, clause, &args)? {
            let r = eval_body(ctx, module, &mut env, &clause.body);
            ctx.call_stack.truncate(depth);
            return r;
        }
    }
    ctx.call_stack.truncate(depth);
    Err(RuntimeError::FunctionClause {
        module: module.to_string(),
        name: name.to_string(),
        args,
    }
    .into())
}

/// Matches a clause head + guard; returns the resulting environment on
/// success. A guard that raises a runtime error counts as false.
fn try_clause(
    ctx: &mut ProcCtx,
    module: &str,
    clause: &Clause,
    args: &[Value],
) -> EResult<Option<Env>> {
    let mut env = Env::new();
    for (p, v) in clause.patterns.iter().zip(args) {
        if !match_pattern(p, v, &mut env) {
            return Ok(None);
        }
    }
    if let Some(g) = &clause.guard {
        let mut genv = env.clone();
        match eval(ctx, module, &mut genv, g) {
            Ok(Value::Bool(true)) => {}
            Ok(_) | Err(EvalError::Error(_)) => return Ok(None),
            Err(v) => return Err(v),
        }
    }
    Ok(Some(env))
}

/// Single-assignment pattern matching: an already-bound variable must
/// match its existing value exactly.
pub fn match_pattern(p: &Pattern, v: &Value, env: &mut Env) -> bool {
    match p {
        Pattern::Wildcard => true,
        Pattern::Var(n) => match env.get(n) {
            Some(bound) => bound == v,
            None => {
                env.insert(n.clone(), v.clone());
                true
            }
        },
        Pattern::LitAtom(a) => v.as_atom() == Some(a.as_str()),
        Pattern::LitInt(i) => matches!(v, Value::Int(x) if x == i),
        Pattern::LitBool(b) => matches!(v, Value::Bool(x) if x == b),
        Pattern::LitStr(s) => matches!(v, Value::Str(x) if x == s),
        Pattern::NilPat => matches!(v, Value::List(xs) if xs.is_empty()),
        Pattern::ListPat { head, tail } => match v {
            Value::List(xs) if !xs.is_empty() => {
                match_pattern(head, &xs[0], env)
                    && match_pattern(tail, &Value::List(xs[1..].to_vec()), env)
            }
            _ => false,
        },
        Pattern::TuplePat(ps) => match v {
            Value::Tuple(xs) if xs.len() == ps.len() => {
                ps.iter().zip(xs).all(|(p, x)| match_pattern(p, x, env))
            }
            _ => false,
        },
    }
}

pub fn eval_body(ctx: &mut ProcCtx, module: &str, env: &mut Env, body: &[Expr]) -> EResult<Value> {
    let mut last = Value::List(Vec::new());
    for e in body {
        last = eval(ctx, module, env, e)?;
    }
    Ok(last)
}

pub fn eval(ctx: &mut ProcCtx, module: &str, env: &mut Env, e: &Expr) -> EResult<Value> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Var(n) => env
            .get(n)
            .cloned()
            .ok_or_else(|| RuntimeError::Badarg(format!("variable {n} is unbound")).into()),
        Expr::ParamRef(i) => {
            Err(RuntimeError::Badarg(format!("unresolved ?P({i}) outside a contract")).into())
        }
        Expr::ResultRef => {
            Err(RuntimeError::Badarg("unresolved ?R outside a contract".to_string()).into())
        }
        Expr::ListExpr { elems, tail } => {
            let mut items = Vec::with_capacity(elems.len());
            for x in elems {
                items.push(eval(ctx, module, env, x)?);
            }
            match tail {
                None => Ok(Value::List(items)),
                Some(t) => match eval(ctx, module, env, t)? {
                    Value::List(rest) => {
                        items.extend(rest);
                        Ok(Value::List(items))
                    }
                    other => Err(RuntimeError::Badarg(format!(
                        "improper list tail {other}"
                    ))
                    .into()),
                },
            }
        }
        Expr::TupleExpr(xs) => {
            let mut items = Vec::with_capacity(xs.len());
            for x in xs {
                items.push(eval(ctx, module, env, x)?);
            }
            Ok(Value::Tuple(items))
        }
        Expr::BinOp { op, lhs, rhs } => eval_binop(ctx, module, env, *op, lhs, rhs),
        Expr::UnOp { op, expr } => {
            let v = eval(ctx, module, env, expr)?;
            match op {
                UnOp::Neg => match v {
                    Value::Int(i) => Ok(Value::Int(-i)),
                    Value::Float(x) => Ok(Value::Float(-x)),
                    _ => Err(RuntimeError::Badarith.into()),
                },
                UnOp::Not => match v {
                    Value::Bool(b) => Ok(Value::Bool(!b)),
                    _ => Err(RuntimeError::Badarg("not on a non-boolean".to_string()).into()),
                },
            }
        }
        Expr::Call { target, args } => {
            let mut argv = Vec::with_capacity(args.len());
            for a in args {
                argv.push(eval(ctx, module, env, a)?);
            }
            match target {
                CallTarget::Local(name) => call_function(ctx, module, name, argv),
                CallTarget::Remote(m, name) => call_remote(ctx, module, m, name, argv),
                CallTarget::Dynamic(t) => {
                    let f = eval(ctx, module, env, t)?;
                    apply_value(ctx, f, argv)
                }
            }
        }
        Expr::Fun { params, body } => {
            let mut inner_bound: std::collections::BTreeSet<String> =
                std::collections::BTreeSet::new();
            for p in params {
                p.bound_vars(&mut inner_bound);
            }
            let captured: Env = free_vars(body)
                .into_iter()
                .filter(|n| !inner_bound.contains(n))
                .filter_map(|n| env.get(&n).map(|v| (n, v.clone())))
                .collect();
            Ok(Value::Closure(Closure {
                params: params.clone(),
                body: body.clone(),
                env: captured,
                module: module.to_string(),
            }))
        }
        Expr::FunRef {
            module: m,
            name,
            arity,
        } => Ok(Value::FunRef {
            module: Some(m.clone().unwrap_or_else(|| module.to_string())),
            name: name.clone(),
            arity: *arity,
        }),
        Expr::Case { scrutinee, clauses } => {
            let v = eval(ctx, module, env, scrutinee)?;
            for c in clauses {
                let mut cenv = env.clone();
                if match_pattern(&c.pattern, &v, &mut cenv) {
                    let guard_ok = match &c.guard {
                        None => true,
                        Some(g) => matches!(
                            eval(ctx, module, &mut cenv.clone(), g),
                            Ok(Value::Bool(true))
                        ),
                    };
                    if guard_ok {
                        let r = eval_body(ctx, module, &mut cenv, &c.body)?;
                        *env = cenv;
                        return Ok(r);
                    }
                }
            }
            Err(RuntimeError::CaseClause(v.to_string()).into())
        }
        Expr::If { clauses } => {
            for c in clauses {
                if matches!(
                    eval(ctx, module, &mut env.clone(), &c.guard),
                    Ok(Value::Bool(true))
                ) {
                    return eval_body(ctx, module, env, &c.body);
                }
            }
            Err(RuntimeError::IfClause.into())
        }
        Expr::ListComp {
            template,
            pattern,
            source,
            filters,
        } => {
            let src = eval(ctx, module, env, source)?;
            let items = match src {
                Value::List(xs) => xs,
                other => {
                    return Err(RuntimeError::Badarg(format!(
                        "comprehension source {other} is not a list"
                    ))
                    .into())
                }
            };
            let mut out = Vec::new();
            'item: for item in items {
                let mut ienv = env.clone();
                if !match_pattern(pattern, &item, &mut ienv) {
                    continue;
                }
                for f in filters {
                    match eval(ctx, module, &mut ienv, f)? {
                        Value::Bool(true) => {}
                        Value::Bool(false) => continue 'item,
                        other => {
                            return Err(RuntimeError::Badarg(format!(
                                "comprehension filter returned {other}"
                            ))
                            .into())
                        }
                    }
                }
                out.push(eval(ctx, module, &mut ienv, template)?);
            }
            Ok(Value::List(out))
        }
        Expr::Match { pattern, expr } => {
            let v = eval(ctx, module, env, expr)?;
            if match_pattern(pattern, &v, env) {
                Ok(v)
            } else {
                Err(RuntimeError::Badmatch(v.to_string()).into())
            }
        }
    }
}

fn eval_binop(
    ctx: &mut ProcCtx,
    module: &str,
    env: &mut Env,
    op: BinOp,
    lhs: &Expr,
    rhs: &Expr,
) -> EResult<Value> {
    // Short-circuit forms first.
    if matches!(op, BinOp::AndAlso | BinOp::OrElse) {
        let l = eval(ctx, module, env, lhs)?;
        return match (op, l) {
            (BinOp::AndAlso, Value::Bool(false)) => Ok(Value::Bool(false)),
            (BinOp::OrElse, Value::Bool(true)) => Ok(Value::Bool(true)),
            (_, Value::Bool(_)) => match eval(ctx, module, env, rhs)? {
                b @ Value::Bool(_) => Ok(b),
                other => {
                    Err(RuntimeError::Badarg(format!("boolean operator on {other}")).into())
                }
            },
            (_, other) => {
                Err(RuntimeError::Badarg(format!("boolean operator on {other}")).into())
            }
        };
    }
    let l = eval(ctx, module, env, lhs)?;
    let r = eval(ctx, module, env, rhs)?;
    apply_binop(op, l, r).map_err(Into::into)
}

pub fn apply_binop(op: BinOp, l: Value, r: Value) -> Result<Value, RuntimeError> {
    use Value::*;
    match op {
        BinOp::Add | BinOp::Sub | BinOp::Mul => {
            let f = |a: f64, b: f64| match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                _ => a * b,
            };
            match (l, r) {
                (Int(a), Int(b)) => {
                    let v = match op {
                        BinOp::Add => a.checked_add(b),
                        BinOp::Sub => a.checked_sub(b),
                        _ => a.checked_mul(b),
                    };
                    v.map(Int).ok_or(RuntimeError::Badarith)
                }
                (Int(a), Float(b)) => Ok(Float(f(a as f64, b))),
                (Float(a), Int(b)) => Ok(Float(f(a, b as f64))),
                (Float(a), Float(b)) => Ok(Float(f(a, b))),
                _ => Err(RuntimeError::Badarith),
            }
        }
        BinOp::Div => match (l, r) {
            (_, Int(0)) => Err(RuntimeError::Badarith),
            (Int(a), Int(b)) => Ok(Float(a as f64 / b as f64)),
            (Int(a), Float(b)) if b != 0.0 => Ok(Float(a as f64 / b)),
            (Float(a), Int(b)) => Ok(Float(a / b as f64)),
            (Float(a), Float(b)) if b != 0.0 => Ok(Float(a / b)),
            _ => Err(RuntimeError::Badarith),
        },
        BinOp::Rem => match (l, r) {
            (_, Int(0)) => Err(RuntimeError::Badarith),
            (Int(a), Int(b)) => Ok(Int(a % b)),
            _ => Err(RuntimeError::Badarith),
        },
        BinOp::Eq => Ok(Bool(values_arith_equal(&l, &r))),
        BinOp::Ne => Ok(Bool(!values_arith_equal(&l, &r))),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = compare_values(&l, &r)?;
            Ok(Bool(match op {
                BinOp::Lt => ord == Ordering::Less,
                BinOp::Le => ord != Ordering::Greater,
                BinOp::Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            }))
        }
        BinOp::Append => match (l, r) {
            (List(mut a), List(b)) => {
                a.extend(b);
                Ok(List(a))
            }
            (Str(a), Str(b)) => Ok(Str(a + &b)),
            (a, b) => Err(RuntimeError::Badarg(format!("{a} ++ {b}"))),
        },
        BinOp::AndAlso | BinOp::OrElse => unreachable!("handled in eval_binop"),
    }
}

/// `==` equality: numeric across Int/Float, structural otherwise.
fn values_arith_equal(l: &Value, r: &Value) -> bool {
    match (l, r) {
        (Value::Int(a), Value::Float(b)) | (Value::Float(b), Value::Int(a)) => *a as f64 == *b,
        (Value::List(a), Value::List(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_arith_equal(x, y))
        }
        (Value::Tuple(a), Value::Tuple(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_arith_equal(x, y))
        }
        _ => l == r,
    }
}

/// Erlang-like term order restricted to the types we have:
/// number < atom < fun < pid < tuple < list < string.
pub fn compare_values(l: &Value, r: &Value) -> Result<Ordering, RuntimeError> {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Int(_) | Value::Float(_) => 0,
            Value::Atom(_) | Value::Bool(_) => 1,
            Value::Closure(_) | Value::FunRef { .. } => 2,
            Value::Pid(_) => 3,
            Value::Tuple(_) => 4,
            Value::List(_) => 5,
            Value::Str(_) => 6,
        }
    }
    let (rl, rr) = (rank(l), rank(r));
    if rl != rr {
        return Ok(rl.cmp(&rr));
    }
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => Ok(a.cmp(b)),
        (Value::Int(a), Value::Float(b)) => (*a as f64)
            .partial_cmp(b)
            .ok_or(RuntimeError::Badarith),
        (Value::Float(a), Value::Int(b)) => a
            .partial_cmp(&(*b as f64))
            .ok_or(RuntimeError::Badarith),
        (Value::Float(a), Value::Float(b)) => {
            a.partial_cmp(b).ok_or(RuntimeError::Badarith)
        }
        (Value::Atom(_) | Value::Bool(_), Value::Atom(_) | Value::Bool(_)) => {
            Ok(l.as_atom().unwrap().cmp(r.as_atom().unwrap()))
        }
        (Value::Pid(a), Value::Pid(b)) => Ok(a.id.cmp(&b.id)),
        (Value::Tuple(a), Value::Tuple(b)) => {
            if a.len() != b.len() {
                return Ok(a.len().cmp(&b.len()));
            }
            compare_seq(a, b)
        }
        (Value::List(a), Value::List(b)) => compare_seq(a, b),
        (Value::Str(a), Value::Str(b)) => Ok(a.cmp(b)),
        _ => Err(RuntimeError::Badarg(format!("cannot order {l} and {r}"))),
    }
}

fn compare_seq(a: &[Value], b: &[Value]) -> Result<Ordering, RuntimeError> {
    for (x, y) in a.iter().zip(b) {
        let ord = compare_values(x, y)?;
        if ord != Ordering::Equal {
            return Ok(ord);
        }
    }
    Ok(a.len().cmp(&b.len()))
}

/// Applies a fun value (closure or `fun m:f/a`) to arguments.
pub fn apply_value(ctx: &mut ProcCtx, f: Value, args: Vec<Value>) -> EResult<Value> {
    match f {
        Value::Closure(c) => {
            if c.params.len() != args.len() {
                return Err(RuntimeError::Badarg(format!(
                    "fun of arity {} applied to {} arguments",
                    c.params.len(),
                    args.len()
                ))
                .into());
            }
            let mut env = c.env.clone();
            for (p, v) in c.params.iter().zip(&args) {
                if !match_pattern(p, v, &mut env) {
                    return Err(RuntimeError::FunctionClause {
                        module: c.module.clone(),
                        name: "<fun>".to_string(),
                        args,
                    }
                    .into());
                }
            }
            eval_body(ctx, &c.module, &mut env, &c.body)
        }
        Value::FunRef {
            module: Some(m),
            name,
            ..
        } => {
            if ctx.rt.get_module(&m).is_ok() {
                call_function(ctx, &m, &name, args)
            } else {
                call_builtin(ctx, &m, Some(m.as_str()), &name, args)
            }
        }
        Value::FunRef { module: None, name, .. } => {
            Err(RuntimeError::Undef {
                name,
                arity: args.len(),
            }
            .into())
        }
        other => Err(RuntimeError::Badarg(format!("{other} is not a function")).into()),
    }
}

fn apply0(ctx: &mut ProcCtx, f: Value) -> EResult<Value> {
    apply_value(ctx, f, Vec::new())
}

fn call_remote(
    ctx: &mut ProcCtx,
    cur_module: &str,
    target_module: &str,
    name: &str,
    args: Vec<Value>,
) -> EResult<Value> {
    if let Ok(m) = ctx.rt.get_module(target_module) {
        if m.lookup(name, args.len()).is_some() {
            return call_user_function(ctx, target_module, name, args);
        }
    }
    call_builtin(ctx, cur_module, Some(target_module), name, args)
}

/// Records an impure builtin in the purity trace, if one is active.
fn record_impure(ctx: &mut ProcCtx, bif: &str) {
    if ctx.purity_depth > 0 && ctx.in_contract == 0 {
        ctx.impure_events.push(bif.to_string());
    }
}

fn forbid_in_cpre(ctx: &ProcCtx, what: &str) -> Result<(), RuntimeError> {
    if ctx.forbid_effects {
        Err(RuntimeError::EffectForbidden(what.to_string()))
    } else {
        Ok(())
    }
}

fn expect_list(v: &Value, what: &str) -> Result<Vec<Value>, RuntimeError> {
    match v {
        Value::List(xs) => Ok(xs.clone()),
        other => Err(RuntimeError::Badarg(format!("{what}: {other} is not a list"))),
    }
}

/// Builtin dispatch. `remote` is the explicit module qualifier, if any;
/// unqualified names also reach here when the current module does not
/// define them.
fn call_builtin(
    ctx: &mut ProcCtx,
    cur_module: &str,
    remote: Option<&str>,
    name: &str,
    mut args: Vec<Value>,
) -> EResult<Value> {
    let arity = args.len();
    match (remote, name, arity) {
        // ---- contract library (generated code only) ----
        (None, instrument::PUT_INFO, 2) => {
            let fname = args[0]
                .as_atom()
                .ok_or_else(|| RuntimeError::Badarg("put_info name".to_string()))?
                .to_string();
            let cargs = expect_list(&args[1], "put_info args")?;
            ctx.call_stack.push(CallInfo {
                module: cur_module.to_string(),
                name: fname,
                args: cargs,
            });
            Ok(Value::atom("ok"))
        }
        (None, instrument::PRE, 2) => {
            let delayed = args.pop().unwrap();
            let cond = args.pop().unwrap();
            let (ok, reason) = eval_condition(ctx, cond, Vec::new())?;
            if ok {
                apply0(ctx, delayed)
            } else {
                Err(violation(ctx, cur_module, Kind::Precondition, reason, Detail::None).into())
            }
        }
        (None, instrument::POST, 2) => {
            let delayed = args.pop().unwrap();
            let cond = args.pop().unwrap();
            let r = apply0(ctx, delayed)?;
            let (ok, reason) = eval_condition(ctx, cond, vec![r.clone()])?;
            if ok {
                Ok(r)
            } else {
                Err(violation(ctx, cur_module, Kind::Postcondition, reason, Detail::None).into())
            }
        }
        (None, instrument::SPEC_PRE, 3) => {
            let delayed = args.pop().unwrap();
            let argvals = expect_list(&args.pop().unwrap(), "spec args")?;
            let types = expect_list(&args.pop().unwrap(), "spec types")?;
            for (t, v) in types.iter().zip(&argvals) {
                let ty = decode_typespec(t)?;
                if !type_check(v, &ty) {
                    return Err(violation(
                        ctx,
                        cur_module,
                        Kind::SpecPre,
                        None,
                        Detail::Spec {
                            value: v.clone(),
                            ty,
                        },
                    )
                    .into());
                }
            }
            apply0(ctx, delayed)
        }
        (None, instrument::SPEC_POST, 2) => {
            let delayed = args.pop().unwrap();
            let ty = decode_typespec(&args.pop().unwrap())?;
            let r = apply0(ctx, delayed)?;
            if type_check(&r, &ty) {
                Ok(r)
            } else {
                Err(violation(
                    ctx,
                    cur_module,
                    Kind::SpecPost,
                    None,
                    Detail::Spec { value: r, ty },
                )
                .into())
            }
        }
        (None, instrument::DECREASE, 3) | (None, instrument::SDECREASE, 3) => {
            let strict = name == instrument::SDECREASE;
            let delayed = args.pop().unwrap();
            let next = expect_list(&args.pop().unwrap(), "decrease next")?;
            let prev = expect_list(&args.pop().unwrap(), "decrease prev")?;
            decrease_check(ctx, cur_module, prev, next, strict, delayed)
        }
        (None, instrument::PURE, 1) => {
            let delayed = args.pop().unwrap();
            let seen = ctx.impure_events.len();
            ctx.purity_depth += 1;
            let r = apply0(ctx, delayed);
            ctx.purity_depth -= 1;
            let r = r?;
            if let Some(bif) = ctx.impure_events.get(seen).cloned() {
                return Err(violation(
                    ctx,
                    cur_module,
                    Kind::Purity,
                    None,
                    Detail::Purity { bif },
                )
                .into());
            }
            Ok(r)
        }
        (None, instrument::EXPECTED_TIME, 2) => {
            let delayed = args.pop().unwrap();
            let budget = eval_time_budget(ctx, args.pop().unwrap())?;
            let start = Instant::now();
            let r = apply0(ctx, delayed)?;
            let real_ms = start.elapsed().as_secs_f64() * 1000.0;
            if real_ms > (budget + ctx.rt.config.slack_ms as i64) as f64 {
                Err(violation(
                    ctx,
                    cur_module,
                    Kind::ExpectedTime,
                    None,
                    Detail::Time {
                        real_ms,
                        expected_ms: budget,
                    },
                )
                .into())
            } else {
                Ok(r)
            }
        }
        (None, instrument::TIMEOUT, 2) => {
            let delayed = args.pop().unwrap();
            let budget = eval_time_budget(ctx, args.pop().unwrap())?;
            timeout_check(ctx, cur_module, budget, delayed)
        }
        (None, instrument::INVARIANT, 2) => {
            let delayed = args.pop().unwrap();
            let invfun = args.pop().unwrap();
            let invfun = resolve_contract_fun(ctx, cur_module, invfun)?;
            let r = apply0(ctx, delayed)?;
            let state = extract_state(&r);
            let (ok, reason) = eval_condition(ctx, invfun, vec![state])?;
            if ok {
                Ok(r)
            } else {
                Err(violation(
                    ctx,
                    cur_module,
                    Kind::Invariant,
                    reason,
                    Detail::Invariant { result: r },
                )
                .into())
            }
        }

        // ---- pure builtins ----
        (None, "length", 1) | (Some("erlang"), "length", 1) => match &args[0] {
            Value::List(xs) => Ok(Value::Int(xs.len() as i64)),
            Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
            other => Err(RuntimeError::Badarg(format!("length({other})")).into()),
        },
        (None, "integer_to_list", 1) | (Some("erlang"), "integer_to_list", 1) => {
            match &args[0] {
                Value::Int(i) => Ok(Value::Str(i.to_string())),
                other => {
                    Err(RuntimeError::Badarg(format!("integer_to_list({other})")).into())
                }
            }
        }
        (None, "is_integer", 1) | (Some("erlang"), "is_integer", 1) => {
            Ok(Value::Bool(matches!(args[0], Value::Int(_))))
        }
        (None, "is_boolean", 1) | (Some("erlang"), "is_boolean", 1) => {
            Ok(Value::Bool(matches!(args[0], Value::Bool(_))))
        }
        (None, "is_atom", 1) | (Some("erlang"), "is_atom", 1) => Ok(Value::Bool(matches!(
            args[0],
            Value::Atom(_) | Value::Bool(_)
        ))),
        (None, "is_list", 1) | (Some("erlang"), "is_list", 1) => {
            Ok(Value::Bool(matches!(args[0], Value::List(_))))
        }
        (None, "abs", 1) | (Some("erlang"), "abs", 1) => match &args[0] {
            Value::Int(i) => Ok(Value::Int(i.abs())),
            Value::Float(x) => Ok(Value::Float(x.abs())),
            _ => Err(RuntimeError::Badarith.into()),
        },
        (Some("erlang"), "+", 2) => apply_binop(BinOp::Add, args.remove(0), args.remove(0))
            .map_err(Into::into),
        (Some("erlang"), "-", 2) => apply_binop(BinOp::Sub, args.remove(0), args.remove(0))
            .map_err(Into::into),
        (Some("erlang"), "*", 2) => apply_binop(BinOp::Mul, args.remove(0), args.remove(0))
            .map_err(Into::into),
        (Some("erlang"), "/", 2) => apply_binop(BinOp::Div, args.remove(0), args.remove(0))
            .map_err(Into::into),

        (Some("lists"), "nth", 2) => {
            let l = expect_list(&args[1], "lists:nth")?;
            match args[0] {
                Value::Int(n) if n >= 1 && (n as usize) <= l.len() => {
                    Ok(l[n as usize - 1].clone())
                }
                _ => Err(RuntimeError::Badarg(format!(
                    "lists:nth({},{})",
                    args[0], args[1]
                ))
                .into()),
            }
        }
        (Some("lists"), "all", 2) => {
            let l = expect_list(&args[1], "lists:all")?;
            let p = args.remove(0);
            for x in l {
                match apply_value(ctx, p.clone(), vec![x])? {
                    Value::Bool(true) => {}
                    Value::Bool(false) => return Ok(Value::Bool(false)),
                    other => {
                        return Err(RuntimeError::Badarg(format!(
                            "lists:all predicate returned {other}"
                        ))
                        .into())
                    }
                }
            }
            Ok(Value::Bool(true))
        }
        (Some("lists"), "map", 2) => {
            let l = expect_list(&args[1], "lists:map")?;
            let f = args.remove(0);
            let mut out = Vec::with_capacity(l.len());
            for x in l {
                out.push(apply_value(ctx, f.clone(), vec![x])?);
            }
            Ok(Value::List(out))
        }
        (Some("lists"), "foldl", 3) => {
            let l = expect_list(&args[2], "lists:foldl")?;
            let f = args.remove(0);
            let mut acc = args.remove(0);
            for x in l {
                acc = apply_value(ctx, f.clone(), vec![x, acc])?;
            }
            Ok(acc)
        }
        (Some("lists"), "sum", 1) => {
            let l = expect_list(&args[0], "lists:sum")?;
            let mut acc = Value::Int(0);
            for x in l {
                acc = apply_binop(BinOp::Add, acc, x)?;
            }
            Ok(acc)
        }
        (Some("lists"), "reverse", 1) => {
            let mut l = expect_list(&args[0], "lists:reverse")?;
            l.reverse();
            Ok(Value::List(l))
        }
        (Some("lists"), "seq", 2) => match (&args[0], &args[1]) {
            (Value::Int(a), Value::Int(b)) => {
                Ok(Value::List((*a..=*b).map(Value::Int).collect()))
            }
            _ => Err(RuntimeError::Badarg("lists:seq".to_string()).into()),
        },
        (Some("lists"), "member", 2) => {
            let l = expect_list(&args[1], "lists:member")?;
            Ok(Value::Bool(l.iter().any(|x| values_arith_equal(x, &args[0]))))
        }

        // ---- impure builtins ----
        // put/get are auto-imported, so both qualified and bare forms work.
        (Some("erlang") | None, "put", 2) => {
            record_impure(ctx, "erlang:put/2");
            let v = args.pop().unwrap();
            let k = args.pop().unwrap();
            let old = match ctx.pdict.iter_mut().find(|(key, _)| key == &k) {
                Some(slot) => std::mem::replace(&mut slot.1, v),
                None => {
                    ctx.pdict.push((k, v));
                    Value::atom("undefined")
                }
            };
            Ok(old)
        }
        (Some("erlang") | None, "get", 1) => {
            record_impure(ctx, "erlang:get/1");
            Ok(ctx
                .pdict
                .iter()
                .find(|(k, _)| k == &args[0])
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| Value::atom("undefined")))
        }
        (Some("io"), "format", 1) => {
            record_impure(ctx, "io:format/1");
            io_format(ctx, &args[0], &[])
        }
        (Some("io"), "format", 2) => {
            record_impure(ctx, "io:format/2");
            let fmtargs = expect_list(&args[1], "io:format")?;
            io_format(ctx, &args[0], &fmtargs)
        }
        (Some("timer"), "sleep", 1) => {
            record_impure(ctx, "timer:sleep/1");
            let ms = match args[0] {
                Value::Int(i) if i >= 0 => i as u64,
                _ => return Err(RuntimeError::Badarg("timer:sleep".to_string()).into()),
            };
            abortable_sleep(ctx, ms)?;
            Ok(Value::atom("ok"))
        }
        (None, "spawn", 1) | (Some("erlang"), "spawn", 1) => {
            record_impure(ctx, "erlang:spawn/1");
            forbid_in_cpre(ctx, "spawn/1")?;
            spawn_process(ctx, args.pop().unwrap())
        }
        (None, "self", 0) | (Some("erlang"), "self", 0) => {
            record_impure(ctx, "erlang:self/0");
            Ok(Value::Pid(ctx.pid.clone()))
        }
        (None, "send", 2) | (Some("erlang"), "send", 2) => {
            record_impure(ctx, "erlang:send/2");
            forbid_in_cpre(ctx, "send/2")?;
            let msg = args.pop().unwrap();
            match &args[0] {
                Value::Pid(Pid {
                    port: PidPort::Proc(tx),
                    ..
                }) => {
                    let _ = tx.send(msg.clone());
                    Ok(msg)
                }
                other => Err(RuntimeError::Badarg(format!("send to {other}")).into()),
            }
        }
        (None, "server_start", 1) => {
            record_impure(ctx, "gen_server_cpre:start/2");
            forbid_in_cpre(ctx, "server_start/1")?;
            let module = args.pop().unwrap();
            let policy = Value::atom(&ctx.rt.config.default_policy.clone());
            crate::server::server_start(ctx, module, policy)
        }
        (None, "server_start", 2) => {
            record_impure(ctx, "gen_server_cpre:start/2");
            forbid_in_cpre(ctx, "server_start/2")?;
            let policy = args.pop().unwrap();
            let module = args.pop().unwrap();
            crate::server::server_start(ctx, module, policy)
        }
        (None, "server_call", 2) | (Some("gen_server"), "call", 2) => {
            record_impure(ctx, "gen_server_cpre:call/2");
            forbid_in_cpre(ctx, "server_call/2")?;
            let req = args.pop().unwrap();
            let server = args.pop().unwrap();
            crate::server::server_call(ctx, server, req)
        }
        (None, "server_cast", 2) | (Some("gen_server"), "cast", 2) => {
            record_impure(ctx, "gen_server_cpre:cast/2");
            forbid_in_cpre(ctx, "server_cast/2")?;
            let req = args.pop().unwrap();
            let server = args.pop().unwrap();
            crate::server::server_cast(ctx, server, req)
        }
        (Some("edbc"), "log", 1) => {
            record_impure(ctx, "edbc:log/1");
            let line = match &args[0] {
                Value::Str(s) => s.clone(),
                other => other.to_string(),
            };
            ctx.rt.log_contract(line);
            Ok(Value::atom("ok"))
        }

        _ => Err(RuntimeError::Undef {
            name: match remote {
                Some(m) => format!("{m}:{name}"),
                None => name.to_string(),
            },
            arity,
        }
        .into()),
    }
}

/// Builds a violation using the innermost recorded call.
fn violation(
    ctx: &ProcCtx,
    module: &str,
    kind: Kind,
    user_reason: Option<String>,
    detail: Detail,
) -> Violation {
    Violation {
        kind,
        call: ctx.current_call(module),
        user_reason,
        detail,
    }
}

/// Evaluates a condition-checker fun. Contract-exempt from purity
/// tracing; a runtime error inside the condition counts as a failed
/// condition (carrying the error text as the reason).
fn eval_condition(
    ctx: &mut ProcCtx,
    cond: Value,
    args: Vec<Value>,
) -> EResult<(bool, Option<String>)> {
    ctx.in_contract += 1;
    let r = apply_value(ctx, cond, args);
    ctx.in_contract -= 1;
    match r {
        Ok(Value::Bool(b)) => Ok((b, None)),
        Ok(Value::Tuple(items)) if items.len() == 2 => match (&items[0], &items[1]) {
            (Value::Bool(b), Value::Str(s)) => Ok((*b, Some(s.clone()))),
            _ => Err(RuntimeError::BadContractReturn(format!(
                "{}",
                Value::Tuple(items)
            ))
            .into()),
        },
        Ok(other) => Err(RuntimeError::BadContractReturn(other.to_string()).into()),
        Err(EvalError::Error(e)) => Ok((false, Some(e.to_string()))),
        Err(v @ EvalError::Violation(_)) => Err(v),
    }
}

/// Resolves `fun name/1`-style contract funs against loaded modules so
/// they can be applied; closures pass through.
fn resolve_contract_fun(_ctx: &ProcCtx, module: &str, f: Value) -> EResult<Value> {
    match f {
        Value::FunRef {
            module: None, name, arity,
        } => Ok(Value::FunRef {
            module: Some(module.to_string()),
            name,
            arity,
        }),
        other => Ok(other),
    }
}

/// State carried by a behaviour callback result.
fn extract_state(r: &Value) -> Value {
    match r {
        Value::Tuple(items) if items.len() == 3 && items[0].as_atom() == Some("reply") => {
            items[2].clone()
        }
        Value::Tuple(items) if items.len() == 2 && items[0].as_atom() == Some("noreply") => {
            items[1].clone()
        }
        other => other.clone(),
    }
}

fn measure(v: &Value) -> Result<i64, RuntimeError> {
    match v {
        Value::Int(i) => Ok(*i),
        Value::List(xs) => Ok(xs.len() as i64),
        Value::Str(s) => Ok(s.chars().count() as i64),
        other => Err(RuntimeError::NotMeasurable(other.to_string())),
    }
}

fn decrease_check(
    ctx: &mut ProcCtx,
    module: &str,
    prev: Vec<Value>,
    next: Vec<Value>,
    strict: bool,
    delayed: Value,
) -> EResult<Value> {
    let mut ok = true;
    for (p, n) in prev.iter().zip(&next) {
        let (mp, mn) = (measure(p)?, measure(n)?);
        ok &= if strict { mn < mp } else { mn <= mp };
    }
    if ok {
        apply0(ctx, delayed)
    } else {
        let fname = ctx
            .call_stack
            .last()
            .map(|c| c.name.clone())
            .unwrap_or_else(|| "<entry>".to_string());
        Err(violation(
            ctx,
            module,
            Kind::Decrease,
            None,
            Detail::Decrease { fname, prev, next },
        )
        .into())
    }
}

fn eval_time_budget(ctx: &mut ProcCtx, timefun: Value) -> EResult<i64> {
    ctx.in_contract += 1;
    let r = apply0(ctx, timefun);
    ctx.in_contract -= 1;
    match r? {
        Value::Int(ms) if ms >= 0 => Ok(ms),
        other => Err(RuntimeError::BadContractReturn(format!(
            "execution-time contract returned {other}"
        ))
        .into()),
    }
}

/// Runs the delayed call on a separate strand; aborts it at budget
/// expiry and raises the timeout violation immediately.
fn timeout_check(ctx: &mut ProcCtx, module: &str, budget: i64, delayed: Value) -> EResult<Value> {
    let (tx, rx) = bounded(1);
    let child_abort = Arc::new(AtomicBool::new(false));
    let (_dummy_tx, dummy_rx) = unbounded();
    let mut child = ProcCtx {
        rt: ctx.rt.clone(),
        pid: ctx.pid.clone(),
        mailbox: dummy_rx,
        call_stack: ctx.call_stack.clone(),
        pdict: ctx.pdict.clone(),
        purity_depth: 0,
        impure_events: Vec::new(),
        in_contract: 0,
        forbid_effects: ctx.forbid_effects,
        abort: child_abort.clone(),
    };
    std::thread::spawn(move || {
        let r = apply0(&mut child, delayed);
        let _ = tx.send(r);
    });
    match rx.recv_timeout(Duration::from_millis(budget as u64)) {
        Ok(r) => r,
        Err(_) => {
            child_abort.store(true, AtomicOrdering::Relaxed);
            Err(violation(
                ctx,
                module,
                Kind::Timeout,
                None,
                Detail::TimeoutHit {
                    expected_ms: budget,
                },
            )
            .into())
        }
    }
}

/// Sleeps in small chunks so a ?TIMEOUT abort is observed promptly.
fn abortable_sleep(ctx: &ProcCtx, ms: u64) -> Result<(), RuntimeError> {
    let deadline = Instant::now() + Duration::from_millis(ms);
    loop {
        ctx.check_abort()?;
        let now = Instant::now();
        if now >= deadline {
            return Ok(());
        }
        let left = deadline - now;
        std::thread::sleep(left.min(Duration::from_millis(5)));
    }
}

fn spawn_process(ctx: &mut ProcCtx, f: Value) -> EResult<Value> {
    let (tx, rx) = unbounded();
    let pid = Pid {
        id: ctx.rt.fresh_pid_id(),
        port: PidPort::Proc(tx),
    };
    let rt = ctx.rt.clone();
    let child_pid = pid.clone();
    let handle = std::thread::spawn(move || {
        let mut cctx = ProcCtx::for_pid(rt.clone(), child_pid, rx);
        match apply0(&mut cctx, f) {
            Ok(_) | Err(EvalError::Error(RuntimeError::Aborted)) => {}
            Err(EvalError::Violation(v)) => rt.record_violation(*v),
            Err(EvalError::Error(_)) => {
                // An unhandled error terminates only this process.
            }
        }
    });
    ctx.rt.register_thread(handle);
    Ok(Value::Pid(pid))
}

/// Minimal io:format: `~n` newline, `~p`/`~w` term, `~s` string.
fn io_format(ctx: &mut ProcCtx, fmt: &Value, args: &[Value]) -> EResult<Value> {
    let fmt = match fmt {
        Value::Str(s) => s.clone(),
        other => return Err(RuntimeError::Badarg(format!("io:format({other})")).into()),
    };
    let mut out = String::new();
    let mut next = args.iter();
    let mut chars = fmt.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '~' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('p') | Some('w') => match next.next() {
                Some(v) => out.push_str(&v.to_string()),
                None => return Err(RuntimeError::Badarg("io:format: missing argument".to_string()).into()),
            },
            Some('s') => match next.next() {
                Some(Value::Str(s)) => out.push_str(s),
                Some(v) => out.push_str(&v.to_string()),
                None => return Err(RuntimeError::Badarg("io:format: missing argument".to_string()).into()),
            },
            Some('~') => out.push('~'),
            other => {
                return Err(RuntimeError::Badarg(format!(
                    "io:format: unsupported directive ~{}",
                    other.map(String::from).unwrap_or_default()
                ))
                .into())
            }
        }
    }
    ctx.rt.log_io(out);
    Ok(Value::atom("ok"))
}

fn decode_typespec(v: &Value) -> Result<TypeSpec, RuntimeError> {
    let bad = || RuntimeError::Badarg(format!("bad type term {v}"));
    match v {
        Value::Atom(a) => match a.as_str() {
            "any" => Ok(TypeSpec::AnyT),
            "integer" => Ok(TypeSpec::IntegerT),
            "non_neg_integer" => Ok(TypeSpec::NonNegIntegerT),
            "float" => Ok(TypeSpec::FloatT),
            "number" => Ok(TypeSpec::NumberT),
            "boolean" => Ok(TypeSpec::BooleanT),
            "atom" => Ok(TypeSpec::AtomT),
            "string" => Ok(TypeSpec::StringT),
            _ => Err(bad()),
        },
        Value::Tuple(items) if items.len() == 2 => match (items[0].as_atom(), &items[1]) {
            (Some("atom"), a) => Ok(TypeSpec::LiteralAtomT(
                a.as_atom().ok_or_else(bad)?.to_string(),
            )),
            (Some("list"), t) => Ok(TypeSpec::ListT(Box::new(decode_typespec(t)?))),
            (Some("tuple"), Value::List(ts)) => Ok(TypeSpec::TupleT(
                ts.iter().map(decode_typespec).collect::<Result<_, _>>()?,
            )),
            (Some("union"), Value::List(ts)) => Ok(TypeSpec::UnionT(
                ts.iter().map(decode_typespec).collect::<Result<_, _>>()?,
            )),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{Config, Runtime};

    fn run(src: &str, entry: &str, args: Vec<Value>) -> EResult<Value> {
        let rt = Runtime::new(Config::default());
        let m = rt.load_source(src, true).unwrap();
        let r = rt.run_entry(&m, entry, args);
        rt.join_threads();
        r
    }

    fn run_ok(src: &str, entry: &str, args: Vec<Value>) -> Value {
        run(src, entry, args).unwrap()
    }

    #[test]
    fn arithmetic_precedence() {
        let v = run_ok("-module(m).\nf() -> 1 + 2 * 3.\n", "f", vec![]);
        assert_eq!(v, Value::Int(7));
    }

    #[test]
    fn division_yields_float() {
        let v = run_ok("-module(m).\nf() -> 7 / 2.\n", "f", vec![]);
        assert_eq!(v, Value::Float(3.5));
    }

    #[test]
    fn rem_is_integer_only() {
        let v = run_ok("-module(m).\nf() -> 7 rem 2.\n", "f", vec![]);
        assert_eq!(v, Value::Int(1));
        let e = run("-module(m).\nf() -> 7 rem 0.\n", "f", vec![]);
        assert!(matches!(e, Err(EvalError::Error(RuntimeError::Badarith))));
    }

    #[test]
    fn repeated_pattern_variable_requires_equality() {
        let src = "-module(m).\nf(X, X) -> same;\nf(_, _) -> diff.\n";
        assert_eq!(run_ok(src, "f", vec![Value::Int(3), Value::Int(3)]), Value::atom("same"));
        assert_eq!(run_ok(src, "f", vec![Value::Int(3), Value::Int(4)]), Value::atom("diff"));
    }

    #[test]
    fn case_exports_bindings() {
        let src = "-module(m).\nf(T) -> case T of {pair, A, B} -> ok end, A + B.\n";
        let arg = Value::Tuple(vec![Value::atom("pair"), Value::Int(2), Value::Int(5)]);
        assert_eq!(run_ok(src, "f", vec![arg]), Value::Int(7));
    }

    #[test]
    fn closures_capture_environment() {
        let src = "-module(m).\nf(N) -> G = fun(X) -> X + N end, G(10).\n";
        assert_eq!(run_ok(src, "f", vec![Value::Int(5)]), Value::Int(15));
    }

    #[test]
    fn list_comprehension_with_filter() {
        let src = "-module(m).\nf(L) -> [X * X || X <- L, X rem 2 == 0].\n";
        let arg = Value::List((1..=6).map(Value::Int).collect());
        let want = Value::List(vec![Value::Int(4), Value::Int(16), Value::Int(36)]);
        assert_eq!(run_ok(src, "f", vec![arg]), want);
    }

    #[test]
    fn guard_error_falls_through_to_next_clause() {
        let src = "-module(m).\nf(X) when (1 rem X) == 0 -> a;\nf(_) -> b.\n";
        assert_eq!(run_ok(src, "f", vec![Value::Int(1)]), Value::atom("a"));
        assert_eq!(run_ok(src, "f", vec![Value::Int(0)]), Value::atom("b"));
    }

    #[test]
    fn badmatch_and_function_clause() {
        let e = run("-module(m).\nf() -> 1 = 2.\n", "f", vec![]);
        assert!(matches!(e, Err(EvalError::Error(RuntimeError::Badmatch(_)))));
        let e = run("-module(m).\nf(0) -> zero.\n", "f", vec![Value::Int(1)]);
        assert!(matches!(e, Err(EvalError::Error(RuntimeError::FunctionClause { .. }))));
    }

    #[test]
    fn list_builtins() {
        let src = "-module(m).\n\
            f() -> {lists:sum(lists:seq(1, 4)),\n\
                    lists:reverse([a, b, c]),\n\
                    lists:nth(2, [x, y, z]),\n\
                    lists:member(q, [a, q]),\n\
                    lists:map(fun(X) -> X + 1 end, [1, 2]),\n\
                    lists:foldl(fun(X, Acc) -> Acc - X end, 10, [1, 2, 3]),\n\
                    lists:all(fun(X) -> X > 0 end, [1, 2]),\n\
                    length([a, b])}.\n";
        let v = run_ok(src, "f", vec![]);
        assert_eq!(
            format!("{v}"),
            "{10,[c,b,a],y,true,[2,3],4,true,2}"
        );
    }

    #[test]
    fn process_dictionary_roundtrip() {
        let src = "-module(m).\nf() -> put(k, 41), erlang:put(k, get(k) + 1), erlang:get(k).\n";
        assert_eq!(run_ok(src, "f", vec![]), Value::Int(42));
    }

    #[test]
    fn numeric_equality_crosses_int_float() {
        let src = "-module(m).\nf() -> {1 == 1.0, 1 < 1.5, a < {}}.\n";
        assert_eq!(format!("{}", run_ok(src, "f", vec![])), "{true,true,true}");
    }

    #[test]
    fn term_order_ranks() {
        use std::cmp::Ordering;
        let a = Value::atom("zzz");
        let t = Value::Tuple(vec![]);
        let l = Value::List(vec![]);
        assert_eq!(compare_values(&Value::Int(999), &a).unwrap(), Ordering::Less);
        assert_eq!(compare_values(&a, &t).unwrap(), Ordering::Less);
        assert_eq!(compare_values(&t, &l).unwrap(), Ordering::Less);
    }

    #[test]
    fn io_format_placeholders() {
        let rt = Runtime::new(Config::default());
        let m = rt
            .load_source("-module(m).\nf() -> io:format(\"~p and ~s~n\", [[1, 2], \"hi\"]).\n", true)
            .unwrap();
        rt.run_entry(&m, "f", vec![]).unwrap();
        assert_eq!(rt.io_log(), vec!["[1,2] and hi\n".to_string()]);
    }

    #[test]
    fn spawn_send_self_roundtrip() {
        // Child sends its observation back through the shared io log.
        let src = "-module(m).\n\
            f() -> spawn(fun() -> io:format(\"child~n\") end), ok.\n";
        let rt = Runtime::new(Config::default());
        let m = rt.load_source(src, true).unwrap();
        rt.run_entry(&m, "f", vec![]).unwrap();
        rt.join_threads();
        assert_eq!(rt.io_log(), vec!["child\n".to_string()]);
    }
}
