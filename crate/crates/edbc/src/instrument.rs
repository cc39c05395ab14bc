//! Source-to-source instrumentation: each contracted function becomes
//! an entry point that records call info, a stack of pre/post wrapper
//! functions, the renamed original, and (for decrease contracts) a
//! checker the rewritten recursive calls go through. The resulting
//! call chain is entry -> wrappers -> original -> checker -> entry.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::ast::{
    CallTarget, CaseClause, Clause, Contract, Expr, FunDef, IfClause, ModuleAst, Pattern,
};
use crate::typespec::TypeSpec;
use crate::value::Value;

/// Runtime entry points the generated code calls into.
pub const PUT_INFO: &str = "edbc_put_info";
pub const PRE: &str = "edbc_pre";
pub const POST: &str = "edbc_post";
pub const DECREASE: &str = "edbc_decrease_check";
pub const SDECREASE: &str = "edbc_sdecrease_check";
pub const SPEC_PRE: &str = "edbc_spec_pre";
pub const SPEC_POST: &str = "edbc_spec_post";
pub const EXPECTED_TIME: &str = "edbc_expected_time";
pub const TIMEOUT: &str = "edbc_timeout";
pub const PURE: &str = "edbc_pure";
pub const INVARIANT: &str = "edbc_invariant";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InstrumentError {
    #[error("?PURE is not compatible with execution-time contracts on {fun}/{arity}")]
    PureTimeConflict { fun: String, arity: usize },
    #[error("multiple decrease contracts on {fun}/{arity}")]
    MultipleDecreases { fun: String, arity: usize },
    #[error("contract function {fun}/0 not found or not usable")]
    BadContractFun { fun: String },
}

/// Fresh helper names: `<base>__edbc<k>`, deterministic per module.
pub struct FreshNamer {
    counters: HashMap<String, usize>,
    taken: HashSet<(String, usize)>,
}

impl FreshNamer {
    pub fn for_module(m: &ModuleAst) -> Self {
        let taken = m
            .fundefs
            .iter()
            .map(|f| (f.name.clone(), f.arity))
            .collect();
        FreshNamer {
            counters: HashMap::new(),
            taken,
        }
    }

    pub fn get_free_name(&mut self, base: &str, arity: usize) -> String {
        // Helpers of helpers stay in the original function's sequence:
        // strip a previously added `__edbc<k>` suffix before numbering.
        let base = match base.rfind("__edbc") {
            Some(i) if base[i + 6..].chars().all(|c| c.is_ascii_digit())
                && !base[i + 6..].is_empty() =>
            {
                &base[..i]
            }
            _ => base,
        };
        loop {
            let k = self.counters.entry(base.to_string()).or_insert(0);
            let candidate = format!("{base}__edbc{k}");
            *k += 1;
            if !self.taken.contains(&(candidate.clone(), arity)) {
                self.taken.insert((candidate.clone(), arity));
                return candidate;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedModule {
    pub module: ModuleAst,
    /// Original (name, arity) -> entry-point name. Entry points keep
    /// the original name, so this also doubles as the export list.
    pub entry_points: BTreeMap<(String, usize), String>,
}

/// A contract after lowering: specs become a pre/post pair, purity and
/// time contracts become pre-forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Lowered {
    Decrease { params: Vec<usize>, strict: bool },
    PreKind(PreForm),
    PostKind(PostForm),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreForm {
    Plain { cond: Expr },
    Spec { argtypes: Vec<TypeSpec> },
    Pure,
    ExpectedTime { timefun: Expr },
    Timeout { timefun: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostForm {
    Plain { cond: Expr },
    Spec { rettype: TypeSpec },
    Invariant { invfun: Expr },
}

/// Returns the function's contracts in source order with the lowerings
/// applied. Rejects ?PURE combined with an execution-time contract.
pub fn read_contracts(f: &FunDef) -> Result<Vec<Lowered>, InstrumentError> {
    let has_pure = f.contracts.iter().any(|c| matches!(c, Contract::Pure));
    let has_time = f.contracts.iter().any(|c| {
        matches!(c, Contract::ExpectedTime { .. } | Contract::Timeout { .. })
    });
    if has_pure && has_time {
        return Err(InstrumentError::PureTimeConflict {
            fun: f.name.clone(),
            arity: f.arity,
        });
    }
    let mut out = Vec::new();
    let mut decreases = 0;
    for c in &f.contracts {
        match c {
            Contract::Pre { cond } => out.push(Lowered::PreKind(PreForm::Plain {
                cond: cond.clone(),
            })),
            Contract::Post { cond } => out.push(Lowered::PostKind(PostForm::Plain {
                cond: cond.clone(),
            })),
            Contract::Decreases { params, strict } => {
                decreases += 1;
                if decreases > 1 {
                    return Err(InstrumentError::MultipleDecreases {
                        fun: f.name.clone(),
                        arity: f.arity,
                    });
                }
                out.push(Lowered::Decrease {
                    params: params.clone(),
                    strict: *strict,
                });
            }
            Contract::ExpectedTime { timefun } => {
                out.push(Lowered::PreKind(PreForm::ExpectedTime {
                    timefun: timefun.clone(),
                }))
            }
            Contract::Timeout { timefun } => out.push(Lowered::PreKind(PreForm::Timeout {
                timefun: timefun.clone(),
            })),
            Contract::Pure => out.push(Lowered::PreKind(PreForm::Pure)),
            Contract::Invariant { invfun } => out.push(Lowered::PostKind(PostForm::Invariant {
                invfun: invfun.clone(),
            })),
            Contract::Spec { argtypes, rettype } => {
                out.push(Lowered::PreKind(PreForm::Spec {
                    argtypes: argtypes.clone(),
                }));
                out.push(Lowered::PostKind(PostForm::Spec {
                    rettype: rettype.clone(),
                }));
            }
        }
    }
    Ok(out)
}

fn fresh_vars(arity: usize) -> Vec<String> {
    (1..=arity).map(|i| format!("FV{i}")).collect()
}

fn var_patterns(vars: &[String]) -> Vec<Pattern> {
    vars.iter().map(|v| Pattern::Var(v.clone())).collect()
}

fn var_exprs(vars: &[String]) -> Vec<Expr> {
    vars.iter().map(|v| Expr::Var(v.clone())).collect()
}

fn local_call(name: &str, args: Vec<Expr>) -> Expr {
    Expr::Call {
        target: CallTarget::Local(name.to_string()),
        args,
    }
}

fn thunk(body: Vec<Expr>) -> Expr {
    Expr::Fun {
        params: Vec::new(),
        body,
    }
}

fn list_expr(elems: Vec<Expr>) -> Expr {
    Expr::ListExpr { elems, tail: None }
}

/// Entry-point synthesis: keeps the original name; records call info
/// and tail-calls the renamed original.
pub fn inst_put_info(f: FunDef, namer: &mut FreshNamer) -> (FunDef, FunDef) {
    let fresh = namer.get_free_name(&f.name, f.arity);
    let vars = fresh_vars(f.arity);
    let entry = FunDef {
        name: f.name.clone(),
        arity: f.arity,
        clauses: vec![Clause {
            patterns: var_patterns(&vars),
            guard: None,
            body: vec![
                local_call(
                    PUT_INFO,
                    vec![
                        Expr::Lit(Value::Atom(f.name.clone())),
                        list_expr(var_exprs(&vars)),
                    ],
                ),
                local_call(&fresh, var_exprs(&vars)),
            ],
        }],
        contracts: Vec::new(),
    };
    let renamed = FunDef {
        name: fresh,
        contracts: Vec::new(),
        ..f
    };
    (renamed, entry)
}

/// Decrease-contract synthesis: builds the checker and rewrites every
/// recursive call in the original's clauses to go through it.
pub fn inst_decr(
    params: &[usize],
    strict: bool,
    f: FunDef,
    original_entry_name: &str,
    namer: &mut FreshNamer,
) -> (FunDef, FunDef) {
    let arity = f.arity;
    let checker_name = namer.get_free_name(original_entry_name, 2);
    let vars = fresh_vars(arity);

    // Checker head destructures the next-call argument list so the
    // delayed call can re-enter the module entry point.
    let mut next_pat = Pattern::NilPat;
    for v in vars.iter().rev() {
        next_pat = Pattern::ListPat {
            head: Box::new(Pattern::Var(v.clone())),
            tail: Box::new(next_pat),
        };
    }
    let restricted: Vec<Expr> = params
        .iter()
        .map(|p| Expr::Var(vars[p - 1].clone()))
        .collect();
    let builtin = if strict { SDECREASE } else { DECREASE };
    let checker = FunDef {
        name: checker_name.clone(),
        arity: 2,
        clauses: vec![Clause {
            patterns: vec![Pattern::Var("FVP".to_string()), next_pat],
            guard: None,
            body: vec![local_call(
                builtin,
                vec![
                    Expr::Var("FVP".to_string()),
                    list_expr(restricted),
                    thunk(vec![local_call(original_entry_name, var_exprs(&vars))]),
                ],
            )],
        }],
        contracts: Vec::new(),
    };

    let clauses = f
        .clauses
        .into_iter()
        .map(|mut cl| {
            let prev: Vec<Expr> = params
                .iter()
                .map(|p| pattern_to_expr(&cl.patterns[p - 1]))
                .collect();
            let replace = |args: Vec<Expr>| {
                local_call(
                    &checker_name,
                    vec![list_expr(prev.clone()), list_expr(args)],
                )
            };
            cl.body = cl
                .body
                .into_iter()
                .map(|e| replace_recursive(e, original_entry_name, arity, &replace))
                .collect();
            cl
        })
        .collect();

    (FunDef { clauses, ..f }, checker)
}

/// Pre-kind wrapper: takes over the working function's current name
/// and pushes the original down under a fresh one.
pub fn inst_pre(
    form: &PreForm,
    f: FunDef,
    module: &ModuleAst,
    namer: &mut FreshNamer,
) -> Result<(FunDef, FunDef), InstrumentError> {
    let arity = f.arity;
    let wrapper_name = f.name.clone();
    let fresh = namer.get_free_name(&wrapper_name, arity);
    let vars = fresh_vars(arity);
    let delayed = thunk(vec![local_call(&fresh, var_exprs(&vars))]);

    let body_call = match form {
        PreForm::Plain { cond } => {
            let cond_body = contract_fun_body(cond, module)?;
            let substituted: Vec<Expr> = cond_body
                .into_iter()
                .map(|e| subst_refs(e, &vars, None))
                .collect();
            local_call(PRE, vec![thunk(substituted), delayed])
        }
        PreForm::Spec { argtypes } => {
            let types = list_expr(argtypes.iter().map(encode_typespec).collect());
            local_call(SPEC_PRE, vec![types, list_expr(var_exprs(&vars)), delayed])
        }
        PreForm::Pure => local_call(PURE, vec![delayed]),
        PreForm::ExpectedTime { timefun } => {
            let body = contract_fun_body(timefun, module)?;
            let substituted: Vec<Expr> =
                body.into_iter().map(|e| subst_refs(e, &vars, None)).collect();
            local_call(EXPECTED_TIME, vec![thunk(substituted), delayed])
        }
        PreForm::Timeout { timefun } => {
            let body = contract_fun_body(timefun, module)?;
            let substituted: Vec<Expr> =
                body.into_iter().map(|e| subst_refs(e, &vars, None)).collect();
            local_call(TIMEOUT, vec![thunk(substituted), delayed])
        }
    };

    let wrapper = FunDef {
        name: wrapper_name,
        arity,
        clauses: vec![Clause {
            patterns: var_patterns(&vars),
            guard: None,
            body: vec![body_call],
        }],
        contracts: Vec::new(),
    };
    let renamed = FunDef {
        name: fresh,
        contracts: Vec::new(),
        ..f
    };
    Ok((renamed, wrapper))
}

/// Post-kind wrapper; the condition receives the call result.
pub fn inst_post(
    form: &PostForm,
    f: FunDef,
    module: &ModuleAst,
    namer: &mut FreshNamer,
) -> Result<(FunDef, FunDef), InstrumentError> {
    let arity = f.arity;
    let wrapper_name = f.name.clone();
    let fresh = namer.get_free_name(&wrapper_name, arity);
    let vars = fresh_vars(arity);
    let delayed = thunk(vec![local_call(&fresh, var_exprs(&vars))]);

    let body_call = match form {
        PostForm::Plain { cond } => {
            let cond_body = contract_fun_body(cond, module)?;
            let result_var = "FVRes".to_string();
            let substituted: Vec<Expr> = cond_body
                .into_iter()
                .map(|e| subst_refs(e, &vars, Some(&result_var)))
                .collect();
            let cond_fun = Expr::Fun {
                params: vec![Pattern::Var(result_var)],
                body: substituted,
            };
            local_call(POST, vec![cond_fun, delayed])
        }
        PostForm::Spec { rettype } => {
            local_call(SPEC_POST, vec![encode_typespec(rettype), delayed])
        }
        PostForm::Invariant { invfun } => local_call(INVARIANT, vec![invfun.clone(), delayed]),
    };

    let wrapper = FunDef {
        name: wrapper_name,
        arity,
        clauses: vec![Clause {
            patterns: var_patterns(&vars),
            guard: None,
            body: vec![body_call],
        }],
        contracts: Vec::new(),
    };
    let renamed = FunDef {
        name: fresh,
        contracts: Vec::new(),
        ..f
    };
    Ok((renamed, wrapper))
}

/// Whole-module orchestration. With `enabled` false the annotations
/// are dropped and nothing else changes.
pub fn instrument_module(
    m: &ModuleAst,
    enabled: bool,
) -> Result<InstrumentedModule, InstrumentError> {
    let mut entry_points = BTreeMap::new();
    for f in &m.fundefs {
        entry_points.insert((f.name.clone(), f.arity), f.name.clone());
    }

    if !enabled {
        let fundefs = m
            .fundefs
            .iter()
            .map(|f| FunDef {
                contracts: Vec::new(),
                ..f.clone()
            })
            .collect();
        return Ok(InstrumentedModule {
            module: ModuleAst {
                name: m.name.clone(),
                fundefs,
                module_invariant: None,
            },
            entry_points,
        });
    }

    let mut namer = FreshNamer::for_module(m);
    let mut out_funs: Vec<FunDef> = Vec::new();

    for f in &m.fundefs {
        let mut lowered = read_contracts(f)?;
        if let Some(invfun) = &m.module_invariant {
            let is_state_modifier = matches!(
                (f.name.as_str(), f.arity),
                ("init", 0) | ("init", 1) | ("handle_call", 3) | ("handle_cast", 2)
            );
            if is_state_modifier {
                lowered.push(Lowered::PostKind(PostForm::Invariant {
                    invfun: invfun.clone(),
                }));
            }
        }
        if lowered.is_empty() {
            out_funs.push(f.clone());
            continue;
        }

        let entry_name = f.name.clone();
        let mut helpers: Vec<FunDef> = Vec::new();
        let (mut working, entry) = inst_put_info(f.clone(), &mut namer);
        helpers.push(entry);

        let mut checker = None;
        if let Some(Lowered::Decrease { params, strict }) = lowered
            .iter()
            .find(|l| matches!(l, Lowered::Decrease { .. }))
            .cloned()
        {
            let (w, c) = inst_decr(&params, strict, working, &entry_name, &mut namer);
            working = w;
            checker = Some(c);
        }

        for l in &lowered {
            match l {
                Lowered::Decrease { .. } => {}
                Lowered::PreKind(form) => {
                    let (w, wrapper) = inst_pre(form, working, m, &mut namer)?;
                    working = w;
                    helpers.push(wrapper);
                }
                Lowered::PostKind(form) => {
                    let (w, wrapper) = inst_post(form, working, m, &mut namer)?;
                    working = w;
                    helpers.push(wrapper);
                }
            }
        }

        out_funs.extend(helpers);
        out_funs.push(working);
        if let Some(c) = checker {
            out_funs.push(c);
        }
    }

    Ok(InstrumentedModule {
        module: ModuleAst {
            name: m.name.clone(),
            fundefs: out_funs,
            module_invariant: None,
        },
        entry_points,
    })
}

/// Body of a contract function: inline fun bodies are used directly;
/// `fun name/0` references are inlined from the named definition.
fn contract_fun_body(cond: &Expr, module: &ModuleAst) -> Result<Vec<Expr>, InstrumentError> {
    match cond {
        Expr::Fun { params, body } if params.is_empty() => Ok(body.clone()),
        Expr::FunRef {
            module: None,
            name,
            arity: 0,
        } => {
            let f = module
                .lookup(name, 0)
                .ok_or_else(|| InstrumentError::BadContractFun { fun: name.clone() })?;
            Ok(f.clauses[0].body.clone())
        }
        _ => Err(InstrumentError::BadContractFun {
            fun: "<anonymous>".to_string(),
        }),
    }
}

fn encode_typespec(t: &TypeSpec) -> Expr {
    let atom = |s: &str| Expr::Lit(Value::Atom(s.to_string()));
    match t {
        TypeSpec::AnyT => atom("any"),
        TypeSpec::IntegerT => atom("integer"),
        TypeSpec::NonNegIntegerT => atom("non_neg_integer"),
        TypeSpec::FloatT => atom("float"),
        TypeSpec::NumberT => atom("number"),
        TypeSpec::BooleanT => atom("boolean"),
        TypeSpec::AtomT => atom("atom"),
        TypeSpec::StringT => atom("string"),
        TypeSpec::LiteralAtomT(a) => {
            Expr::TupleExpr(vec![atom("atom"), Expr::Lit(Value::atom(a))])
        }
        TypeSpec::ListT(elem) => Expr::TupleExpr(vec![atom("list"), encode_typespec(elem)]),
        TypeSpec::TupleT(ts) => Expr::TupleExpr(vec![
            atom("tuple"),
            list_expr(ts.iter().map(encode_typespec).collect()),
        ]),
        TypeSpec::UnionT(ts) => Expr::TupleExpr(vec![
            atom("union"),
            list_expr(ts.iter().map(encode_typespec).collect()),
        ]),
    }
}

fn pattern_to_expr(p: &Pattern) -> Expr {
    match p {
        Pattern::Var(v) => Expr::Var(v.clone()),
        Pattern::LitAtom(a) => Expr::Lit(Value::Atom(a.clone())),
        Pattern::LitInt(i) => Expr::Lit(Value::Int(*i)),
        Pattern::LitBool(b) => Expr::Lit(Value::Bool(*b)),
        Pattern::LitStr(s) => Expr::Lit(Value::Str(s.clone())),
        Pattern::NilPat => list_expr(Vec::new()),
        Pattern::ListPat { head, tail } => Expr::ListExpr {
            elems: vec![pattern_to_expr(head)],
            tail: Some(Box::new(pattern_to_expr(tail))),
        },
        Pattern::TuplePat(ps) => Expr::TupleExpr(ps.iter().map(pattern_to_expr).collect()),
        // A wildcard in a decreasing position has no runtime value to
        // compare against; 'undefined' surfaces as not_measurable.
        Pattern::Wildcard => Expr::Lit(Value::Atom("undefined".to_string())),
    }
}

/// Substitutes ?P(i) and ?R in a contract body.
fn subst_refs(e: Expr, params: &[String], result: Option<&str>) -> Expr {
    map_expr(e, &|x| match x {
        Expr::ParamRef(i) => Expr::Var(params[i - 1].clone()),
        Expr::ResultRef => match result {
            Some(r) => Expr::Var(r.to_string()),
            None => Expr::ResultRef,
        },
        other => other,
    })
}

/// Rewrites calls to `name/arity` using `replace` on the argument list.
fn replace_recursive(e: Expr, name: &str, arity: usize, replace: &impl Fn(Vec<Expr>) -> Expr) -> Expr {
    map_expr(e, &|x| match x {
        Expr::Call {
            target: CallTarget::Local(n),
            args,
        } if n == name && args.len() == arity => replace(args),
        other => other,
    })
}

/// Bottom-up structural map over an expression.
fn map_expr(e: Expr, f: &impl Fn(Expr) -> Expr) -> Expr {
    let mapped = match e {
        Expr::Lit(_) | Expr::Var(_) | Expr::ParamRef(_) | Expr::ResultRef | Expr::FunRef { .. } => {
            e
        }
        Expr::ListExpr { elems, tail } => Expr::ListExpr {
            elems: elems.into_iter().map(|x| map_expr(x, f)).collect(),
            tail: tail.map(|t| Box::new(map_expr(*t, f))),
        },
        Expr::TupleExpr(xs) => {
            Expr::TupleExpr(xs.into_iter().map(|x| map_expr(x, f)).collect())
        }
        Expr::BinOp { op, lhs, rhs } => Expr::BinOp {
            op,
            lhs: Box::new(map_expr(*lhs, f)),
            rhs: Box::new(map_expr(*rhs, f)),
        },
        Expr::UnOp { op, expr } => Expr::UnOp {
            op,
            expr: Box::new(map_expr(*expr, f)),
        },
        Expr::Call { target, args } => Expr::Call {
            target: match target {
                CallTarget::Dynamic(t) => CallTarget::Dynamic(Box::new(map_expr(*t, f))),
                other => other,
            },
            args: args.into_iter().map(|x| map_expr(x, f)).collect(),
        },
        Expr::Fun { params, body } => Expr::Fun {
            params,
            body: body.into_iter().map(|x| map_expr(x, f)).collect(),
        },
        Expr::Case { scrutinee, clauses } => Expr::Case {
            scrutinee: Box::new(map_expr(*scrutinee, f)),
            clauses: clauses
                .into_iter()
                .map(|c| CaseClause {
                    pattern: c.pattern,
                    guard: c.guard.map(|g| map_expr(g, f)),
                    body: c.body.into_iter().map(|x| map_expr(x, f)).collect(),
                })
                .collect(),
        },
        Expr::If { clauses } => Expr::If {
            clauses: clauses
                .into_iter()
                .map(|c| IfClause {
                    guard: map_expr(c.guard, f),
                    body: c.body.into_iter().map(|x| map_expr(x, f)).collect(),
                })
                .collect(),
        },
        Expr::ListComp {
            template,
            pattern,
            source,
            filters,
        } => Expr::ListComp {
            template: Box::new(map_expr(*template, f)),
            pattern,
            source: Box::new(map_expr(*source, f)),
            filters: filters.into_iter().map(|x| map_expr(x, f)).collect(),
        },
        Expr::Match { pattern, expr } => Expr::Match {
            pattern,
            expr: Box::new(map_expr(*expr, f)),
        },
    };
    f(mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_module;
    use crate::pretty::pretty_print;

    const FIB_SRC: &str = "-module(ex).\n\
        ?PRE(fun() -> ?P(1) >= 0 end).\n\
        ?SDECREASES(?P(1)).\n\
        fib(0) -> 0;\n\
        fib(1) -> 1;\n\
        fib(N) -> fib(N - 1) + fib(N - 2).\n";

    #[test]
    fn fib_instruments_to_four_fundefs() {
        let m = parse_module(FIB_SRC).unwrap();
        let inst = instrument_module(&m, true).unwrap();
        assert_eq!(inst.module.fundefs.len(), 4);
        let names: Vec<&str> = inst
            .module
            .fundefs
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        assert_eq!(names, ["fib", "fib__edbc0", "fib__edbc2", "fib__edbc1"]);
        let printed = pretty_print(&inst.module);
        assert!(printed.contains("edbc_put_info"));
        assert!(printed.contains("fib__edbc1([N], [N - 1])"));
        assert!(printed.contains("fib__edbc1([N], [N - 2])"));
    }

    #[test]
    fn entry_matches_expected_shape() {
        let m = parse_module(FIB_SRC).unwrap();
        let inst = instrument_module(&m, true).unwrap();
        let entry = &inst.module.fundefs[0];
        assert_eq!(entry.name, "fib");
        assert_eq!(entry.arity, 1);
        let body = &entry.clauses[0].body;
        assert_eq!(body.len(), 2);
        assert!(matches!(
            &body[0],
            Expr::Call { target: CallTarget::Local(n), .. } if n == PUT_INFO
        ));
        assert!(matches!(
            &body[1],
            Expr::Call { target: CallTarget::Local(n), .. } if n == "fib__edbc0"
        ));
    }

    #[test]
    fn disabled_drops_annotations_only() {
        let m = parse_module(FIB_SRC).unwrap();
        let inst = instrument_module(&m, false).unwrap();
        assert_eq!(inst.module.fundefs.len(), 1);
        assert!(inst.module.fundefs[0].contracts.is_empty());
        assert_eq!(inst.module.fundefs[0].clauses, m.fundefs[0].clauses);
    }

    #[test]
    fn uncontracted_module_unchanged() {
        let m = parse_module("-module(m).\nf() -> 1.\n").unwrap();
        let inst = instrument_module(&m, true).unwrap();
        assert_eq!(inst.module.fundefs, m.fundefs);
    }

    #[test]
    fn spec_lowers_to_pre_and_post() {
        let m = parse_module(
            "-module(m).\n-spec f(integer()) -> integer().\nf(X) -> X.\n",
        )
        .unwrap();
        let lowered = read_contracts(&m.fundefs[0]).unwrap();
        assert!(matches!(
            lowered.as_slice(),
            [
                Lowered::PreKind(PreForm::Spec { .. }),
                Lowered::PostKind(PostForm::Spec { .. })
            ]
        ));
        let inst = instrument_module(&m, true).unwrap();
        // entry + spec-pre wrapper + spec-post wrapper + original
        assert_eq!(inst.module.fundefs.len(), 4);
    }

    #[test]
    fn pure_with_timeout_rejected() {
        let m = parse_module(
            "-module(m).\n?PURE.\n?TIMEOUT(fun() -> 10 end).\nf() -> 1.\n",
        )
        .unwrap();
        assert_eq!(
            read_contracts(&m.fundefs[0]),
            Err(InstrumentError::PureTimeConflict {
                fun: "f".into(),
                arity: 0
            })
        );
        assert!(instrument_module(&m, true).is_err());
    }

    #[test]
    fn instrumentation_is_deterministic() {
        let m = parse_module(FIB_SRC).unwrap();
        let a = instrument_module(&m, true).unwrap();
        let b = instrument_module(&m, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_param_decrease_restricts_prev_args() {
        let src = "-module(m).\n\
            ?DECREASES([?P(1), ?P(3)]).\n\
            g(A, B, C) -> g(A - 1, B, C - 1).\n";
        let m = parse_module(src).unwrap();
        let inst = instrument_module(&m, true).unwrap();
        let printed = pretty_print(&inst.module);
        assert!(printed.contains("g__edbc1([A, C], [A - 1, B, C - 1])"));
        assert!(printed.contains("edbc_decrease_check"));
    }

    #[test]
    fn invariant_lowering_targets_behaviour_callbacks() {
        let src = "-module(m).\n\
            ?INVARIANT(fun(S) -> S >= 0 end).\n\
            init() -> 0.\n\
            handle_call(Req, From, S) -> {reply, ok, S}.\n\
            handle_cast(Req, S) -> {noreply, S}.\n\
            helper(X) -> X.\n";
        let m = parse_module(src).unwrap();
        let inst = instrument_module(&m, true).unwrap();
        let printed = pretty_print(&inst.module);
        assert_eq!(printed.matches(INVARIANT).count(), 3);
        // helper/1 stays untouched
        assert!(inst
            .module
            .fundefs
            .iter()
            .any(|f| f.name == "helper" && f.clauses == m.fundefs[3].clauses));
    }

    #[test]
    fn fresh_names_skip_taken() {
        let m = parse_module("-module(m).\nf__edbc0(X) -> X.\n").unwrap();
        let mut namer = FreshNamer::for_module(&m);
        assert_eq!(namer.get_free_name("f", 1), "f__edbc1");
    }
}
