//! Command-line front end: run, instrument, doc.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edbc::ast::{Expr, UnOp};
use edbc::instrument::instrument_module;
use edbc::report::generate_docs;
use edbc::runtime::{Config, EvalError, Runtime};
use edbc::value::Value;
use edbc::{parse_expr_str, parse_module, pretty_print};

#[derive(Parser)]
#[command(name = "edbc", about = "Contract-checked mini-language runner", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load modules, instrument them, and evaluate an entry call.
    Run {
        /// Source files (.edl); all are loaded before the entry call.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Entry function as name/arity, e.g. fib/1.
        #[arg(long)]
        entry: String,
        /// Comma-separated literal arguments, e.g. "10" or "[a,b],z".
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        args: String,
        /// Disable contract checking (annotations are dropped).
        #[arg(long)]
        no_contracts: bool,
        /// Default policy for server_start/1: fair or resend.
        #[arg(long, default_value = "fair")]
        policy: String,
        /// Execution-time slack in milliseconds.
        #[arg(long, default_value_t = 20)]
        slack: u64,
        /// Seed forwarded to randomized harnesses.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the instrumented form of a module.
    Instrument {
        file: PathBuf,
        /// Print the transformed source (the default; kept for scripts).
        #[arg(long)]
        dump: bool,
    },
    /// Generate markdown contract documentation.
    Doc {
        file: PathBuf,
        /// Output directory (default: beside the source).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            files,
            entry,
            args,
            no_contracts,
            policy,
            slack,
            seed,
        } => cmd_run(&files, &entry, &args, no_contracts, policy, slack, seed),
        Cmd::Instrument { file, dump: _ } => cmd_instrument(&file),
        Cmd::Doc { file, out } => cmd_doc(&file, out.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    files: &[PathBuf],
    entry: &str,
    args: &str,
    no_contracts: bool,
    policy: String,
    slack: u64,
    seed: Option<u64>,
) -> ExitCode {
    let env_disabled = std::env::var("EDBC_NO_CONTRACTS").map(|v| v == "1").unwrap_or(false);
    let contracts = !(no_contracts || env_disabled);
    let rt = Runtime::new(Config {
        slack_ms: slack,
        echo: true,
        default_policy: policy,
        seed,
    });

    let mut loaded = Vec::new();
    for f in files {
        let src = match std::fs::read_to_string(f) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", f.display());
                return ExitCode::from(3);
            }
        };
        match rt.load_source(&src, contracts) {
            Ok(name) => loaded.push(name),
            Err(e) => {
                eprintln!("error: {}: {e}", f.display());
                return ExitCode::from(3);
            }
        }
    }

    let (name, arity) = match parse_entry(entry) {
        Some(x) => x,
        None => {
            eprintln!("error: --entry must be name/arity, got {entry}");
            return ExitCode::from(3);
        }
    };
    let argv = match parse_arg_terms(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: bad --args: {e}");
            return ExitCode::from(3);
        }
    };
    if argv.len() != arity {
        eprintln!(
            "error: entry {name}/{arity} called with {} argument(s)",
            argv.len()
        );
        return ExitCode::from(3);
    }
    let module = loaded.iter().find(|m| {
        rt.state
            .get_module(m)
            .map(|ast| ast.lookup(&name, arity).is_some())
            .unwrap_or(false)
    });
    let module = match module {
        Some(m) => m.clone(),
        None => {
            eprintln!("error: no loaded module defines {name}/{arity}");
            return ExitCode::from(3);
        }
    };

    let result = rt.run_entry(&module, &name, argv);
    rt.join_threads();
    match result {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        // run_entry already echoed the violation report to stderr.
        Err(EvalError::Violation(_)) => ExitCode::from(1),
        Err(EvalError::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_instrument(file: &Path) -> ExitCode {
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(3);
        }
    };
    let m = match parse_module(&src) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match instrument_module(&m, true) {
        Ok(inst) => {
            print!("{}", pretty_print(&inst.module));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn cmd_doc(file: &Path, out: Option<&Path>) -> ExitCode {
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(3);
        }
    };
    let m = match parse_module(&src) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let docs = generate_docs(&m);
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| file.parent().unwrap_or(Path::new(".")).to_path_buf());
    let target = dir.join(format!("{}.md", m.name));
    match std::fs::write(&target, docs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", target.display());
            ExitCode::from(4)
        }
    }
}

fn parse_entry(s: &str) -> Option<(String, usize)> {
    let (name, arity) = s.rsplit_once('/')?;
    Some((name.to_string(), arity.parse().ok()?))
}

/// Parses comma-separated literal terms by reading them as one list.
fn parse_arg_terms(s: &str) -> Result<Vec<Value>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    let expr = parse_expr_str(&format!("[{s}]")).map_err(|e| e.to_string())?;
    match literal_value(&expr)? {
        Value::List(items) => Ok(items),
        _ => Err("expected a term list".to_string()),
    }
}

/// Constant evaluation of literal terms (no calls, no variables).
fn literal_value(e: &Expr) -> Result<Value, String> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::UnOp {
            op: UnOp::Neg,
            expr,
        } => match literal_value(expr)? {
            Value::Int(i) => Ok(Value::Int(-i)),
            Value::Float(x) => Ok(Value::Float(-x)),
            other => Err(format!("cannot negate {other}")),
        },
        Expr::ListExpr { elems, tail: None } => Ok(Value::List(
            elems.iter().map(literal_value).collect::<Result<_, _>>()?,
        )),
        Expr::TupleExpr(xs) => Ok(Value::Tuple(
            xs.iter().map(literal_value).collect::<Result<_, _>>()?,
        )),
        other => Err(format!("not a literal term: {other:?}")),
    }
}
