//! Runtime terms of the mini-language.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{Expr, Pattern};
use crate::server::ServerMsg;

/// Binding environment. Ordered so closures compare deterministically.
pub type Env = BTreeMap<String, Value>;

/// An anonymous function value together with its captured environment.
///
/// The environment holds only the bindings that are free in the body;
/// everything else is dropped at capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct Closure {
    pub params: Vec<Pattern>,
    pub body: Vec<Expr>,
    pub env: Env,
    /// Module whose function table resolves local calls in the body.
    pub module: String,
}

/// Process identifier. Equality is identity: two pids are equal iff they
/// name the same process, regardless of what the process is doing.
#[derive(Debug, Clone)]
pub struct Pid {
    pub id: u64,
    pub port: PidPort,
}

/// Where messages to a pid go.
#[derive(Debug, Clone)]
pub enum PidPort {
    /// Plain spawned process with a FIFO mailbox.
    Proc(crossbeam_channel::Sender<Value>),
    /// Guarded server; carries call/cast envelopes.
    Server(crossbeam_channel::Sender<ServerMsg>),
}

impl PartialEq for Pid {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

/// A dynamic term. Booleans are kept apart from atoms in the
/// representation, but `true`/`false` still behave as atoms where the
/// surface language expects that (pattern literals, `atom()` checks).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Atom(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    List(Vec<Value>),
    Tuple(Vec<Value>),
    Closure(Closure),
    FunRef {
        module: Option<String>,
        name: String,
        arity: usize,
    },
    Pid(Pid),
}

impl Value {
    pub fn atom(name: &str) -> Value {
        match name {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => Value::Atom(name.to_string()),
        }
    }

    pub fn is_truthy(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Atom name, treating booleans as the atoms `true`/`false`.
    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Value::Atom(a) => Some(a),
            Value::Bool(true) => Some("true"),
            Value::Bool(false) => Some("false"),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Atom(_) => "atom",
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Closure(_) => "fun",
            Value::FunRef { .. } => "fun",
            Value::Pid(_) => "pid",
        }
    }
}

impl fmt::Display for Value {
    /// Erlang-style printing: atoms bare, tuples `{a,b}`, lists `[1,2]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => write!(f, "{a}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => {
                if x.fract() == 0.0 && x.is_finite() {
                    write!(f, "{x:.1}")
                } else {
                    write!(f, "{x}")
                }
            }
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "\"{s}\""),
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Tuple(items) => {
                write!(f, "{{")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "}}")
            }
            Value::Closure(_) => write!(f, "#Fun"),
            Value::FunRef {
                module,
                name,
                arity,
            } => match module {
                Some(m) => write!(f, "fun {m}:{name}/{arity}"),
                None => write!(f, "fun {name}/{arity}"),
            },
            Value::Pid(p) => write!(f, "<0.{}.0>", p.id),
        }
    }
}

/// Comma-joined Erlang-style rendering of an argument list.
pub fn format_args(args: &[Value]) -> String {
    args.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_erlang_style() {
        let v = Value::Tuple(vec![
            Value::atom("state"),
            Value::Int(0),
            Value::atom("true"),
        ]);
        assert_eq!(v.to_string(), "{state,0,true}");
        let l = Value::List(vec![Value::Int(1), Value::Int(2)]);
        assert_eq!(l.to_string(), "[1,2]");
    }

    #[test]
    fn atom_normalizes_booleans() {
        assert_eq!(Value::atom("true"), Value::Bool(true));
        assert_eq!(Value::atom("ok"), Value::Atom("ok".into()));
    }
}
