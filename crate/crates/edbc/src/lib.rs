//! Design-by-contract runtime verification for an Erlang-flavored
//! mini-language: seven contract kinds checked via source-to-source
//! instrumentation, a tree-walking evaluator with lightweight
//! processes, and a cpre-gated request/reply server.

pub mod ast;
pub mod eval;
pub mod instrument;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod report;
pub mod runtime;
pub mod server;
pub mod typespec;
pub mod value;

pub use ast::{Contract, Expr, FunDef, ModuleAst, Pattern};
pub use parser::{parse_expr_str, parse_module, ParseError};
pub use pretty::pretty_print;
pub use typespec::{parse_typespec, type_check, TypeSpec};
pub use value::Value;
