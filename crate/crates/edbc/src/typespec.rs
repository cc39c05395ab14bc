//! Runtime type language and checker backing `-spec` contracts.

use std::fmt;

use thiserror::Error;

use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeSpec {
    AnyT,
    IntegerT,
    NonNegIntegerT,
    FloatT,
    NumberT,
    BooleanT,
    AtomT,
    LiteralAtomT(String),
    StringT,
    ListT(Box<TypeSpec>),
    TupleT(Vec<TypeSpec>),
    /// At least two alternatives.
    UnionT(Vec<TypeSpec>),
}

impl fmt::Display for TypeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeSpec::AnyT => write!(f, "any()"),
            TypeSpec::IntegerT => write!(f, "integer()"),
            TypeSpec::NonNegIntegerT => write!(f, "non_neg_integer()"),
            TypeSpec::FloatT => write!(f, "float()"),
            TypeSpec::NumberT => write!(f, "number()"),
            TypeSpec::BooleanT => write!(f, "boolean()"),
            TypeSpec::AtomT => write!(f, "atom()"),
            TypeSpec::LiteralAtomT(a) => write!(f, "{a}"),
            TypeSpec::StringT => write!(f, "string()"),
            TypeSpec::ListT(t) => write!(f, "[{t}]"),
            TypeSpec::TupleT(ts) => {
                write!(f, "{{")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, "}}")
            }
            TypeSpec::UnionT(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{t}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TypeParseError {
    #[error("unknown type name: {0}()")]
    UnknownType(String),
    #[error("unexpected end of type expression")]
    UnexpectedEnd,
    #[error("unexpected character `{0}` in type expression")]
    UnexpectedChar(char),
    #[error("function types are not supported in specs")]
    FunctionType,
    #[error("trailing input after type expression: `{0}`")]
    Trailing(String),
}

/// Parses an Erlang-style type expression: `integer()`, `[integer()]`,
/// `{atom(), any()}`, `a | b`, bare atoms as singleton types.
pub fn parse_typespec(input: &str) -> Result<TypeSpec, TypeParseError> {
    let mut p = TypeParser {
        chars: input.chars().collect(),
        pos: 0,
    };
    let t = p.parse_union()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(TypeParseError::Trailing(
            p.chars[p.pos..].iter().collect(),
        ));
    }
    Ok(t)
}

struct TypeParser {
    chars: Vec<char>,
    pos: usize,
}

impl TypeParser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn parse_union(&mut self) -> Result<TypeSpec, TypeParseError> {
        let mut alts = vec![self.parse_single()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            alts.push(self.parse_single()?);
        }
        if alts.len() == 1 {
            Ok(alts.pop().unwrap())
        } else {
            Ok(TypeSpec::UnionT(alts))
        }
    }

    fn parse_single(&mut self) -> Result<TypeSpec, TypeParseError> {
        match self.peek() {
            None => Err(TypeParseError::UnexpectedEnd),
            Some('[') => {
                self.pos += 1;
                let elem = self.parse_union()?;
                if self.peek() != Some(']') {
                    return Err(TypeParseError::UnexpectedEnd);
                }
                self.pos += 1;
                Ok(TypeSpec::ListT(Box::new(elem)))
            }
            Some('{') => {
                self.pos += 1;
                let mut elems = Vec::new();
                if self.peek() == Some('}') {
                    self.pos += 1;
                    return Ok(TypeSpec::TupleT(elems));
                }
                loop {
                    elems.push(self.parse_union()?);
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some('}') => {
                            self.pos += 1;
                            return Ok(TypeSpec::TupleT(elems));
                        }
                        Some(c) => return Err(TypeParseError::UnexpectedChar(c)),
                        None => return Err(TypeParseError::UnexpectedEnd),
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_ascii_alphanumeric()
                        || self.chars[self.pos] == '_')
                {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                if self.peek() == Some('(') {
                    self.pos += 1;
                    if self.peek() != Some(')') {
                        // No parameterized builtins in this type language.
                        return Err(TypeParseError::UnknownType(name));
                    }
                    self.pos += 1;
                    match name.as_str() {
                        "any" | "term" => Ok(TypeSpec::AnyT),
                        "integer" => Ok(TypeSpec::IntegerT),
                        "non_neg_integer" => Ok(TypeSpec::NonNegIntegerT),
                        "float" => Ok(TypeSpec::FloatT),
                        "number" => Ok(TypeSpec::NumberT),
                        "boolean" | "bool" => Ok(TypeSpec::BooleanT),
                        "atom" => Ok(TypeSpec::AtomT),
                        "string" => Ok(TypeSpec::StringT),
                        "fun" | "function" => Err(TypeParseError::FunctionType),
                        _ => Err(TypeParseError::UnknownType(name)),
                    }
                } else {
                    // Bare lowercase name: singleton atom type.
                    Ok(TypeSpec::LiteralAtomT(name))
                }
            }
            Some(c) => Err(TypeParseError::UnexpectedChar(c)),
        }
    }
}

/// Membership check. Total on well-formed inputs: never raises.
pub fn type_check(v: &Value, t: &TypeSpec) -> bool {
    match t {
        TypeSpec::AnyT => true,
        TypeSpec::IntegerT => matches!(v, Value::Int(_)),
        TypeSpec::NonNegIntegerT => matches!(v, Value::Int(i) if *i >= 0),
        TypeSpec::FloatT => matches!(v, Value::Float(_)),
        TypeSpec::NumberT => matches!(v, Value::Int(_) | Value::Float(_)),
        TypeSpec::BooleanT => matches!(v, Value::Bool(_)),
        // Booleans are atoms in the surface language.
        TypeSpec::AtomT => matches!(v, Value::Atom(_) | Value::Bool(_)),
        TypeSpec::LiteralAtomT(name) => v.as_atom() == Some(name.as_str()),
        TypeSpec::StringT => matches!(v, Value::Str(_)),
        TypeSpec::ListT(elem) => match v {
            Value::List(items) => items.iter().all(|x| type_check(x, elem)),
            _ => false,
        },
        TypeSpec::TupleT(ts) => match v {
            Value::Tuple(items) => {
                items.len() == ts.len()
                    && items.iter().zip(ts).all(|(x, t)| type_check(x, t))
            }
            _ => false,
        },
        TypeSpec::UnionT(ts) => ts.iter().any(|t| type_check(v, t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_types() {
        assert_eq!(parse_typespec("integer()"), Ok(TypeSpec::IntegerT));
        assert_eq!(
            parse_typespec("a | b"),
            Ok(TypeSpec::UnionT(vec![
                TypeSpec::LiteralAtomT("a".into()),
                TypeSpec::LiteralAtomT("b".into()),
            ]))
        );
        assert_eq!(
            parse_typespec("[integer()]"),
            Ok(TypeSpec::ListT(Box::new(TypeSpec::IntegerT)))
        );
        assert_eq!(
            parse_typespec("{atom(), any()}"),
            Ok(TypeSpec::TupleT(vec![TypeSpec::AtomT, TypeSpec::AnyT]))
        );
        assert!(matches!(
            parse_typespec("frob()"),
            Err(TypeParseError::UnknownType(_))
        ));
        assert_eq!(parse_typespec("fun()"), Err(TypeParseError::FunctionType));
    }

    #[test]
    fn checks_membership() {
        assert!(!type_check(&Value::atom("a"), &TypeSpec::IntegerT));
        assert!(type_check(&Value::Int(0), &TypeSpec::NonNegIntegerT));
        assert!(!type_check(&Value::Int(-1), &TypeSpec::NonNegIntegerT));
        let l = Value::List(vec![Value::Int(1), Value::atom("x")]);
        assert!(!type_check(&l, &TypeSpec::ListT(Box::new(TypeSpec::IntegerT))));
        // Floats do not inhabit integer(), even when integral.
        assert!(!type_check(&Value::Float(3.0), &TypeSpec::IntegerT));
        assert!(type_check(&Value::Bool(true), &TypeSpec::AtomT));
        assert!(type_check(
            &Value::Bool(true),
            &TypeSpec::LiteralAtomT("true".into())
        ));
    }
}
