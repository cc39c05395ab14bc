//! Tokenizer for the Erlang-flavored surface syntax.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Atom(String),
    Var(String),
    Int(i64),
    Float(f64),
    Str(String),
    /// `?NAME` — contract directive or parameter/result macro.
    Macro(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Dot,
    Colon,
    Bar,
    DoubleBar,
    Arrow,
    LeftArrow,
    Plus,
    Minus,
    Star,
    Slash,
    PlusPlus,
    EqEq,
    SlashEq,
    Lt,
    Le,
    Gt,
    Ge,
    Equals,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Atom(a) => write!(f, "{a}"),
            Tok::Var(v) => write!(f, "{v}"),
            Tok::Int(i) => write!(f, "{i}"),
            Tok::Float(x) => write!(f, "{x}"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::Macro(m) => write!(f, "?{m}"),
            Tok::LParen => write!(f, "("),
            Tok::RParen => write!(f, ")"),
            Tok::LBracket => write!(f, "["),
            Tok::RBracket => write!(f, "]"),
            Tok::LBrace => write!(f, "{{"),
            Tok::RBrace => write!(f, "}}"),
            Tok::Comma => write!(f, ","),
            Tok::Semi => write!(f, ";"),
            Tok::Dot => write!(f, "."),
            Tok::Colon => write!(f, ":"),
            Tok::Bar => write!(f, "|"),
            Tok::DoubleBar => write!(f, "||"),
            Tok::Arrow => write!(f, "->"),
            Tok::LeftArrow => write!(f, "<-"),
            Tok::Plus => write!(f, "+"),
            Tok::Minus => write!(f, "-"),
            Tok::Star => write!(f, "*"),
            Tok::Slash => write!(f, "/"),
            Tok::PlusPlus => write!(f, "++"),
            Tok::EqEq => write!(f, "=="),
            Tok::SlashEq => write!(f, "/="),
            Tok::Lt => write!(f, "<"),
            Tok::Le => write!(f, "=<"),
            Tok::Gt => write!(f, ">"),
            Tok::Ge => write!(f, ">="),
            Tok::Equals => write!(f, "="),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("lex error at {line}:{col}: {msg}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

pub fn lex(source: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = source.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! err {
        ($msg:expr) => {
            return Err(LexError {
                line,
                col,
                msg: $msg.to_string(),
            })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    *line += 1;
                    *col = 1;
                } else {
                    *col += 1;
                }
                *i += 1;
            }
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                advance(&mut i, &mut line, &mut col, 1);
                continue;
            }
            '%' => {
                // Comment to end of line.
                while i < chars.len() && chars[i] != '\n' {
                    advance(&mut i, &mut line, &mut col, 1);
                }
                continue;
            }
            _ => {}
        }

        let push = |toks: &mut Vec<Token>, tok: Tok| {
            toks.push(Token {
                tok,
                line: tline,
                col: tcol,
            })
        };

        let two: Option<Tok> = if i + 1 < chars.len() {
            match (c, chars[i + 1]) {
                ('-', '>') => Some(Tok::Arrow),
                ('<', '-') => Some(Tok::LeftArrow),
                ('+', '+') => Some(Tok::PlusPlus),
                ('=', '=') => Some(Tok::EqEq),
                ('/', '=') => Some(Tok::SlashEq),
                ('=', '<') => Some(Tok::Le),
                ('>', '=') => Some(Tok::Ge),
                ('|', '|') => Some(Tok::DoubleBar),
                _ => None,
            }
        } else {
            None
        };
        if let Some(t) = two {
            push(&mut toks, t);
            advance(&mut i, &mut line, &mut col, 2);
            continue;
        }

        match c {
            '(' | ')' | '[' | ']' | '{' | '}' | ',' | ';' | ':' | '|' | '+' | '-' | '*'
            | '/' | '<' | '>' | '=' => {
                let t = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    ':' => Tok::Colon,
                    '|' => Tok::Bar,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    '=' => Tok::Equals,
                    _ => unreachable!(),
                };
                push(&mut toks, t);
                advance(&mut i, &mut line, &mut col, 1);
            }
            '.' => {
                push(&mut toks, Tok::Dot);
                advance(&mut i, &mut line, &mut col, 1);
            }
            '?' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == i + 1 {
                    err!("expected directive name after `?`");
                }
                let name: String = chars[i + 1..j].iter().collect();
                let n = j - i;
                push(&mut toks, Tok::Macro(name));
                advance(&mut i, &mut line, &mut col, n);
            }
            '"' => {
                let mut j = i + 1;
                let mut s = String::new();
                loop {
                    if j >= chars.len() {
                        err!("unterminated string");
                    }
                    match chars[j] {
                        '"' => break,
                        '\\' => {
                            j += 1;
                            if j >= chars.len() {
                                err!("unterminated escape");
                            }
                            match chars[j] {
                                'n' => s.push('\n'),
                                't' => s.push('\t'),
                                '\\' => s.push('\\'),
                                '"' => s.push('"'),
                                other => s.push(other),
                            }
                            j += 1;
                        }
                        other => {
                            s.push(other);
                            j += 1;
                        }
                    }
                }
                let n = j + 1 - i;
                push(&mut toks, Tok::Str(s));
                advance(&mut i, &mut line, &mut col, n);
            }
            '\'' => {
                // Quoted atom, e.g. '*'.
                let mut j = i + 1;
                let mut s = String::new();
                while j < chars.len() && chars[j] != '\'' {
                    s.push(chars[j]);
                    j += 1;
                }
                if j >= chars.len() {
                    err!("unterminated quoted atom");
                }
                let n = j + 1 - i;
                push(&mut toks, Tok::Atom(s));
                advance(&mut i, &mut line, &mut col, n);
            }
            d if d.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                // A float needs a digit on both sides of the dot.
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    let text: String = chars[i..j].iter().collect();
                    let x: f64 = text.parse().map_err(|_| LexError {
                        line,
                        col,
                        msg: format!("bad float literal {text}"),
                    })?;
                    let n = j - i;
                    push(&mut toks, Tok::Float(x));
                    advance(&mut i, &mut line, &mut col, n);
                } else {
                    let text: String = chars[i..j].iter().collect();
                    let v: i64 = text.parse().map_err(|_| LexError {
                        line,
                        col,
                        msg: format!("bad integer literal {text}"),
                    })?;
                    let n = j - i;
                    push(&mut toks, Tok::Int(v));
                    advance(&mut i, &mut line, &mut col, n);
                }
            }
            a if a.is_ascii_lowercase() => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '@')
                {
                    j += 1;
                }
                let name: String = chars[i..j].iter().collect();
                let n = j - i;
                push(&mut toks, Tok::Atom(name));
                advance(&mut i, &mut line, &mut col, n);
            }
            v if v.is_ascii_uppercase() || v == '_' => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '@')
                {
                    j += 1;
                }
                let name: String = chars[i..j].iter().collect();
                let n = j - i;
                push(&mut toks, Tok::Var(name));
                advance(&mut i, &mut line, &mut col, n);
            }
            other => err!(format!("unexpected character `{other}`")),
        }
    }
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_clause() {
        let toks = lex("fib(N) -> fib(N - 1) + fib(N - 2).").unwrap();
        assert_eq!(toks[0].tok, Tok::Atom("fib".into()));
        assert_eq!(toks.last().unwrap().tok, Tok::Dot);
    }

    #[test]
    fn distinguishes_floats_from_dot() {
        let toks = lex("f() -> 1.5.").unwrap();
        assert!(toks.iter().any(|t| t.tok == Tok::Float(1.5)));
        assert_eq!(toks.last().unwrap().tok, Tok::Dot);
    }

    #[test]
    fn lexes_macros_and_quoted_atoms() {
        let toks = lex("?PRE(fun() -> ?P(1) >= 0 end). fun erlang:'*'/2").unwrap();
        assert_eq!(toks[0].tok, Tok::Macro("PRE".into()));
        assert!(toks.iter().any(|t| t.tok == Tok::Atom("*".into())));
    }
}
