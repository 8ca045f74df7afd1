//! Exact integer evaluation of arithmetic expressions.
//!
//! Grammar (standard precedence, left-associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '%') unary)*
//! unary   := '-' unary | primary
//! primary := INTEGER | '(' expr ')'
//! ```
//!
//! `×` is accepted as an alias for `*` and `−` (U+2212) for `-`. Division is
//! not part of the grammar.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Int(i64),
    Plus,
    Minus,
    Star,
    Percent,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Int(v) => write!(f, "{v}"),
            Token::Plus => f.write_str("+"),
            Token::Minus => f.write_str("-"),
            Token::Star => f.write_str("*"),
            Token::Percent => f.write_str("%"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
        }
    }
}

/// Splits `text` into tokens, paired with the character offset where each starts.
pub fn tokenize(text: &str) -> Result<Vec<(usize, Token)>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '0'..='9' => {
                let start = i;
                let mut value: i64 = 0;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    let digit = chars[i] as i64 - '0' as i64;
                    value = value
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(digit))
                        .ok_or_else(|| Error::Parse {
                            position: start,
                            message: "integer literal out of range".into(),
                        })?;
                    i += 1;
                }
                out.push((start, Token::Int(value)));
                continue;
            }
            '+' => Token::Plus,
            '-' | '\u{2212}' => Token::Minus,
            '*' | '\u{00d7}' => Token::Star,
            '%' => Token::Percent,
            '(' => Token::LParen,
            ')' => Token::RParen,
            other => {
                return Err(Error::Parse {
                    position: i,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((i, tok));
        i += 1;
    }
    Ok(out)
}

/// Renders tokens in canonical form: single spaces between tokens, none
/// just inside parentheses.
pub fn render(tokens: &[Token]) -> String {
    let mut s = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            let prev = tokens[i - 1];
            if prev != Token::LParen && *tok != Token::RParen {
                s.push(' ');
            }
        }
        s.push_str(&tok.to_string());
    }
    s
}

struct Parser<'a> {
    source: &'a str,
    tokens: Vec<(usize, Token)>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).map(|&(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|&(o, _)| o)
            .unwrap_or_else(|| self.source.chars().count())
    }

    fn overflow(&self) -> Error {
        Error::Overflow(self.source.to_string())
    }

    fn expr(&mut self) -> Result<i64> {
        let mut acc = self.term()?;
        while let Some(op @ (Token::Plus | Token::Minus)) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = match op {
                Token::Plus => acc.checked_add(rhs),
                _ => acc.checked_sub(rhs),
            }
            .ok_or_else(|| self.overflow())?;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<i64> {
        let mut acc = self.unary()?;
        while let Some(op @ (Token::Star | Token::Percent)) = self.peek() {
            let at = self.offset();
            self.pos += 1;
            let rhs = self.unary()?;
            acc = match op {
                Token::Star => acc.checked_mul(rhs).ok_or_else(|| self.overflow())?,
                _ => {
                    if rhs == 0 {
                        return Err(Error::Parse {
                            position: at,
                            message: "modulo by zero".into(),
                        });
                    }
                    if acc < 0 || rhs < 0 {
                        return Err(Error::Parse {
                            position: at,
                            message: "modulo requires non-negative operands".into(),
                        });
                    }
                    acc % rhs
                }
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<i64> {
        if self.peek() == Some(Token::Minus) {
            self.pos += 1;
            let v = self.unary()?;
            return v.checked_neg().ok_or_else(|| self.overflow());
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<i64> {
        let at = self.offset();
        match self.peek() {
            Some(Token::Int(v)) => {
                self.pos += 1;
                Ok(v)
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(Token::RParen) {
                    return Err(Error::Parse {
                        position: self.offset(),
                        message: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(v)
            }
            Some(tok) => Err(Error::Parse {
                position: at,
                message: format!("unexpected `{tok}`"),
            }),
            None => Err(Error::Parse {
                position: at,
                message: "unexpected end of expression".into(),
            }),
        }
    }
}

/// Evaluates an expression exactly. Fails with a positioned parse error on
/// malformed input and with [`Error::Overflow`] if any intermediate value
/// leaves the `i64` range.
pub fn evaluate(text: &str) -> Result<i64> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        source: text,
        tokens,
        pos: 0,
    };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(Error::Parse {
            position: parser.offset(),
            message: "trailing input".into(),
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(evaluate("70 - 47 + 68").unwrap(), 91);
        assert_eq!(evaluate("562 % 8").unwrap(), 2);
        assert_eq!(evaluate("94 + 40 * 50 - 24 * 87").unwrap(), 6);
        assert_eq!(evaluate("(67 + 68) * (52 - 88)").unwrap(), -4860);
    }

    #[test]
    fn aliases_and_unary_minus() {
        assert_eq!(evaluate("135 × −36").unwrap(), -4860);
        assert_eq!(evaluate("-3 - -4").unwrap(), 1);
        assert_eq!(evaluate("2 * (3 + 4) % 5").unwrap(), 4);
    }

    #[test]
    fn left_associative() {
        assert_eq!(evaluate("10 - 3 - 2").unwrap(), 5);
        assert_eq!(evaluate("100 % 7 * 3").unwrap(), 6);
    }

    #[test]
    fn errors_carry_position() {
        match evaluate("1 / 0") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match evaluate("(1 + 2") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(evaluate("1 +"), Err(Error::Parse { .. })));
        assert!(matches!(evaluate("1 2"), Err(Error::Parse { .. })));
        assert!(matches!(evaluate(""), Err(Error::Parse { .. })));
        assert!(matches!(evaluate("5 % 0"), Err(Error::Parse { .. })));
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(evaluate("9223372036854775807 + 1"), Err(Error::Overflow(_))));
    }

    #[test]
    fn render_is_canonical() {
        let toks: Vec<Token> = tokenize("(67+68)×(52 -88)")
            .unwrap()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        assert_eq!(render(&toks), "(67 + 68) * (52 - 88)");
    }
}
