//! Infix grammar:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' exponent)*
//! exponent:= integer | '-' integer | '(' '-'? integer ')'
//! primary := number | 'x' | 't' digits | func '(' expr ')' | '(' expr ')'
//! func    := 'exp' | 'ln' | 'cos' | 'sin'
//! ```
//!
//! Whitespace is ignored. A minus applied directly to a numeric literal yields
//! a negative constant; applied to anything else it yields `(-1)*operand`.

use thiserror::Error;

use super::{BinaryOp, Expression, Node, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<Expression, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Expression::new(node).map_err(|e| ParseError { position: 0, message: e.to_string() })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError { position: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut node = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(node),
            };
            self.pos += 1;
            let rhs = self.term()?;
            node = Node::binary(op, node, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut node = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(node),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            node = Node::binary(op, node, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            let literal = matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.');
            let operand = self.unary()?;
            return Ok(match operand {
                Node::Const(c) if literal => Node::Const(-c),
                other => Node::mul(Node::Const(-1.0), other),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let mut node = self.primary()?;
        while self.eat(b'^') {
            let n = self.exponent()?;
            if n == 0 {
                return Err(self.error("zero exponent"));
            }
            node = Node::pow(node, n);
        }
        Ok(node)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let parens = self.eat(b'(');
        let negative = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected integer exponent"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: i32 = digits
            .parse()
            .map_err(|_| ParseError { position: start, message: "exponent out of range".into() })?;
        if parens {
            self.expect(b')')?;
        }
        Ok(if negative { -value } else { value })
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let func = match word {
                    "x" => return Ok(Node::Var),
                    "exp" => UnaryOp::Exp,
                    "ln" => UnaryOp::Ln,
                    "cos" => UnaryOp::Cos,
                    "sin" => UnaryOp::Sin,
                    _ => {
                        if let Some(idx) = word.strip_prefix('t') {
                            if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) {
                                return idx.parse().map(Node::Param).map_err(|_| ParseError {
                                    position: start,
                                    message: "parameter index out of range".into(),
                                });
                            }
                        }
                        return Err(ParseError {
                            position: start,
                            message: format!("unknown identifier '{word}'"),
                        });
                    }
                };
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                Ok(Node::unary(func, arg))
            }
            Some(c) => Err(self.error(&format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError { position: start, message: format!("bad number '{text}'") })?;
        self.pos = i;
        Ok(Node::Const(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dimension_example() {
        let e = parse("x^3 + exp(x)*cos(x)").unwrap();
        let expected = Node::add(
            Node::pow(Node::Var, 3),
            Node::mul(Node::unary(UnaryOp::Exp, Node::Var), Node::unary(UnaryOp::Cos, Node::Var)),
        );
        assert_eq!(e.root(), &expected);
    }

    #[test]
    fn parses_single_variable() {
        assert_eq!(parse("x").unwrap().root(), &Node::Var);
        assert_eq!(parse("  t12 ").unwrap().root(), &Node::Param(12));
    }

    #[test]
    fn dangling_operator_is_error() {
        let err = parse("x +").unwrap_err();
        assert_eq!(err.position, 3);
        assert!(parse("").is_err());
        assert!(parse("x + y").is_err());
        assert!(parse("exp x").is_err());
        assert!(parse("x^0").is_err());
        assert!(parse("(x").is_err());
    }

    #[test]
    fn unary_minus_and_literals() {
        assert_eq!(parse("-2.5").unwrap().root(), &Node::Const(-2.5));
        assert_eq!(parse("(-2)").unwrap().root(), &Node::Const(-2.0));
        assert_eq!(
            parse("-x").unwrap().root(),
            &Node::mul(Node::Const(-1.0), Node::Var)
        );
        assert_eq!(parse("1e-3").unwrap().root(), &Node::Const(1e-3));
        assert_eq!(parse("x^-1").unwrap().root(), &Node::pow(Node::Var, -1));
        assert_eq!(parse("x^(-2)").unwrap().root(), &Node::pow(Node::Var, -2));
    }

    #[test]
    fn operators_are_left_associative() {
        assert_eq!(
            parse("x - 1 - 2").unwrap().root(),
            &Node::sub(Node::sub(Node::Var, Node::Const(1.0)), Node::Const(2.0))
        );
        assert_eq!(
            parse("x/2*3").unwrap().root(),
            &Node::mul(Node::div(Node::Var, Node::Const(2.0)), Node::Const(3.0))
        );
    }
}
