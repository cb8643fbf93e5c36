//! Expression trees over a single independent variable `x`.
//!
//! An [`Expression`] is an immutable tree whose leaves are constants, the
//! variable, or parameter slots (`t0`, `t1`, ...). Parameter slots are the
//! fit coefficients inserted by [`crate::transform::dimensionalize`]; raw GP
//! candidates contain only constants and the variable.

mod canonical;
mod parse;
mod program;
mod random;
mod simplify;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::{canonical_string, canonicalize, shape_string};
pub use parse::{parse, ParseError};
pub use program::Program;
pub use random::{random_expression, random_full, random_leaf, PrimitiveSet};
pub use simplify::{simplify, simplify_with_map, SlotMap};
pub(crate) use simplify::{flatten_product, flatten_sum, odd_root};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Mul)
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> Result<f64, DomainError> {
        match self {
            BinaryOp::Add => Ok(a + b),
            BinaryOp::Sub => Ok(a - b),
            BinaryOp::Mul => Ok(a * b),
            BinaryOp::Div => {
                if b == 0.0 {
                    Err(DomainError::DivisionByZero)
                } else {
                    Ok(a / b)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Exp,
    Ln,
    Sin,
    Cos,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
        }
    }

    #[inline]
    pub fn apply(self, a: f64) -> Result<f64, DomainError> {
        match self {
            UnaryOp::Exp => Ok(a.exp()),
            UnaryOp::Ln => {
                if a <= 0.0 {
                    Err(DomainError::LogOfNonPositive)
                } else {
                    Ok(a.ln())
                }
            }
            UnaryOp::Sin => Ok(a.sin()),
            UnaryOp::Cos => Ok(a.cos()),
        }
    }
}

/// Raised when an expression cannot be evaluated at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("logarithm of a non-positive operand")]
    LogOfNonPositive,
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("parameter slot t{0} has no value")]
    MissingParam(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("constant {0} is not finite")]
    NonFiniteConstant(f64),
    #[error("power exponent must be non-zero")]
    ZeroExponent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var,
    Param(usize),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Unary(UnaryOp, Box<Node>),
    Pow(Box<Node>, i32),
}

impl Node {
    pub fn binary(op: BinaryOp, left: Node, right: Node) -> Node {
        Node::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn add(left: Node, right: Node) -> Node {
        Node::binary(BinaryOp::Add, left, right)
    }

    pub fn sub(left: Node, right: Node) -> Node {
        Node::binary(BinaryOp::Sub, left, right)
    }

    pub fn mul(left: Node, right: Node) -> Node {
        Node::binary(BinaryOp::Mul, left, right)
    }

    pub fn div(left: Node, right: Node) -> Node {
        Node::binary(BinaryOp::Div, left, right)
    }

    pub fn unary(op: UnaryOp, child: Node) -> Node {
        Node::Unary(op, Box::new(child))
    }

    pub fn pow(base: Node, exponent: i32) -> Node {
        Node::Pow(Box::new(base), exponent)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Const(_) | Node::Var | Node::Param(_))
    }

    pub fn children(&self) -> Vec<&Node> {
        match self {
            Node::Binary(_, l, r) => vec![l, r],
            Node::Unary(_, c) | Node::Pow(c, _) => vec![c],
            _ => Vec::new(),
        }
    }

    /// Depth with leaves counted as depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Node::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Node::Unary(_, c) | Node::Pow(c, _) => 1 + c.depth(),
            _ => 1,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Binary(_, l, r) => 1 + l.size() + r.size(),
            Node::Unary(_, c) | Node::Pow(c, _) => 1 + c.size(),
            _ => 1,
        }
    }

    pub fn contains_var(&self) -> bool {
        match self {
            Node::Var => true,
            Node::Binary(_, l, r) => l.contains_var() || r.contains_var(),
            Node::Unary(_, c) | Node::Pow(c, _) => c.contains_var(),
            _ => false,
        }
    }

    pub fn contains_param(&self) -> bool {
        match self {
            Node::Param(_) => true,
            Node::Binary(_, l, r) => l.contains_param() || r.contains_param(),
            Node::Unary(_, c) | Node::Pow(c, _) => c.contains_param(),
            _ => false,
        }
    }

    /// Parameter slot indices in pre-order, with repeats.
    pub fn param_occurrences(&self, out: &mut Vec<usize>) {
        match self {
            Node::Param(i) => out.push(*i),
            Node::Binary(_, l, r) => {
                l.param_occurrences(out);
                r.param_occurrences(out);
            }
            Node::Unary(_, c) | Node::Pow(c, _) => c.param_occurrences(out),
            _ => {}
        }
    }

    pub fn map_params(&self, f: &mut impl FnMut(usize) -> Node) -> Node {
        match self {
            Node::Param(i) => f(*i),
            Node::Binary(op, l, r) => Node::binary(*op, l.map_params(f), r.map_params(f)),
            Node::Unary(op, c) => Node::unary(*op, c.map_params(f)),
            Node::Pow(b, n) => Node::pow(b.map_params(f), *n),
            other => other.clone(),
        }
    }

    /// Pre-order node at `index`.
    pub fn get(&self, index: usize) -> Option<&Node> {
        fn walk<'a>(node: &'a Node, target: usize, counter: &mut usize) -> Option<&'a Node> {
            if *counter == target {
                return Some(node);
            }
            *counter += 1;
            for child in node.children() {
                if let Some(found) = walk(child, target, counter) {
                    return Some(found);
                }
            }
            None
        }
        walk(self, index, &mut 0)
    }

    /// Depth (root = 1) of the pre-order node at `index`.
    pub fn depth_of(&self, index: usize) -> Option<usize> {
        fn walk(node: &Node, target: usize, counter: &mut usize, level: usize) -> Option<usize> {
            if *counter == target {
                return Some(level);
            }
            *counter += 1;
            for child in node.children() {
                if let Some(found) = walk(child, target, counter, level + 1) {
                    return Some(found);
                }
            }
            None
        }
        walk(self, index, &mut 0, 1)
    }

    /// Copy of `self` with the pre-order node at `index` replaced.
    pub fn replace(&self, index: usize, replacement: &Node) -> Node {
        fn walk(node: &Node, target: usize, counter: &mut usize, replacement: &Node) -> Node {
            if *counter == target {
                *counter += node.size();
                return replacement.clone();
            }
            *counter += 1;
            match node {
                Node::Binary(op, l, r) => {
                    let l = walk(l, target, counter, replacement);
                    let r = walk(r, target, counter, replacement);
                    Node::binary(*op, l, r)
                }
                Node::Unary(op, c) => Node::unary(*op, walk(c, target, counter, replacement)),
                Node::Pow(b, n) => Node::pow(walk(b, target, counter, replacement), *n),
                leaf => leaf.clone(),
            }
        }
        walk(self, index, &mut 0, replacement)
    }

    /// Evaluates with parameter values supplied by `param`.
    pub fn eval_with(
        &self,
        x: f64,
        param: &impl Fn(usize) -> Option<f64>,
    ) -> Result<f64, DomainError> {
        let v = self.eval_inner(x, param)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DomainError::NonFinite)
        }
    }

    fn eval_inner(
        &self,
        x: f64,
        param: &impl Fn(usize) -> Option<f64>,
    ) -> Result<f64, DomainError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var => Ok(x),
            Node::Param(i) => param(*i).ok_or(DomainError::MissingParam(*i)),
            Node::Binary(op, l, r) => {
                let a = l.eval_inner(x, param)?;
                let b = r.eval_inner(x, param)?;
                op.apply(a, b)
            }
            Node::Unary(op, c) => op.apply(c.eval_inner(x, param)?),
            Node::Pow(b, n) => Ok(b.eval_inner(x, param)?.powi(*n)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Binary(op, _, _) => op.precedence(),
            Node::Pow(_, _) => 3,
            // negative constants print parenthesized
            _ => 4,
        }
    }

    pub(crate) fn write(&self, f: &mut impl fmt::Write, anonymous_params: bool) -> fmt::Result {
        match self {
            Node::Const(c) => {
                if *c < 0.0 {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{}", c)
                }
            }
            Node::Var => f.write_str("x"),
            Node::Param(i) => {
                if anonymous_params {
                    f.write_str("t")
                } else {
                    write!(f, "t{}", i)
                }
            }
            Node::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    f.write_char('(')?;
                    l.write(f, anonymous_params)?;
                    f.write_char(')')?;
                } else {
                    l.write(f, anonymous_params)?;
                }
                match op {
                    BinaryOp::Add | BinaryOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => f.write_str(op.symbol())?,
                }
                if r.precedence() <= p {
                    f.write_char('(')?;
                    r.write(f, anonymous_params)?;
                    f.write_char(')')
                } else {
                    r.write(f, anonymous_params)
                }
            }
            Node::Unary(op, c) => {
                write!(f, "{}(", op.name())?;
                c.write(f, anonymous_params)?;
                f.write_char(')')
            }
            Node::Pow(b, n) => {
                if b.precedence() < 4 {
                    f.write_char('(')?;
                    b.write(f, anonymous_params)?;
                    f.write_char(')')?;
                } else {
                    b.write(f, anonymous_params)?;
                }
                if *n < 0 {
                    write!(f, "^({})", n)
                } else {
                    write!(f, "^{}", n)
                }
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, false)
    }
}

/// An immutable, validated expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

impl Expression {
    /// Validates that every constant is finite and every exponent non-zero.
    pub fn new(root: Node) -> Result<Self, ExprError> {
        fn check(node: &Node) -> Result<(), ExprError> {
            match node {
                Node::Const(c) if !c.is_finite() => Err(ExprError::NonFiniteConstant(*c)),
                Node::Pow(_, 0) => Err(ExprError::ZeroExponent),
                _ => node.children().into_iter().try_for_each(check),
            }
        }
        check(&root)?;
        Ok(Self { root })
    }

    /// Caller guarantees the invariants checked by [`Expression::new`].
    pub(crate) fn from_valid(root: Node) -> Self {
        debug_assert!(Expression::new(root.clone()).is_ok(), "invalid node: {root}");
        Self { root }
    }

    pub fn var() -> Self {
        Self { root: Node::Var }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    /// One past the largest parameter slot index, or 0 when there are none.
    pub fn param_count(&self) -> usize {
        let mut slots = Vec::new();
        self.root.param_occurrences(&mut slots);
        slots.into_iter().max().map_or(0, |m| m + 1)
    }

    /// Distinct parameter slots in first-appearance order.
    pub fn distinct_params(&self) -> Vec<usize> {
        let mut slots = Vec::new();
        self.root.param_occurrences(&mut slots);
        let mut seen = Vec::new();
        for s in slots {
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        seen
    }

    pub fn evaluate(&self, x: f64, theta: &[f64]) -> Result<f64, DomainError> {
        self.root.eval_with(x, &|i| theta.get(i).copied())
    }

    pub fn canonical_string(&self) -> String {
        canonical_string(self)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl std::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(c: f64) -> Expression {
        // c + cos(x^3)
        Expression::new(Node::add(
            Node::Const(c),
            Node::unary(UnaryOp::Cos, Node::pow(Node::Var, 3)),
        ))
        .unwrap()
    }

    #[test]
    fn evaluates_simple_sum() {
        let e = Expression::new(Node::add(Node::Var, Node::Const(2.0))).unwrap();
        assert_eq!(e.evaluate(3.0, &[]).unwrap(), 5.0);
    }

    #[test]
    fn evaluates_fig1_tree_at_zero() {
        assert_eq!(fig1(1.0).evaluate(0.0, &[]).unwrap(), 2.0);
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let e = parse("ln(t0*x + t1)").unwrap();
        assert_eq!(
            e.evaluate(1.0, &[1.0, -2.0]),
            Err(DomainError::LogOfNonPositive)
        );
    }

    #[test]
    fn division_by_zero_and_overflow() {
        let e = parse("1/(x - 1)").unwrap();
        assert_eq!(e.evaluate(1.0, &[]), Err(DomainError::DivisionByZero));
        let e = parse("exp(exp(x))").unwrap();
        assert_eq!(e.evaluate(10.0, &[]), Err(DomainError::NonFinite));
    }

    #[test]
    fn missing_param_is_reported() {
        let e = parse("t0 + t3*x").unwrap();
        assert_eq!(e.evaluate(1.0, &[1.0]), Err(DomainError::MissingParam(3)));
        assert_eq!(e.param_count(), 4);
    }

    #[test]
    fn rejects_invalid_nodes() {
        assert!(Expression::new(Node::Const(f64::NAN)).is_err());
        assert!(Expression::new(Node::pow(Node::Var, 0)).is_err());
    }

    #[test]
    fn replace_and_get_use_preorder() {
        let e = fig1(1.0);
        // pre-order: Add, Const, Cos, Pow, Var
        assert_eq!(e.root().get(3), Some(&Node::pow(Node::Var, 3)));
        assert_eq!(e.root().depth_of(4), Some(4));
        let r = e.root().replace(2, &Node::Var);
        assert_eq!(r, Node::add(Node::Const(1.0), Node::Var));
    }

    #[test]
    fn display_keeps_structure() {
        let e = Expression::new(Node::add(
            Node::Var,
            Node::add(Node::Const(1.0), Node::Const(-2.5)),
        ))
        .unwrap();
        assert_eq!(e.to_string(), "x + (1 + (-2.5))");
        let e = parse("(x^2)^3 - x^(-1)").unwrap();
        assert_eq!(e.to_string(), "(x^2)^3 - x^(-1)");
    }
}
