//! Dimension-consistency transform: raw candidate to parameterized template.
//!
//! Every occurrence of `x` becomes `a*x + b`, every function and power is
//! scaled by its own coefficient, a global offset is added, and every numeric
//! constant is freed into a slot. The result is simplified to irreducible
//! form, so two candidates that differ only by reparameterization share one
//! template.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{
    flatten_product, flatten_sum, odd_root, parse, simplify, BinaryOp, Expression, Node, ParseError, Program,
    UnaryOp,
};
use crate::fit::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    /// Scales `x`.
    Alpha,
    /// Shifts `x`.
    Beta,
    /// Scales a function, power or term.
    Gamma,
    /// The global output offset.
    Offset,
    /// A slot standing in for a numeric constant.
    FreedConstant,
}

impl SlotRole {
    pub fn name(self) -> &'static str {
        match self {
            SlotRole::Alpha => "alpha",
            SlotRole::Beta => "beta",
            SlotRole::Gamma => "gamma",
            SlotRole::Offset => "offset",
            SlotRole::FreedConstant => "freed_constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("candidate does not depend on x")]
    NoVariable,
    #[error("parameter slots must be contiguous from t0; t{0} is missing")]
    NonContiguousSlots(usize),
    #[error("template has no top-level offset slot")]
    MissingOffset,
    #[error("template cannot absorb an affine change of units: {0}")]
    UnnormalizableTemplate(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A parameterized expression ready for fitting.
#[derive(Debug, Clone)]
pub struct Template {
    expression: Expression,
    roles: Vec<SlotRole>,
    top_level_linear: Vec<usize>,
    gauges: Vec<Gauge>,
    program: Program,
}

/// A one-parameter family of slot values that all give the same curve.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Gauge {
    /// `g*ln(a*x + b) + c`: fixed by `|b| = 1`.
    Log { alpha: usize, beta: usize, gamma: usize, gamma_sign: f64, offset: usize, offset_sign: f64 },
    /// `g*(a*x + b)^n`: fixed by `|a| = 1`.
    Power { alpha: usize, beta: usize, gamma: usize, exponent: i32 },
}

impl PartialEq for Template {
    fn eq(&self, other: &Self) -> bool {
        self.expression == other.expression
    }
}

impl Template {
    /// Wraps an already parameterized expression, validating slot
    /// contiguity, dependence on `x`, and the presence of an offset.
    pub fn from_expression(expression: Expression) -> Result<Self, TransformError> {
        if !expression.root().contains_var() {
            return Err(TransformError::NoVariable);
        }
        let slots = expression.distinct_params();
        if let Some(missing) = (0..expression.param_count()).find(|i| slots.binary_search(i).is_err()) {
            return Err(TransformError::NonContiguousSlots(missing));
        }
        let mut roles = vec![SlotRole::FreedConstant; expression.param_count()];
        assign_roles(expression.root(), true, &mut roles);
        if !roles.contains(&SlotRole::Offset) {
            return Err(TransformError::MissingOffset);
        }
        let top_level_linear = linear_slots(expression.root(), roles.len());
        let gauges = find_gauges(expression.root(), roles.len());
        let program = Program::compile(&expression);
        Ok(Self { expression, roles, top_level_linear, gauges, program })
    }

    pub fn parse(text: &str) -> Result<Self, TransformError> {
        Self::from_expression(parse(text)?)
    }

    pub fn expression(&self) -> &Expression {
        &self.expression
    }

    /// Number of parameter slots `T`.
    pub fn param_count(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[SlotRole] {
        &self.roles
    }

    /// The slot of a `t*x` term directly in the top-level sum, if any.
    pub fn output_slope_slot(&self) -> Option<usize> {
        let mut terms = Vec::new();
        flatten_sum(self.expression.root(), false, &mut terms);
        terms.iter().find_map(|(_, t)| slope_slot(t))
    }

    /// Slots in which the template is jointly affine: the top-level offset
    /// and single-use coefficients of top-level terms.
    pub fn affine_slots(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.param_count()];
        let mut occurrences = Vec::new();
        self.expression.root().param_occurrences(&mut occurrences);
        occurrences.iter().for_each(|&i| counts[i] += 1);
        let mut terms = Vec::new();
        flatten_sum(self.expression.root(), false, &mut terms);
        let mut slots: Vec<usize> = terms
            .iter()
            .filter_map(|(_, term)| match term {
                Node::Param(i) => Some(*i),
                Node::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => {
                    let mut factors = Vec::new();
                    flatten_product(term, false, &mut factors);
                    factors.iter().find_map(|(inv, f)| match f {
                        Node::Param(i) if !inv => Some(*i),
                        _ => None,
                    })
                }
                _ => None,
            })
            .filter(|&i| counts[i] == 1)
            .collect();
        slots.sort_unstable();
        slots.dedup();
        slots
    }

    /// The top-level offset slot.
    pub fn offset_slot(&self) -> usize {
        self.roles.iter().position(|r| *r == SlotRole::Offset).expect("validated on construction")
    }

    /// Slots that scale or shift the output directly.
    pub fn top_level_linear(&self) -> &[usize] {
        &self.top_level_linear
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn canonical_string(&self) -> String {
        self.expression.canonical_string()
    }

    /// Sidecar role map: slot index to role name.
    pub fn role_map(&self) -> BTreeMap<usize, SlotRole> {
        self.roles.iter().copied().enumerate().collect()
    }

    pub fn evaluate(&self, x: f64, theta: &[f64]) -> Result<f64, crate::expr::DomainError> {
        self.expression.evaluate(x, theta)
    }

    /// Moves `theta` along the template's exact redundancies to a fixed
    /// representative, leaving the curve unchanged: in `g*ln(a*x + b)` the
    /// scale of the argument goes to the offset, and in `g*(a*x + b)^n` it
    /// goes to `g`.
    pub fn fix_gauge(&self, theta: &mut [f64]) {
        for gauge in &self.gauges {
            match *gauge {
                Gauge::Log { alpha, beta, gamma, gamma_sign, offset, offset_sign } => {
                    let scale = theta[beta].abs();
                    if scale > 0.0 && scale.is_finite() {
                        theta[offset] += offset_sign * gamma_sign * theta[gamma] * scale.ln();
                        theta[alpha] /= scale;
                        theta[beta] /= scale;
                    }
                }
                Gauge::Power { alpha, beta, gamma, exponent } => {
                    let scale = theta[alpha].abs();
                    if scale > 0.0 && scale.is_finite() {
                        theta[gamma] *= scale.powi(exponent);
                        theta[alpha] /= scale;
                        theta[beta] /= scale;
                    }
                }
            }
        }
    }
}

/// Slots `(a, b)` of an argument `a*x + b`, each possibly negated.
fn affine_argument(node: &Node) -> Option<(usize, usize)> {
    let mut terms = Vec::new();
    flatten_sum(node, false, &mut terms);
    match terms.as_slice() {
        [(_, p), (_, q)] => match (slope_slot(p), slope_slot(q), p, q) {
            (Some(a), None, _, Node::Param(b)) | (None, Some(a), Node::Param(b), _) => Some((a, *b)),
            _ => None,
        },
        _ => None,
    }
}

fn find_gauges(root: &Node, count: usize) -> Vec<Gauge> {
    let mut counts = vec![0usize; count];
    let mut occurrences = Vec::new();
    root.param_occurrences(&mut occurrences);
    occurrences.iter().for_each(|&i| counts[i] += 1);
    let single = |i: usize| counts[i] == 1;
    let sign = |negated: bool| if negated { -1.0 } else { 1.0 };

    let mut terms = Vec::new();
    flatten_sum(root, false, &mut terms);
    let offset = terms.iter().find_map(|(neg, t)| match t {
        Node::Param(i) if single(*i) => Some((*i, sign(*neg))),
        _ => None,
    });
    let mut gauges = Vec::new();
    for (negated, term) in &terms {
        let mut factors = Vec::new();
        flatten_product(term, false, &mut factors);
        let [(false, p), (false, q)] = factors.as_slice() else { continue };
        let (gamma, inner) = match (p, q) {
            (Node::Param(g), other) | (other, Node::Param(g)) if single(*g) => (*g, other),
            _ => continue,
        };
        let gauge = match inner {
            Node::Unary(UnaryOp::Ln, arg) => match (affine_argument(arg), offset) {
                (Some((alpha, beta)), Some((offset, offset_sign))) => Gauge::Log {
                    alpha,
                    beta,
                    gamma,
                    gamma_sign: sign(*negated),
                    offset,
                    offset_sign,
                },
                _ => continue,
            },
            Node::Pow(arg, exponent) => match affine_argument(arg) {
                Some((alpha, beta)) => Gauge::Power { alpha, beta, gamma, exponent: *exponent },
                None => continue,
            },
            _ => continue,
        };
        let (Gauge::Log { alpha, beta, .. } | Gauge::Power { alpha, beta, .. }) = gauge;
        if single(alpha) && single(beta) {
            gauges.push(gauge);
        }
    }
    gauges
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expression.fmt(f)
    }
}

impl FromStr for Template {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

fn insert_slots(node: &Node, next: &mut usize) -> Node {
    let mut fresh = || {
        *next += 1;
        Node::Param(*next - 1)
    };
    match node {
        Node::Var => {
            let a = fresh();
            let b = fresh();
            Node::add(Node::mul(a, Node::Var), b)
        }
        Node::Const(_) | Node::Param(_) => fresh(),
        Node::Binary(op, l, r) => {
            let l = insert_slots(l, next);
            let r = insert_slots(r, next);
            Node::binary(*op, l, r)
        }
        Node::Unary(op, c) => {
            let g = fresh();
            Node::mul(g, Node::unary(*op, insert_slots(c, next)))
        }
        Node::Pow(b, n) => {
            let g = fresh();
            Node::mul(g, Node::pow(insert_slots(b, next), *n))
        }
    }
}

/// Inserts the transformation slots into a raw candidate and simplifies.
/// Existing parameter slots are treated like constants and freed.
pub fn dimensionalize(candidate: &Expression) -> Result<Template, TransformError> {
    if !candidate.root().contains_var() {
        return Err(TransformError::NoVariable);
    }
    let mut next = 0;
    let body = insert_slots(candidate.root(), &mut next);
    let offset = Node::Param(next);
    let raw = Expression::from_valid(Node::add(body, offset));
    let simplified = simplify(&raw);
    if !simplified.root().contains_var() {
        return Err(TransformError::NoVariable);
    }
    Template::from_expression(simplified)
}

fn slope_slot(node: &Node) -> Option<usize> {
    match node {
        Node::Binary(BinaryOp::Mul, a, b) => match (&**a, &**b) {
            (Node::Param(i), Node::Var) | (Node::Var, Node::Param(i)) => Some(*i),
            _ => None,
        },
        _ => None,
    }
}

fn assign_roles(node: &Node, top: bool, roles: &mut [SlotRole]) {
    match node {
        Node::Param(i) if top => roles[*i] = SlotRole::Offset,
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => {
            let mut terms = Vec::new();
            flatten_sum(node, false, &mut terms);
            let affine = terms.iter().any(|(_, t)| slope_slot(t).is_some());
            for (_, term) in &terms {
                match term {
                    Node::Param(i) if top => roles[*i] = SlotRole::Offset,
                    Node::Param(i) if affine => roles[*i] = SlotRole::Beta,
                    Node::Param(_) => {}
                    t => match slope_slot(t) {
                        Some(i) => roles[i] = SlotRole::Alpha,
                        None => assign_roles(t, false, roles),
                    },
                }
            }
        }
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => {
            if let Some(i) = slope_slot(node) {
                roles[i] = SlotRole::Alpha;
                return;
            }
            let mut factors = Vec::new();
            flatten_product(node, false, &mut factors);
            for (_, factor) in &factors {
                match factor {
                    Node::Param(i) => roles[*i] = SlotRole::Gamma,
                    f => assign_roles(f, false, roles),
                }
            }
        }
        Node::Unary(_, c) | Node::Pow(c, _) => assign_roles(c, false, roles),
        _ => {}
    }
}

fn linear_slots(root: &Node, count: usize) -> Vec<usize> {
    let before: Vec<f64> = (0..count).map(|i| 1.0 + 0.125 * i as f64).collect();
    let mut after = before.clone();
    if !absorb_output(root, 2.0, 1.0, &mut after) {
        return Vec::new();
    }
    (0..count).filter(|&i| after[i] != before[i]).collect()
}

/// Change still owed to a subtree's parent after substituting the
/// normalized variable: `old = new + d` or `old = m * new`.
#[derive(Debug, Clone, Copy)]
enum Pending {
    None,
    Add(f64),
    Mul(f64),
}

type Walk<T> = Result<T, String>;

/// Rewrites slots so the subtree, evaluated at raw `x`, equals its old value
/// at `(x - x_min) / s_x`, up to the returned pending change.
fn substitute_x(node: &Node, theta: &mut [f64], s_x: f64, x_min: f64) -> Walk<Pending> {
    if let Some(i) = slope_slot(node) {
        let old = theta[i];
        theta[i] = old / s_x;
        return Ok(Pending::Add(-old * x_min / s_x));
    }
    match node {
        Node::Const(_) | Node::Param(_) => Ok(Pending::None),
        Node::Var => Err("bare x outside a scaled group".into()),
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => {
            let mut terms = Vec::new();
            flatten_sum(node, false, &mut terms);
            let mut delta = 0.0;
            for (neg, term) in &terms {
                let sign = if *neg { -1.0 } else { 1.0 };
                match substitute_x(term, theta, s_x, x_min)? {
                    Pending::None => {}
                    Pending::Add(d) => delta += sign * d,
                    Pending::Mul(m) => {
                        if !absorb(term, m, 0.0, theta) {
                            return Err(format!("cannot rescale term {term}"));
                        }
                    }
                }
            }
            if delta == 0.0 {
                return Ok(Pending::None);
            }
            match terms.iter().find(|(_, t)| matches!(t, Node::Param(_))) {
                Some((neg, Node::Param(j))) => {
                    theta[*j] += if *neg { -delta } else { delta };
                    Ok(Pending::None)
                }
                _ => Ok(Pending::Add(delta)),
            }
        }
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => {
            let mut factors = Vec::new();
            flatten_product(node, false, &mut factors);
            // a shift passes through constant factors: c * (u + d) = c*u + c*d
            let constant = factors.iter().fold(1.0, |acc, (inv, f)| match f {
                Node::Const(c) if *inv => acc / c,
                Node::Const(c) => acc * c,
                _ => acc,
            });
            let others = factors.iter().filter(|(_, f)| !matches!(f, Node::Const(_))).count();
            let mut m_total = 1.0;
            for (inv, factor) in &factors {
                match substitute_x(factor, theta, s_x, x_min)? {
                    Pending::None => {}
                    Pending::Mul(m) => m_total *= if *inv { 1.0 / m } else { m },
                    Pending::Add(d) if others == 1 && !*inv => return Ok(Pending::Add(constant * d)),
                    Pending::Add(_) => return Err(format!("unabsorbed shift in factor {factor}")),
                }
            }
            if m_total == 1.0 || absorb(node, m_total, 0.0, theta) {
                Ok(Pending::None)
            } else {
                Ok(Pending::Mul(m_total))
            }
        }
        Node::Unary(op, arg) => match (op, substitute_x(arg, theta, s_x, x_min)?) {
            (_, Pending::None) => Ok(Pending::None),
            (UnaryOp::Exp, Pending::Add(d)) => Ok(Pending::Mul(d.exp())),
            (UnaryOp::Ln, Pending::Mul(m)) if m > 0.0 => Ok(Pending::Add(m.ln())),
            (op, _) => Err(format!("{} argument cannot absorb the change", op.name())),
        },
        Node::Pow(base, n) => match substitute_x(base, theta, s_x, x_min)? {
            Pending::None => Ok(Pending::None),
            Pending::Mul(m) => Ok(Pending::Mul(m.powi(*n))),
            Pending::Add(_) => Err("power base cannot absorb a shift".into()),
        },
    }
}

/// Transactional [`absorb_output`]: `theta` is untouched on failure.
fn absorb(node: &Node, scale: f64, shift: f64, theta: &mut [f64]) -> bool {
    let mut trial = theta.to_vec();
    if absorb_output(node, scale, shift, &mut trial) {
        theta.copy_from_slice(&trial);
        true
    } else {
        false
    }
}

/// Rewrites slots so the subtree's new value is `scale * old + shift`.
fn absorb_output(node: &Node, scale: f64, shift: f64, theta: &mut [f64]) -> bool {
    if scale == 1.0 && shift == 0.0 {
        return true;
    }
    if !scale.is_finite() || !shift.is_finite() {
        return false;
    }
    match node {
        Node::Param(i) => {
            theta[*i] = scale * theta[*i] + shift;
            true
        }
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => {
            let mut terms = Vec::new();
            flatten_sum(node, false, &mut terms);
            let offset = terms.iter().position(|(_, t)| matches!(t, Node::Param(_)));
            if shift != 0.0 && offset.is_none() {
                return false;
            }
            terms.iter().enumerate().all(|(k, (neg, term))| {
                let term_shift = match (Some(k) == offset, neg) {
                    (true, false) => shift,
                    (true, true) => -shift,
                    (false, _) => 0.0,
                };
                absorb_output(term, scale, term_shift, theta)
            })
        }
        _ if shift != 0.0 => false,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => {
            let mut factors = Vec::new();
            flatten_product(node, false, &mut factors);
            let factor_scale = |inv: bool| if inv { 1.0 / scale } else { scale };
            if let Some((inv, Node::Param(i))) = factors.iter().find(|(_, f)| matches!(f, Node::Param(_))) {
                theta[*i] *= factor_scale(*inv);
                return true;
            }
            factors.iter().any(|(inv, f)| {
                matches!(f, Node::Pow(_, _) | Node::Binary(..) | Node::Unary(UnaryOp::Exp, _))
                    && absorb(f, factor_scale(*inv), 0.0, theta)
            })
        }
        Node::Pow(base, n) if n % 2 != 0 => absorb_output(base, odd_root(scale, *n), 0.0, theta),
        Node::Unary(UnaryOp::Exp, arg) if scale > 0.0 => absorb_output(arg, 1.0, scale.ln(), theta),
        _ => false,
    }
}

/// Maps parameters fitted on min-max normalized data back to raw units.
///
/// The result satisfies `f(x; theta) = y_min + s_y * f((x - x_min) / s_x; theta_hat)`.
pub fn unnormalize_params(
    template: &Template,
    theta_hat: &[f64],
    norm: &NormStats,
) -> Result<Vec<f64>, TransformError> {
    let root = template.expression.root();
    let mut occurrences = Vec::new();
    root.param_occurrences(&mut occurrences);
    let mut seen = vec![false; template.param_count()];
    for i in occurrences {
        if std::mem::replace(&mut seen[i], true) {
            return Err(TransformError::UnnormalizableTemplate(format!("slot t{i} is shared")));
        }
    }

    let mut theta = theta_hat.to_vec();
    let pending =
        substitute_x(root, &mut theta, norm.x_range, norm.x_min).map_err(TransformError::UnnormalizableTemplate)?;
    let (scale, shift) = match pending {
        Pending::None => (norm.y_range, norm.y_min),
        Pending::Add(d) => (norm.y_range, norm.y_min + norm.y_range * d),
        Pending::Mul(m) => (norm.y_range * m, norm.y_min),
    };
    if !absorb(root, scale, shift, &mut theta) {
        return Err(TransformError::UnnormalizableTemplate("output has no linear scale or offset".into()));
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{random_expression, PrimitiveSet};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dim(text: &str) -> Template {
        dimensionalize(&parse(text).unwrap()).unwrap()
    }

    fn norm(x_min: f64, x_range: f64, y_min: f64, y_range: f64) -> NormStats {
        NormStats { x_min, x_range, y_min, y_range, x_degenerate: false, y_degenerate: false }
    }

    #[test]
    fn gauge_fixing_keeps_the_curve() {
        let t = Template::parse("t0*ln(t1*x + t2) + t3*x + t4").unwrap();
        let mut theta = vec![1.3, -0.8, 3.5, 0.4, 2.0];
        let before: Vec<f64> = (0..10).map(|i| t.evaluate(0.3 * i as f64, &theta).unwrap()).collect();
        t.fix_gauge(&mut theta);
        assert_eq!(theta[2], 1.0);
        assert!((theta[1] + 0.8 / 3.5).abs() < 1e-15);
        for (i, b) in before.iter().enumerate() {
            assert!((t.evaluate(0.3 * i as f64, &theta).unwrap() - b).abs() < 1e-12);
        }

        let t = Template::parse("t0*(t1*x + t2)^2 + t3").unwrap();
        let mut theta = vec![0.5, -4.0, 2.0, 1.0];
        t.fix_gauge(&mut theta);
        assert_eq!(theta, vec![8.0, -1.0, 0.5, 1.0]);

        let t = Template::parse("t0*ln(t1*x + t2)*x + t3").unwrap();
        let mut theta = vec![1.0, 1.0, 3.0, 0.0];
        t.fix_gauge(&mut theta);
        assert_eq!(theta, vec![1.0, 1.0, 3.0, 0.0]);
    }

    #[test]
    fn dimension_example_param_counts() {
        let even = dim("x^2 + exp(x)*cos(x)");
        assert_eq!(even.param_count(), 8, "{even}");
        let odd = dim("x^3 + exp(x)*cos(x)");
        assert_eq!(odd.param_count(), 7, "{odd}");
        assert_eq!(dim("x").to_string(), "t0*x + t1");
        assert_eq!(dim("x").roles(), &[SlotRole::Alpha, SlotRole::Offset]);
    }

    #[test]
    fn expression_tree_example_is_stable() {
        let a = dim("1 + cos(x^3)");
        let b = dim("cos(x^3) + 1");
        assert_eq!(a.param_count(), 4, "{a}");
        assert_eq!(a.canonical_string(), b.canonical_string());
    }

    #[test]
    fn constant_candidates_are_rejected() {
        assert_eq!(dimensionalize(&parse("3 + cos(2)").unwrap()), Err(TransformError::NoVariable));
    }

    #[test]
    fn template_validation() {
        assert_eq!(Template::parse("t0*x + t2"), Err(TransformError::NonContiguousSlots(1)));
        assert_eq!(Template::parse("t0*exp(t1*x)"), Err(TransformError::MissingOffset));
        assert!(Template::parse("t0*exp(t1*x) + t2").is_ok());
    }

    #[test]
    fn roles_of_exponential_template() {
        let t = Template::parse("t0*exp(t1*x) + t2").unwrap();
        assert_eq!(t.roles(), &[SlotRole::Gamma, SlotRole::Alpha, SlotRole::Offset]);
        assert_eq!(t.top_level_linear(), &[0, 2]);
    }

    #[test]
    fn identity_normalization_keeps_theta() {
        let t = Template::parse("t0*ln(t1*x + t2) + t3*x + t4").unwrap();
        let theta = [0.5, 1.5, 2.0, -0.25, 3.0];
        assert_eq!(unnormalize_params(&t, &theta, &NormStats::identity()).unwrap(), theta);
    }

    #[test]
    fn linear_hand_example() {
        let t = Template::parse("t0*x + t1").unwrap();
        let theta = unnormalize_params(&t, &[1.0, 0.0], &norm(1.0, 2.0, 0.0, 3.0)).unwrap();
        assert!((theta[0] - 1.5).abs() < 1e-15 && (theta[1] + 1.5).abs() < 1e-15, "{theta:?}");
    }

    #[test]
    fn shared_slots_are_unnormalizable() {
        let t = Template::parse("t0*x + t0*exp(t1*x) + t2").unwrap();
        assert!(matches!(
            unnormalize_params(&t, &[1.0, 1.0, 1.0], &norm(1.0, 2.0, 0.0, 3.0)),
            Err(TransformError::UnnormalizableTemplate(_))
        ));
    }

    fn check_round_trip(t: &Template, theta_hat: &[f64], n: &NormStats) -> Result<(), String> {
        let theta = unnormalize_params(t, theta_hat, n).map_err(|e| format!("{t}: {e}"))?;
        for k in 0..=10 {
            let x = n.x_min + n.x_range * k as f64 / 10.0;
            let Ok(normalized) = t.evaluate(n.normalize_x(x), theta_hat) else { continue };
            let expected = n.denormalize_y(normalized);
            let Ok(raw) = t.evaluate(x, &theta) else {
                return Err(format!("{t}: raw evaluation failed at {x}"));
            };
            let tol = 1e-9 * expected.abs().max(n.y_range).max(1.0);
            if (raw - expected).abs() > tol {
                return Err(format!("{t}: {raw} vs {expected} at x = {x}"));
            }
        }
        Ok(())
    }

    #[test]
    fn exponential_round_trip() {
        let t = Template::parse("t0*exp(t1*x) + t2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let theta_hat: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let n = norm(rng.random_range(-5.0..5.0), rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0), rng.random_range(0.1..10.0));
            check_round_trip(&t, &theta_hat, &n).unwrap();
        }
    }

    use rand::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn dimensionalized_templates_unnormalize(
            seed in any::<u64>(),
            x_min in -5.0..5.0f64, x_range in 0.1..20.0f64,
            y_min in -5.0..5.0f64, y_range in 0.1..20.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = random_expression(&PrimitiveSet::default(), 5, &mut rng);
            if let Ok(t) = dimensionalize(&raw) {
                let theta_hat: Vec<f64> = (0..t.param_count()).map(|_| rng.random_range(0.2..1.5)).collect();
                let n = norm(x_min, x_range, y_min, y_range);
                prop_assert!(check_round_trip(&t, &theta_hat, &n).is_ok(), "{:?}", check_round_trip(&t, &theta_hat, &n));
            }
        }

        #[test]
        fn dimensionalize_is_idempotent_in_count(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = random_expression(&PrimitiveSet::default(), 5, &mut rng);
            if let Ok(t) = dimensionalize(&raw) {
                let again = dimensionalize(&simplify(t.expression())).unwrap();
                prop_assert_eq!(again.param_count(), t.param_count(), "{} vs {}", t, again);
            }
        }

        #[test]
        fn param_count_bounds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = random_expression(&PrimitiveSet::default(), 5, &mut rng);
            let mut ops = 0;
            let mut vars = 0;
            let mut consts = 0;
            for i in 0..raw.size() {
                match raw.root().get(i).unwrap() {
                    Node::Var => vars += 1,
                    Node::Const(_) => consts += 1,
                    _ => ops += 1,
                }
            }
            if let Ok(t) = dimensionalize(&raw) {
                prop_assert!(t.param_count() >= 2);
                prop_assert!(t.param_count() <= 3 * ops + 2 * vars + consts + 1);
            }
        }
    }
}
