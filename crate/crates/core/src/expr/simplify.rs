//! Rewriting to an irreducible form.
//!
//! Rules, applied bottom-up and repeated until the canonical string stops
//! changing:
//!
//! * constant folding and identity elimination (`+0`, `*1`, `/1`, `^1`, `^0`);
//! * any subtree built only from constants and *free* slots (slots used
//!   exactly once) collapses into one fresh slot;
//! * sums: all free-slot and constant terms merge into one offset slot;
//!   terms sharing a slot-free body merge their coefficients; a lone negated
//!   term with a free coefficient absorbs the sign;
//! * products: free-slot and constant factors merge into one coefficient;
//!   `exp` factors merge into a single `exp`; a free offset inside an `exp`
//!   argument moves into the coefficient; a coefficient multiplying a sum
//!   raised to an odd power `n` (including `n = ±1`) is absorbed when every
//!   term of the sum carries its own free slot, as in `(a*x + b)^n` or
//!   `a*exp(c*x) + b*x`;
//!   a factor of -1 distributes over a sum;
//! * powers: `(u^m)^n = u^(m*n)`, `exp(u)^n = exp(n*u)` when the `n` is
//!   absorbed by slots, and a coefficient inside a power is pulled out.
//!
//! Every rewrite records how each new slot is computed from the original
//! parameters, so callers can map a parameter vector for the input onto an
//! equivalent one for the output.

use std::fmt;
use std::sync::Arc;

use super::canonical::{canonicalize_node, compare_nodes};
use super::{BinaryOp, Expression, Node, UnaryOp};

const MAX_PASSES: usize = 32;

type SlotFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Values of the simplified expression's slots as functions of the
/// original expression's parameter vector.
#[derive(Clone)]
pub struct SlotMap {
    slots: Vec<SlotFn>,
    source_len: usize,
}

impl SlotMap {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of parameters the original expression takes.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Maps an original parameter vector onto the simplified expression's
    /// slots. Entries are NaN where the mapping leaves its domain.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        assert!(theta.len() >= self.source_len, "parameter vector too short");
        self.slots.iter().map(|f| f(theta)).collect()
    }
}

impl fmt::Debug for SlotMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlotMap")
            .field("slots", &self.slots.len())
            .field("source_len", &self.source_len)
            .finish()
    }
}

pub fn simplify(expr: &Expression) -> Expression {
    simplify_with_map(expr).0
}

pub fn simplify_with_map(expr: &Expression) -> (Expression, SlotMap) {
    let source_len = expr.param_count();
    let mut maps: Vec<SlotFn> = (0..source_len)
        .map(|i| Arc::new(move |theta: &[f64]| theta[i]) as SlotFn)
        .collect();
    let mut node = expr.root().clone();
    let mut last = node.to_string();
    for _ in 0..MAX_PASSES {
        let mut uses = vec![0usize; maps.len()];
        let mut occ = Vec::new();
        node.param_occurrences(&mut occ);
        for i in occ {
            uses[i] += 1;
        }
        let mut s = Simplifier { maps, uses };
        let out = s.simp(&node);
        let (canon, order) = canonicalize_node(&out);
        maps = order.iter().map(|&i| s.maps[i].clone()).collect();
        node = canon;
        let text = node.to_string();
        if text == last {
            break;
        }
        last = text;
    }
    (Expression::from_valid(node), SlotMap { slots: maps, source_len })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purity {
    /// Only constants.
    Const,
    /// Constants and free slots, at least one slot.
    Pure,
    /// Contains the variable or a shared slot.
    Impure,
}

/// A term of a sum whose scale is carried by its own free slot.
struct ScaledTerm {
    slot: usize,
    body: Option<Node>,
}

struct Simplifier {
    maps: Vec<SlotFn>,
    uses: Vec<usize>,
}

pub(crate) fn odd_root(value: f64, m: i32) -> f64 {
    if m == 1 {
        value
    } else if m == -1 {
        1.0 / value
    } else {
        value.signum() * value.abs().powf(1.0 / m as f64)
    }
}

pub(crate) fn flatten_sum(node: &Node, negated: bool, out: &mut Vec<(bool, Node)>) {
    match node {
        Node::Binary(BinaryOp::Add, l, r) => {
            flatten_sum(l, negated, out);
            flatten_sum(r, negated, out);
        }
        Node::Binary(BinaryOp::Sub, l, r) => {
            flatten_sum(l, negated, out);
            flatten_sum(r, !negated, out);
        }
        other => out.push((negated, other.clone())),
    }
}

pub(crate) fn flatten_product(node: &Node, inverted: bool, out: &mut Vec<(bool, Node)>) {
    match node {
        Node::Binary(BinaryOp::Mul, l, r) => {
            flatten_product(l, inverted, out);
            flatten_product(r, inverted, out);
        }
        Node::Binary(BinaryOp::Div, l, r) => {
            flatten_product(l, inverted, out);
            flatten_product(r, !inverted, out);
        }
        other => out.push((inverted, other.clone())),
    }
}

fn build_sum(terms: Vec<(bool, Node)>) -> Node {
    let (pos, neg): (Vec<_>, Vec<_>) = terms.into_iter().partition(|(n, _)| !n);
    let mut acc = pos.into_iter().map(|(_, t)| t).reduce(Node::add);
    for (_, t) in neg {
        acc = Some(match acc {
            Some(a) => Node::sub(a, t),
            None => Node::mul(Node::Const(-1.0), t),
        });
    }
    acc.unwrap_or(Node::Const(0.0))
}

fn build_product(factors: Vec<(bool, Node)>) -> Node {
    let (num, den): (Vec<_>, Vec<_>) = factors.into_iter().partition(|(inv, _)| !inv);
    let num = num.into_iter().map(|(_, f)| f).reduce(Node::mul).unwrap_or(Node::Const(1.0));
    match den.into_iter().map(|(_, f)| f).reduce(Node::mul) {
        Some(d) => Node::div(num, d),
        None => num,
    }
}

impl Simplifier {
    fn is_free(&self, slot: usize) -> bool {
        self.uses.get(slot) == Some(&1)
    }

    fn purity(&self, node: &Node) -> Purity {
        match node {
            Node::Const(_) => Purity::Const,
            Node::Var => Purity::Impure,
            Node::Param(i) => {
                if self.is_free(*i) {
                    Purity::Pure
                } else {
                    Purity::Impure
                }
            }
            _ => node.children().into_iter().fold(Purity::Const, |acc, c| {
                match (acc, self.purity(c)) {
                    (Purity::Impure, _) | (_, Purity::Impure) => Purity::Impure,
                    (Purity::Pure, _) | (_, Purity::Pure) => Purity::Pure,
                    _ => Purity::Const,
                }
            }),
        }
    }

    fn value_fn(&self, node: &Node) -> SlotFn {
        let mut refs = Vec::new();
        node.param_occurrences(&mut refs);
        refs.sort_unstable();
        refs.dedup();
        let deps: Vec<(usize, SlotFn)> = refs.iter().map(|&i| (i, self.maps[i].clone())).collect();
        let node = node.clone();
        Arc::new(move |theta: &[f64]| {
            let values: Vec<(usize, f64)> = deps.iter().map(|(i, f)| (*i, f(theta))).collect();
            node.eval_with(0.0, &|i| values.iter().find(|(j, _)| *j == i).map(|(_, v)| *v))
                .unwrap_or(f64::NAN)
        })
    }

    fn fresh(&mut self, f: SlotFn) -> Node {
        self.maps.push(f);
        self.uses.push(1);
        Node::Param(self.maps.len() - 1)
    }

    /// Replaces a pure or constant node by a single slot or folded constant.
    fn collapse(&mut self, node: Node) -> Node {
        match self.purity(&node) {
            Purity::Const => match node.eval_with(0.0, &|_| None) {
                Ok(v) => Node::Const(v),
                Err(_) => node,
            },
            Purity::Pure if matches!(node, Node::Param(_)) => node,
            Purity::Pure => {
                let f = self.value_fn(&node);
                self.fresh(f)
            }
            Purity::Impure => node,
        }
    }

    fn simp(&mut self, node: &Node) -> Node {
        let node = match node {
            Node::Binary(op, l, r) => Node::binary(*op, self.simp(l), self.simp(r)),
            Node::Unary(op, c) => Node::unary(*op, self.simp(c)),
            Node::Pow(b, n) => Node::pow(self.simp(b), *n),
            Node::Const(c) if *c == 0.0 => return Node::Const(0.0),
            leaf => return leaf.clone(),
        };
        if self.purity(&node) != Purity::Impure {
            let collapsed = self.collapse(node);
            if collapsed.is_leaf() {
                return collapsed;
            }
            return self.structural(collapsed);
        }
        self.structural(node)
    }

    fn structural(&mut self, node: Node) -> Node {
        match node {
            Node::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => self.sum(&node),
            Node::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => self.product(&node),
            Node::Pow(b, n) => self.power(*b, n),
            other => other,
        }
    }

    /// Splits a product term into (coefficient, body).
    fn split_coef(&self, term: &Node) -> (Option<Node>, Node) {
        match term {
            Node::Binary(BinaryOp::Mul, _, _) => {
                let mut factors = Vec::new();
                flatten_product(term, false, &mut factors);
                let pure: Vec<usize> = factors
                    .iter()
                    .enumerate()
                    .filter(|(_, (inv, f))| !inv && self.purity(f) != Purity::Impure)
                    .map(|(i, _)| i)
                    .collect();
                if pure.len() != 1 || factors.iter().any(|(inv, _)| *inv) {
                    return (None, term.clone());
                }
                let coef = factors.remove(pure[0]).1;
                (Some(coef), build_product(factors))
            }
            Node::Binary(BinaryOp::Div, n, d) => {
                if matches!(**n, Node::Const(c) if c == 1.0) {
                    return (None, term.clone());
                }
                if self.purity(n) != Purity::Impure {
                    return (Some((**n).clone()), Node::div(Node::Const(1.0), (**d).clone()));
                }
                match self.split_coef(n) {
                    (Some(c), body) => (Some(c), Node::div(body, (**d).clone())),
                    (None, _) => (None, term.clone()),
                }
            }
            _ => (None, term.clone()),
        }
    }

    fn sum(&mut self, node: &Node) -> Node {
        let mut terms = Vec::new();
        flatten_sum(node, false, &mut terms);

        let (offsets, others): (Vec<_>, Vec<_>) =
            terms.into_iter().partition(|(_, t)| self.purity(t) != Purity::Impure);
        let mut result: Vec<(bool, Node)> = Vec::new();
        if !offsets.is_empty() {
            let single_param = offsets.len() == 1 && !offsets[0].0 && matches!(offsets[0].1, Node::Param(_));
            if single_param {
                result.push(offsets[0].clone());
            } else {
                match self.collapse(build_sum(offsets)) {
                    Node::Const(0.0) => {}
                    other => result.push((false, other)),
                }
            }
        }

        // group terms whose slot-free bodies coincide
        let mut groups: Vec<(Option<String>, Vec<(bool, Option<Node>)>, Node)> = Vec::new();
        for (neg, term) in others {
            let (coef, body) = self.split_coef(&term);
            let key = (!body.contains_param()).then(|| body.to_string());
            match key.as_ref().and_then(|k| groups.iter_mut().find(|g| g.0.as_ref() == Some(k))) {
                Some(group) => group.1.push((neg, coef)),
                None => groups.push((key, vec![(neg, coef)], body)),
            }
        }

        for (_, coefs, body) in groups {
            if coefs.len() == 1 {
                let (neg, coef) = coefs.into_iter().next().unwrap();
                match coef {
                    Some(c) if neg => {
                        let flipped = self.collapse(Node::mul(Node::Const(-1.0), c));
                        result.push((false, self.product(&Node::mul(flipped, body))));
                    }
                    Some(c) => result.push((false, self.product(&Node::mul(c, body)))),
                    None => result.push((neg, body)),
                }
                continue;
            }
            let combined = build_sum(
                coefs.into_iter().map(|(neg, c)| (neg, c.unwrap_or(Node::Const(1.0)))).collect(),
            );
            match self.collapse(combined) {
                Node::Const(0.0) => {}
                Node::Const(1.0) => result.push((false, body)),
                c => result.push((false, self.product(&Node::mul(c, body)))),
            }
        }

        if result.len() == 1 && !result[0].0 {
            return result.pop().unwrap().1;
        }
        build_sum(result)
    }

    /// Splits a sum into terms that each carry a free coefficient slot (or
    /// are one); at least one term must depend on `x`.
    fn as_scalable(&self, node: &Node) -> Option<Vec<(bool, ScaledTerm)>> {
        let mut terms = Vec::new();
        flatten_sum(node, false, &mut terms);
        let mut out = Vec::with_capacity(terms.len());
        for (neg, t) in terms {
            let term = match &t {
                Node::Param(i) if self.is_free(*i) => ScaledTerm { slot: *i, body: None },
                _ => match self.split_coef(&t) {
                    (Some(Node::Param(i)), body) if self.is_free(i) => ScaledTerm { slot: i, body: Some(body) },
                    _ => return None,
                },
            };
            out.push((neg, term));
        }
        out.iter().any(|(_, t)| t.body.as_ref().is_some_and(Node::contains_var)).then_some(out)
    }

    /// Rebuilds a scalable sum with every slot multiplied by
    /// `odd_root(coef, m)`.
    fn absorb_into_sum(&mut self, terms: Vec<(bool, ScaledTerm)>, coef: SlotFn, m: i32) -> Node {
        let mut rebuilt = Vec::with_capacity(terms.len());
        for (neg, term) in terms {
            let base = self.maps[term.slot].clone();
            let k = coef.clone();
            let p = self.fresh(Arc::new(move |theta: &[f64]| base(theta) * odd_root(k(theta), m)));
            rebuilt.push((
                neg,
                match term.body {
                    None => p,
                    Some(body) => Node::mul(p, body),
                },
            ));
        }
        build_sum(rebuilt)
    }

    fn product(&mut self, node: &Node) -> Node {
        let mut factors = Vec::new();
        flatten_product(node, false, &mut factors);

        let (coef_factors, mut others): (Vec<_>, Vec<_>) =
            factors.into_iter().partition(|(_, f)| self.purity(f) != Purity::Impure);
        let mut coef: Option<Node> = if coef_factors.is_empty() {
            None
        } else if coef_factors.len() == 1 && !coef_factors[0].0 && matches!(coef_factors[0].1, Node::Param(_)) {
            Some(coef_factors[0].1.clone())
        } else {
            match self.collapse(build_product(coef_factors)) {
                Node::Const(1.0) => None,
                other => Some(other),
            }
        };

        // merge exponentials
        let exp_count = others.iter().filter(|(_, f)| matches!(f, Node::Unary(UnaryOp::Exp, _))).count();
        let lone_inverted = exp_count == 1
            && others.iter().any(|(inv, f)| *inv && matches!(f, Node::Unary(UnaryOp::Exp, _)));
        if exp_count >= 2 || lone_inverted {
            let mut args = Vec::new();
            others.retain(|(inv, f)| match f {
                Node::Unary(UnaryOp::Exp, a) => {
                    args.push((*inv, (**a).clone()));
                    false
                }
                _ => true,
            });
            let arg = if args.len() == 1 {
                self.product(&Node::mul(Node::Const(-1.0), args.pop().unwrap().1))
            } else {
                self.sum(&build_sum(args))
            };
            others.push((false, Node::unary(UnaryOp::Exp, arg)));
        }

        // move a free offset out of the exponent into the coefficient
        for (inv, f) in others.iter_mut() {
            let Node::Unary(UnaryOp::Exp, arg) = f else { continue };
            let mut terms = Vec::new();
            flatten_sum(arg, false, &mut terms);
            let Some(pos) = terms.iter().position(|(_, t)| self.purity(t) == Purity::Pure) else {
                continue;
            };
            if terms.len() < 2 {
                continue;
            }
            let (neg, offset) = terms.remove(pos);
            let sign = if neg != *inv { -1.0 } else { 1.0 };
            let factor = Node::unary(UnaryOp::Exp, Node::mul(Node::Const(sign), offset));
            let merged = match coef.take() {
                Some(c) => Node::mul(c, factor),
                None => factor,
            };
            coef = Some(self.collapse(merged));
            *f = Node::unary(UnaryOp::Exp, build_sum(terms));
        }

        // absorb the coefficient into a scalable sum raised to an odd power
        if let Some(c) = coef.clone() {
            let mut candidates: Vec<usize> = (0..others.len()).collect();
            candidates.sort_by(|&a, &b| compare_nodes(&others[a].1, &others[b].1));
            for idx in candidates {
                let (inv, f) = &others[idx];
                let sign = if *inv { -1 } else { 1 };
                let (base, n) = match f {
                    Node::Pow(b, n) if n % 2 != 0 => (&**b, *n),
                    other => (other, 1),
                };
                let Some(terms) = self.as_scalable(base) else { continue };
                let k = self.value_fn(&c);
                let rebuilt = self.absorb_into_sum(terms, k, sign * n);
                others[idx].1 = if n == 1 { rebuilt } else { Node::pow(rebuilt, n) };
                coef = None;
                break;
            }
        }

        // a sign distributes over a sum
        if matches!(coef, Some(Node::Const(c)) if c == -1.0) && others.len() == 1 && !others[0].0 {
            if let Node::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) = &others[0].1 {
                let mut terms = Vec::new();
                flatten_sum(&others[0].1, true, &mut terms);
                return self.sum(&build_sum(terms));
            }
        }

        if others.is_empty() {
            return coef.unwrap_or(Node::Const(1.0));
        }
        let mut all = Vec::with_capacity(others.len() + 1);
        if let Some(c) = coef {
            all.push((false, c));
        }
        all.extend(others);
        if all.len() == 1 && !all[0].0 {
            return all.pop().unwrap().1;
        }
        build_product(all)
    }

    fn power(&mut self, base: Node, n: i32) -> Node {
        match n {
            0 => return Node::Const(1.0),
            1 => return base,
            _ => {}
        }
        match base {
            Node::Pow(inner, m) => match m.checked_mul(n) {
                Some(k) => self.power(*inner, k),
                None => Node::pow(Node::Pow(inner, m), n),
            },
            Node::Binary(BinaryOp::Div, one, d) if matches!(*one, Node::Const(c) if c == 1.0) && n != i32::MIN => {
                self.power(*d, -n)
            }
            Node::Unary(UnaryOp::Exp, arg) => {
                let scaled = self.product(&Node::mul(Node::Const(n as f64), (*arg).clone()));
                let mut factors = Vec::new();
                flatten_product(&scaled, false, &mut factors);
                if factors.iter().any(|(_, f)| matches!(f, Node::Const(_))) {
                    Node::pow(Node::unary(UnaryOp::Exp, *arg), n)
                } else {
                    Node::unary(UnaryOp::Exp, scaled)
                }
            }
            base => match self.split_coef(&base) {
                (Some(c), body) => {
                    let c = self.collapse(Node::pow(c, n));
                    let body = self.power(body, n);
                    self.product(&Node::mul(c, body))
                }
                (None, _) => Node::pow(base, n),
            },
        }
    }
}
