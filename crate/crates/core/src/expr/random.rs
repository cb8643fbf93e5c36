use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryOp, Expression, Node, UnaryOp};

/// Building blocks available to random generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimitiveSet {
    pub binary: Vec<BinaryOp>,
    pub unary: Vec<UnaryOp>,
    /// Integer exponents offered as `base^n` operators.
    pub powers: Vec<i32>,
    /// Probability that a leaf is the variable rather than a constant.
    pub var_probability: f64,
    /// Constants are drawn uniformly from `1..=max_constant`.
    pub max_constant: u32,
}

impl Default for PrimitiveSet {
    fn default() -> Self {
        Self {
            binary: vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div],
            unary: vec![UnaryOp::Exp, UnaryOp::Ln, UnaryOp::Cos],
            powers: vec![2, 3, -1],
            var_probability: 0.75,
            max_constant: 5,
        }
    }
}

impl PrimitiveSet {
    fn operator_count(&self) -> usize {
        self.binary.len() + self.unary.len() + self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operator_count() == 0
    }
}

pub fn random_leaf<R: Rng + ?Sized>(primitives: &PrimitiveSet, rng: &mut R) -> Node {
    if rng.random_bool(primitives.var_probability.clamp(0.0, 1.0)) {
        Node::Var
    } else {
        Node::Const(rng.random_range(1..=primitives.max_constant.max(1)) as f64)
    }
}

fn random_operator<R: Rng + ?Sized>(
    primitives: &PrimitiveSet,
    rng: &mut R,
    mut child: impl FnMut(&mut R) -> Node,
) -> Node {
    let mut pick = rng.random_range(0..primitives.operator_count());
    if pick < primitives.binary.len() {
        let op = primitives.binary[pick];
        let l = child(rng);
        let r = child(rng);
        return Node::binary(op, l, r);
    }
    pick -= primitives.binary.len();
    if pick < primitives.unary.len() {
        let op = primitives.unary[pick];
        return Node::unary(op, child(rng));
    }
    pick -= primitives.unary.len();
    let n = primitives.powers[pick];
    Node::pow(child(rng), n)
}

fn grow<R: Rng + ?Sized>(primitives: &PrimitiveSet, level: usize, max_depth: usize, rng: &mut R) -> Node {
    if level >= max_depth || primitives.is_empty() {
        return random_leaf(primitives, rng);
    }
    let leaf_probability = (level - 1) as f64 / (max_depth - 1) as f64;
    if rng.random_bool(leaf_probability) {
        return random_leaf(primitives, rng);
    }
    random_operator(primitives, rng, |rng| grow(primitives, level + 1, max_depth, rng))
}

fn full<R: Rng + ?Sized>(primitives: &PrimitiveSet, level: usize, depth: usize, rng: &mut R) -> Node {
    if level >= depth || primitives.is_empty() {
        return random_leaf(primitives, rng);
    }
    random_operator(primitives, rng, |rng| full(primitives, level + 1, depth, rng))
}

/// Grow-method tree of depth at most `max_depth`. The chance of stopping
/// at a leaf rises linearly from 0 at the root to 1 at `max_depth`.
pub fn random_expression<R: Rng + ?Sized>(
    primitives: &PrimitiveSet,
    max_depth: usize,
    rng: &mut R,
) -> Expression {
    Expression::from_valid(grow(primitives, 1, max_depth.max(1), rng))
}

/// Full-method tree: every branch reaches exactly `depth`.
pub fn random_full<R: Rng + ?Sized>(primitives: &PrimitiveSet, depth: usize, rng: &mut R) -> Expression {
    Expression::from_valid(full(primitives, 1, depth.max(1), rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arity_ok(node: &Node) -> bool {
        match node {
            Node::Binary(_, l, r) => arity_ok(l) && arity_ok(r),
            Node::Unary(_, c) => arity_ok(c),
            Node::Pow(b, n) => *n != 0 && arity_ok(b),
            Node::Const(c) => c.is_finite(),
            Node::Var => true,
            Node::Param(_) => false,
        }
    }

    #[test]
    fn depth_one_is_a_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let e = random_expression(&PrimitiveSet::default(), 1, &mut rng);
            assert!(matches!(e.root(), Node::Var | Node::Const(_)));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = PrimitiveSet::default();
        let a = random_expression(&p, 6, &mut ChaCha8Rng::seed_from_u64(99));
        let b = random_expression(&p, 6, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    #[test]
    fn ten_thousand_samples_respect_invariants() {
        let p = PrimitiveSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let e = random_expression(&p, 6, &mut rng);
            assert!(e.depth() <= 6);
            assert!(arity_ok(e.root()));
        }
        for d in 1..=6 {
            let e = random_full(&p, d, &mut rng);
            assert_eq!(e.depth(), d);
        }
    }
}
