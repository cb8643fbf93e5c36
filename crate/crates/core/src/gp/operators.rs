use rand::Rng;

use crate::expr::{random_expression, random_leaf, Expression, Node, PrimitiveSet};

/// Replaces every operator sitting at `max_depth` with `leaf`, so the
/// result has depth at most `max_depth`.
pub fn truncate(node: &Node, max_depth: usize, leaf: &mut impl FnMut() -> Node) -> Node {
    fn walk(node: &Node, level: usize, max_depth: usize, leaf: &mut impl FnMut() -> Node) -> Node {
        if node.is_leaf() {
            return node.clone();
        }
        if level >= max_depth {
            return leaf();
        }
        match node {
            Node::Binary(op, l, r) => {
                let l = walk(l, level + 1, max_depth, leaf);
                Node::binary(*op, l, walk(r, level + 1, max_depth, leaf))
            }
            Node::Unary(op, c) => Node::unary(*op, walk(c, level + 1, max_depth, leaf)),
            Node::Pow(b, n) => Node::pow(walk(b, level + 1, max_depth, leaf), *n),
            other => other.clone(),
        }
    }
    walk(node, 1, max_depth.max(1), leaf)
}

fn finish(node: Node, max_depth: usize) -> Expression {
    let node = if node.depth() > max_depth { truncate(&node, max_depth, &mut || Node::Var) } else { node };
    Expression::new(node).expect("subtree exchange keeps constants finite and exponents non-zero")
}

/// Swaps the pre-order subtree `i` of `a` with subtree `j` of `b`.
/// Children deeper than `max_depth` have their deepest operators replaced
/// by `x`.
pub fn crossover_at(a: &Expression, i: usize, b: &Expression, j: usize, max_depth: usize) -> (Expression, Expression) {
    let sa = a.root().get(i).expect("crossover point inside a").clone();
    let sb = b.root().get(j).expect("crossover point inside b").clone();
    (finish(a.root().replace(i, &sb), max_depth), finish(b.root().replace(j, &sa), max_depth))
}

/// Crossover at uniformly chosen points.
pub fn crossover<R: Rng + ?Sized>(a: &Expression, b: &Expression, max_depth: usize, rng: &mut R) -> (Expression, Expression) {
    let i = rng.random_range(0..a.size());
    let j = rng.random_range(0..b.size());
    crossover_at(a, i, b, j, max_depth)
}

/// Replaces the pre-order subtree `index` of `a` with `replacement`.
pub fn mutate_at(a: &Expression, index: usize, replacement: &Node, max_depth: usize) -> Expression {
    finish(a.root().replace(index, replacement), max_depth)
}

/// Replaces a uniformly chosen subtree with a random tree that fits the
/// remaining depth budget.
pub fn mutate<R: Rng + ?Sized>(a: &Expression, primitives: &PrimitiveSet, max_depth: usize, rng: &mut R) -> Expression {
    let index = rng.random_range(0..a.size());
    let level = a.root().depth_of(index).expect("index inside tree");
    let budget = (max_depth + 1).saturating_sub(level);
    let replacement = if budget <= 1 {
        random_leaf(primitives, rng)
    } else {
        random_expression(primitives, budget, rng).into_root()
    };
    mutate_at(a, index, &replacement, max_depth)
}
