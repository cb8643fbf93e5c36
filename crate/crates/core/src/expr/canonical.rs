use super::{BinaryOp, Expression, Node};

/// Serialization with parameter indices erased; equal for trees that differ
/// only in slot numbering.
pub fn shape_string(node: &Node) -> String {
    let mut s = String::new();
    node.write(&mut s, true).expect("writing to a String cannot fail");
    s
}

fn order_key(node: &Node, op: BinaryOp) -> (u8, String, Vec<usize>) {
    // sums list compound terms before leaves, products list leaves first
    let rank = match (op, node) {
        (BinaryOp::Add, Node::Const(_)) => 3,
        (BinaryOp::Add, Node::Param(_)) => 2,
        (BinaryOp::Add, Node::Var) => 1,
        (BinaryOp::Add, _) => 0,
        (_, Node::Const(_)) => 0,
        (_, Node::Param(_)) => 1,
        (_, Node::Var) => 2,
        _ => 3,
    };
    let mut slots = Vec::new();
    node.param_occurrences(&mut slots);
    (rank, shape_string(node), slots)
}

/// Total order used to pick among product factors.
pub(crate) fn compare_nodes(a: &Node, b: &Node) -> std::cmp::Ordering {
    order_key(a, BinaryOp::Mul).cmp(&order_key(b, BinaryOp::Mul))
}

fn collect_chain(node: &Node, op: BinaryOp, out: &mut Vec<Node>) {
    match node {
        Node::Binary(o, l, r) if *o == op => {
            collect_chain(l, op, out);
            collect_chain(r, op, out);
        }
        other => out.push(sort_commutative(other)),
    }
}

fn sort_commutative(node: &Node) -> Node {
    match node {
        Node::Binary(op, _, _) if op.is_commutative() => {
            let mut operands = Vec::new();
            collect_chain(node, *op, &mut operands);
            let mut keyed: Vec<_> = operands.into_iter().map(|n| (order_key(&n, *op), n)).collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            let mut it = keyed.into_iter().map(|(_, n)| n);
            let first = it.next().expect("chain has at least two operands");
            it.fold(first, |acc, n| Node::binary(*op, acc, n))
        }
        Node::Binary(op, l, r) => Node::binary(*op, sort_commutative(l), sort_commutative(r)),
        Node::Unary(op, c) => Node::unary(*op, sort_commutative(c)),
        Node::Pow(b, n) => Node::pow(sort_commutative(b), *n),
        leaf => leaf.clone(),
    }
}

/// Canonical form of `node` and the slot permutation applied:
/// `order[new_index] = old_index`.
pub(crate) fn canonicalize_node(node: &Node) -> (Node, Vec<usize>) {
    let sorted = sort_commutative(node);
    let mut occurrences = Vec::new();
    sorted.param_occurrences(&mut occurrences);
    let mut order: Vec<usize> = Vec::new();
    for s in occurrences {
        if !order.contains(&s) {
            order.push(s);
        }
    }
    let renumbered = sorted.map_params(&mut |old| {
        Node::Param(order.iter().position(|&o| o == old).expect("slot was collected"))
    });
    (renumbered, order)
}

/// Flattens every `+` and `*` chain, orders its operands by a fixed total
/// order on subtrees, rebuilds it left-nested, and renumbers parameter slots
/// by first appearance.
pub fn canonicalize(expr: &Expression) -> Expression {
    Expression::from_valid(canonicalize_node(expr.root()).0)
}

pub fn canonical_string(expr: &Expression) -> String {
    canonicalize(expr).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, BinaryOp, UnaryOp};

    fn fig1() -> Expression {
        Expression::new(Node::add(
            Node::Const(1.0),
            Node::unary(UnaryOp::Cos, Node::pow(Node::Var, 3)),
        ))
        .unwrap()
    }

    #[test]
    fn commutative_operands_share_a_string() {
        let a = Expression::new(Node::add(Node::Var, Node::Const(1.0))).unwrap();
        let b = Expression::new(Node::add(Node::Const(1.0), Node::Var)).unwrap();
        assert_eq!(canonical_string(&a), canonical_string(&b));
        assert_eq!(canonical_string(&fig1()), canonical_string(&fig1()));
    }

    #[test]
    fn subtraction_order_matters() {
        let a = Expression::new(Node::binary(BinaryOp::Sub, Node::Var, Node::Const(1.0))).unwrap();
        let b = Expression::new(Node::binary(BinaryOp::Sub, Node::Const(1.0), Node::Var)).unwrap();
        assert_ne!(canonical_string(&a), canonical_string(&b));
    }

    #[test]
    fn slots_are_renumbered_by_appearance() {
        let e = parse("t7*exp(t3*x) + t1").unwrap();
        let c = canonicalize(&e);
        assert_eq!(c.distinct_params(), vec![0, 1, 2]);
        let (_, order) = canonicalize_node(e.root());
        assert_eq!(order.len(), 3);
        let again = canonicalize(&c);
        assert_eq!(again, c);
    }

    #[test]
    fn equal_shapes_tie_break_numerically() {
        let e = parse("t10*cos(t11*x) + t2*cos(t3*x)").unwrap();
        let c = canonicalize(&e);
        assert_eq!(canonicalize(&c), c);
        assert_eq!(c.to_string(), "t0*cos(t1*x) + t2*cos(t3*x)");
    }

    #[test]
    fn chains_are_flattened() {
        let a = parse("x + (t0 + t1*exp(x))").unwrap();
        let b = parse("t5*exp(x) + t2 + x").unwrap();
        assert_eq!(canonical_string(&a), canonical_string(&b));
        assert_eq!(canonical_string(&a), "t0*exp(x) + x + t1");
        let s = canonical_string(&a);
        assert_eq!(canonicalize(&parse(&s).unwrap()), canonicalize(&a));
    }
}
