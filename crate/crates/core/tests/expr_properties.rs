use eqsearch::expr::{
    canonical_string, canonicalize, parse, random_expression, simplify, simplify_with_map, Expression, Node,
    PrimitiveSet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Replaces every constant by a slot and every `x` by `a*x + b`.
fn parameterize(node: &Node, next: &mut usize) -> Node {
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
            let l = parameterize(l, next);
            Node::binary(*op, l, parameterize(r, next))
        }
        Node::Unary(op, c) => {
            let g = fresh();
            Node::mul(g, Node::unary(*op, parameterize(c, next)))
        }
        Node::Pow(b, n) => {
            let g = fresh();
            Node::mul(g, Node::pow(parameterize(b, next), *n))
        }
    }
}

fn random_parameterized(seed: u64) -> Expression {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random_expression(&PrimitiveSet::default(), 5, &mut rng);
    let mut next = 0;
    let body = parameterize(raw.root(), &mut next);
    Expression::new(Node::add(body, Node::Param(next))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn simplify_preserves_semantics(seed in any::<u64>()) {
        let e = random_parameterized(seed);
        let (s, map) = simplify_with_map(&e);
        prop_assert_eq!(map.len(), s.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut probes = 0;
        let mut attempts = 0;
        while probes < 100 && attempts < 2000 {
            attempts += 1;
            let theta: Vec<f64> = (0..e.param_count()).map(|_| rng.random_range(0.3..1.7)).collect();
            let x = rng.random_range(0.0..2.0);
            let Ok(expected) = e.evaluate(x, &theta) else { continue };
            let mapped = map.apply(&theta);
            if expected.abs() > 1e6 || mapped.iter().any(|v| !v.is_finite()) {
                continue;
            }
            // skip probes where rounding alone moves the value past the tolerance
            let nudged: Vec<f64> = theta.iter().map(|t| t * (1.0 + 1e-13)).collect();
            match e.evaluate(x, &nudged) {
                Ok(v) if (v - expected).abs() <= 1e-12 * expected.abs().max(1.0) => {}
                _ => continue,
            }
            let got = s.evaluate(x, &mapped);
            prop_assert!(got.is_ok(), "{} -> {} failed at x = {}", e, s, x);
            let got = got.unwrap();
            prop_assert!(
                (got - expected).abs() <= 1e-12 * expected.abs().max(1.0) * 16.0,
                "{} -> {}: {} vs {}", e, s, got, expected
            );
            probes += 1;
        }
    }

    #[test]
    fn simplify_reaches_a_fixpoint(seed in any::<u64>()) {
        let s = simplify(&random_parameterized(seed));
        prop_assert_eq!(simplify(&s).to_string(), s.to_string());
    }

    #[test]
    fn canonicalize_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_expression(&PrimitiveSet::default(), 6, &mut rng);
        let c = canonicalize(&e);
        prop_assert_eq!(canonicalize(&c), c);
    }

    #[test]
    fn parse_inverts_canonical_string(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = if seed % 2 == 0 {
            random_expression(&PrimitiveSet::default(), 6, &mut rng)
        } else {
            random_parameterized(seed)
        };
        let c = canonicalize(&e);
        let text = canonical_string(&e);
        prop_assert_eq!(parse(&text).unwrap(), c);
    }

    #[test]
    fn evaluation_is_bit_identical(seed in any::<u64>(), x in -3.0..3.0f64) {
        let e = random_parameterized(seed);
        let theta: Vec<f64> = (0..e.param_count()).map(|i| 0.5 + 0.1 * i as f64).collect();
        let a = e.evaluate(x, &theta).map(f64::to_bits);
        let b = e.evaluate(x, &theta).map(f64::to_bits);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn equal_strings_mean_equal_canonical_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut seen: std::collections::HashMap<String, Expression> = std::collections::HashMap::new();
    for _ in 0..5000 {
        let e = canonicalize(&random_expression(&PrimitiveSet::default(), 4, &mut rng));
        let key = e.to_string();
        if let Some(prev) = seen.get(&key) {
            assert_eq!(prev, &e);
        } else {
            seen.insert(key, e);
        }
    }
}
