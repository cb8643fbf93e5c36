use super::{BinaryOp, DomainError, Expression, Node, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Var,
    Param(usize),
    Binary(BinaryOp),
    Unary(UnaryOp),
    Pow(i32),
}

/// Postfix compilation of an [`Expression`] that evaluates a whole column
/// of `x` values per instruction. Domain rules match
/// [`Expression::evaluate`] exactly.
#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    stack_depth: usize,
    param_count: usize,
}

impl Program {
    pub fn compile(expr: &Expression) -> Self {
        fn emit(node: &Node, code: &mut Vec<Instr>, depth: usize, max: &mut usize) {
            *max = (*max).max(depth + 1);
            match node {
                Node::Const(c) => code.push(Instr::Const(*c)),
                Node::Var => code.push(Instr::Var),
                Node::Param(i) => code.push(Instr::Param(*i)),
                Node::Binary(op, l, r) => {
                    emit(l, code, depth, max);
                    emit(r, code, depth + 1, max);
                    code.push(Instr::Binary(*op));
                }
                Node::Unary(op, c) => {
                    emit(c, code, depth, max);
                    code.push(Instr::Unary(*op));
                }
                Node::Pow(b, n) => {
                    emit(b, code, depth, max);
                    code.push(Instr::Pow(*n));
                }
            }
        }
        let mut code = Vec::with_capacity(expr.size());
        let mut stack_depth = 0;
        emit(expr.root(), &mut code, 0, &mut stack_depth);
        Program { code, stack_depth, param_count: expr.param_count() }
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Evaluates at every `xs[i]`, writing into `out[i]`. `scratch` is
    /// resized as needed and may be reused across calls.
    pub fn eval_batch(
        &self,
        xs: &[f64],
        theta: &[f64],
        scratch: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), DomainError> {
        let n = xs.len();
        assert_eq!(out.len(), n, "output length must match input length");
        if theta.len() < self.param_count {
            return Err(DomainError::MissingParam(theta.len()));
        }
        if n == 0 {
            return Ok(());
        }
        scratch.resize(self.stack_depth * n, 0.0);
        let mut sp = 0usize;
        for instr in &self.code {
            match *instr {
                Instr::Const(c) => {
                    scratch[sp * n..(sp + 1) * n].fill(c);
                    sp += 1;
                }
                Instr::Param(i) => {
                    scratch[sp * n..(sp + 1) * n].fill(theta[i]);
                    sp += 1;
                }
                Instr::Var => {
                    scratch[sp * n..(sp + 1) * n].copy_from_slice(xs);
                    sp += 1;
                }
                Instr::Binary(op) => {
                    let (lower, upper) = scratch.split_at_mut((sp - 1) * n);
                    let a = &mut lower[(sp - 2) * n..];
                    let b = &upper[..n];
                    match op {
                        BinaryOp::Add => a.iter_mut().zip(b).for_each(|(a, b)| *a += b),
                        BinaryOp::Sub => a.iter_mut().zip(b).for_each(|(a, b)| *a -= b),
                        BinaryOp::Mul => a.iter_mut().zip(b).for_each(|(a, b)| *a *= b),
                        BinaryOp::Div => {
                            if b.contains(&0.0) {
                                return Err(DomainError::DivisionByZero);
                            }
                            a.iter_mut().zip(b).for_each(|(a, b)| *a /= b);
                        }
                    }
                    sp -= 1;
                }
                Instr::Unary(op) => {
                    let a = &mut scratch[(sp - 1) * n..sp * n];
                    match op {
                        UnaryOp::Exp => a.iter_mut().for_each(|v| *v = v.exp()),
                        UnaryOp::Ln => {
                            if a.iter().any(|&v| v <= 0.0) {
                                return Err(DomainError::LogOfNonPositive);
                            }
                            a.iter_mut().for_each(|v| *v = v.ln());
                        }
                        UnaryOp::Sin => a.iter_mut().for_each(|v| *v = v.sin()),
                        UnaryOp::Cos => a.iter_mut().for_each(|v| *v = v.cos()),
                    }
                }
                Instr::Pow(k) => {
                    scratch[(sp - 1) * n..sp * n].iter_mut().for_each(|v| *v = v.powi(k));
                }
            }
        }
        debug_assert_eq!(sp, 1);
        out.copy_from_slice(&scratch[..n]);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DomainError::NonFinite)
        }
    }
}
