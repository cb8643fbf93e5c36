use nalgebra::{DMatrix, DVector};

use crate::expr::Program;

/// Solves the slots a template is affine in by linear least squares while
/// the remaining slots stay fixed.
pub(crate) struct Projector<'a> {
    program: &'a Program,
    xs: &'a [f64],
    ys: &'a [f64],
    slots: Vec<usize>,
    scratch: Vec<f64>,
    f0: Vec<f64>,
    column: Vec<f64>,
    basis: DMatrix<f64>,
}

impl<'a> Projector<'a> {
    pub(crate) fn new(program: &'a Program, xs: &'a [f64], ys: &'a [f64], slots: Vec<usize>) -> Self {
        let n = xs.len();
        let k = slots.len();
        Self {
            program,
            xs,
            ys,
            slots,
            scratch: Vec::new(),
            f0: vec![0.0; n],
            column: vec![0.0; n],
            basis: DMatrix::zeros(n, k),
        }
    }

    pub(crate) fn problem(&self) -> (&'a Program, &'a [f64], &'a [f64]) {
        (self.program, self.xs, self.ys)
    }

    pub(crate) fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Overwrites the affine slots of `theta` with their least-squares
    /// values and returns the resulting mse, or `None` outside the domain.
    pub(crate) fn project(&mut self, theta: &mut [f64]) -> Option<f64> {
        let n = self.xs.len();
        if theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for &k in &self.slots {
            theta[k] = 0.0;
        }
        self.program.eval_batch(self.xs, theta, &mut self.scratch, &mut self.f0).ok()?;
        for c in 0..self.slots.len() {
            let k = self.slots[c];
            theta[k] = 1.0;
            let ok = self.program.eval_batch(self.xs, theta, &mut self.scratch, &mut self.column).is_ok();
            theta[k] = 0.0;
            if !ok {
                return None;
            }
            for (i, b) in self.basis.column_mut(c).iter_mut().enumerate() {
                *b = self.column[i] - self.f0[i];
            }
        }
        let target = DVector::from_iterator(n, self.ys.iter().zip(&self.f0).map(|(y, f)| y - f));
        let normal = self.basis.tr_mul(&self.basis);
        let rhs = self.basis.tr_mul(&target);
        if normal.iter().chain(rhs.iter()).any(|v| !(v.abs() < 1e150)) {
            return None;
        }
        let eps = 1e-13 * normal.diagonal().amax().max(f64::MIN_POSITIVE);
        let coef = normal.svd(true, true).solve(&rhs, eps).ok()?;
        if coef.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (c, &k) in self.slots.iter().enumerate() {
            theta[k] = coef[c];
        }
        let fitted = &self.basis * &coef;
        let mse = (0..n).map(|i| (fitted[i] - target[i]).powi(2)).sum::<f64>() / n as f64;
        mse.is_finite().then_some(mse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Template;

    #[test]
    fn recovers_linear_coefficients_exactly() {
        let t = Template::parse("t0*exp(t1*x) + t2").unwrap();
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * (2.0 * x).exp() - 1.0).collect();
        let mut p = Projector::new(t.program(), &xs, &ys, t.affine_slots());
        assert_eq!(p.slots(), &[0, 2]);
        let mut theta = [9.0, 2.0, 9.0];
        let mse = p.project(&mut theta).unwrap();
        assert!(mse < 1e-20);
        assert!((theta[0] - 0.3).abs() < 1e-9 && (theta[2] + 1.0).abs() < 1e-9);
    }
}
