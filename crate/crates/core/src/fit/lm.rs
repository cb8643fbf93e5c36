use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::expr::Program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Stop when an accepted step improves the mse by less than this
    /// fraction.
    pub relative_tolerance: f64,
    /// Stop when the mse gradient's largest component falls below this.
    pub gradient_tolerance: f64,
    /// Stop after this many consecutive steps that leave the domain.
    pub max_failed_steps: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-3,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            max_failed_steps: 10,
        }
    }
}

const MAX_DAMPING: f64 = 1e16;

/// Residual evaluation `pred - y` with reusable buffers.
pub(crate) struct Residuals<'a> {
    program: &'a Program,
    xs: &'a [f64],
    ys: &'a [f64],
    scratch: Vec<f64>,
}

impl<'a> Residuals<'a> {
    pub(crate) fn new(program: &'a Program, xs: &'a [f64], ys: &'a [f64]) -> Self {
        Self { program, xs, ys, scratch: Vec::new() }
    }

    pub(crate) fn len(&self) -> usize {
        self.xs.len()
    }

    pub(crate) fn eval(&mut self, theta: &[f64], out: &mut [f64]) -> bool {
        if self.program.eval_batch(self.xs, theta, &mut self.scratch, out).is_err() {
            return false;
        }
        out.iter_mut().zip(self.ys).for_each(|(p, y)| *p -= y);
        true
    }

    pub(crate) fn mse(&mut self, theta: &[f64], buf: &mut [f64]) -> Option<f64> {
        if !self.eval(theta, buf) {
            return None;
        }
        let mse = buf.iter().map(|r| r * r).sum::<f64>() / buf.len() as f64;
        mse.is_finite().then_some(mse)
    }
}

fn step_size(value: f64) -> f64 {
    (1e-6 * value.abs()).max(1e-6)
}

fn jacobian(res: &mut Residuals, theta: &[f64], r0: &[f64], jac: &mut DMatrix<f64>, plus: &mut [f64], minus: &mut [f64]) {
    let mut probe = theta.to_vec();
    for k in 0..theta.len() {
        let h = step_size(theta[k]);
        probe[k] = theta[k] + h;
        let ok_plus = res.eval(&probe, plus);
        probe[k] = theta[k] - h;
        let ok_minus = res.eval(&probe, minus);
        probe[k] = theta[k];
        let mut col = jac.column_mut(k);
        match (ok_plus, ok_minus) {
            (true, true) => col.iter_mut().enumerate().for_each(|(i, c)| *c = (plus[i] - minus[i]) / (2.0 * h)),
            (true, false) => col.iter_mut().enumerate().for_each(|(i, c)| *c = (plus[i] - r0[i]) / h),
            (false, true) => col.iter_mut().enumerate().for_each(|(i, c)| *c = (r0[i] - minus[i]) / h),
            (false, false) => col.fill(0.0),
        }
    }
}

/// Levenberg-Marquardt on the mean squared residual, starting at `theta0`.
pub(crate) fn lm_core(
    program: &Program,
    xs: &[f64],
    ys: &[f64],
    theta0: &[f64],
    options: &LmOptions,
) -> Result<(Vec<f64>, f64), FitError> {
    let n = xs.len();
    let t = theta0.len();
    let mut res = Residuals::new(program, xs, ys);
    let mut r = vec![0.0; n];
    let mut trial_r = vec![0.0; n];
    let mut minus = vec![0.0; n];
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(FitError::FitDiverged);
    }
    let mut theta = theta0.to_vec();
    let mut mse = res.mse(&theta, &mut r).ok_or(FitError::FitDiverged)?;
    if t == 0 {
        return Ok((theta, mse));
    }

    let mut jac = DMatrix::<f64>::zeros(n, t);
    let mut damping = options.initial_damping;
    let mut failed_steps = 0;
    let mut stale = true;
    let mut normal = DMatrix::<f64>::zeros(t, t);
    let mut gradient = DVector::<f64>::zeros(t);
    let mut trial = vec![0.0; t];

    for _ in 0..options.max_iterations {
        if mse == 0.0 {
            break;
        }
        if stale {
            jacobian(&mut res, &theta, &r, &mut jac, &mut trial_r, &mut minus);
            normal = jac.tr_mul(&jac);
            gradient = jac.tr_mul(&DVector::from_column_slice(&r));
            stale = false;
            if normal.iter().chain(gradient.iter()).any(|v| !v.is_finite()) {
                break;
            }
            if gradient.amax() / n as f64 <= options.gradient_tolerance {
                break;
            }
        }
        let mut damped = normal.clone();
        for k in 0..t {
            damped[(k, k)] += damping * normal[(k, k)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-&gradient))) else {
            damping *= 10.0;
            if damping > MAX_DAMPING {
                break;
            }
            continue;
        };
        for k in 0..t {
            trial[k] = theta[k] + step[k];
        }
        match res.mse(&trial, &mut trial_r) {
            Some(trial_mse) if trial_mse < mse => {
                failed_steps = 0;
                let improvement = (mse - trial_mse) / mse;
                theta.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut trial_r);
                mse = trial_mse;
                stale = true;
                damping = (damping / 10.0).max(1e-12);
                if improvement < options.relative_tolerance {
                    break;
                }
            }
            outcome => {
                if outcome.is_none() {
                    failed_steps += 1;
                    if failed_steps >= options.max_failed_steps {
                        break;
                    }
                }
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    break;
                }
            }
        }
    }
    Ok((theta, mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Template;

    #[test]
    fn recovers_exponential_from_a_good_start() {
        let t = Template::parse("t0*exp(t1*x) + t2").unwrap();
        let xs: Vec<f64> = (0..50).map(|i| 10.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (0.3 * x).exp() + 1.0).collect();
        let (theta, mse) = lm_core(t.program(), &xs, &ys, &[1.5, 0.25, 0.0], &LmOptions::default()).unwrap();
        assert!(mse < 1e-12, "{mse}");
        for (got, want) in theta.iter().zip([2.0, 0.3, 1.0]) {
            assert!((got - want).abs() < 1e-6, "{theta:?}");
        }
    }

    #[test]
    fn linear_data_is_fitted_exactly() {
        let t = Template::parse("t0*x + t1").unwrap();
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -0.75 * x + 4.5).collect();
        let (theta, mse) = lm_core(t.program(), &xs, &ys, &[1.0, 1.0], &LmOptions::default()).unwrap();
        assert!(mse < 1e-20);
        assert!((theta[0] + 0.75).abs() < 1e-9 && (theta[1] - 4.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_start_diverges() {
        let t = Template::parse("t0*ln(t1*x + t2) + t3").unwrap();
        let xs = [1.0, 2.0, 3.0];
        let ys = [0.0, 0.5, 0.8];
        let out = lm_core(t.program(), &xs, &ys, &[1.0, 1.0, -10.0, 0.0], &LmOptions::default());
        assert_eq!(out, Err(FitError::FitDiverged));
    }
}
