use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lm::{lm_core, LmOptions, Residuals};
use super::project::Projector;
use crate::expr::Program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoOptions {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Search box applied to every slot.
    pub bounds: (f64, f64),
    /// Refine the best particle with one LM run.
    pub polish: bool,
    /// Objective assigned to positions outside the domain.
    pub penalty_mse: f64,
    /// Search only the slots the template is nonlinear in, solving the
    /// affine slots by least squares at every position.
    pub profile: bool,
}

impl Default for PsoOptions {
    fn default() -> Self {
        Self {
            swarm_size: 40,
            iterations: 150,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            bounds: (-10.0, 10.0),
            polish: true,
            penalty_mse: 1e6,
            profile: true,
        }
    }
}

fn argmin(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

/// Minimizes `objective` over the box `bounds^dim`; returns the best
/// position found and its value.
fn swarm<R: Rng + ?Sized>(
    dim: usize,
    options: &PsoOptions,
    rng: &mut R,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let (lo, hi) = options.bounds;
    let v_max = 0.5 * (hi - lo);
    let size = options.swarm_size.max(1);
    let mut pos: Vec<Vec<f64>> = (0..size).map(|_| (0..dim).map(|_| rng.random_range(lo..=hi)).collect()).collect();
    let mut vel: Vec<Vec<f64>> =
        (0..size).map(|_| (0..dim).map(|_| rng.random_range(-v_max..=v_max)).collect()).collect();
    let mut best_pos = pos.clone();
    let mut best_val: Vec<f64> = pos.iter().map(|p| objective(p)).collect();
    let g = argmin(&best_val);
    let mut global = best_pos[g].clone();
    let mut global_val = best_val[g];

    for _ in 0..options.iterations {
        for i in 0..size {
            for k in 0..dim {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let v = options.inertia * vel[i][k]
                    + options.cognitive * r1 * (best_pos[i][k] - pos[i][k])
                    + options.social * r2 * (global[k] - pos[i][k]);
                vel[i][k] = v.clamp(-v_max, v_max);
                pos[i][k] = (pos[i][k] + vel[i][k]).clamp(lo, hi);
            }
            let value = objective(&pos[i]);
            if value < best_val[i] {
                best_val[i] = value;
                best_pos[i].copy_from_slice(&pos[i]);
            }
        }
        let g = argmin(&best_val);
        if best_val[g] < global_val {
            global_val = best_val[g];
            global.copy_from_slice(&best_pos[g]);
        }
    }
    (global, global_val)
}

fn polish(program: &Program, xs: &[f64], ys: &[f64], theta: Vec<f64>, mse: f64, options: &PsoOptions, lm: &LmOptions) -> (Vec<f64>, f64) {
    if options.polish && options.iterations > 0 && mse < options.penalty_mse {
        if let Ok((polished, polished_mse)) = lm_core(program, xs, ys, &theta, lm) {
            if polished_mse <= mse {
                return (polished, polished_mse);
            }
        }
    }
    (theta, mse)
}

pub(crate) fn pso_core<R: Rng + ?Sized>(
    program: &Program,
    xs: &[f64],
    ys: &[f64],
    param_count: usize,
    options: &PsoOptions,
    lm: &LmOptions,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut res = Residuals::new(program, xs, ys);
    let mut buf = vec![0.0; res.len()];
    let penalty = options.penalty_mse;
    let (theta, mse) = swarm(param_count, options, rng, |theta| res.mse(theta, &mut buf).unwrap_or(penalty).min(penalty));
    polish(program, xs, ys, theta, mse, options, lm)
}

/// Swarm over the nonlinear slots only; affine slots are solved exactly at
/// every position.
pub(crate) fn profiled_pso<R: Rng + ?Sized>(
    projector: &mut Projector,
    param_count: usize,
    options: &PsoOptions,
    lm: &LmOptions,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let free: Vec<usize> = (0..param_count).filter(|k| !projector.slots().contains(k)).collect();
    let penalty = options.penalty_mse;
    let mut theta = vec![0.0; param_count];
    let place = |pos: &[f64], theta: &mut Vec<f64>| {
        free.iter().zip(pos).for_each(|(&k, &v)| theta[k] = v);
    };
    let (best, _) = swarm(free.len(), options, rng, |pos| {
        place(pos, &mut theta);
        projector.project(&mut theta).unwrap_or(penalty).min(penalty)
    });
    place(&best, &mut theta);
    let mse = projector.project(&mut theta).unwrap_or(penalty).min(penalty);
    let (program, xs, ys) = projector.problem();
    polish(program, xs, ys, theta, mse, options, lm)
}
