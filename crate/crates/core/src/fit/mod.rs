//! Per-dataset parameter fitting.
//!
//! Each dataset is min-max normalized on both axes, fitted by
//! Levenberg-Marquardt from several starts and by a particle swarm, and the
//! best parameters are mapped back to raw units.

mod lm;
mod norm;
mod project;
mod pso;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lm::LmOptions;
pub use norm::NormStats;
pub use pso::PsoOptions;

use project::Projector;

use crate::data::{Dataset, DatasetCollection};
use crate::expr::DomainError;
use crate::rng::{self, StreamRng};
use crate::transform::{unnormalize_params, Template};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("fit left the domain of the template")]
    FitDiverged,
    #[error("every fit attempt failed")]
    AllFitsFailed,
    #[error("{points} points cannot determine {params} parameters")]
    TooFewPoints { points: usize, params: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub lm: LmOptions,
    pub pso: PsoOptions,
    /// Run the particle swarm in addition to the LM starts.
    pub use_pso: bool,
    /// LM starts drawn uniformly from `[-start_spread, start_spread]`.
    pub random_starts: usize,
    pub start_spread: f64,
    /// Random draws screened by their mse; the best `random_starts` of them
    /// seed LM.
    pub start_pool: usize,
    /// Attempts within this relative distance of the best mse count as
    /// tied; the earliest tied attempt wins.
    pub tie_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            pso: PsoOptions::default(),
            use_pso: true,
            random_starts: 4,
            start_spread: 2.0,
            start_pool: 32,
            tie_tolerance: 1e-9,
        }
    }
}

impl FitOptions {
    pub fn penalty_mse(&self) -> f64 {
        self.pso.penalty_mse
    }
}

/// Which attempt produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    LmHeuristic,
    LmRandom,
    Pso,
    Failed,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::LmHeuristic => "lm_heuristic",
            FitMethod::LmRandom => "lm_random",
            FitMethod::Pso => "pso",
            FitMethod::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFit {
    /// Raw-unit parameters.
    pub theta: Vec<f64>,
    /// Raw-unit mean squared residual of `theta`.
    pub mse: f64,
    pub method: FitMethod,
    /// Normalized-space mse of every attempt in order (heuristic LM, random
    /// LM starts, swarm); `None` where the attempt diverged.
    pub attempts: Vec<Option<f64>>,
}

/// Parameters fitted to every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// One row of raw-unit parameters per dataset.
    pub theta_matrix: Vec<Vec<f64>>,
    pub per_dataset_l1: Vec<f64>,
    pub mean_l1: f64,
    pub methods: Vec<FitMethod>,
}

impl FitResult {
    pub fn dataset_count(&self) -> usize {
        self.theta_matrix.len()
    }

    pub fn param_count(&self) -> usize {
        self.theta_matrix.first().map_or(0, Vec::len)
    }

    pub fn column(&self, slot: usize) -> Vec<f64> {
        self.theta_matrix.iter().map(|row| row[slot]).collect()
    }

    pub fn failed_count(&self) -> usize {
        self.methods.iter().filter(|m| **m == FitMethod::Failed).count()
    }
}

pub fn predict(template: &Template, theta: &[f64], xs: &[f64]) -> Result<Vec<f64>, DomainError> {
    let mut out = vec![0.0; xs.len()];
    template.program().eval_batch(xs, theta, &mut Vec::new(), &mut out)?;
    Ok(out)
}

fn raw_mse(template: &Template, theta: &[f64], dataset: &Dataset) -> Option<f64> {
    let pred = predict(template, theta, dataset.xs()).ok()?;
    let mse = pred.iter().zip(dataset.ys()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
    mse.is_finite().then_some(mse)
}

/// Levenberg-Marquardt in the dataset's own units.
pub fn lm_fit(
    template: &Template,
    dataset: &Dataset,
    theta0: &[f64],
    options: &LmOptions,
) -> Result<(Vec<f64>, f64), FitError> {
    lm::lm_core(template.program(), dataset.xs(), dataset.ys(), theta0, options)
}

/// Particle swarm in the dataset's own units, polished by LM.
pub fn pso_fit<R: Rng + ?Sized>(
    template: &Template,
    dataset: &Dataset,
    options: &PsoOptions,
    lm: &LmOptions,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    pso::pso_core(template.program(), dataset.xs(), dataset.ys(), template.param_count(), options, lm, rng)
}

fn linear_prefit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Starting point: slope and intercept of a straight-line fit for the
/// top-level slope and offset slots, 1 elsewhere.
pub fn heuristic_start(template: &Template, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let (slope, intercept) = linear_prefit(xs, ys);
    let mut theta = vec![1.0; template.param_count()];
    theta[template.offset_slot()] = intercept;
    if let Some(k) = template.output_slope_slot() {
        theta[k] = slope;
    }
    theta
}

fn run_attempts<R: Rng + ?Sized>(
    template: &Template,
    xs: &[f64],
    ys: &[f64],
    rng: &mut R,
    options: &FitOptions,
) -> Vec<(FitMethod, Result<(Vec<f64>, f64), FitError>)> {
    let program = template.program();
    let t = template.param_count();
    let mut attempts = Vec::with_capacity(options.random_starts + 2);
    let mut projector = Projector::new(program, xs, ys, template.affine_slots());

    let mut start = heuristic_start(template, xs, ys);
    if projector.project(&mut start).is_none() {
        start = heuristic_start(template, xs, ys);
    }
    attempts.push((FitMethod::LmHeuristic, lm::lm_core(program, xs, ys, &start, &options.lm)));

    // screen a pool of projected random draws and start from the best
    let spread = options.start_spread.abs();
    let pool = options.start_pool.max(options.random_starts);
    let mut draws: Vec<(f64, Vec<f64>)> = (0..pool)
        .map(|_| {
            let mut start: Vec<f64> = (0..t).map(|_| rng.random_range(-spread..=spread)).collect();
            let mse = projector.project(&mut start).unwrap_or(f64::INFINITY);
            (mse, start)
        })
        .collect();
    draws.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, start) in draws.into_iter().take(options.random_starts) {
        attempts.push((FitMethod::LmRandom, lm::lm_core(program, xs, ys, &start, &options.lm)));
    }

    if options.use_pso {
        let (theta, mse) = if options.pso.profile {
            pso::profiled_pso(&mut projector, t, &options.pso, &options.lm, rng)
        } else {
            pso::pso_core(program, xs, ys, t, &options.pso, &options.lm, rng)
        };
        let outcome = if mse < options.penalty_mse() { Ok((theta, mse)) } else { Err(FitError::FitDiverged) };
        attempts.push((FitMethod::Pso, outcome));
    }
    attempts
}

/// Fits one dataset. All attempts run on normalized data; the winner is the
/// earliest attempt tied with the lowest mse, returned in raw units.
pub fn fit_dataset<R: Rng + ?Sized>(
    template: &Template,
    dataset: &Dataset,
    rng: &mut R,
    options: &FitOptions,
) -> Result<DatasetFit, FitError> {
    let t = template.param_count();
    if dataset.len() < t {
        return Err(FitError::TooFewPoints { points: dataset.len(), params: t });
    }
    let stats = NormStats::from_data(dataset.xs(), dataset.ys());
    let xs: Vec<f64> = dataset.xs().iter().map(|&x| stats.normalize_x(x)).collect();
    let ys: Vec<f64> = dataset.ys().iter().map(|&y| stats.normalize_y(y)).collect();
    let attempts = run_attempts(template, &xs, &ys, rng, options);
    let summary: Vec<Option<f64>> = attempts.iter().map(|(_, a)| a.as_ref().ok().map(|(_, m)| *m)).collect();

    let best = summary.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(FitError::AllFitsFailed);
    }
    let cutoff = best * (1.0 + options.tie_tolerance) + 1e-14;
    let mut order: Vec<usize> = (0..attempts.len()).filter(|&i| summary[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let tied = |i: usize| summary[i].unwrap() <= cutoff;
        tied(b).cmp(&tied(a)).then_with(|| summary[a].unwrap().total_cmp(&summary[b].unwrap())).then(a.cmp(&b))
    });
    let mut unnormalizable = false;
    for i in order {
        let (method, Ok((theta_hat, _))) = &attempts[i] else { continue };
        let mut theta = match unnormalize_params(template, theta_hat, &stats) {
            Ok(theta) => theta,
            Err(_) => {
                unnormalizable = true;
                continue;
            }
        };
        template.fix_gauge(&mut theta);
        if let Some(mse) = raw_mse(template, &theta, dataset) {
            return Ok(DatasetFit { theta, mse, method: *method, attempts: summary });
        }
    }
    if unnormalizable {
        return fit_raw(template, dataset, rng, options);
    }
    Err(FitError::AllFitsFailed)
}

/// Fallback for templates whose slots cannot absorb a change of units.
fn fit_raw<R: Rng + ?Sized>(
    template: &Template,
    dataset: &Dataset,
    rng: &mut R,
    options: &FitOptions,
) -> Result<DatasetFit, FitError> {
    let attempts = run_attempts(template, dataset.xs(), dataset.ys(), rng, options);
    let summary: Vec<Option<f64>> = attempts.iter().map(|(_, a)| a.as_ref().ok().map(|(_, m)| *m)).collect();
    let best = summary.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let cutoff = best * (1.0 + options.tie_tolerance) + 1e-14;
    attempts
        .iter()
        .find_map(|(method, a)| match a {
            Ok((theta, mse)) if *mse <= cutoff => {
                let mut theta = theta.clone();
                template.fix_gauge(&mut theta);
                raw_mse(template, &theta, dataset)
                    .map(|mse| DatasetFit { theta, mse, method: *method, attempts: summary.clone() })
            }
            _ => None,
        })
        .ok_or(FitError::AllFitsFailed)
}

/// Seed of the random stream for one (template, dataset) fit.
pub fn fit_seed(seed: u64, template: &Template, dataset_index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, rng::label_of(&template.canonical_string())), dataset_index as u64)
}

/// Fits every dataset; failed fits get the penalty mse scaled to raw units.
pub fn fit_all(template: &Template, datasets: &DatasetCollection, seed: u64, options: &FitOptions) -> FitResult {
    let fits: Vec<(Vec<f64>, f64, FitMethod)> = datasets
        .datasets()
        .par_iter()
        .enumerate()
        .map(|(j, d)| {
            let mut rng: StreamRng = rng::stream(fit_seed(seed, template, j), 0);
            match fit_dataset(template, d, &mut rng, options) {
                Ok(fit) => (fit.theta, fit.mse, fit.method),
                Err(_) => {
                    let stats = NormStats::from_data(d.xs(), d.ys());
                    let penalty = options.penalty_mse() * stats.y_range * stats.y_range;
                    (vec![0.0; template.param_count()], penalty, FitMethod::Failed)
                }
            }
        })
        .collect();
    let mut theta_matrix = Vec::with_capacity(fits.len());
    let mut per_dataset_l1 = Vec::with_capacity(fits.len());
    let mut methods = Vec::with_capacity(fits.len());
    for (theta, mse, method) in fits {
        theta_matrix.push(theta);
        per_dataset_l1.push(mse);
        methods.push(method);
    }
    let mean_l1 = per_dataset_l1.iter().sum::<f64>() / per_dataset_l1.len() as f64;
    FitResult { theta_matrix, per_dataset_l1, mean_l1, methods }
}
