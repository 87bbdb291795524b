//! Reference ensemble strategies for the comparison and ablation studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, LowAction, SingleTierAgent};
use crate::error::{Error, Result};
use crate::frames::StreamFrames;
use crate::models::TimeSeriesWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    HeuristicTopN,
    EqualWeightAll,
    BestSingleOracle,
    StaticSearch,
    SingleTierRl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub heuristic_n: usize,
    pub static_search_budget: usize,
    pub single_tier: bool,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { heuristic_n: 3, static_search_budget: 2000, single_tier: true, seed: 0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heuristic_n == 0 {
            return Err(Error::config("heuristic_n must be at least 1"));
        }
        Ok(())
    }
}

/// Equal weights on the `n` models with the smallest tracked errors; ties
/// break toward the lowest model id.
pub fn heuristic_top_n(errors: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > errors.len() {
        return Err(Error::contract(format!(
            "top-n of {n} over {} models is out of range",
            errors.len()
        )));
    }
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| {
        errors[a]
            .partial_cmp(&errors[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut w = vec![0.0; errors.len()];
    for &i in &order[..n] {
        w[i] = 1.0 / n as f64;
    }
    Ok(w)
}

/// Mean squared error of a fixed weight vector over validation frames.
fn static_mse(frames: &[&StreamFrames], w: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        for t in 0..f.len() {
            let yhat: f64 = w.iter().zip(&f.preds[t]).map(|(wi, p)| wi * p).sum();
            let e = yhat - f.truths[t];
            sum += e * e;
            count += 1;
        }
    }
    sum / count.max(1) as f64
}

/// Static ensemble: the best of `budget` random simplex candidates (plus the
/// uniform vector) by validation MSE. Deterministic given the seed.
pub fn static_search_weights(validation: &[&StreamFrames], budget: usize, seed: u64) -> Result<Vec<f64>> {
    let Some(first) = validation.first() else {
        return Err(Error::config("static search requires a validation stream"));
    };
    let n = first.n_models();
    if validation.iter().any(|f| f.is_empty()) {
        return Err(Error::config("static search validation stream is empty"));
    }
    let uniform = vec![1.0 / n as f64; n];
    let mut best_w = uniform.clone();
    let mut best_mse = static_mse(validation, &uniform);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        // Flat Dirichlet draw: normalized unit exponentials.
        let draws: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let total: f64 = draws.iter().sum();
        let w: Vec<f64> = draws.iter().map(|d| d / total).collect();
        let mse = static_mse(validation, &w);
        if mse < best_mse {
            best_mse = mse;
            best_w = w;
        }
    }
    Ok(best_w)
}

/// Single best base model by validation MSE, as a one-hot weight vector.
pub fn best_single_weights(validation: &[&StreamFrames]) -> Result<Vec<f64>> {
    let Some(first) = validation.first() else {
        return Err(Error::config("best-single selection requires a validation stream"));
    };
    let n = first.n_models();
    let mut best = (0usize, f64::INFINITY);
    for i in 0..n {
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in validation {
            for t in 0..f.len() {
                let e = f.preds[t][i] - f.truths[t];
                sum += e * e;
                count += 1;
            }
        }
        let mse = sum / count.max(1) as f64;
        if mse < best.1 {
            best = (i, mse);
        }
    }
    let mut w = vec![0.0; n];
    w[best.0] = 1.0;
    Ok(w)
}

/// Flat-policy step: full-simplex weights over all models from the shared
/// state representation.
pub fn single_tier_policy_step(
    agent: &SingleTierAgent,
    window: &TimeSeriesWindow,
    errors: &[f64],
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<LowAction> {
    agent.act(window, errors, mode, rng)
}
