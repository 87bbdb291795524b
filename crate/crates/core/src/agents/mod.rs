//! Hierarchical ensemble agents: a high-level selection policy over the model
//! library, a low-level Dirichlet weight policy over the selected subset,
//! their reward shaping, and the two-stage REINFORCE trainer with soft
//! parameter blending.

mod policy;
mod train;

pub use policy::{
    force_nonempty, init_policy_params, sample_high_action, sample_low_action, ActionMode, AgentsMeta,
    BoundHeads, HrlAgents, SingleTierAgent, HIGH_PREFIX, LOW_PREFIX, SINGLE_TIER_PREFIX,
};
pub use train::{train_single_tier, train_two_stage, write_training_log, Reinforce, TrainLogRow};

use serde::{Deserialize, Serialize};

use crate::diff::OptimizerKind;
use crate::error::{Error, Result};

/// Binary model-selection action with its Bernoulli log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct HighAction {
    pub b: Vec<bool>,
    pub log_prob: f64,
}

impl HighAction {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.b
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.b.iter().filter(|&&on| on).count()
    }
}

/// Simplex weight action over the library; zero off-selection.
#[derive(Debug, Clone, PartialEq)]
pub struct LowAction {
    pub w: Vec<f64>,
    pub log_prob: f64,
}

/// Reward components for one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_loss: f64,
    pub r_mod: f64,
    pub r_var: f64,
    pub r_base: f64,
    pub r_h: f64,
    pub r_l: f64,
}

impl RewardBreakdown {
    /// All components at once from the two ensemble losses.
    pub fn compute(
        loss_ens: f64,
        loss_equal: f64,
        b: &[bool],
        varcounts: &[usize],
        alpha: f64,
        beta: f64,
    ) -> Self {
        let mut rb = compute_high_reward(loss_ens, b, varcounts, alpha, beta);
        let low = compute_low_reward(loss_ens, loss_equal);
        rb.r_base = low.r_base;
        rb.r_l = low.r_l;
        rb
    }
}

/// High-level reward: prediction loss plus model-count and variable-count
/// penalties, `r_h = r_loss + alpha r_mod + beta r_var`.
pub fn compute_high_reward(loss_ens: f64, b: &[bool], varcounts: &[usize], alpha: f64, beta: f64) -> RewardBreakdown {
    debug_assert!(loss_ens >= 0.0);
    let r_loss = -loss_ens;
    let r_mod = -(b.iter().filter(|&&on| on).count() as f64);
    let r_var = -(b
        .iter()
        .zip(varcounts)
        .filter(|(&on, _)| on)
        .map(|(_, &v)| v as f64)
        .sum::<f64>());
    RewardBreakdown {
        r_loss,
        r_mod,
        r_var,
        r_base: 0.0,
        r_h: r_loss + alpha * r_mod + beta * r_var,
        r_l: 0.0,
    }
}

/// Low-level reward: advantage of the learned weights over equal weighting of
/// the same selection, `r_l = r_loss - r_base`.
pub fn compute_low_reward(loss_ens: f64, loss_equal: f64) -> RewardBreakdown {
    debug_assert!(loss_ens >= 0.0 && loss_equal >= 0.0);
    RewardBreakdown {
        r_loss: -loss_ens,
        r_mod: 0.0,
        r_var: 0.0,
        r_base: -loss_equal,
        r_h: 0.0,
        r_l: loss_equal - loss_ens,
    }
}

/// Training hyperparameters; the defaults mirror the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Weight on the freshly updated parameters in the soft blend.
    pub lambda: f64,
    /// Discount; only 0 (one-step rewards) is supported.
    pub gamma: f64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// 0 means every logged step each epoch.
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub conc_min: f64,
    pub conc_max: f64,
    pub optimizer: OptimizerKind,
    /// Subtract the batch-mean reward before weighting log-probabilities.
    pub reward_baseline: bool,
    /// Policy MLP hidden width.
    pub hidden: usize,
    /// Stage-1 random selections draw their size from `1..=min(N, this)`.
    pub max_random_selection: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.005,
            beta: 0.0015,
            lambda: 0.001,
            gamma: 0.0,
            lr_stage1: 0.001,
            lr_stage2: 0.0005,
            batch_size: 32,
            stage1_epochs: 3,
            stage2_epochs: 5,
            steps_per_epoch: 0,
            seed: 0,
            conc_min: 0.05,
            conc_max: 50.0,
            optimizer: OptimizerKind::Adam,
            reward_baseline: false,
            hidden: 64,
            max_random_selection: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.alpha < 0.0 {
            bad.push("alpha");
        }
        if self.beta < 0.0 {
            bad.push("beta");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            bad.push("lambda");
        }
        if self.gamma != 0.0 {
            bad.push("gamma (only 0 supported)");
        }
        if self.lr_stage1 <= 0.0 {
            bad.push("lr_stage1");
        }
        if self.lr_stage2 <= 0.0 {
            bad.push("lr_stage2");
        }
        if self.batch_size == 0 {
            bad.push("batch_size");
        }
        if self.conc_min <= 0.0 || self.conc_max < self.conc_min {
            bad.push("concentration clamp");
        }
        if self.hidden == 0 {
            bad.push("hidden");
        }
        if self.max_random_selection == 0 {
            bad.push("max_random_selection");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("invalid training config: {}", bad.join(", "))))
        }
    }
}
