use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::{
    sample_high_action, sample_low_action, ActionMode, BoundHeads, HrlAgents, SingleTierAgent, HIGH_PREFIX,
    LOW_PREFIX, SINGLE_TIER_PREFIX,
};
use super::{RewardBreakdown, TrainConfig};
use crate::diff::{NodeId, Optimizer, OptimizerKind, ParameterSet, Tape, Tensor};
use crate::encoder::{BoundEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::frames::StreamFrames;
use crate::models::ModelLibrary;

/// Policy-gradient ascent on `E[log pi(a|s) r]` followed by the soft blend
/// `phi = lambda phi_new + (1 - lambda) phi_old`.
pub struct Reinforce {
    optimizer: Optimizer,
    lambda: f64,
}

impl Reinforce {
    pub fn new(kind: OptimizerKind, lr: f64, lambda: f64) -> Self {
        Reinforce { optimizer: Optimizer::new(kind, lr), lambda }
    }

    /// One update from a recorded surrogate scalar. Rewards enter the tape as
    /// constants, so the gradient is exactly `mean(grad log_prob * r)`.
    pub fn step(&mut self, params: &mut ParameterSet, tape: &Tape, surrogate: NodeId) -> Result<()> {
        let grads = tape.backward(surrogate)?;
        let mut fresh = params.clone();
        self.optimizer.ascend(&mut fresh, &grads.into_param_map());
        params.soft_blend(&fresh, self.lambda)
    }
}

/// Per-epoch mean rewards, one row per epoch and stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub stage: u8,
    pub mean_r_loss: f64,
    pub mean_r_mod: f64,
    pub mean_r_var: f64,
    pub mean_r_base: f64,
    pub mean_r_h: f64,
    pub mean_r_l: f64,
}

pub fn write_training_log(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "stage",
        "mean_r_loss",
        "mean_r_mod",
        "mean_r_var",
        "mean_r_base",
        "mean_r_h",
        "mean_r_l",
    ])?;
    for r in rows {
        w.write_record(&[
            r.epoch.to_string(),
            r.stage.to_string(),
            r.mean_r_loss.to_string(),
            r.mean_r_mod.to_string(),
            r.mean_r_var.to_string(),
            r.mean_r_base.to_string(),
            r.mean_r_h.to_string(),
            r.mean_r_l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn mean_of(rbs: &[RewardBreakdown], f: impl Fn(&RewardBreakdown) -> f64) -> f64 {
    if rbs.is_empty() {
        return 0.0;
    }
    rbs.iter().map(&f).sum::<f64>() / rbs.len() as f64
}

fn log_row(epoch: usize, stage: u8, rbs: &[RewardBreakdown]) -> TrainLogRow {
    TrainLogRow {
        epoch,
        stage,
        mean_r_loss: mean_of(rbs, |r| r.r_loss),
        mean_r_mod: mean_of(rbs, |r| r.r_mod),
        mean_r_var: mean_of(rbs, |r| r.r_var),
        mean_r_base: mean_of(rbs, |r| r.r_base),
        mean_r_h: mean_of(rbs, |r| r.r_h),
        mean_r_l: mean_of(rbs, |r| r.r_l),
    }
}

/// Squared error of the weighted ensemble and of equal weights over the
/// selection, from precomputed per-model predictions.
fn losses(preds: &[f64], truth: f64, w: &[f64], selected: &[usize]) -> (f64, f64) {
    let yhat: f64 = w.iter().zip(preds).map(|(wi, p)| wi * p).sum();
    let e = yhat - truth;
    let equal: f64 = selected.iter().map(|&i| preds[i]).sum::<f64>() / selected.len() as f64;
    let eq = equal - truth;
    (e * e, eq * eq)
}

fn k_distinct(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.partial_shuffle(rng, k);
    let mut sel: Vec<usize> = idx[..k].to_vec();
    sel.sort_unstable();
    sel
}

struct EpochPlan {
    records: Vec<(usize, usize)>,
}

fn plan_records(streams: &[StreamFrames]) -> Result<EpochPlan> {
    let mut records = Vec::new();
    for (si, s) in streams.iter().enumerate() {
        for fi in 0..s.len() {
            records.push((si, fi));
        }
    }
    if records.is_empty() {
        return Err(Error::config("training streams contain no usable steps"));
    }
    Ok(EpochPlan { records })
}

impl EpochPlan {
    fn epoch(&mut self, rng: &mut impl Rng, steps: usize) -> &[(usize, usize)] {
        self.records.shuffle(rng);
        let take = if steps == 0 { self.records.len() } else { steps.min(self.records.len()) };
        &self.records[..take]
    }
}

fn center(rewards: &mut [f64], enabled: bool) {
    if !enabled || rewards.is_empty() {
        return;
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    for r in rewards {
        *r -= mean;
    }
}

/// Stage 1 pre-trains the low-level weight policy against random selections;
/// stage 2 trains both levels jointly. Returns the trained agents and the
/// per-epoch reward log.
pub fn train_two_stage(
    streams: &[StreamFrames],
    library: &ModelLibrary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(HrlAgents, Vec<TrainLogRow>)> {
    cfg.validate()?;
    let n = library.len();
    if n == 0 {
        return Err(Error::config("model library is empty"));
    }
    if enc_cfg.n_models != n {
        return Err(Error::config(format!(
            "encoder expects {} models, library has {n}",
            enc_cfg.n_models
        )));
    }
    let varcounts = library.variable_counts();
    let mut agents = HrlAgents::init(enc_cfg.clone(), cfg.hidden, cfg.conc_min, cfg.conc_max, cfg.seed);
    let mut plan = plan_records(streams)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "train", 0));
    let mut log = Vec::new();

    // Stage 1: the high head is never bound, so its parameters stay untouched.
    let mut opt = Reinforce::new(cfg.optimizer, cfg.lr_stage1, cfg.lambda);
    for epoch in 0..cfg.stage1_epochs {
        let records = plan.epoch(&mut rng, cfg.steps_per_epoch).to_vec();
        let mut epoch_rbs = Vec::with_capacity(records.len());
        for batch in records.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let enc = BoundEncoder::bind(&mut tape, &agents.encoder, &agents.params);
            let low = BoundHeads::bind(&mut tape, &agents.params, LOW_PREFIX);
            let mut log_probs = Vec::with_capacity(batch.len());
            let mut rewards = Vec::with_capacity(batch.len());
            for &(si, fi) in batch {
                let frame = &streams[si];
                let window = frame.window(fi)?;
                let errors = frame.prev_errors(fi);
                let s = enc.build_state(&mut tape, &window, &errors)?;

                let k = rng.gen_range(1..=n.min(cfg.max_random_selection));
                let selected = k_distinct(&mut rng, n, k);
                let mut b = vec![false; n];
                for &i in &selected {
                    b[i] = true;
                }
                let b_node = tape.constant(Tensor::vector(b.iter().map(|&on| f64::from(on as u8)).collect()));
                let low_in = tape.concat_vec(s, b_node);
                let conc = low.concentrations(&mut tape, low_in, &selected, cfg.conc_min, cfg.conc_max);
                let (action, logp_l) =
                    sample_low_action(&mut tape, conc, &selected, n, ActionMode::Sample, &mut rng)?;

                let (loss_ens, loss_eq) = losses(&frame.preds[fi], frame.truths[fi], &action.w, &selected);
                let rb = RewardBreakdown::compute(loss_ens, loss_eq, &b, &varcounts, cfg.alpha, cfg.beta);
                log_probs.push(logp_l);
                rewards.push(rb.r_l);
                epoch_rbs.push(rb);
            }
            center(&mut rewards, cfg.reward_baseline);
            let terms: Vec<NodeId> = log_probs
                .iter()
                .zip(&rewards)
                .map(|(&lp, &r)| tape.scale(lp, r))
                .collect();
            let total = tape.add_n(&terms);
            let surrogate = tape.scale(total, 1.0 / terms.len() as f64);
            opt.step(&mut agents.params, &tape, surrogate)?;
        }
        log.push(log_row(epoch, 1, &epoch_rbs));
    }

    // Stage 2: joint updates at the second-stage learning rate.
    let mut opt = Reinforce::new(cfg.optimizer, cfg.lr_stage2, cfg.lambda);
    for epoch in 0..cfg.stage2_epochs {
        let records = plan.epoch(&mut rng, cfg.steps_per_epoch).to_vec();
        let mut epoch_rbs = Vec::with_capacity(records.len());
        for batch in records.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let enc = BoundEncoder::bind(&mut tape, &agents.encoder, &agents.params);
            let high = BoundHeads::bind(&mut tape, &agents.params, HIGH_PREFIX);
            let low = BoundHeads::bind(&mut tape, &agents.params, LOW_PREFIX);
            let mut high_terms = Vec::with_capacity(batch.len());
            let mut low_terms = Vec::with_capacity(batch.len());
            let mut r_hs = Vec::with_capacity(batch.len());
            let mut r_ls = Vec::with_capacity(batch.len());
            for &(si, fi) in batch {
                let frame = &streams[si];
                let window = frame.window(fi)?;
                let errors = frame.prev_errors(fi);
                let s = enc.build_state(&mut tape, &window, &errors)?;

                let logits_h = high.forward(&mut tape, s);
                let (high_action, logp_h) =
                    sample_high_action(&mut tape, logits_h, ActionMode::Sample, &mut rng);
                let selected = high_action.selected_indices();
                let b_node = tape.constant(Tensor::vector(
                    high_action.b.iter().map(|&on| f64::from(on as u8)).collect(),
                ));
                let low_in = tape.concat_vec(s, b_node);
                let conc = low.concentrations(&mut tape, low_in, &selected, cfg.conc_min, cfg.conc_max);
                let (action, logp_l) =
                    sample_low_action(&mut tape, conc, &selected, n, ActionMode::Sample, &mut rng)?;

                let (loss_ens, loss_eq) = losses(&frame.preds[fi], frame.truths[fi], &action.w, &selected);
                let rb =
                    RewardBreakdown::compute(loss_ens, loss_eq, &high_action.b, &varcounts, cfg.alpha, cfg.beta);
                high_terms.push(logp_h);
                low_terms.push(logp_l);
                r_hs.push(rb.r_h);
                r_ls.push(rb.r_l);
                epoch_rbs.push(rb);
            }
            center(&mut r_hs, cfg.reward_baseline);
            center(&mut r_ls, cfg.reward_baseline);
            let mut terms = Vec::with_capacity(high_terms.len());
            for i in 0..high_terms.len() {
                let th = tape.scale(high_terms[i], r_hs[i]);
                let tl = tape.scale(low_terms[i], r_ls[i]);
                terms.push(tape.add(th, tl));
            }
            let total = tape.add_n(&terms);
            let surrogate = tape.scale(total, 1.0 / terms.len() as f64);
            opt.step(&mut agents.params, &tape, surrogate)?;
        }
        log.push(log_row(cfg.stage1_epochs + epoch, 2, &epoch_rbs));
    }

    Ok((agents, log))
}

/// Train the flat ablation with `r = -loss` over the full library, using the
/// same epoch budget and learning-rate schedule as the two-stage run.
pub fn train_single_tier(
    streams: &[StreamFrames],
    library: &ModelLibrary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(SingleTierAgent, Vec<TrainLogRow>)> {
    cfg.validate()?;
    let n = library.len();
    if n == 0 {
        return Err(Error::config("model library is empty"));
    }
    let varcounts = library.variable_counts();
    let mut agent = SingleTierAgent::init(enc_cfg.clone(), cfg.hidden, cfg.conc_min, cfg.conc_max, cfg.seed);
    let mut plan = plan_records(streams)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "train-st", 0));
    let mut log = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    let b_all = vec![true; n];

    let phases = [(1u8, cfg.stage1_epochs, cfg.lr_stage1), (2u8, cfg.stage2_epochs, cfg.lr_stage2)];
    let mut epoch_no = 0;
    for (stage, epochs, lr) in phases {
        let mut opt = Reinforce::new(cfg.optimizer, lr, cfg.lambda);
        for _ in 0..epochs {
            let records = plan.epoch(&mut rng, cfg.steps_per_epoch).to_vec();
            let mut epoch_rbs = Vec::with_capacity(records.len());
            for batch in records.chunks(cfg.batch_size) {
                let mut tape = Tape::new();
                let enc = BoundEncoder::bind(&mut tape, &agent.encoder, &agent.params);
                let head = BoundHeads::bind(&mut tape, &agent.params, SINGLE_TIER_PREFIX);
                let mut log_probs = Vec::with_capacity(batch.len());
                let mut rewards = Vec::with_capacity(batch.len());
                for &(si, fi) in batch {
                    let frame = &streams[si];
                    let window = frame.window(fi)?;
                    let errors = frame.prev_errors(fi);
                    let s = enc.build_state(&mut tape, &window, &errors)?;
                    let conc = head.concentrations(&mut tape, s, &all, cfg.conc_min, cfg.conc_max);
                    let (action, logp) =
                        sample_low_action(&mut tape, conc, &all, n, ActionMode::Sample, &mut rng)?;
                    let (loss_ens, loss_eq) = losses(&frame.preds[fi], frame.truths[fi], &action.w, &all);
                    let rb = RewardBreakdown::compute(loss_ens, loss_eq, &b_all, &varcounts, cfg.alpha, cfg.beta);
                    log_probs.push(logp);
                    rewards.push(rb.r_loss);
                    epoch_rbs.push(rb);
                }
                center(&mut rewards, cfg.reward_baseline);
                let terms: Vec<NodeId> = log_probs
                    .iter()
                    .zip(&rewards)
                    .map(|(&lp, &r)| tape.scale(lp, r))
                    .collect();
                let total = tape.add_n(&terms);
                let surrogate = tape.scale(total, 1.0 / terms.len() as f64);
                opt.step(&mut agent.params, &tape, surrogate)?;
            }
            log.push(log_row(epoch_no, stage, &epoch_rbs));
            epoch_no += 1;
        }
    }
    Ok((agent, log))
}
