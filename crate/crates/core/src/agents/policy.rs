use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{HighAction, LowAction};
use crate::diff::{NodeId, ParameterSet, Tape, Tensor};
use crate::encoder::{init_encoder_params, BoundEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::models::TimeSeriesWindow;

pub const HIGH_PREFIX: &str = "high.";
pub const LOW_PREFIX: &str = "low.";
pub const SINGLE_TIER_PREFIX: &str = "st.";

/// Weight floor keeping Dirichlet log-densities finite on extreme draws.
const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Draw stochastically (training).
    Sample,
    /// Deterministic: threshold selection, mean weights (evaluation).
    Greedy,
}

/// Two-layer MLP head parameters under `prefix`.
pub fn init_policy_params(
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    n_out: usize,
    rng: &mut impl Rng,
) -> ParameterSet {
    let mut ps = ParameterSet::new();
    ps.insert(
        &format!("{prefix}l1.w"),
        Tensor::glorot_uniform(&[input_dim, hidden], input_dim, hidden, rng),
    );
    ps.insert(&format!("{prefix}l1.b"), Tensor::zeros(&[hidden]));
    ps.insert(
        &format!("{prefix}l2.w"),
        Tensor::glorot_uniform(&[hidden, n_out], hidden, n_out, rng),
    );
    ps.insert(&format!("{prefix}l2.b"), Tensor::zeros(&[n_out]));
    ps
}

/// One policy head bound onto a tape.
pub struct BoundHeads {
    ids: BTreeMap<String, NodeId>,
    prefix: String,
}

impl BoundHeads {
    pub fn bind(tape: &mut Tape, params: &ParameterSet, prefix: &str) -> Self {
        let mut ids = BTreeMap::new();
        for (name, t) in params.iter() {
            if name.starts_with(prefix) {
                ids.insert(name.clone(), tape.param(name, t.clone()));
            }
        }
        BoundHeads { ids, prefix: prefix.to_string() }
    }

    /// Reuse existing tape nodes instead of binding fresh parameter leaves.
    pub fn from_ids(ids: BTreeMap<String, NodeId>, prefix: &str) -> Self {
        BoundHeads { ids, prefix: prefix.to_string() }
    }

    fn id(&self, suffix: &str) -> NodeId {
        let name = format!("{}{}", self.prefix, suffix);
        *self
            .ids
            .get(&name)
            .unwrap_or_else(|| panic!("policy parameter {name:?} not bound"))
    }

    /// `dense -> relu -> dense` logits.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let h = tape.dense(input, self.id("l1.w"), self.id("l1.b"));
        let a = tape.relu(h);
        tape.dense(a, self.id("l2.w"), self.id("l2.b"))
    }

    /// Clamped Dirichlet concentrations over the selected coordinates.
    pub fn concentrations(
        &self,
        tape: &mut Tape,
        input: NodeId,
        selected: &[usize],
        conc_min: f64,
        conc_max: f64,
    ) -> NodeId {
        let logits = self.forward(tape, input);
        let picked = tape.gather(logits, selected);
        let conc = tape.exp(picked);
        tape.clamp(conc, conc_min, conc_max)
    }
}

/// The documented guard: an all-zero draw selects the most probable model.
pub fn force_nonempty(b: &mut [bool], p: &[f64]) {
    if b.iter().any(|&on| on) {
        return;
    }
    let mut best = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > p[best] {
            best = i;
        }
    }
    b[best] = true;
}

/// Selection from sigmoid probabilities of `logits`; the returned node is the
/// Bernoulli log-pmf of the final vector for the policy-gradient surrogate.
pub fn sample_high_action(
    tape: &mut Tape,
    logits: NodeId,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> (HighAction, NodeId) {
    let p: Vec<f64> = tape
        .value(logits)
        .values()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect();
    let mut b: Vec<bool> = match mode {
        ActionMode::Sample => p.iter().map(|&pi| rng.gen::<f64>() < pi).collect(),
        ActionMode::Greedy => p.iter().map(|&pi| pi >= 0.5).collect(),
    };
    force_nonempty(&mut b, &p);
    let log_prob_node = tape.bernoulli_log_pmf(logits, &b);
    let log_prob = tape.value(log_prob_node).as_scalar();
    (HighAction { b, log_prob }, log_prob_node)
}

/// Simplex weights over `selected` from clamped concentrations; the returned
/// node is the Dirichlet log-density at the realized point.
pub fn sample_low_action(
    tape: &mut Tape,
    conc: NodeId,
    selected: &[usize],
    n_models: usize,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<(LowAction, NodeId)> {
    if selected.is_empty() {
        return Err(Error::contract("low-level action requires a nonempty selection"));
    }
    let c = tape.value(conc).values().to_vec();
    debug_assert_eq!(c.len(), selected.len());

    let mut w_sel: Vec<f64> = match mode {
        ActionMode::Sample => {
            let draws: Vec<f64> = c
                .iter()
                .map(|&ci| {
                    Gamma::new(ci, 1.0)
                        .map(|g| g.sample(rng))
                        .unwrap_or(0.0)
                })
                .collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                draws.iter().map(|d| d / total).collect()
            } else {
                vec![1.0 / c.len() as f64; c.len()]
            }
        }
        ActionMode::Greedy => {
            let total: f64 = c.iter().sum();
            c.iter().map(|ci| ci / total).collect()
        }
    };
    // Keep ln(w) finite; renormalize after flooring.
    for w in &mut w_sel {
        *w = w.max(WEIGHT_FLOOR);
    }
    let total: f64 = w_sel.iter().sum();
    for w in &mut w_sel {
        *w /= total;
    }

    let log_prob_node = tape.dirichlet_log_pmf(conc, &w_sel);
    let log_prob = tape.value(log_prob_node).as_scalar();

    let mut w = vec![0.0; n_models];
    for (&idx, &wi) in selected.iter().zip(&w_sel) {
        w[idx] = wi;
    }
    Ok((LowAction { w, log_prob }, log_prob_node))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentsMeta {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub conc_min: f64,
    pub conc_max: f64,
}

/// Trained (or freshly initialized) hierarchical agents with their shared
/// encoder, ready for greedy inference or further training.
#[derive(Debug, Clone)]
pub struct HrlAgents {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub conc_min: f64,
    pub conc_max: f64,
    pub params: ParameterSet,
}

impl HrlAgents {
    pub fn init(encoder: EncoderConfig, hidden: usize, conc_min: f64, conc_max: f64, seed: u64) -> Self {
        let n = encoder.n_models;
        let s_dim = encoder.state_dim();
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "enc-init", 0));
        params.extend_prefixed("", &init_encoder_params(&encoder, &mut rng));
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "high-init", 0));
        params.extend_prefixed("", &init_policy_params(HIGH_PREFIX, s_dim, hidden, n, &mut rng));
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "low-init", 0));
        params.extend_prefixed("", &init_policy_params(LOW_PREFIX, s_dim + n, hidden, n, &mut rng));
        HrlAgents { encoder, hidden, conc_min, conc_max, params }
    }

    /// One decision: encode the state, select models, weight them.
    pub fn act(
        &self,
        window: &TimeSeriesWindow,
        errors: &[f64],
        mode: ActionMode,
        rng: &mut impl Rng,
    ) -> Result<(HighAction, LowAction)> {
        let mut tape = Tape::new();
        let enc = BoundEncoder::bind(&mut tape, &self.encoder, &self.params);
        let s = enc.build_state(&mut tape, window, errors)?;

        let high = BoundHeads::bind(&mut tape, &self.params, HIGH_PREFIX);
        let logits_h = high.forward(&mut tape, s);
        let (high_action, _) = sample_high_action(&mut tape, logits_h, mode, rng);

        let selected = high_action.selected_indices();
        let b_tensor = Tensor::vector(high_action.b.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect());
        let b_node = tape.constant(b_tensor);
        let low_input = tape.concat_vec(s, b_node);
        let low = BoundHeads::bind(&mut tape, &self.params, LOW_PREFIX);
        let conc = low.concentrations(&mut tape, low_input, &selected, self.conc_min, self.conc_max);
        let (low_action, _) =
            sample_low_action(&mut tape, conc, &selected, self.encoder.n_models, mode, rng)?;
        tape.validate_finite()?;
        Ok((high_action, low_action))
    }

    pub fn meta(&self) -> AgentsMeta {
        AgentsMeta {
            encoder: self.encoder.clone(),
            hidden: self.hidden,
            conc_min: self.conc_min,
            conc_max: self.conc_max,
        }
    }

    pub fn save(&self, params_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        self.params.save(params_path)?;
        let f = std::fs::File::create(meta_path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &self.meta())?;
        Ok(())
    }

    pub fn load(params_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let params = ParameterSet::load(params_path)?;
        let f = std::fs::File::open(meta_path)?;
        let meta: AgentsMeta = serde_json::from_reader(std::io::BufReader::new(f))?;
        Ok(HrlAgents {
            encoder: meta.encoder,
            hidden: meta.hidden,
            conc_min: meta.conc_min,
            conc_max: meta.conc_max,
            params,
        })
    }
}

/// Flat ablation: one Dirichlet policy over the whole library, no selection
/// stage, sharing the encoder architecture.
#[derive(Debug, Clone)]
pub struct SingleTierAgent {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub conc_min: f64,
    pub conc_max: f64,
    pub params: ParameterSet,
}

impl SingleTierAgent {
    pub fn init(encoder: EncoderConfig, hidden: usize, conc_min: f64, conc_max: f64, seed: u64) -> Self {
        let n = encoder.n_models;
        let s_dim = encoder.state_dim();
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "st-enc-init", 0));
        params.extend_prefixed("", &init_encoder_params(&encoder, &mut rng));
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "st-init", 0));
        params.extend_prefixed("", &init_policy_params(SINGLE_TIER_PREFIX, s_dim, hidden, n, &mut rng));
        SingleTierAgent { encoder, hidden, conc_min, conc_max, params }
    }

    /// Full-simplex weights over all models.
    pub fn act(
        &self,
        window: &TimeSeriesWindow,
        errors: &[f64],
        mode: ActionMode,
        rng: &mut impl Rng,
    ) -> Result<LowAction> {
        let n = self.encoder.n_models;
        let mut tape = Tape::new();
        let enc = BoundEncoder::bind(&mut tape, &self.encoder, &self.params);
        let s = enc.build_state(&mut tape, window, errors)?;
        let head = BoundHeads::bind(&mut tape, &self.params, SINGLE_TIER_PREFIX);
        let all: Vec<usize> = (0..n).collect();
        let conc = head.concentrations(&mut tape, s, &all, self.conc_min, self.conc_max);
        let (action, _) = sample_low_action(&mut tape, conc, &all, n, mode, rng)?;
        tape.validate_finite()?;
        Ok(action)
    }

    pub fn save(&self, params_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        self.params.save(params_path)?;
        let meta = AgentsMeta {
            encoder: self.encoder.clone(),
            hidden: self.hidden,
            conc_min: self.conc_min,
            conc_max: self.conc_max,
        };
        let f = std::fs::File::create(meta_path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &meta)?;
        Ok(())
    }

    pub fn load(params_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let params = ParameterSet::load(params_path)?;
        let f = std::fs::File::open(meta_path)?;
        let meta: AgentsMeta = serde_json::from_reader(std::io::BufReader::new(f))?;
        Ok(SingleTierAgent {
            encoder: meta.encoder,
            hidden: meta.hidden,
            conc_min: meta.conc_min,
            conc_max: meta.conc_max,
            params,
        })
    }
}
