//! Shared state representation for the ensemble agents.
//!
//! Three TCN stacks embed the state, control, and disturbance tracks of a
//! window; a cross-attention layer fuses them with the state track as the
//! query; the per-model error history enters as a rank-normalized embedding.
//! The state vector is the concatenation of the two halves.

use rand::Rng;

use crate::diff::{NodeId, ParameterSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{TimeSeriesWindow, D_AMBIENT, D_DAY_TYPE, D_OCCUPANCY, D_SOLAR};

/// Fixed affine input scaling keeping network inputs O(1).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InputScaling {
    pub x_offset: f64,
    pub x_scale: f64,
    pub u_scale: f64,
    pub amb_offset: f64,
    pub amb_scale: f64,
    pub occ_scale: f64,
    pub solar_scale: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        InputScaling {
            x_offset: 20.0,
            x_scale: 5.0,
            u_scale: 2000.0,
            amb_offset: 8.0,
            amb_scale: 8.0,
            occ_scale: 4.0,
            solar_scale: 500.0,
        }
    }
}

/// Architecture settings; `d_h` defaults to 64.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub n_models: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    /// Feed raw errors instead of ranks into the error embedding.
    pub raw_error_embedding: bool,
    pub scaling: InputScaling,
}

impl EncoderConfig {
    pub fn new(n_models: usize) -> Self {
        EncoderConfig {
            d_h: 64,
            n_models,
            kernel: 4,
            dilations: vec![1, 2, 4],
            raw_error_embedding: false,
            scaling: InputScaling::default(),
        }
    }

    pub fn with_hidden(mut self, d_h: usize) -> Self {
        self.d_h = d_h;
        self
    }

    /// Timesteps the final output position can see through the stacks.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }

    /// State vector dimension `2 * d_h`.
    pub fn state_dim(&self) -> usize {
        2 * self.d_h
    }
}

const STACKS: [(&str, usize); 3] = [("x", 1), ("u", 1), ("d", 4)];

/// Fresh encoder parameters under the `enc.` prefix.
pub fn init_encoder_params(cfg: &EncoderConfig, rng: &mut impl Rng) -> ParameterSet {
    let mut ps = ParameterSet::new();
    let (k, dh) = (cfg.kernel, cfg.d_h);
    for (stack, c_in) in STACKS {
        let mut cin = c_in;
        for (b, _) in cfg.dilations.iter().enumerate() {
            ps.insert(
                &format!("enc.{stack}.b{b}.c0.w"),
                Tensor::glorot_uniform(&[k, cin, dh], k * cin, k * dh, rng),
            );
            ps.insert(&format!("enc.{stack}.b{b}.c0.b"), Tensor::zeros(&[dh]));
            ps.insert(
                &format!("enc.{stack}.b{b}.c1.w"),
                Tensor::glorot_uniform(&[k, dh, dh], k * dh, k * dh, rng),
            );
            ps.insert(&format!("enc.{stack}.b{b}.c1.b"), Tensor::zeros(&[dh]));
            if cin != dh {
                ps.insert(
                    &format!("enc.{stack}.b{b}.proj"),
                    Tensor::glorot_uniform(&[cin, dh], cin, dh, rng),
                );
            }
            cin = dh;
        }
    }
    ps.insert("enc.attn.wq", Tensor::glorot_uniform(&[dh, dh], dh, dh, rng));
    ps.insert("enc.attn.wk", Tensor::glorot_uniform(&[2 * dh, dh], 2 * dh, dh, rng));
    ps.insert("enc.attn.wv", Tensor::glorot_uniform(&[2 * dh, dh], 2 * dh, dh, rng));
    ps.insert(
        "enc.err.w",
        Tensor::glorot_uniform(&[cfg.n_models, dh], cfg.n_models, dh, rng),
    );
    ps.insert("enc.err.b", Tensor::zeros(&[dh]));
    ps
}

/// Errors mapped to average ranks scaled into [0, 1]; ties share their mean
/// rank, so any monotone rescaling of the errors leaves the output unchanged.
pub fn rank_normalize(errors: &[f64]) -> Vec<f64> {
    let n = errors.len();
    if n <= 1 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[a].partial_cmp(&errors[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && errors[order[j + 1]] == errors[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg / (n - 1) as f64;
        }
        i = j + 1;
    }
    ranks
}

/// Encoder parameters bound onto a tape as named leaves.
pub struct BoundEncoder {
    cfg: EncoderConfig,
    ids: std::collections::BTreeMap<String, NodeId>,
}

impl BoundEncoder {
    pub fn bind(tape: &mut Tape, cfg: &EncoderConfig, params: &ParameterSet) -> Self {
        let mut ids = std::collections::BTreeMap::new();
        for (name, t) in params.iter() {
            if name.starts_with("enc.") {
                ids.insert(name.clone(), tape.param(name, t.clone()));
            }
        }
        BoundEncoder { cfg: cfg.clone(), ids }
    }

    /// Reuse existing tape nodes (e.g. leaves owned by a gradient checker)
    /// instead of binding fresh parameter leaves.
    pub fn from_ids(cfg: &EncoderConfig, ids: std::collections::BTreeMap<String, NodeId>) -> Self {
        BoundEncoder { cfg: cfg.clone(), ids }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("encoder parameter {name:?} not bound"))
    }

    fn tcn_stack(&self, tape: &mut Tape, stack: &str, input: NodeId) -> Result<NodeId> {
        let mut h = input;
        for (b, &dilation) in self.cfg.dilations.clone().iter().enumerate() {
            let w0 = self.id(&format!("enc.{stack}.b{b}.c0.w"));
            let b0 = self.id(&format!("enc.{stack}.b{b}.c0.b"));
            let w1 = self.id(&format!("enc.{stack}.b{b}.c1.w"));
            let b1 = self.id(&format!("enc.{stack}.b{b}.c1.b"));
            let c0 = tape.causal_conv1d(h, w0, b0, dilation)?;
            let a0 = tape.relu(c0);
            let c1 = tape.causal_conv1d(a0, w1, b1, dilation)?;
            let a1 = tape.relu(c1);
            let skip = match self.ids.get(&format!("enc.{stack}.b{b}.proj")) {
                Some(&proj) => tape.matmul(h, proj),
                None => h,
            };
            let sum = tape.add(a1, skip);
            h = tape.relu(sum);
        }
        Ok(h)
    }

    /// Scaled `[L, C]` input tracks for a window; `u` is left-padded by
    /// repeating its earliest value so all tracks share length `L`.
    fn input_tracks(&self, window: &TimeSeriesWindow) -> (Tensor, Tensor, Tensor) {
        let l = window.len();
        let s = &self.cfg.scaling;
        let x: Vec<f64> = window.x.iter().map(|v| (v - s.x_offset) / s.x_scale).collect();
        let mut u = Vec::with_capacity(l);
        u.push(window.u[0] / s.u_scale);
        for v in &window.u {
            u.push(v / s.u_scale);
        }
        let mut d = Vec::with_capacity(l * 4);
        for row in &window.d {
            d.push((row[D_AMBIENT] - s.amb_offset) / s.amb_scale);
            d.push(row[D_OCCUPANCY] / s.occ_scale);
            d.push(row[D_SOLAR] / s.solar_scale);
            d.push(row[D_DAY_TYPE]);
        }
        (
            Tensor::new(vec![l, 1], x),
            Tensor::new(vec![l, 1], u),
            Tensor::new(vec![l, 4], d),
        )
    }

    /// Data half of the state: TCN tracks fused by cross-attention, read at
    /// the final timestep.
    pub fn encode_window(&self, tape: &mut Tape, window: &TimeSeriesWindow) -> Result<NodeId> {
        let l = window.len();
        let (x, u, d) = self.input_tracks(window);
        let x = tape.constant(x);
        let u = tape.constant(u);
        let d = tape.constant(d);

        let hq = self.tcn_stack(tape, "x", x)?;
        let hu = self.tcn_stack(tape, "u", u)?;
        let hd = self.tcn_stack(tape, "d", d)?;
        let hk = tape.concat_cols(hu, hd);

        let q = tape.matmul(hq, self.id("enc.attn.wq"));
        let k = tape.matmul(hk, self.id("enc.attn.wk"));
        let v = tape.matmul(hk, self.id("enc.attn.wv"));
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (self.cfg.d_h as f64).sqrt());
        let attn = tape.masked_softmax(scaled, &vec![true; l])?;
        let fused = tape.matmul(attn, v);
        Ok(tape.row(fused, l - 1))
    }

    /// Model half of the state: last-step squared errors, rank-normalized
    /// unless configured raw, through a dense layer with tanh.
    pub fn embed_errors(&self, tape: &mut Tape, errors: &[f64]) -> Result<NodeId> {
        if errors.len() != self.cfg.n_models {
            return Err(Error::contract(format!(
                "expected {} model errors, got {}",
                self.cfg.n_models,
                errors.len()
            )));
        }
        if errors.iter().any(|&e| e < 0.0 || !e.is_finite()) {
            return Err(Error::contract("model errors must be finite and nonnegative"));
        }
        let input = if self.cfg.raw_error_embedding {
            errors.to_vec()
        } else {
            rank_normalize(errors)
        };
        let e = tape.constant(Tensor::vector(input));
        let lin = tape.dense(e, self.id("enc.err.w"), self.id("enc.err.b"));
        Ok(tape.tanh(lin))
    }

    /// Full state `e_d (+) e_m`.
    pub fn build_state(&self, tape: &mut Tape, window: &TimeSeriesWindow, errors: &[f64]) -> Result<NodeId> {
        let e_d = self.encode_window(tape, window)?;
        let e_m = self.embed_errors(tape, errors)?;
        Ok(tape.concat_vec(e_d, e_m))
    }
}

/// Forward-only state vector on a throwaway tape.
pub fn encode_state_value(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    window: &TimeSeriesWindow,
    errors: &[f64],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, cfg, params);
    let s = enc.build_state(&mut tape, window, errors)?;
    tape.validate_finite()?;
    Ok(tape.value(s).clone())
}
