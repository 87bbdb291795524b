//! Streaming per-timestep inference: build the state, pick and weight models,
//! predict, score against the logged truth, and roll the per-model error
//! tracker forward.

use std::path::Path;

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, HrlAgents, RewardBreakdown, SingleTierAgent};
use crate::baselines::heuristic_top_n;
use crate::error::{Error, Result};
use crate::frames::{StreamFrames, TRACKER_PRIOR};
use crate::models::{ModelLibrary, TimeSeriesWindow};

/// Last-step squared error per model, with a fixed prior before the first
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTracker {
    errors: Vec<f64>,
    observed: bool,
}

impl ErrorTracker {
    pub fn new(n_models: usize) -> Self {
        ErrorTracker { errors: vec![TRACKER_PRIOR; n_models], observed: false }
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// True until the first outcome has been recorded.
    pub fn at_prior(&self) -> bool {
        !self.observed
    }

    pub fn update(&mut self, errors: Vec<f64>) {
        debug_assert_eq!(errors.len(), self.errors.len());
        debug_assert!(errors.iter().all(|&e| e >= 0.0));
        self.errors = errors;
        self.observed = true;
    }
}

/// One evaluated timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub timestamp: NaiveDateTime,
    pub room: String,
    pub b: Vec<bool>,
    pub w: Vec<f64>,
    pub yhat: f64,
    pub ytrue: f64,
    pub sq_err: f64,
    pub reward: RewardBreakdown,
}

/// Convex combination of base-model predictions. Models with zero weight are
/// never evaluated.
pub fn ensemble_predict(library: &ModelLibrary, w: &[f64], window: &TimeSeriesWindow, u_t: f64) -> Result<f64> {
    if w.len() != library.len() {
        return Err(Error::contract(format!(
            "weight vector length {} does not match library size {}",
            w.len(),
            library.len()
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || w.iter().any(|&wi| wi < 0.0) {
        return Err(Error::contract(format!("weights off the simplex: sum = {sum}")));
    }
    let mut yhat = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            yhat += wi * library.get(i).predict(window, u_t)?;
        }
    }
    Ok(yhat)
}

/// Weighting strategy evaluated over logged streams.
pub enum EvalMethod<'a> {
    Hrl(&'a HrlAgents),
    SingleTier(&'a SingleTierAgent),
    HeuristicTopN(usize),
    EqualWeightAll,
    StaticWeights(&'a [f64]),
}

impl EvalMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Hrl(_) => "hrl",
            EvalMethod::SingleTier(_) => "single_tier",
            EvalMethod::HeuristicTopN(_) => "heuristic",
            EvalMethod::EqualWeightAll => "equal",
            EvalMethod::StaticWeights(_) => "static",
        }
    }
}

/// Cursor over one stream holding the per-stream tracker state.
pub struct StreamCursor<'a> {
    pub frames: &'a StreamFrames,
    pub t: usize,
    pub tracker: ErrorTracker,
}

impl<'a> StreamCursor<'a> {
    pub fn new(frames: &'a StreamFrames) -> Self {
        let n = frames.n_models();
        StreamCursor { frames, t: 0, tracker: ErrorTracker::new(n) }
    }
}

fn method_weights(
    method: &EvalMethod,
    cursor: &StreamCursor,
    window: &TimeSeriesWindow,
    library: &ModelLibrary,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let n = library.len();
    match method {
        EvalMethod::Hrl(agents) => {
            let (high, low) = agents.act(window, cursor.tracker.errors(), ActionMode::Greedy, rng)?;
            Ok((high.b, low.w))
        }
        EvalMethod::SingleTier(agent) => {
            let low = agent.act(window, cursor.tracker.errors(), ActionMode::Greedy, rng)?;
            Ok((vec![true; n], low.w))
        }
        EvalMethod::HeuristicTopN(top_n) => {
            // No information before the first outcome: uniform weights.
            if cursor.tracker.at_prior() {
                return Ok((vec![true; n], vec![1.0 / n as f64; n]));
            }
            let w = heuristic_top_n(cursor.tracker.errors(), *top_n)?;
            Ok((w.iter().map(|&wi| wi > 0.0).collect(), w))
        }
        EvalMethod::EqualWeightAll => Ok((vec![true; n], vec![1.0 / n as f64; n])),
        EvalMethod::StaticWeights(w) => {
            if w.len() != n {
                return Err(Error::contract("static weight vector length mismatch"));
            }
            Ok((w.iter().map(|&wi| wi > 0.0).collect(), w.to_vec()))
        }
    }
}

/// Evaluate one timestep and advance the cursor; the tracker only sees the
/// outcome after the prediction is scored.
pub fn step_stream(
    cursor: &mut StreamCursor,
    method: &EvalMethod,
    library: &ModelLibrary,
    alpha: f64,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EnsembleRecord> {
    let t = cursor.t;
    if t >= cursor.frames.len() {
        return Err(Error::EndOfStream);
    }
    let window = cursor.frames.window(t)?;
    let (b, w) = method_weights(method, cursor, &window, library, rng)?;
    let u_t = cursor.frames.u_t(t);
    let yhat = ensemble_predict(library, &w, &window, u_t)?;
    let ytrue = cursor.frames.truths[t];
    let sq_err = (yhat - ytrue) * (yhat - ytrue);

    let selected: Vec<usize> = b.iter().enumerate().filter_map(|(i, &on)| on.then_some(i)).collect();
    let preds = &cursor.frames.preds[t];
    let equal: f64 = selected.iter().map(|&i| preds[i]).sum::<f64>() / selected.len().max(1) as f64;
    let loss_equal = (equal - ytrue) * (equal - ytrue);
    let reward = RewardBreakdown::compute(sq_err, loss_equal, &b, &library.variable_counts(), alpha, beta);

    cursor.tracker.update(cursor.frames.errors_at(t));
    cursor.t += 1;

    Ok(EnsembleRecord {
        timestamp: cursor.frames.timestamps[t],
        room: cursor.frames.room_id.clone(),
        b,
        w,
        yhat,
        ytrue,
        sq_err,
        reward,
    })
}

/// Per-room and aggregate prediction quality of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub method: String,
    pub per_room: std::collections::BTreeMap<String, RoomMetrics>,
    pub mae: f64,
    pub mse: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomMetrics {
    pub mae: f64,
    pub mse: f64,
    pub steps: usize,
}

/// Run a frozen method over every test stream in greedy mode.
pub fn run_evaluation(
    test_streams: &[StreamFrames],
    method: &EvalMethod,
    library: &ModelLibrary,
    alpha: f64,
    beta: f64,
) -> Result<(Vec<EnsembleRecord>, EvalOutcome)> {
    let mut records = Vec::new();
    let mut per_room = std::collections::BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // greedy paths never draw
    for frames in test_streams {
        let mut cursor = StreamCursor::new(frames);
        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut steps = 0usize;
        loop {
            match step_stream(&mut cursor, method, library, alpha, beta, &mut rng) {
                Ok(rec) => {
                    abs += (rec.yhat - rec.ytrue).abs();
                    sq += rec.sq_err;
                    steps += 1;
                    records.push(rec);
                }
                Err(Error::EndOfStream) => break,
                Err(e) => return Err(e),
            }
        }
        per_room.insert(
            frames.room_id.clone(),
            RoomMetrics { mae: abs / steps as f64, mse: sq / steps as f64, steps },
        );
    }
    let total: usize = per_room.values().map(|m| m.steps).sum();
    let mae = per_room.values().map(|m| m.mae * m.steps as f64).sum::<f64>() / total as f64;
    let mse = per_room.values().map(|m| m.mse * m.steps as f64).sum::<f64>() / total as f64;
    let outcome = EvalOutcome { method: method.name().to_string(), per_room, mae, mse, steps: total };
    Ok((records, outcome))
}

const RECORD_HEADER: [&str; 7] = ["timestamp", "room", "b_bitstring", "weights_json", "yhat", "ytrue", "sq_err"];
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn write_records_csv(path: impl AsRef<Path>, records: &[EnsembleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        let bits: String = r.b.iter().map(|&on| if on { '1' } else { '0' }).collect();
        w.write_record(&[
            r.timestamp.format(TS_FORMAT).to_string(),
            r.room.clone(),
            bits,
            serde_json::to_string(&r.w)?,
            r.yhat.to_string(),
            r.ytrue.to_string(),
            r.sq_err.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reload the fields needed to recompute metrics from a record log.
pub struct ReplayRow {
    pub room: String,
    pub yhat: f64,
    pub ytrue: f64,
    pub sq_err: f64,
    pub w: Vec<f64>,
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<ReplayRow>> {
    let mut rdr = csv::Reader::from_path(&path)?;
    if rdr.headers()?.iter().ne(RECORD_HEADER) {
        return Err(Error::contract(format!(
            "unexpected record header in {}",
            path.as_ref().display()
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(ReplayRow {
            room: rec[1].to_string(),
            w: serde_json::from_str(&rec[3])?,
            yhat: rec[4].parse().map_err(|e| Error::contract(format!("bad yhat: {e}")))?,
            ytrue: rec[5].parse().map_err(|e| Error::contract(format!("bad ytrue: {e}")))?,
            sq_err: rec[6].parse().map_err(|e| Error::contract(format!("bad sq_err: {e}")))?,
        });
    }
    Ok(out)
}
