//! Precomputed per-stream view used by training and evaluation.
//!
//! Base-model predictions depend only on the logged stream and the frozen
//! library, never on the agents, so every model's one-step prediction and
//! squared error can be materialized up front. Frame `f` corresponds to
//! stream time `t = lookback - 1 + f` and predicts the row at `t + 1`.

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::models::{window_at, ModelLibrary, TimeSeriesWindow};
use crate::sim::{RoomDataset, Row};

/// Error assigned to every model before any outcome is observed.
pub const TRACKER_PRIOR: f64 = 1.0;

pub struct StreamFrames {
    pub room_id: String,
    pub lookback: usize,
    pub sampling_minutes: u32,
    rows: Vec<Row>,
    /// `preds[f][i]`: model `i`'s prediction of the truth at frame `f`.
    pub preds: Vec<Vec<f64>>,
    /// `truths[f]`: logged `x_{t+1}`.
    pub truths: Vec<f64>,
    /// Decision timestamp per frame.
    pub timestamps: Vec<NaiveDateTime>,
}

impl StreamFrames {
    pub fn build(dataset: &RoomDataset, library: &ModelLibrary, lookback: usize) -> Result<Self> {
        let n_rows = dataset.rows.len();
        if n_rows < lookback + 1 {
            return Err(Error::contract(format!(
                "stream {} too short: {n_rows} rows for look-back {lookback}",
                dataset.room_id
            )));
        }
        let frames = n_rows - lookback;
        let mut preds = Vec::with_capacity(frames);
        let mut truths = Vec::with_capacity(frames);
        let mut timestamps = Vec::with_capacity(frames);
        for t in lookback - 1..n_rows - 1 {
            let window = window_at(&dataset.rows, t, lookback, dataset.sampling_minutes)?;
            let u_t = dataset.rows[t].u_hvac;
            preds.push(library.predict_all(&window, u_t)?);
            truths.push(dataset.rows[t + 1].t_room);
            timestamps.push(dataset.rows[t].timestamp);
        }
        Ok(StreamFrames {
            room_id: dataset.room_id.clone(),
            lookback,
            sampling_minutes: dataset.sampling_minutes,
            rows: dataset.rows.clone(),
            preds,
            truths,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn n_models(&self) -> usize {
        self.preds.first().map_or(0, Vec::len)
    }

    /// Look-back window at frame `f`.
    pub fn window(&self, f: usize) -> Result<TimeSeriesWindow> {
        window_at(&self.rows, self.lookback - 1 + f, self.lookback, self.sampling_minutes)
    }

    /// Logged control applied at frame `f`.
    pub fn u_t(&self, f: usize) -> f64 {
        self.rows[self.lookback - 1 + f].u_hvac
    }

    /// Per-model squared errors from the previous frame; the documented prior
    /// before anything has been observed.
    pub fn prev_errors(&self, f: usize) -> Vec<f64> {
        if f == 0 {
            vec![TRACKER_PRIOR; self.n_models()]
        } else {
            self.preds[f - 1]
                .iter()
                .map(|p| {
                    let e = p - self.truths[f - 1];
                    e * e
                })
                .collect()
        }
    }

    /// Squared errors of every model at frame `f` once truth is known.
    pub fn errors_at(&self, f: usize) -> Vec<f64> {
        self.preds[f]
            .iter()
            .map(|p| {
                let e = p - self.truths[f];
                e * e
            })
            .collect()
    }
}
