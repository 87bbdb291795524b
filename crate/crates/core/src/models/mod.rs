//! Affine base models of indoor temperature and the library that holds them.
//!
//! A model predicts `x_{t+1}` from lagged states, past controls, disturbances,
//! and the candidate control `u_t`; every feature keeps the prediction affine
//! in `u_t`, which is what lets the controller enumerate candidates exactly.

mod fit;
mod window;

pub use fit::{fit_dictionary_regression, fit_least_squares, solve_ridge, training_mse};
pub use window::{window_at, TimeSeriesWindow, DIST_CHANNELS, D_AMBIENT, D_DAY_TYPE, D_OCCUPANCY, D_SOLAR};

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient group of Eq.-2-style models a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    State,
    PastControl,
    Disturbance,
    CurrentControl,
}

/// One input feature, computable from a [`TimeSeriesWindow`] plus `u_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `x_{t-k}`.
    StateLag(usize),
    /// `x_{t-k}^2`.
    StateSquared(usize),
    /// `u_{t-k}` for `k >= 1`.
    ControlLag(usize),
    /// The candidate control `u_t`.
    CurrentControl,
    /// `u_t * (amb_t - x_t)`; linear in `u_t`.
    CurrentControlTimesAmbientDelta,
    /// Disturbance channel at lag `k`.
    DisturbanceLag { channel: usize, lag: usize },
    /// `amb_{t-k} - x_{t-k}`.
    AmbientDelta(usize),
    /// Weekend indicator at `t`.
    DayType,
}

/// Raw input variables a feature touches; used by the model-complexity count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RawVar {
    X,
    U,
    D(usize),
    Day,
}

impl Feature {
    pub fn role(&self) -> Role {
        match self {
            Feature::StateLag(_) | Feature::StateSquared(_) => Role::State,
            Feature::ControlLag(_) => Role::PastControl,
            Feature::CurrentControl | Feature::CurrentControlTimesAmbientDelta => Role::CurrentControl,
            Feature::DisturbanceLag { .. } | Feature::AmbientDelta(_) | Feature::DayType => Role::Disturbance,
        }
    }

    pub fn raw_vars(&self) -> Vec<RawVar> {
        match self {
            Feature::StateLag(_) | Feature::StateSquared(_) => vec![RawVar::X],
            Feature::ControlLag(_) | Feature::CurrentControl => vec![RawVar::U],
            Feature::CurrentControlTimesAmbientDelta => vec![RawVar::U, RawVar::D(D_AMBIENT), RawVar::X],
            Feature::DisturbanceLag { channel, .. } => vec![RawVar::D(*channel)],
            Feature::AmbientDelta(_) => vec![RawVar::D(D_AMBIENT), RawVar::X],
            Feature::DayType => vec![RawVar::D(D_DAY_TYPE)],
        }
    }

    /// True when the feature's value depends linearly on `u_t`.
    pub fn involves_current_control(&self) -> bool {
        matches!(self, Feature::CurrentControl | Feature::CurrentControlTimesAmbientDelta)
    }

    fn evaluate(&self, w: &TimeSeriesWindow, u_t: f64) -> Result<f64> {
        match *self {
            Feature::StateLag(k) => w.x_lag(k),
            Feature::StateSquared(k) => w.x_lag(k).map(|v| v * v),
            Feature::ControlLag(k) => w.u_lag(k),
            Feature::CurrentControl => Ok(u_t),
            Feature::CurrentControlTimesAmbientDelta => {
                Ok(u_t * (w.d_lag(D_AMBIENT, 0)? - w.x_lag(0)?))
            }
            Feature::DisturbanceLag { channel, lag } => w.d_lag(channel, lag),
            Feature::AmbientDelta(k) => Ok(w.d_lag(D_AMBIENT, k)? - w.x_lag(k)?),
            Feature::DayType => w.d_lag(D_DAY_TYPE, 0),
        }
    }
}

/// Ordered feature list with its look-back requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub lookback: usize,
    pub features: Vec<Feature>,
}

impl FeatureSpec {
    pub fn new(lookback: usize, features: Vec<Feature>) -> Self {
        FeatureSpec { lookback, features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Library models must expose a handle on `u_t`.
    pub fn validate_controllable(&self) -> Result<()> {
        if !self.features.iter().any(Feature::involves_current_control) {
            return Err(Error::contract("feature spec has no current-control feature"));
        }
        Ok(())
    }

    /// Default linear spec: lagged states and controls, ambient, day type,
    /// and the candidate control.
    pub fn default_mlr(lookback: usize) -> Self {
        FeatureSpec::new(
            lookback,
            vec![
                Feature::StateLag(0),
                Feature::StateLag(1),
                Feature::StateLag(2),
                Feature::ControlLag(1),
                Feature::ControlLag(2),
                Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
                Feature::DisturbanceLag { channel: D_AMBIENT, lag: 1 },
                Feature::DayType,
                Feature::CurrentControl,
            ],
        )
    }

    /// Full nonlinear dictionary that stepwise selection draws from.
    pub fn dictionary(lookback: usize) -> Self {
        FeatureSpec::new(
            lookback,
            vec![
                Feature::StateLag(0),
                Feature::StateLag(1),
                Feature::StateLag(2),
                Feature::StateSquared(0),
                Feature::ControlLag(1),
                Feature::ControlLag(2),
                Feature::DisturbanceLag { channel: D_AMBIENT, lag: 0 },
                Feature::DisturbanceLag { channel: D_AMBIENT, lag: 1 },
                Feature::AmbientDelta(0),
                Feature::AmbientDelta(1),
                Feature::DayType,
                Feature::CurrentControl,
                Feature::CurrentControlTimesAmbientDelta,
            ],
        )
    }
}

/// Feature vector in spec order.
pub fn build_feature_vector(window: &TimeSeriesWindow, u_t: f64, spec: &FeatureSpec) -> Result<Vec<f64>> {
    if window.len() != spec.lookback {
        return Err(Error::contract(format!(
            "window length {} does not match spec look-back {}",
            window.len(),
            spec.lookback
        )));
    }
    spec.features.iter().map(|f| f.evaluate(window, u_t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Mlr,
    Dict,
}

/// How [`variable_count`] counts complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarCountMode {
    /// Distinct raw input variables across surviving features.
    #[default]
    DistinctRaw,
    /// Surviving expression terms.
    TermCount,
}

/// Affine one-step predictor of indoor temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub spec: FeatureSpec,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub source_room: String,
    pub method: FitMethod,
    pub trained_from: NaiveDateTime,
    pub trained_to: NaiveDateTime,
    pub variable_count: usize,
}

const COEF_EPS: f64 = 1e-12;

impl BaseModel {
    /// `intercept + coefficients . features(window, u_t)`.
    pub fn predict(&self, window: &TimeSeriesWindow, u_t: f64) -> Result<f64> {
        let feats = build_feature_vector(window, u_t, &self.spec)?;
        Ok(self.intercept + feats.iter().zip(&self.coefficients).map(|(f, c)| f * c).sum::<f64>())
    }

    /// Distinct raw variables (or terms) with a surviving coefficient.
    pub fn count_variables(&self, mode: VarCountMode) -> usize {
        match mode {
            VarCountMode::DistinctRaw => {
                let mut vars = BTreeSet::new();
                for (f, c) in self.spec.features.iter().zip(&self.coefficients) {
                    if c.abs() > COEF_EPS {
                        vars.extend(f.raw_vars());
                    }
                }
                vars.len()
            }
            VarCountMode::TermCount => self
                .coefficients
                .iter()
                .filter(|c| c.abs() > COEF_EPS)
                .count(),
        }
    }
}

/// Convenience wrapper matching the operation vocabulary.
pub fn model_predict(model: &BaseModel, window: &TimeSeriesWindow, u_t: f64) -> Result<f64> {
    model.predict(window, u_t)
}

pub fn variable_count(model: &BaseModel) -> usize {
    model.variable_count
}

/// Ordered collection of base models with dense integer ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelLibrary {
    models: Vec<BaseModel>,
}

#[derive(Serialize, Deserialize)]
struct LibraryEntry {
    id: usize,
    method: FitMethod,
    source_room: String,
    spec: FeatureSpec,
    coefficients: Vec<f64>,
    intercept: f64,
    variable_count: usize,
    trained_from: NaiveDateTime,
    trained_to: NaiveDateTime,
}

impl ModelLibrary {
    pub fn new(models: Vec<BaseModel>) -> Self {
        ModelLibrary { models }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, id: usize) -> &BaseModel {
        &self.models[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BaseModel> {
        self.models.iter()
    }

    /// Every model's prediction at `(window, u_t)`.
    pub fn predict_all(&self, window: &TimeSeriesWindow, u_t: f64) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.predict(window, u_t)).collect()
    }

    pub fn variable_counts(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.variable_count).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries: Vec<LibraryEntry> = self
            .models
            .iter()
            .enumerate()
            .map(|(id, m)| LibraryEntry {
                id,
                method: m.method,
                source_room: m.source_room.clone(),
                spec: m.spec.clone(),
                coefficients: m.coefficients.clone(),
                intercept: m.intercept,
                variable_count: m.variable_count,
                trained_from: m.trained_from,
                trained_to: m.trained_to,
            })
            .collect();
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &entries)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(&path)?;
        let entries: Vec<LibraryEntry> = serde_json::from_reader(std::io::BufReader::new(f))?;
        let mut models = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if e.id != i {
                return Err(Error::contract(format!(
                    "library ids must be dense and ordered: entry {i} has id {}",
                    e.id
                )));
            }
            if e.coefficients.len() != e.spec.len() {
                return Err(Error::contract(format!("model {i}: coefficient/spec length mismatch")));
            }
            models.push(BaseModel {
                spec: e.spec,
                coefficients: e.coefficients,
                intercept: e.intercept,
                source_room: e.source_room,
                method: e.method,
                trained_from: e.trained_from,
                trained_to: e.trained_to,
                variable_count: e.variable_count,
            });
        }
        Ok(ModelLibrary { models })
    }
}
