//! Prediction metrics and the experiment-level report document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EvalOutcome, RoomMetrics};
use crate::error::{Error, Result};

/// `(MAE, MSE)` of paired predictions and truths.
pub fn compute_metrics(predictions: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::contract(format!(
            "metrics need equal nonempty inputs, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let n = predictions.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in predictions.iter().zip(truths) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, sq / n))
}

/// Signed relative improvement percentage, `100 (ref - method) / ref`.
pub fn improvement(method_mae: f64, reference_mae: f64) -> Result<f64> {
    if reference_mae <= 0.0 {
        return Err(Error::contract("improvement requires a positive reference MAE"));
    }
    Ok(100.0 * (reference_mae - method_mae) / reference_mae)
}

/// One method's entry in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub mae: f64,
    pub mse: f64,
    pub steps: usize,
    pub per_room: BTreeMap<String, RoomMetrics>,
    /// Signed Imp.% against each reference method, where defined.
    pub improvement_pct: BTreeMap<String, f64>,
}

/// Deterministic metrics document; wall-clock timings live in a sidecar so
/// this file is bit-reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub version: String,
    pub methods: BTreeMap<String, MethodReport>,
    pub references: Vec<String>,
}

impl MetricsReport {
    pub fn build(outcomes: &[EvalOutcome], references: &[String], seed: u64) -> Result<Self> {
        let ref_maes: BTreeMap<&String, f64> = outcomes
            .iter()
            .filter(|o| references.contains(&o.method))
            .map(|o| (&o.method, o.mae))
            .collect();
        let mut methods = BTreeMap::new();
        for o in outcomes {
            let mut imp = BTreeMap::new();
            if !references.contains(&o.method) {
                for (name, &ref_mae) in &ref_maes {
                    imp.insert((*name).clone(), improvement(o.mae, ref_mae)?);
                }
            }
            methods.insert(
                o.method.clone(),
                MethodReport {
                    mae: o.mae,
                    mse: o.mse,
                    steps: o.steps,
                    per_room: o.per_room.clone(),
                    improvement_pct: imp,
                },
            );
        }
        Ok(MetricsReport {
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            methods,
            references: references.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}
