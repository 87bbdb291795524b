use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Named collection of trainable tensors with deterministic iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            self.entries.insert(name.to_string(), t).is_none(),
            "duplicate parameter name {name:?}"
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Merge another set under a key prefix.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParameterSet) {
        for (name, t) in other.iter() {
            self.insert(&format!("{prefix}{name}"), t.clone());
        }
    }

    /// Elementwise `lambda * new + (1 - lambda) * self` for every tensor named
    /// in `new`; the blended values replace the old ones.
    pub fn soft_blend(&mut self, new: &ParameterSet, lambda: f64) -> Result<()> {
        for (name, fresh) in new.iter() {
            let old = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("soft_blend: unknown parameter {name:?}")))?;
            if old.shape() != fresh.shape() {
                return Err(Error::contract(format!(
                    "soft_blend shape mismatch for {name:?}: {:?} vs {:?}",
                    old.shape(),
                    fresh.shape()
                )));
            }
            for (o, &n) in old.values_mut().iter_mut().zip(fresh.values()) {
                *o = lambda * n + (1.0 - lambda) * *o;
            }
        }
        Ok(())
    }

    /// Serialize as `{name: {shape: [...], values: [...]}}`.
    pub fn to_json(&self, w: impl Write) -> Result<()> {
        let doc: BTreeMap<&String, TensorDoc> = self
            .entries
            .iter()
            .map(|(k, t)| (k, TensorDoc { shape: t.shape().to_vec(), values: t.values().to_vec() }))
            .collect();
        serde_json::to_writer_pretty(w, &doc)?;
        Ok(())
    }

    pub fn from_json(r: impl Read) -> Result<Self> {
        let doc: BTreeMap<String, TensorDoc> = serde_json::from_reader(r)?;
        let mut ps = ParameterSet::new();
        for (name, td) in doc {
            if td.shape.iter().product::<usize>() != td.values.len() {
                return Err(Error::contract(format!("parameter {name:?} shape/value length mismatch")));
            }
            ps.entries.insert(name, Tensor::new(td.shape, td.values));
        }
        Ok(ps)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.to_json(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_json(std::io::BufReader::new(f))
    }
}

/// Gradient-ascent rule applied by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Ascent optimizer over a [`ParameterSet`]; Adam keeps per-tensor moments.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Take one ascent step in place: `params += direction(grads)`.
    pub fn ascend(&mut self, params: &mut ParameterSet, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        for (name, g) in grads {
            if !params.contains(name) {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => params.get_mut(name).axpy(self.lr, g),
                OptimizerKind::Adam => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                    let p = params.get_mut(name);
                    for ((p, (m, v)), &g) in p
                        .values_mut()
                        .iter_mut()
                        .zip(m.values_mut().iter_mut().zip(v.values_mut().iter_mut()))
                        .zip(g.values())
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p += self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
