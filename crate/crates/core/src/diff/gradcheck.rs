//! Central finite-difference verification of tape gradients.
//!
//! The checker re-evaluates a user-supplied forward function at perturbed
//! leaf values, so it is independent of the backward pass it validates.

use super::{Tape, Tensor};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub leaf: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a gradient check over every coordinate of every leaf.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checks: Vec<CoordCheck>,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare tape gradients against central finite differences.
///
/// `forward` rebuilds the graph from leaf tensors and returns the scalar
/// output node; it is called once per perturbation, so any randomness inside
/// must be frozen by the caller. `coords` selects (leaf, coordinate) pairs to
/// probe; pass `None` to probe every coordinate.
pub fn check_gradients<F>(
    leaves: &[Tensor],
    forward: F,
    coords: Option<&[(usize, usize)]>,
    step: f64,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[super::NodeId]) -> Result<super::NodeId>,
{
    let eval = |ls: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<_> = ls.iter().map(|t| tape.var(t.clone())).collect();
        let out = forward(&mut tape, &ids)?;
        Ok(tape.value(out).as_scalar())
    };

    // Analytic gradients once, at the base point.
    let mut tape = Tape::new();
    let ids: Vec<_> = leaves.iter().map(|t| tape.var(t.clone())).collect();
    let out = forward(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let all_coords: Vec<(usize, usize)> = match coords {
        Some(c) => c.to_vec(),
        None => leaves
            .iter()
            .enumerate()
            .flat_map(|(li, t)| (0..t.len()).map(move |ci| (li, ci)))
            .collect(),
    };

    let mut checks = Vec::with_capacity(all_coords.len());
    let mut max_rel_err: f64 = 0.0;
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (leaf, coord) in all_coords {
        let base = leaves[leaf].values()[coord];
        work[leaf].values_mut()[coord] = base + step;
        let plus = eval(&work)?;
        work[leaf].values_mut()[coord] = base - step;
        let minus = eval(&work)?;
        work[leaf].values_mut()[coord] = base;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads
            .get(ids[leaf])
            .map(|g| g.values()[coord])
            .unwrap_or(0.0);
        let e = rel_err(analytic, numeric);
        max_rel_err = max_rel_err.max(e);
        checks.push(CoordCheck { leaf, coord, analytic, numeric, rel_err: e });
    }
    Ok(CheckReport { checks, max_rel_err })
}
