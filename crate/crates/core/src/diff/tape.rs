use std::collections::BTreeMap;

use statrs::function::gamma::{digamma, ln_gamma};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Dense { x: NodeId, w: NodeId, b: NodeId },
    CausalConv1d { x: NodeId, w: NodeId, b: NodeId, dilation: usize },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Clamp { x: NodeId, lo: f64, hi: f64 },
    MaskedSoftmax { x: NodeId, mask: Vec<bool> },
    ConcatCols(NodeId, NodeId),
    ConcatVec(NodeId, NodeId),
    Row { x: NodeId, row: usize },
    Gather { x: NodeId, indices: Vec<usize> },
    Sum(NodeId),
    Mean(NodeId),
    BernoulliLogPmf { logits: NodeId, outcome: Vec<bool> },
    DirichletLogPmf { conc: NodeId, point: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    param_name: Option<String>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by node or parameter name.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_nodes: BTreeMap<String, usize>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.param_nodes.get(name).and_then(|&i| self.grads[i].as_ref())
    }

    /// Gradient map over the named parameters that received a gradient.
    pub fn into_param_map(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, idx) in &self.param_nodes {
            if let Some(g) = self.grads[*idx].take() {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

/// Record of a forward computation over tensors, replayable in reverse for
/// gradients. One tape is single-threaded; independent tapes are independent.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, requires_grad, param_name: None, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    /// Differentiable input without a name.
    pub fn var(&mut self, t: Tensor) -> NodeId {
        self.push(t, true, Op::Leaf)
    }

    /// Named differentiable parameter; the name keys the gradient map.
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        let id = self.push(t, true, Op::Leaf);
        self.nodes[id.0].param_name = Some(name.to_string());
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|x| -x).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|x| k * x).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Scale(a, k))
    }

    /// `[T, C] + [C]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        assert_eq!(tx.shape().len(), 2, "add_bias expects a matrix");
        let (rows, cols) = (tx.shape()[0], tx.shape()[1]);
        assert_eq!(tb.shape(), [cols], "add_bias bias length mismatch");
        let mut values = tx.values().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] += tb.values()[c];
            }
        }
        let t = Tensor::new(vec![rows, cols], values);
        let rg = self.needs(&[x, bias]);
        self.push(t, rg, Op::AddBias(x, bias))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape().len(), 2, "matmul lhs must be rank 2");
        assert_eq!(tb.shape().len(), 2, "matmul rhs must be rank 2");
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut values = vec![0.0; m * n];
        let av = ta.values();
        let bv = tb.values();
        for i in 0..m {
            for j in 0..k {
                let aij = av[i * k + j];
                if aij != 0.0 {
                    let brow = &bv[j * n..(j + 1) * n];
                    let crow = &mut values[i * n..(i + 1) * n];
                    for l in 0..n {
                        crow[l] += aij * brow[l];
                    }
                }
            }
        }
        let t = Tensor::new(vec![m, n], values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.shape().len(), 2, "transpose expects a matrix");
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = ta.values()[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], values);
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Transpose(a))
    }

    /// `[in] x [in, out] + [out] -> [out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        assert_eq!(tx.shape().len(), 1, "dense input must be a vector");
        assert_eq!(tw.shape().len(), 2, "dense weight must be a matrix");
        let (din, dout) = (tw.shape()[0], tw.shape()[1]);
        assert_eq!(tx.shape()[0], din, "dense input length mismatch");
        assert_eq!(tb.shape(), [dout], "dense bias length mismatch");
        let mut values = tb.values().to_vec();
        for i in 0..din {
            let xi = tx.values()[i];
            if xi != 0.0 {
                let wrow = &tw.values()[i * dout..(i + 1) * dout];
                for o in 0..dout {
                    values[o] += xi * wrow[o];
                }
            }
        }
        let t = Tensor::vector(values);
        let rg = self.needs(&[x, w, b]);
        self.push(t, rg, Op::Dense { x, w, b })
    }

    /// Dilated causal 1-D convolution with zero left padding.
    ///
    /// Input `[T, C_in]`, weights `[K, C_in, C_out]`, bias `[C_out]`; output
    /// `[T, C_out]` where position `t` sees inputs at `t, t-d, ..., t-(K-1)d`.
    pub fn causal_conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, dilation: usize) -> Result<NodeId> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if tx.shape().len() != 2 || tw.shape().len() != 3 || tb.shape().len() != 1 {
            return Err(Error::contract(format!(
                "causal_conv1d rank mismatch: input {:?}, weights {:?}, bias {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let (t_len, c_in) = (tx.shape()[0], tx.shape()[1]);
        let (k, w_cin, c_out) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if k < 1 || dilation < 1 {
            return Err(Error::contract("causal_conv1d requires K >= 1 and dilation >= 1"));
        }
        if w_cin != c_in || tb.shape()[0] != c_out {
            return Err(Error::contract(format!(
                "causal_conv1d dimension mismatch: input channels {c_in}, weight channels {w_cin}, bias {} vs C_out {c_out}",
                tb.shape()[0]
            )));
        }
        let mut values = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            let orow = &mut values[t * c_out..(t + 1) * c_out];
            orow.copy_from_slice(tb.values());
            for tap in 0..k {
                let offset = (k - 1 - tap) * dilation;
                if offset > t {
                    continue;
                }
                let src = t - offset;
                for ci in 0..c_in {
                    let xv = tx.values()[src * c_in + ci];
                    if xv != 0.0 {
                        let wrow = &tw.values()[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                        for co in 0..c_out {
                            orow[co] += xv * wrow[co];
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![t_len, c_out], values);
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(t, rg, Op::CausalConv1d { x, w, b, dilation }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| x.max(0.0)).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| x.tanh()).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| sigmoid(x)).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| softplus(x)).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| x.exp()).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| x.ln()).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| x.clamp(lo, hi)).collect());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Clamp { x: a, lo, hi })
    }

    /// Softmax restricted to `mask`: outputs are 0 where the mask is false and
    /// sum to 1 over the rest. Applies per row for a matrix (mask indexes
    /// columns), or to the whole vector. Max-subtraction guards overflow.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        let cols = match ta.shape() {
            [n] => *n,
            [_, n] => *n,
            s => return Err(Error::contract(format!("masked_softmax expects vector or matrix, got {s:?}"))),
        };
        if mask.len() != cols {
            return Err(Error::contract(format!(
                "masked_softmax mask length {} does not match width {cols}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::contract("masked_softmax requires at least one unmasked entry"));
        }
        let rows = ta.len() / cols;
        let mut values = vec![0.0; ta.len()];
        for r in 0..rows {
            let src = &ta.values()[r * cols..(r + 1) * cols];
            let dst = &mut values[r * cols..(r + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for (i, &m) in mask.iter().enumerate() {
                if m && src[i] > max {
                    max = src[i];
                }
            }
            let mut denom = 0.0;
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    let e = (src[i] - max).exp();
                    dst[i] = e;
                    denom += e;
                }
            }
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    dst[i] /= denom;
                }
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), values);
        let rg = self.needs(&[a]);
        Ok(self.push(t, rg, Op::MaskedSoftmax { x: a, mask: mask.to_vec() }))
    }

    /// `[T, C1] ++ [T, C2] -> [T, C1 + C2]` along the channel axis.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape().len(), 2, "concat_cols lhs must be rank 2");
        assert_eq!(tb.shape().len(), 2, "concat_cols rhs must be rank 2");
        assert_eq!(ta.shape()[0], tb.shape()[0], "concat_cols row mismatch");
        let (rows, c1, c2) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut values = Vec::with_capacity(rows * (c1 + c2));
        for r in 0..rows {
            values.extend_from_slice(&ta.values()[r * c1..(r + 1) * c1]);
            values.extend_from_slice(&tb.values()[r * c2..(r + 1) * c2]);
        }
        let t = Tensor::new(vec![rows, c1 + c2], values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::ConcatCols(a, b))
    }

    pub fn concat_vec(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape().len(), 1, "concat_vec lhs must be rank 1");
        assert_eq!(tb.shape().len(), 1, "concat_vec rhs must be rank 1");
        let mut values = ta.values().to_vec();
        values.extend_from_slice(tb.values());
        let t = Tensor::vector(values);
        let rg = self.needs(&[a, b]);
        self.push(t, rg, Op::ConcatVec(a, b))
    }

    /// Extract row `row` of a matrix as a vector.
    pub fn row(&mut self, a: NodeId, row: usize) -> NodeId {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.shape().len(), 2, "row expects a matrix");
        let (rows, cols) = (ta.shape()[0], ta.shape()[1]);
        assert!(row < rows, "row index out of range");
        let values = ta.values()[row * cols..(row + 1) * cols].to_vec();
        let t = Tensor::vector(values);
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Row { x: a, row })
    }

    /// Select entries of a vector at `indices` (duplicates allowed).
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.shape().len(), 1, "gather expects a vector");
        let values = indices.iter().map(|&i| ta.values()[i]).collect();
        let t = Tensor::vector(values);
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Gather { x: a, indices: indices.to_vec() })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let t = Tensor::scalar(ta.values().iter().sum());
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let n = ta.len().max(1);
        let t = Tensor::scalar(ta.values().iter().sum::<f64>() / n as f64);
        let rg = self.needs(&[a]);
        self.push(t, rg, Op::Mean(a))
    }

    /// Log-probability of independent Bernoulli outcomes under `sigmoid(logits)`,
    /// computed via softplus for stability.
    pub fn bernoulli_log_pmf(&mut self, logits: NodeId, outcome: &[bool]) -> NodeId {
        let tl = &self.nodes[logits.0].value;
        assert_eq!(tl.len(), outcome.len(), "bernoulli_log_pmf length mismatch");
        let mut lp = 0.0;
        for (&z, &b) in tl.values().iter().zip(outcome) {
            lp -= if b { softplus(-z) } else { softplus(z) };
        }
        let t = Tensor::scalar(lp);
        let rg = self.needs(&[logits]);
        self.push(t, rg, Op::BernoulliLogPmf { logits, outcome: outcome.to_vec() })
    }

    /// Log-density of a Dirichlet distribution with concentrations `conc`
    /// evaluated at the fixed simplex point `point`.
    pub fn dirichlet_log_pmf(&mut self, conc: NodeId, point: &[f64]) -> NodeId {
        let tc = &self.nodes[conc.0].value;
        assert_eq!(tc.len(), point.len(), "dirichlet_log_pmf length mismatch");
        let total: f64 = tc.values().iter().sum();
        let mut lp = ln_gamma(total);
        for (&c, &w) in tc.values().iter().zip(point) {
            lp += (c - 1.0) * w.ln() - ln_gamma(c);
        }
        let t = Tensor::scalar(lp);
        let rg = self.needs(&[conc]);
        self.push(t, rg, Op::DirichletLogPmf { conc, point: point.to_vec() })
    }

    /// Fold a list of same-shape nodes with `add`.
    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "add_n of nothing");
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }

    /// Error if any node value is non-finite, naming the first offender.
    pub fn validate_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.all_finite() {
                return Err(Error::Numeric { node: i, msg: "non-finite value in forward pass".into() });
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar output. Returns the gradient of `output`
    /// with respect to every node that requires a gradient; constant leaves
    /// are untouched.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar output, got shape {:?}",
                out_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.value.all_finite() {
                return Err(Error::Numeric { node: i, msg: "non-finite value in forward pass".into() });
            }
            if !g.all_finite() {
                return Err(Error::Numeric { node: i, msg: "non-finite gradient".into() });
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut param_nodes = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(name) = &n.param_name {
                param_nodes.insert(name.clone(), i);
            }
        }
        Ok(Gradients { grads, param_nodes })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], target: NodeId, update: impl FnOnce(&mut Tensor)) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[target.0].value.shape()));
        }
        update(slot.as_mut().unwrap());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, |d| d.axpy(1.0, g));
                self.accum(grads, *b, |d| d.axpy(1.0, g));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |d| d.axpy(1.0, g));
                self.accum(grads, *b, |d| d.axpy(-1.0, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                self.accum(grads, *a, |d| {
                    for ((d, &g), &b) in d.values_mut().iter_mut().zip(g.values()).zip(vb.values()) {
                        *d += g * b;
                    }
                });
                self.accum(grads, *b, |d| {
                    for ((d, &g), &a) in d.values_mut().iter_mut().zip(g.values()).zip(va.values()) {
                        *d += g * a;
                    }
                });
            }
            Op::Neg(a) => self.accum(grads, *a, |d| d.axpy(-1.0, g)),
            Op::Scale(a, k) => {
                let k = *k;
                self.accum(grads, *a, |d| d.axpy(k, g));
            }
            Op::AddBias(x, b) => {
                let cols = self.value(*b).len();
                self.accum(grads, *x, |d| d.axpy(1.0, g));
                self.accum(grads, *b, |d| {
                    for (i, &gv) in g.values().iter().enumerate() {
                        d.values_mut()[i % cols] += gv;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                self.accum(grads, *a, |d| {
                    // dA = dC . B^T
                    for i in 0..m {
                        for l in 0..n {
                            let gil = g.values()[i * n + l];
                            if gil != 0.0 {
                                for j in 0..k {
                                    d.values_mut()[i * k + j] += gil * vb.values()[j * n + l];
                                }
                            }
                        }
                    }
                });
                self.accum(grads, *b, |d| {
                    // dB = A^T . dC
                    for i in 0..m {
                        for j in 0..k {
                            let aij = va.values()[i * k + j];
                            if aij != 0.0 {
                                let grow = &g.values()[i * n..(i + 1) * n];
                                let drow = &mut d.values_mut()[j * n..(j + 1) * n];
                                for l in 0..n {
                                    drow[l] += aij * grow[l];
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                self.accum(grads, *a, |d| {
                    for i in 0..n {
                        for j in 0..m {
                            d.values_mut()[j * n + i] += g.values()[i * m + j];
                        }
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (din, dout) = (vw.shape()[0], vw.shape()[1]);
                self.accum(grads, *x, |d| {
                    for i in 0..din {
                        let wrow = &vw.values()[i * dout..(i + 1) * dout];
                        let mut acc = 0.0;
                        for o in 0..dout {
                            acc += wrow[o] * g.values()[o];
                        }
                        d.values_mut()[i] += acc;
                    }
                });
                self.accum(grads, *w, |d| {
                    for i in 0..din {
                        let xi = vx.values()[i];
                        if xi != 0.0 {
                            let drow = &mut d.values_mut()[i * dout..(i + 1) * dout];
                            for o in 0..dout {
                                drow[o] += xi * g.values()[o];
                            }
                        }
                    }
                });
                self.accum(grads, *b, |d| d.axpy(1.0, g));
            }
            Op::CausalConv1d { x, w, b, dilation } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (t_len, c_in) = (vx.shape()[0], vx.shape()[1]);
                let (k, c_out) = (vw.shape()[0], vw.shape()[2]);
                let dil = *dilation;
                self.accum(grads, *x, |d| {
                    for t in 0..t_len {
                        let grow = &g.values()[t * c_out..(t + 1) * c_out];
                        for tap in 0..k {
                            let offset = (k - 1 - tap) * dil;
                            if offset > t {
                                continue;
                            }
                            let src = t - offset;
                            for ci in 0..c_in {
                                let wrow = &vw.values()[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                                let mut acc = 0.0;
                                for co in 0..c_out {
                                    acc += wrow[co] * grow[co];
                                }
                                d.values_mut()[src * c_in + ci] += acc;
                            }
                        }
                    }
                });
                self.accum(grads, *w, |d| {
                    for t in 0..t_len {
                        let grow = &g.values()[t * c_out..(t + 1) * c_out];
                        for tap in 0..k {
                            let offset = (k - 1 - tap) * dil;
                            if offset > t {
                                continue;
                            }
                            let src = t - offset;
                            for ci in 0..c_in {
                                let xv = vx.values()[src * c_in + ci];
                                if xv != 0.0 {
                                    let drow =
                                        &mut d.values_mut()[(tap * c_in + ci) * c_out..(tap * c_in + ci + 1) * c_out];
                                    for co in 0..c_out {
                                        drow[co] += xv * grow[co];
                                    }
                                }
                            }
                        }
                    }
                });
                self.accum(grads, *b, |d| {
                    for t in 0..t_len {
                        let grow = &g.values()[t * c_out..(t + 1) * c_out];
                        for co in 0..c_out {
                            d.values_mut()[co] += grow[co];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a).clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &x) in d.values_mut().iter_mut().zip(g.values()).zip(va.values()) {
                        if x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &y) in d.values_mut().iter_mut().zip(g.values()).zip(y.values()) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &y) in d.values_mut().iter_mut().zip(g.values()).zip(y.values()) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Softplus(a) => {
                let va = self.value(*a).clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &x) in d.values_mut().iter_mut().zip(g.values()).zip(va.values()) {
                        *d += g * sigmoid(x);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &y) in d.values_mut().iter_mut().zip(g.values()).zip(y.values()) {
                        *d += g * y;
                    }
                });
            }
            Op::Ln(a) => {
                let va = self.value(*a).clone();
                self.accum(grads, *a, |d| {
                    for ((d, &g), &x) in d.values_mut().iter_mut().zip(g.values()).zip(va.values()) {
                        *d += g / x;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).clone();
                let (lo, hi) = (*lo, *hi);
                self.accum(grads, *x, |d| {
                    for ((d, &g), &x) in d.values_mut().iter_mut().zip(g.values()).zip(vx.values()) {
                        if x > lo && x < hi {
                            *d += g;
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x, mask } => {
                let y = node.value.clone();
                let cols = mask.len();
                let rows = y.len() / cols;
                self.accum(grads, *x, |d| {
                    for r in 0..rows {
                        let yrow = &y.values()[r * cols..(r + 1) * cols];
                        let grow = &g.values()[r * cols..(r + 1) * cols];
                        let dot: f64 = mask
                            .iter()
                            .enumerate()
                            .filter(|(_, &m)| m)
                            .map(|(i, _)| grow[i] * yrow[i])
                            .sum();
                        let drow = &mut d.values_mut()[r * cols..(r + 1) * cols];
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                drow[i] += yrow[i] * (grow[i] - dot);
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let c1 = self.value(*a).shape()[1];
                let c2 = self.value(*b).shape()[1];
                let rows = self.value(*a).shape()[0];
                self.accum(grads, *a, |d| {
                    for r in 0..rows {
                        for c in 0..c1 {
                            d.values_mut()[r * c1 + c] += g.values()[r * (c1 + c2) + c];
                        }
                    }
                });
                self.accum(grads, *b, |d| {
                    for r in 0..rows {
                        for c in 0..c2 {
                            d.values_mut()[r * c2 + c] += g.values()[r * (c1 + c2) + c1 + c];
                        }
                    }
                });
            }
            Op::ConcatVec(a, b) => {
                let n1 = self.value(*a).len();
                self.accum(grads, *a, |d| {
                    for i in 0..n1 {
                        d.values_mut()[i] += g.values()[i];
                    }
                });
                let n2 = self.value(*b).len();
                self.accum(grads, *b, |d| {
                    for i in 0..n2 {
                        d.values_mut()[i] += g.values()[n1 + i];
                    }
                });
            }
            Op::Row { x, row } => {
                let cols = node.value.len();
                let row = *row;
                self.accum(grads, *x, |d| {
                    for c in 0..cols {
                        d.values_mut()[row * cols + c] += g.values()[c];
                    }
                });
            }
            Op::Gather { x, indices } => {
                self.accum(grads, *x, |d| {
                    for (j, &i) in indices.iter().enumerate() {
                        d.values_mut()[i] += g.values()[j];
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.as_scalar();
                self.accum(grads, *a, |d| {
                    for d in d.values_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1);
                let gv = g.as_scalar() / n as f64;
                self.accum(grads, *a, |d| {
                    for d in d.values_mut() {
                        *d += gv;
                    }
                });
            }
            Op::BernoulliLogPmf { logits, outcome } => {
                let vz = self.value(*logits).clone();
                let gv = g.as_scalar();
                self.accum(grads, *logits, |d| {
                    for ((d, &z), &b) in d.values_mut().iter_mut().zip(vz.values()).zip(outcome) {
                        let target = if b { 1.0 } else { 0.0 };
                        *d += gv * (target - sigmoid(z));
                    }
                });
            }
            Op::DirichletLogPmf { conc, point } => {
                let vc = self.value(*conc).clone();
                let total: f64 = vc.values().iter().sum();
                let psi_total = digamma(total);
                let gv = g.as_scalar();
                self.accum(grads, *conc, |d| {
                    for ((d, &c), &w) in d.values_mut().iter_mut().zip(vc.values()).zip(point) {
                        *d += gv * (psi_total - digamma(c) + w.ln());
                    }
                });
            }
        }
    }
}
