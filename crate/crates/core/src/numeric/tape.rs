//! Fixed-op gradient tape.
//!
//! Ops run eagerly as they are recorded; `backward` replays the tape in
//! reverse and accumulates exact gradients into the [`ParamStore`]. The store
//! must not be mutated between recording and backward.

use crate::error::{Error, Result};
use crate::numeric::ops;
use crate::numeric::param::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Leaf constant; gradients stop here.
    Input,
    /// W x + b
    Affine { w: ParamId, b: ParamId, x: NodeId },
    /// W x
    MatVec { w: ParamId, x: NodeId },
    Relu { x: NodeId },
    /// Elementwise a + b (residual connections).
    Add { a: NodeId, b: NodeId },
    /// Scalar -log softmax(logits)[label], probability floored.
    SoftmaxCe { logits: NodeId, label: usize },
    /// Scalar log softmax(logits)[index].
    LogProb { logits: NodeId, index: usize },
    /// Scalar sum of coeff * scalar-node terms.
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    /// Cached softmax probabilities for SoftmaxCe / LogProb.
    probs: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.len() != 1 {
            return Err(Error::Usage(format!("node has {} entries, expected scalar", v.len())));
        }
        Ok(v[0])
    }

    fn push(&mut self, op: Op, value: Vec<f64>, probs: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value, probs });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, values: &[f64]) -> NodeId {
        self.push(Op::Input, values.to_vec(), Vec::new())
    }

    pub fn affine(&mut self, store: &ParamStore, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let value = ops::affine_apply(store.get(w), store.get(b), self.value(x))?;
        Ok(self.push(Op::Affine { w, b, x }, value, Vec::new()))
    }

    pub fn matvec(&mut self, store: &ParamStore, w: ParamId, x: NodeId) -> Result<NodeId> {
        let value = ops::matvec_apply(store.get(w), self.value(x))?;
        Ok(self.push(Op::MatVec { w, x }, value, Vec::new()))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = ops::relu(self.value(x));
        self.push(Op::Relu { x }, value, Vec::new())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::Usage(format!(
                "add: lengths {} and {} differ",
                va.len(),
                vb.len()
            )));
        }
        let value = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add { a, b }, value, Vec::new()))
    }

    pub fn softmax_ce(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let probs = ops::softmax(self.value(logits))?;
        let loss = ops::cross_entropy(label, &probs)?;
        Ok(self.push(Op::SoftmaxCe { logits, label }, vec![loss], probs))
    }

    pub fn log_prob(&mut self, logits: NodeId, index: usize) -> Result<NodeId> {
        let z = self.value(logits);
        if index >= z.len() {
            return Err(Error::Usage(format!(
                "log_prob: index {index} out of range for {} logits",
                z.len()
            )));
        }
        let probs = ops::softmax(z)?;
        // log softmax via log-sum-exp; finite for finite logits
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let value = z[index] - lse;
        Ok(self.push(Op::LogProb { logits, index }, vec![value], probs))
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(Error::Usage("weighted_sum: no terms".to_string()));
        }
        let mut acc = 0.0;
        for &(id, coeff) in terms {
            let v = self.value(id);
            if v.len() != 1 {
                return Err(Error::Usage("weighted_sum: non-scalar term".to_string()));
            }
            acc += coeff * v[0];
        }
        Ok(self.push(Op::WeightedSum { terms: terms.to_vec() }, vec![acc], Vec::new()))
    }

    /// Reverse sweep from a scalar tail. Accumulates into `Parameter::grad`;
    /// callers zero grads when they want a fresh accumulation.
    pub fn backward(&self, tail: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward without a recorded forward pass".to_string()));
        }
        if self.nodes[tail.0].value.len() != 1 {
            return Err(Error::Usage("backward tail must be a scalar".to_string()));
        }

        let mut adjoint: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adjoint[tail.0][0] = 1.0;

        for i in (0..=tail.0).rev() {
            let g = std::mem::take(&mut adjoint[i]);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Affine { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    {
                        let wp = store.get_mut(*w);
                        for r in 0..wp.rows {
                            for c in 0..wp.cols {
                                wp.grad[r * wp.cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    {
                        let bp = store.get_mut(*b);
                        for (bg, gr) in bp.grad.iter_mut().zip(&g) {
                            *bg += gr;
                        }
                    }
                    let wp = store.get(*w);
                    let dx = &mut adjoint[x.0];
                    for r in 0..wp.rows {
                        for c in 0..wp.cols {
                            dx[c] += wp.values[r * wp.cols + c] * g[r];
                        }
                    }
                }
                Op::MatVec { w, x } => {
                    let xv = &self.nodes[x.0].value;
                    {
                        let wp = store.get_mut(*w);
                        for r in 0..wp.rows {
                            for c in 0..wp.cols {
                                wp.grad[r * wp.cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    let wp = store.get(*w);
                    let dx = &mut adjoint[x.0];
                    for r in 0..wp.rows {
                        for c in 0..wp.cols {
                            dx[c] += wp.values[r * wp.cols + c] * g[r];
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = &mut adjoint[x.0];
                    for c in 0..xv.len() {
                        // subgradient at 0 is 0
                        if xv[c] > 0.0 {
                            dx[c] += g[c];
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (d, gr) in adjoint[a.0].iter_mut().zip(&g) {
                        *d += gr;
                    }
                    for (d, gr) in adjoint[b.0].iter_mut().zip(&g) {
                        *d += gr;
                    }
                }
                Op::SoftmaxCe { logits, label } => {
                    let probs = &self.nodes[i].probs;
                    let dz = &mut adjoint[logits.0];
                    for (c, &p) in probs.iter().enumerate() {
                        let indicator = if c == *label { 1.0 } else { 0.0 };
                        dz[c] += g[0] * (p - indicator);
                    }
                }
                Op::LogProb { logits, index } => {
                    let probs = &self.nodes[i].probs;
                    let dz = &mut adjoint[logits.0];
                    for (c, &p) in probs.iter().enumerate() {
                        let indicator = if c == *index { 1.0 } else { 0.0 };
                        dz[c] += g[0] * (indicator - p);
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(id, coeff) in terms {
                        adjoint[id.0][0] += g[0] * coeff;
                    }
                }
            }
        }

        if !store.grads_finite() {
            return Err(Error::Numeric("backward produced non-finite gradients".to_string()));
        }
        Ok(())
    }
}
