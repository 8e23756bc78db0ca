//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records a computation as a flat list of nodes in topological
//! order; [`Tape::backward`] walks it once in reverse and accumulates
//! gradients for every node reachable from the scalar root. The tape is
//! rebuilt for every mini-batch; nothing persists across batches.

use crate::error::{Error, Result};
use crate::matrix::{leaky_relu, sigmoid, Matrix};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm so saturated sigmoids cannot produce infinities.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    Sum(NodeId),
    RowSums(NodeId),
    ConcatRows(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    /// Summed binary cross-entropy of probabilities against fixed targets.
    BceSum(NodeId, Matrix),
    /// Summed squared error against fixed targets.
    SquaredErrorSum(NodeId, Matrix),
}

struct Node {
    op: Op,
    value: Matrix,
    trainable: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a node, zeros if the root never reached it.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Matrix {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, trainable: bool) -> NodeId {
        self.nodes.push(Node { op, value, trainable });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf: participates in the forward value only.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value, false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value, false))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value, false))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value, false)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value, false)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value, false)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let value = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(Op::LeakyRelu(a, slope), value, false)
    }

    /// Sum of all entries, a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()]).unwrap();
        self.push(Op::Sum(a), value, false)
    }

    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).row_sums();
        self.push(Op::RowSums(a), value, false)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).concat_rows(self.value(b))?;
        Ok(self.push(Op::ConcatRows(a, b), value, false))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let value = self.value(a).slice_rows(start, end)?;
        Ok(self.push(Op::SliceRows(a, start, end), value, false))
    }

    /// `-sum_ij [t log p + (1-t) log(1-p)]` with `p` clamped away from 0 and 1.
    /// Targets may be hard bits or soft values in `[0, 1]`.
    pub fn bce_sum(&mut self, probs: NodeId, targets: Matrix) -> Result<NodeId> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::Dimension(format!(
                "bce_sum probs {}x{} vs targets {}x{}",
                p.rows(),
                p.cols(),
                targets.rows(),
                targets.cols()
            )));
        }
        let mut acc = 0.0;
        for (&pv, &tv) in p.as_slice().iter().zip(targets.as_slice()) {
            let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            acc -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        }
        let value = Matrix::from_vec(1, 1, vec![acc]).unwrap();
        Ok(self.push(Op::BceSum(probs, targets), value, false))
    }

    /// `sum_ij (x - t)^2` against fixed targets.
    pub fn squared_error_sum(&mut self, x: NodeId, targets: Matrix) -> Result<NodeId> {
        let v = self.value(x);
        if v.shape() != targets.shape() {
            return Err(Error::Dimension(format!(
                "squared_error_sum {}x{} vs targets {}x{}",
                v.rows(),
                v.cols(),
                targets.rows(),
                targets.cols()
            )));
        }
        let mut acc = 0.0;
        for (&xv, &tv) in v.as_slice().iter().zip(targets.as_slice()) {
            let d = xv - tv;
            acc += d * d;
        }
        let value = Matrix::from_vec(1, 1, vec![acc]).unwrap();
        Ok(self.push(Op::SquaredErrorSum(x, targets), value, false))
    }

    /// Reverse pass from a scalar root. Returns gradients for every node the
    /// root depends on; trainable leaves always get one (zeros when unused).
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if root_val.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got {}x{}",
                root_val.rows(),
                root_val.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.nodes[b.0].value.transpose())?;
                    let gb = self.nodes[a.0].value.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(&self.nodes[b.0].value)?;
                    let gb = g.hadamard(&self.nodes[a.0].value)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut grads, *a, g.scale(*factor))?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose())?;
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[idx].value;
                    let local = s.map(|v| v * (1.0 - v));
                    accumulate(&mut grads, *a, g.hadamard(&local)?)?;
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[a.0].value;
                    let local = x.map(|v| if v >= 0.0 { 1.0 } else { *slope });
                    accumulate(&mut grads, *a, g.hadamard(&local)?)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.scalar()?))?;
                }
                Op::RowSums(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        for j in 0..c {
                            ga.set(i, j, gi);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.nodes[a.0].value.rows();
                    let total = g.rows();
                    if ra > 0 {
                        accumulate(&mut grads, *a, g.slice_rows(0, ra)?)?;
                    }
                    if total > ra {
                        accumulate(&mut grads, *b, g.slice_rows(ra, total)?)?;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (gi, i) in (*start..*end).enumerate() {
                        for j in 0..c {
                            ga.set(i, j, g.get(gi, j));
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::BceSum(p, targets) => {
                    let upstream = g.scalar()?;
                    let pv = &self.nodes[p.0].value;
                    let (r, c) = pv.shape();
                    let mut gp = Matrix::zeros(r, c);
                    for (i, (&prob, &t)) in
                        pv.as_slice().iter().zip(targets.as_slice()).enumerate()
                    {
                        // Derivative is zero where the clamp is active.
                        let local = if prob > PROB_CLAMP && prob < 1.0 - PROB_CLAMP {
                            -(t / prob - (1.0 - t) / (1.0 - prob))
                        } else {
                            0.0
                        };
                        gp.as_mut_slice()[i] = upstream * local;
                    }
                    accumulate(&mut grads, *p, gp)?;
                }
                Op::SquaredErrorSum(x, targets) => {
                    let upstream = g.scalar()?;
                    let xv = &self.nodes[x.0].value;
                    let (r, c) = xv.shape();
                    let mut gx = Matrix::zeros(r, c);
                    for (i, (&v, &t)) in xv.as_slice().iter().zip(targets.as_slice()).enumerate() {
                        gx.as_mut_slice()[i] = upstream * 2.0 * (v - t);
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
            }
            // Keep gradients for trainable leaves and for every node below the
            // root so callers can inspect intermediates.
            grads[idx] = Some(g);
        }

        // Trainable leaves untouched by the root still report a zero gradient
        // of the right shape.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable && grads[idx].is_none() {
                let (r, c) = node.value.shape();
                grads[idx] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}
