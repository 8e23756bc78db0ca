//! The incremental multi-label network.
//!
//! A small trainable backbone maps input features to a `D`-dimensional
//! image feature. From there two branches produce class scores over all seen
//! classes:
//!
//! * a class-specific affine head giving `y_cal`;
//! * a graph branch: per-class nodes (image-conditioned through the partial
//!   label encoder, or a static learned embedding table in classic mode) are
//!   propagated through two graph-convolution layers over the normalized
//!   correlation matrix, then read out to one score per class (`y_gph`).
//!
//! The prediction is `sigmoid(y_cal + y_gph)`. All per-class parameter rows
//! grow at task boundaries; old rows are preserved bit for bit.

use crate::acm::{normalize_for_gcn, normalize_for_gcn_binarized, AcMatrix};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::{leaky_relu, sigmoid, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Width of raw input features.
    pub input_dim: usize,
    /// Backbone output width `D`; also the node feature width.
    pub feature_dim: usize,
    /// First graph layer output width.
    pub gcn_dim1: usize,
    /// Second graph layer output width (ignored in static mode, where the
    /// second layer must emit `feature_dim` for the dot-product readout).
    pub gcn_dim2: usize,
    /// Number of affine backbone layers; 0 means the identity map and
    /// requires `input_dim == feature_dim`.
    pub backbone_layers: usize,
    /// Negative slope of the leaky rectifier used throughout.
    pub activation_slope: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input_dim: 64,
            feature_dim: 64,
            gcn_dim1: 96,
            gcn_dim2: 128,
            backbone_layers: 2,
            activation_slope: 0.2,
        }
    }
}

/// How graph nodes are built: image-conditioned through the partial label
/// encoder, or a static learned per-class embedding table with a
/// dot-product readout (the classic ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeMode {
    Ple,
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dims: ModelDims,
    pub node_mode: NodeMode,
    /// Affine backbone layers, outermost first: (weight out x in, bias out x 1).
    pub backbone: Vec<(Matrix, Matrix)>,
    /// Class head: C x D weight and C x 1 bias.
    pub fc_w: Matrix,
    pub fc_b: Matrix,
    /// Partial label encoder parameters, C x D (Ple mode).
    pub theta: Option<Matrix>,
    /// Static per-class node embeddings, C x D (Static mode).
    pub static_embed: Option<Matrix>,
    /// Graph layer weights: D x d1 and d1 x d2 (d1 x D in static mode).
    pub gcn_w1: Matrix,
    pub gcn_w2: Matrix,
    /// Per-class readout rows, C x d2 (Ple mode).
    pub readout: Option<Matrix>,
    /// 1-based index of the latest task this state is sized for.
    pub task: usize,
    pub class_count: usize,
}

fn kaiming_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn expansion_rng(seed: u64, task: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl ModelState {
    pub fn new(dims: ModelDims, node_mode: NodeMode, classes: usize, seed: u64) -> Result<Self> {
        if dims.backbone_layers == 0 && dims.input_dim != dims.feature_dim {
            return Err(Error::Config(format!(
                "identity backbone needs input_dim == feature_dim, got {} vs {}",
                dims.input_dim, dims.feature_dim
            )));
        }
        if classes == 0 {
            return Err(Error::Config("a model needs at least one class".into()));
        }
        let mut rng = expansion_rng(seed, 1);
        let d = dims.feature_dim;
        let mut backbone = Vec::new();
        let mut in_width = dims.input_dim;
        for _ in 0..dims.backbone_layers {
            backbone.push((
                kaiming_uniform(d, in_width, in_width, &mut rng),
                Matrix::zeros(d, 1),
            ));
            in_width = d;
        }
        let w2_cols = match node_mode {
            NodeMode::Ple => dims.gcn_dim2,
            NodeMode::Static => d,
        };
        Ok(ModelState {
            dims,
            node_mode,
            fc_w: kaiming_uniform(classes, d, d, &mut rng),
            fc_b: Matrix::zeros(classes, 1),
            theta: match node_mode {
                NodeMode::Ple => Some(kaiming_uniform(classes, d, d, &mut rng)),
                NodeMode::Static => None,
            },
            static_embed: match node_mode {
                NodeMode::Ple => None,
                NodeMode::Static => Some(kaiming_uniform(classes, d, d, &mut rng)),
            },
            gcn_w1: kaiming_uniform(d, dims.gcn_dim1, d, &mut rng),
            // The second graph layer starts at zero so the graph branch is
            // neutral at initialization: the fused prediction begins as the
            // calibration head alone and the branch only contributes once
            // its gradients justify it.
            gcn_w2: Matrix::zeros(dims.gcn_dim1, w2_cols),
            readout: match node_mode {
                NodeMode::Ple => Some(kaiming_uniform(classes, w2_cols, w2_cols, &mut rng)),
                NodeMode::Static => None,
            },
            backbone,
            task: 1,
            class_count: classes,
        })
    }

    /// Grows per-class parameter rows for task `t` (1-based). Must be called
    /// exactly once per boundary, with `t` one past the current task.
    /// Existing rows are untouched; new rows are Kaiming-initialized from a
    /// seed derived from `(seed, t)`.
    pub fn expand_for_task(&mut self, t: usize, added_classes: usize, seed: u64) -> Result<()> {
        if t != self.task + 1 {
            return Err(Error::State(format!(
                "expand_for_task({t}) on a model at task {}; expansions must step by one",
                self.task
            )));
        }
        let mut rng = expansion_rng(seed, t);
        let d = self.dims.feature_dim;
        self.fc_w
            .grow_rows(&kaiming_uniform(added_classes, d, d, &mut rng))?;
        self.fc_b.grow_rows(&Matrix::zeros(added_classes, 1))?;
        if let Some(theta) = &mut self.theta {
            theta.grow_rows(&kaiming_uniform(added_classes, d, d, &mut rng))?;
        }
        if let Some(embed) = &mut self.static_embed {
            embed.grow_rows(&kaiming_uniform(added_classes, d, d, &mut rng))?;
        }
        if let Some(readout) = &mut self.readout {
            let w = readout.cols();
            readout.grow_rows(&kaiming_uniform(added_classes, w, w, &mut rng))?;
        }
        self.task = t;
        self.class_count += added_classes;
        Ok(())
    }

    /// Trainable matrices in a fixed order, with names for reports.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.backbone.len() {
            names.push(format!("backbone.{i}.w"));
            names.push(format!("backbone.{i}.b"));
        }
        names.push("fc.w".into());
        names.push("fc.b".into());
        match self.node_mode {
            NodeMode::Ple => names.push("theta".into()),
            NodeMode::Static => names.push("embed".into()),
        }
        names.push("gcn.w1".into());
        names.push("gcn.w2".into());
        if self.readout.is_some() {
            names.push("readout".into());
        }
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for (w, b) in &self.backbone {
            out.push(w);
            out.push(b);
        }
        out.push(&self.fc_w);
        out.push(&self.fc_b);
        match self.node_mode {
            NodeMode::Ple => out.push(self.theta.as_ref().expect("ple model holds theta")),
            NodeMode::Static => {
                out.push(self.static_embed.as_ref().expect("static model holds embed"))
            }
        }
        out.push(&self.gcn_w1);
        out.push(&self.gcn_w2);
        if let Some(r) = &self.readout {
            out.push(r);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for (w, b) in &mut self.backbone {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        match self.node_mode {
            NodeMode::Ple => out.push(self.theta.as_mut().expect("ple model holds theta")),
            NodeMode::Static => {
                out.push(self.static_embed.as_mut().expect("static model holds embed"))
            }
        }
        out.push(&mut self.gcn_w1);
        out.push(&mut self.gcn_w2);
        if let Some(r) = &mut self.readout {
            out.push(r);
        }
        out
    }

    /// Bit-exact hash over every parameter, for staleness checks.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params() {
            p.shape().hash(&mut h);
            for &v in p.as_slice() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Deterministic differentiable feature map.
    pub fn backbone_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        run_backbone(&self.backbone, self.dims.activation_slope, self.dims.input_dim, x)
    }

    /// Class-calibration head: `fc(feat)`, pre-sigmoid.
    fn head(&self, feat: &[f64]) -> Vec<f64> {
        (0..self.class_count)
            .map(|i| {
                let mut acc = self.fc_b.get(i, 0);
                for (j, &f) in feat.iter().enumerate() {
                    acc += self.fc_w.get(i, j) * f;
                }
                acc
            })
            .collect()
    }

    /// Image-conditioned graph nodes `H = theta (.) [p; q]`: the first
    /// `old_rows` rows duplicate the expert's feature, the rest the current
    /// one. With no expert every row derives from the current feature.
    pub fn graph_nodes(&self, feat: &[f64], expert_feat: Option<&[f64]>, old_rows: usize) -> Result<Matrix> {
        match self.node_mode {
            NodeMode::Static => Ok(self
                .static_embed
                .as_ref()
                .expect("static model holds embed")
                .clone()),
            NodeMode::Ple => {
                if old_rows > 0 && expert_feat.is_none() {
                    return Err(Error::State(
                        "old-class node rows need an expert feature".into(),
                    ));
                }
                let theta = self.theta.as_ref().expect("ple model holds theta");
                if old_rows > self.class_count {
                    return Err(Error::Dimension(format!(
                        "{old_rows} old rows exceed {} classes",
                        self.class_count
                    )));
                }
                let mut h = Matrix::zeros(self.class_count, self.dims.feature_dim);
                for i in 0..self.class_count {
                    let src = if i < old_rows {
                        expert_feat.unwrap()
                    } else {
                        feat
                    };
                    for j in 0..self.dims.feature_dim {
                        h.set(i, j, theta.get(i, j) * src[j]);
                    }
                }
                Ok(h)
            }
        }
    }

    /// Two stacked propagation layers and the per-class readout; pre-sigmoid
    /// scores, one per class. Static mode reads out by dot product with the
    /// image feature instead.
    pub fn gcn_forward(&self, a_hat: &Matrix, h: &Matrix, feat: &[f64]) -> Result<Vec<f64>> {
        if a_hat.rows() != self.class_count || a_hat.cols() != self.class_count {
            return Err(Error::Dimension(format!(
                "propagation matrix {}x{} for {} classes",
                a_hat.rows(),
                a_hat.cols(),
                self.class_count
            )));
        }
        let z1 = a_hat
            .matmul(h)?
            .matmul(&self.gcn_w1)?
            .map(|v| leaky_relu(v, self.dims.activation_slope));
        let z2 = a_hat.matmul(&z1)?.matmul(&self.gcn_w2)?;
        match self.node_mode {
            NodeMode::Ple => {
                let readout = self.readout.as_ref().expect("ple model holds readout");
                Ok((0..self.class_count)
                    .map(|i| {
                        z2.row(i)
                            .iter()
                            .zip(readout.row(i))
                            .map(|(&a, &b)| a * b)
                            .sum()
                    })
                    .collect())
            }
            NodeMode::Static => Ok((0..self.class_count)
                .map(|i| z2.row(i).iter().zip(feat).map(|(&a, &b)| a * b).sum())
                .collect()),
        }
    }

    /// Training-time forward of the encoder: `(y_cal, H)`. An expert is
    /// mandatory whenever old classes exist (`task > 1`).
    pub fn ple_forward(
        &self,
        x: &[f64],
        expert: Option<&ExpertSnapshot>,
    ) -> Result<(Vec<f64>, Matrix)> {
        let feat = self.backbone_forward(x)?;
        let (expert_feat, old_rows) = match expert {
            Some(e) => (Some(e.model.backbone_forward(x)?), e.model.class_count),
            None => {
                if self.task > 1 && self.node_mode == NodeMode::Ple {
                    return Err(Error::State(format!(
                        "task {} training forward needs the previous expert",
                        self.task
                    )));
                }
                (None, 0)
            }
        };
        let h = self.graph_nodes(&feat, expert_feat.as_deref(), old_rows)?;
        Ok((self.head(&feat), h))
    }

    /// Classic-ablation graph branch over the static node table.
    pub fn static_node_forward(&self, a_hat: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
        if self.node_mode != NodeMode::Static {
            return Err(Error::State(
                "static_node_forward on a model built with image-conditioned nodes".into(),
            ));
        }
        let feat = self.backbone_forward(x)?;
        let h = self.graph_nodes(&feat, None, 0)?;
        self.gcn_forward(a_hat, &h, &feat)
    }

    /// Deployment forward, consistent with how the state was trained: with
    /// an expert, the old-class node rows duplicate that expert's backbone
    /// feature exactly as they did during the task; without one, every row
    /// derives from the model's own backbone.
    pub fn eval_forward(
        &self,
        x: &[f64],
        a_hat: &Matrix,
        expert: Option<&ExpertSnapshot>,
    ) -> Result<PlainOutputs> {
        let feat = self.backbone_forward(x)?;
        let y_cal = self.head(&feat);
        let (p_feat, old_rows) = match expert {
            Some(e) => (Some(e.model.backbone_forward(x)?), e.model.class_count),
            None => (None, 0),
        };
        let h = self.graph_nodes(&feat, p_feat.as_deref(), old_rows)?;
        let y_gph = self.gcn_forward(a_hat, &h, &feat)?;
        let probs = predict(&y_cal, &y_gph)?;
        Ok(PlainOutputs { y_cal, y_gph: Some(y_gph), probs })
    }

    /// Head-only forward (no graph branch), used by the plain-tuning mode.
    pub fn eval_forward_no_graph(&self, x: &[f64]) -> Result<PlainOutputs> {
        let feat = self.backbone_forward(x)?;
        let y_cal = self.head(&feat);
        let probs = y_cal.iter().map(|&v| sigmoid(v)).collect();
        Ok(PlainOutputs { y_cal, y_gph: None, probs })
    }

    /// Inserts every parameter into the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let ids: Vec<NodeId> = self.params().into_iter().map(|p| tape.param(p.clone())).collect();
        self.bind_ids(&ids)
    }

    /// Binds to existing leaves (one per parameter, in `params()` order).
    pub fn bind_ids(&self, ids: &[NodeId]) -> BoundModel {
        assert_eq!(ids.len(), self.params().len(), "one node per parameter");
        let mut it = ids.iter().copied();
        let backbone: Vec<(NodeId, NodeId)> = (0..self.backbone.len())
            .map(|_| (it.next().unwrap(), it.next().unwrap()))
            .collect();
        BoundModel {
            node_mode: self.node_mode,
            slope: self.dims.activation_slope,
            class_count: self.class_count,
            input_dim: self.dims.input_dim,
            param_ids: ids.to_vec(),
            backbone,
            fc_w: it.next().unwrap(),
            fc_b: it.next().unwrap(),
            class_nodes: it.next().unwrap(),
            gcn_w1: it.next().unwrap(),
            gcn_w2: it.next().unwrap(),
            readout: match self.node_mode {
                NodeMode::Ple => Some(it.next().unwrap()),
                NodeMode::Static => None,
            },
        }
    }
}

/// Runs a stack of affine layers with the leaky rectifier between them (the
/// final layer stays linear). An empty stack is the identity.
pub fn run_backbone(
    layers: &[(Matrix, Matrix)],
    slope: f64,
    input_dim: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != input_dim {
        return Err(Error::Dimension(format!(
            "input of length {} (backbone expects {input_dim})",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Contract("backbone input must be finite".into()));
    }
    let mut h = x.to_vec();
    let last = layers.len();
    for (idx, (w, b)) in layers.iter().enumerate() {
        let mut next = vec![0.0; w.rows()];
        for (r, slot) in next.iter_mut().enumerate() {
            let mut acc = b.get(r, 0);
            for (c, &hv) in h.iter().enumerate() {
                acc += w.get(r, c) * hv;
            }
            *slot = acc;
        }
        if idx + 1 < last {
            for v in next.iter_mut() {
                *v = leaky_relu(*v, slope);
            }
        }
        h = next;
    }
    Ok(h)
}

/// `sigmoid(y_cal + y_gph)` elementwise.
pub fn predict(y_cal: &[f64], y_gph: &[f64]) -> Result<Vec<f64>> {
    if y_cal.len() != y_gph.len() {
        return Err(Error::Dimension(format!(
            "predict lengths {} vs {}",
            y_cal.len(),
            y_gph.len()
        )));
    }
    Ok(y_cal
        .iter()
        .zip(y_gph)
        .map(|(&a, &b)| sigmoid(a + b))
        .collect())
}

#[derive(Clone, Debug)]
pub struct PlainOutputs {
    pub y_cal: Vec<f64>,
    pub y_gph: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Tape-bound view of the model for one mini-batch.
pub struct BoundModel {
    node_mode: NodeMode,
    slope: f64,
    class_count: usize,
    input_dim: usize,
    param_ids: Vec<NodeId>,
    backbone: Vec<(NodeId, NodeId)>,
    fc_w: NodeId,
    fc_b: NodeId,
    class_nodes: NodeId,
    gcn_w1: NodeId,
    gcn_w2: NodeId,
    readout: Option<NodeId>,
}

/// Differentiable per-example outputs on the tape.
pub struct TapeOutputs {
    pub y_cal: NodeId,
    pub y_gph: NodeId,
    /// Probabilities, `sigmoid(y_cal + y_gph)`, a `C x 1` column.
    pub probs: NodeId,
}

impl BoundModel {
    /// Leaf ids of the parameters, in `params()` order.
    pub fn param_ids(&self) -> &[NodeId] {
        &self.param_ids
    }

    fn backbone(&self, tape: &mut Tape, x: &[f64]) -> Result<NodeId> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input of length {} (backbone expects {})",
                x.len(),
                self.input_dim
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("backbone input must be finite".into()));
        }
        let mut h = tape.constant(Matrix::column(x));
        let last = self.backbone.len();
        for (idx, (w, b)) in self.backbone.iter().enumerate() {
            let wh = tape.matmul(*w, h)?;
            h = tape.add(wh, *b)?;
            if idx + 1 < last {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    /// Full differentiable forward for one example. `expert_feat` feeds the
    /// first `old_rows` node rows as a constant (no gradient into the
    /// expert); `a_hat` enters as a constant as well.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &[f64],
        a_hat: &Matrix,
        expert_feat: Option<&[f64]>,
        old_rows: usize,
    ) -> Result<TapeOutputs> {
        let feat = self.backbone(tape, x)?;
        let fcx = tape.matmul(self.fc_w, feat)?;
        let y_cal = tape.add(fcx, self.fc_b)?;

        let h = match self.node_mode {
            NodeMode::Static => self.class_nodes,
            NodeMode::Ple => {
                if old_rows > 0 && expert_feat.is_none() {
                    return Err(Error::State(
                        "old-class node rows need an expert feature".into(),
                    ));
                }
                let new_rows = self.class_count - old_rows;
                let feat_t = tape.transpose(feat);
                let ones = tape.constant(Matrix::filled(new_rows, 1, 1.0));
                let q = tape.matmul(ones, feat_t)?;
                let stacked = if old_rows > 0 {
                    let p_rows: Vec<Vec<f64>> =
                        (0..old_rows).map(|_| expert_feat.unwrap().to_vec()).collect();
                    let p = tape.constant(Matrix::from_rows(&p_rows)?);
                    tape.concat_rows(p, q)?
                } else {
                    q
                };
                tape.hadamard(self.class_nodes, stacked)?
            }
        };

        let a = tape.constant(a_hat.clone());
        let ah = tape.matmul(a, h)?;
        let pre1 = tape.matmul(ah, self.gcn_w1)?;
        let z1 = tape.leaky_relu(pre1, self.slope);
        let az1 = tape.matmul(a, z1)?;
        let z2 = tape.matmul(az1, self.gcn_w2)?;
        let y_gph = match self.node_mode {
            NodeMode::Ple => {
                let weighted = tape.hadamard(self.readout.expect("ple binds readout"), z2)?;
                tape.row_sums(weighted)
            }
            NodeMode::Static => tape.matmul(z2, feat)?,
        };
        let fused = tape.add(y_cal, y_gph)?;
        let probs = tape.sigmoid(fused);
        Ok(TapeOutputs { y_cal, y_gph, probs })
    }

    /// Head-only differentiable forward: `sigmoid(fc(backbone(x)))`.
    pub fn forward_no_graph(&self, tape: &mut Tape, x: &[f64]) -> Result<TapeOutputs> {
        let feat = self.backbone(tape, x)?;
        let fcx = tape.matmul(self.fc_w, feat)?;
        let y_cal = tape.add(fcx, self.fc_b)?;
        let probs = tape.sigmoid(y_cal);
        Ok(TapeOutputs { y_cal, y_gph: y_cal, probs })
    }
}

/// Frozen copy of the model after a task, with the correlation matrix it
/// finished with and the backbone that fed its old-class node rows during
/// that task. Never receives gradients; its outputs stand in for the
/// missing old-class labels.
#[derive(Clone, Debug)]
pub struct ExpertSnapshot {
    pub model: ModelState,
    pub acm: AcMatrix,
    /// Backbone of the expert the snapshot itself trained against; replays
    /// the snapshot's own node construction bit for bit.
    chain_backbone: Option<Vec<(Matrix, Matrix)>>,
    a_hat: Matrix,
    checksum: u64,
}

fn snapshot_checksum(model: &ModelState, chain: Option<&[(Matrix, Matrix)]>) -> u64 {
    let mut h = DefaultHasher::new();
    model.checksum().hash(&mut h);
    if let Some(layers) = chain {
        for (w, b) in layers {
            for &v in w.as_slice().iter().chain(b.as_slice()) {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Soft labels and the target graph scores from the frozen expert.
#[derive(Clone, Debug)]
pub struct ExpertOutputs {
    /// Post-sigmoid predictions over the expert's classes.
    pub soft: Vec<f64>,
    /// Pre-sigmoid graph-branch scores over the expert's classes.
    pub graph: Vec<f64>,
    /// The expert's backbone feature, reused as the old-class node source.
    pub feature: Vec<f64>,
}

impl ExpertSnapshot {
    /// Freezes `model` together with its matrix. `chain_backbone` is the
    /// backbone of the expert `model` itself trained against (None for a
    /// first-task snapshot).
    pub fn new(
        model: ModelState,
        acm: AcMatrix,
        chain_backbone: Option<Vec<(Matrix, Matrix)>>,
        binarize: Option<f64>,
    ) -> Self {
        let a_hat = match binarize {
            Some(th) => normalize_for_gcn_binarized(&acm.values, th),
            None => normalize_for_gcn(&acm.values),
        };
        let checksum = snapshot_checksum(&model, chain_backbone.as_deref());
        ExpertSnapshot { model, acm, chain_backbone, a_hat, checksum }
    }

    pub fn class_count(&self) -> usize {
        self.model.class_count
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// True when the frozen parameters are still bit-identical to their
    /// values at snapshot time.
    pub fn is_intact(&self) -> bool {
        snapshot_checksum(&self.model, self.chain_backbone.as_deref()) == self.checksum
    }

    pub fn backbone_feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.model.backbone_forward(x)
    }

    /// Frozen full forward on `x`, replaying the snapshot's own training-time
    /// node construction. Deterministic: two calls agree exactly.
    pub fn forward(&self, x: &[f64]) -> Result<ExpertOutputs> {
        let feature = self.model.backbone_forward(x)?;
        let y_cal = self.model.head(&feature);
        let (p_feat, old_rows) = match &self.chain_backbone {
            Some(layers) => {
                let f = run_backbone(
                    layers,
                    self.model.dims.activation_slope,
                    self.model.dims.input_dim,
                    x,
                )?;
                (Some(f), self.acm.boundary)
            }
            None => (None, 0),
        };
        let h = self.model.graph_nodes(&feature, p_feat.as_deref(), old_rows)?;
        let graph = self.model.gcn_forward(&self.a_hat, &h, &feature)?;
        let soft = predict(&y_cal, &graph)?;
        Ok(ExpertOutputs { soft, graph, feature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{grad_check, GradCheckOptions};

    fn tiny_dims(input: usize, d: usize) -> ModelDims {
        ModelDims {
            input_dim: input,
            feature_dim: d,
            gcn_dim1: 3,
            gcn_dim2: 2,
            backbone_layers: if input == d { 0 } else { 2 },
            activation_slope: 0.2,
        }
    }

    #[test]
    fn identity_backbone_passes_input_through() {
        let state = ModelState::new(tiny_dims(4, 4), NodeMode::Ple, 2, 0).unwrap();
        let x = [0.5, -1.0, 2.0, 0.0];
        assert_eq!(state.backbone_forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn backbone_rejects_nan_and_bad_width() {
        let state = ModelState::new(tiny_dims(4, 4), NodeMode::Ple, 2, 0).unwrap();
        assert!(matches!(
            state.backbone_forward(&[0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            state.backbone_forward(&[0.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn hidden_backbone_gradient_check() {
        let state = ModelState::new(tiny_dims(3, 4), NodeMode::Ple, 2, 7).unwrap();
        let named: Vec<(String, Matrix)> = state
            .param_names()
            .into_iter()
            .zip(state.params().into_iter().cloned())
            .collect();
        let x = [0.3, -0.8, 1.1];
        let report = grad_check(&named, &GradCheckOptions::default(), &|tape, ids| {
            let bm = state.bind_ids(ids);
            let feat = bm.backbone(tape, &x)?;
            Ok(tape.sum(feat))
        })
        .unwrap();
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn all_ones_theta_duplicates_features() {
        let mut state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 4, 0).unwrap();
        state.theta = Some(Matrix::filled(4, 3, 1.0));
        let feat = [0.7, -0.2, 1.5];
        let h = state.graph_nodes(&feat, None, 0).unwrap();
        for i in 0..4 {
            assert_eq!(h.row(i), &feat);
        }
    }

    #[test]
    fn theta_row_elementwise_product() {
        let mut state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 1, 0).unwrap();
        state.theta = Some(Matrix::from_rows(&[vec![2.0, 0.0, 1.0]]).unwrap());
        let h = state.graph_nodes(&[1.0, 1.0, 1.0], None, 0).unwrap();
        assert_eq!(h.row(0), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn first_task_nodes_all_from_current_feature() {
        let dims = ModelDims {
            feature_dim: 8,
            input_dim: 8,
            backbone_layers: 0,
            ..tiny_dims(8, 8)
        };
        let state = ModelState::new(dims, NodeMode::Ple, 4, 3).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 4.0).collect();
        let (_, h) = state.ple_forward(&x, None).unwrap();
        assert_eq!(h.shape(), (4, 8));
        let theta = state.theta.as_ref().unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert_eq!(h.get(i, j), theta.get(i, j) * x[j]);
            }
        }
    }

    #[test]
    fn missing_expert_at_later_task_is_state_error() {
        let mut state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 2, 0).unwrap();
        state.expand_for_task(2, 1, 0).unwrap();
        assert!(matches!(
            state.ple_forward(&[0.0, 0.0, 0.0], None),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn single_node_gcn_hand_trace() {
        let dims = ModelDims {
            input_dim: 1,
            feature_dim: 1,
            gcn_dim1: 1,
            gcn_dim2: 1,
            backbone_layers: 0,
            activation_slope: 0.2,
        };
        let mut state = ModelState::new(dims, NodeMode::Ple, 1, 0).unwrap();
        state.theta = Some(Matrix::filled(1, 1, 0.5));
        state.gcn_w1 = Matrix::filled(1, 1, 2.0);
        state.gcn_w2 = Matrix::filled(1, 1, 3.0);
        state.readout = Some(Matrix::filled(1, 1, 4.0));
        let a_hat = Matrix::identity(1);
        let x = [0.7];
        let h = state.graph_nodes(&x, None, 0).unwrap();
        let y = state.gcn_forward(&a_hat, &h, &x).unwrap();
        // 0.5*0.7 (node) * 2 (w1, positive so linear) * 3 (w2) * 4 (readout)
        assert!((y[0] - 0.5 * 0.7 * 2.0 * 3.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(predict(&[2.0], &[-2.0]).unwrap(), vec![0.5]);
        let p = predict(&[1.0], &[1.0]).unwrap();
        assert!((p[0] - 0.8807970779778823).abs() < 1e-12);
        assert!(predict(&[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn class_permutation_equivariance() {
        let dims = tiny_dims(5, 5);
        let state = ModelState::new(dims, NodeMode::Ple, 3, 11).unwrap();
        let x = [0.4, -0.9, 0.1, 1.2, -0.3];
        let a = Matrix::from_rows(&[
            vec![1.0, 0.3, 0.1],
            vec![0.2, 1.0, 0.6],
            vec![0.4, 0.5, 1.0],
        ])
        .unwrap();
        let a_hat = normalize_for_gcn(&a);
        let base = state.eval_forward(&x, &a_hat, None).unwrap();

        let perm = [2usize, 0, 1]; // new position i holds old row perm[i]
        let permute_rows = |m: &Matrix| {
            Matrix::from_rows(&perm.iter().map(|&p| m.row(p).to_vec()).collect::<Vec<_>>())
                .unwrap()
        };
        let mut permuted = state.clone();
        permuted.fc_w = permute_rows(&state.fc_w);
        permuted.fc_b = permute_rows(&state.fc_b);
        permuted.theta = Some(permute_rows(state.theta.as_ref().unwrap()));
        permuted.readout = Some(permute_rows(state.readout.as_ref().unwrap()));
        let mut a_perm = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                a_perm.set(i, j, a.get(perm[i], perm[j]));
            }
        }
        let out = permuted.eval_forward(&x, &normalize_for_gcn(&a_perm), None).unwrap();
        for i in 0..3 {
            assert!((out.probs[i] - base.probs[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_grows_rows_and_preserves_old_predictions() {
        let dims = tiny_dims(4, 4);
        let mut state = ModelState::new(dims, NodeMode::Ple, 4, 5).unwrap();
        let x = [0.2, -0.5, 0.9, 0.0];
        let a_old = Matrix::identity(4);
        let before = state.eval_forward(&x, &normalize_for_gcn(&a_old), None).unwrap();
        let theta_before = state.theta.clone().unwrap();

        state.expand_for_task(2, 3, 5).unwrap();
        assert_eq!(state.theta.as_ref().unwrap().shape(), (7, 4));
        assert_eq!(state.fc_w.rows(), 7);
        assert_eq!(state.readout.as_ref().unwrap().rows(), 7);
        // Old rows bit-identical.
        for i in 0..4 {
            assert_eq!(state.theta.as_ref().unwrap().row(i), theta_before.row(i));
        }
        // With a block-diagonal extension of the propagation matrix, old
        // scores are untouched by the new rows.
        let mut a_ext = Matrix::identity(7);
        for i in 0..4 {
            for j in 0..4 {
                a_ext.set(i, j, a_old.get(i, j));
            }
        }
        let after = state.eval_forward(&x, &normalize_for_gcn(&a_ext), None).unwrap();
        for i in 0..4 {
            assert!((after.probs[i] - before.probs[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn expand_by_zero_keeps_parameters() {
        let mut state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 2, 1).unwrap();
        let before = state.clone();
        state.expand_for_task(2, 0, 1).unwrap();
        assert_eq!(state.params(), before.params());
        assert_eq!(state.task, 2);
    }

    #[test]
    fn double_expansion_is_a_state_error() {
        let mut state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 2, 1).unwrap();
        state.expand_for_task(2, 1, 1).unwrap();
        assert!(matches!(
            state.expand_for_task(2, 1, 1),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn static_mode_hand_trace_and_zero_table() {
        let dims = ModelDims {
            input_dim: 1,
            feature_dim: 1,
            gcn_dim1: 1,
            gcn_dim2: 1,
            backbone_layers: 0,
            activation_slope: 0.2,
        };
        let mut state = ModelState::new(dims, NodeMode::Static, 1, 0).unwrap();
        state.static_embed = Some(Matrix::filled(1, 1, 0.6));
        state.gcn_w1 = Matrix::filled(1, 1, 2.0);
        state.gcn_w2 = Matrix::filled(1, 1, 3.0);
        let y = state.static_node_forward(&Matrix::identity(1), &[0.9]).unwrap();
        // (embedding * w1 * w2) . feature
        assert!((y[0] - 0.6 * 2.0 * 3.0 * 0.9).abs() < 1e-12);

        state.static_embed = Some(Matrix::zeros(1, 1));
        let y = state.static_node_forward(&Matrix::identity(1), &[0.9]).unwrap();
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn static_forward_on_ple_model_is_state_error() {
        let state = ModelState::new(tiny_dims(3, 3), NodeMode::Ple, 2, 0).unwrap();
        assert!(matches!(
            state.static_node_forward(&Matrix::identity(2), &[0.0; 3]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn static_nodes_are_image_independent() {
        let state = ModelState::new(tiny_dims(3, 3), NodeMode::Static, 2, 4).unwrap();
        let h1 = state.graph_nodes(&[1.0, 2.0, 3.0], None, 0).unwrap();
        let h2 = state.graph_nodes(&[-5.0, 0.0, 9.0], None, 0).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let dims = tiny_dims(4, 6);
        let state = ModelState::new(dims, NodeMode::Ple, 5, 21).unwrap();
        let a = Matrix::filled(5, 5, 0.2);
        let a_hat = normalize_for_gcn(&a);
        let x = [0.3, -1.2, 0.8, 0.05];

        let plain = state.eval_forward(&x, &a_hat, None).unwrap();
        let mut tape = Tape::new();
        let bm = state.bind(&mut tape);
        let out = bm.forward(&mut tape, &x, &a_hat, None, 0).unwrap();
        let tape_probs = tape.value(out.probs);
        for i in 0..5 {
            assert!((tape_probs.get(i, 0) - plain.probs[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn expert_is_frozen_and_deterministic() {
        let dims = tiny_dims(4, 4);
        let state = ModelState::new(dims, NodeMode::Ple, 3, 2).unwrap();
        let acm = AcMatrix { values: Matrix::identity(3), boundary: 0, task: 1 };
        let expert = ExpertSnapshot::new(state.clone(), acm, None, None);
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = expert.forward(&x).unwrap();
        let b = expert.forward(&x).unwrap();
        assert_eq!(a.soft, b.soft);
        assert_eq!(a.graph, b.graph);
        assert!(a.soft.iter().all(|&z| (0.0..=1.0).contains(&z)));
        assert!(expert.is_intact());
        // Expert output equals the source model's own deployment forward.
        let own = state
            .eval_forward(&x, &normalize_for_gcn(&Matrix::identity(3)), None)
            .unwrap();
        assert_eq!(a.soft, own.probs);
    }

    #[test]
    fn full_model_gradient_check_through_graph() {
        let dims = ModelDims {
            input_dim: 3,
            feature_dim: 4,
            gcn_dim1: 3,
            gcn_dim2: 2,
            backbone_layers: 2,
            activation_slope: 0.2,
        };
        let state = ModelState::new(dims, NodeMode::Ple, 3, 13).unwrap();
        let a = Matrix::from_rows(&[
            vec![1.0, 0.4, 0.0],
            vec![0.2, 1.0, 0.7],
            vec![0.5, 0.1, 1.0],
        ])
        .unwrap();
        let a_hat = normalize_for_gcn(&a);
        let x = [0.6, -0.4, 1.0];
        let targets = Matrix::column(&[1.0, 0.0, 1.0]);
        let named: Vec<(String, Matrix)> = state
            .param_names()
            .into_iter()
            .zip(state.params().into_iter().cloned())
            .collect();
        let report = grad_check(&named, &GradCheckOptions::default(), &|tape, ids| {
            let bm = state.bind_ids(ids);
            let out = bm.forward(tape, &x, &a_hat, None, 0)?;
            tape.bce_sum(out.probs, targets.clone())
        })
        .unwrap();
        assert!(report.all_pass(), "{report:?}");
    }
}
