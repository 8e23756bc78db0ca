//! The continual training loop.
//!
//! Per task: one epoch over shuffled training data in mini-batches. Each
//! batch first feeds the hard (and, past the first task, expert soft) label
//! statistics into the co-occurrence counters, re-assembles the correlation
//! matrix, then takes one Adam step on the weighted objective. After the
//! task the model is frozen into the next expert and every seen test set is
//! evaluated.
//!
//! Two reference modes bracket the continual runs: plain sequential tuning
//! of the class head (lower bound, no graph branch, no expert) and a single
//! shuffled pass over all data at once (upper bound).

use crate::acm::{augment, normalize_for_gcn, normalize_for_gcn_binarized, AcMatrix, CoocCounters};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{cls_loss_node, dst_loss_node, gph_loss_node, LossWeights};
use crate::matrix::Matrix;
use crate::metrics::{
    evaluate, forgetting, mean_average_precision, EvalBatch, HistoryMatrix, MetricReport,
    METRIC_NAMES,
};
use crate::model::{ExpertSnapshot, ModelDims, ModelState, NodeMode, PlainOutputs};
use crate::optim::{AdamConfig, AdamState};
use crate::stream::{Scenario, TaskSpec, TaskStream};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainerMode {
    /// Full method: image-conditioned graph nodes, expert distillation,
    /// relationship preservation.
    AgcnPlusPlus,
    /// Ablation with a static learned node table and dot-product readout.
    AgcnClassic,
    /// Sequential head tuning without any continual-learning machinery.
    FineTuning,
    /// One shuffled offline pass over all tasks at once.
    MultiTask,
}

impl fmt::Display for TrainerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TrainerMode::AgcnPlusPlus => "agcn++",
            TrainerMode::AgcnClassic => "agcn-classic",
            TrainerMode::FineTuning => "fine-tuning",
            TrainerMode::MultiTask => "multi-task",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for TrainerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "agcn++" => Ok(TrainerMode::AgcnPlusPlus),
            "agcn-classic" => Ok(TrainerMode::AgcnClassic),
            "fine-tuning" => Ok(TrainerMode::FineTuning),
            "multi-task" => Ok(TrainerMode::MultiTask),
            other => Err(Error::Config(format!("unknown trainer mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub mode: TrainerMode,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub dims: ModelDims,
    /// Decision threshold for the precision/recall metrics.
    pub threshold: f64,
    /// Zero out the inter-task blocks (shape-preserving ablation).
    pub disable_rq: bool,
    /// Drop the relationship-preserving term.
    pub disable_gph: bool,
    /// Drop the distillation term.
    pub disable_dst: bool,
    /// Snapshot a random-initialized model instead of the trained one.
    pub random_expert: bool,
    /// Optional binarization threshold applied before propagation
    /// normalization.
    pub acm_binarize: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Il,
            mode: TrainerMode::AgcnPlusPlus,
            weights: LossWeights::new(0.1, 0.9, 100.0).expect("valid defaults"),
            adam: AdamConfig::default(),
            batch_size: 16,
            seed: 0,
            dims: ModelDims::default(),
            threshold: 0.5,
            disable_rq: false,
            disable_gph: false,
            disable_dst: false,
            random_expert: false,
            acm_binarize: None,
        }
    }
}

/// Everything recorded after one task: reports over each seen test set, the
/// union mAP for learning curves, and the matrix the task finished with.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    /// 1-based task index.
    pub task: usize,
    pub reports: Vec<MetricReport>,
    pub seen_map: f64,
    pub acm: Option<AcMatrix>,
}

#[derive(Clone, Debug)]
pub struct ForgettingReport {
    pub metric: &'static str,
    pub average: f64,
    pub per_task: Vec<f64>,
}

/// Always-on instrumentation of the scenario contract.
#[derive(Clone, Debug, Default)]
pub struct TrainAudit {
    /// Examples that contributed gradients, per task (single-epoch check).
    pub examples_per_task: Vec<usize>,
    /// Old-class bits present in raw labels but masked out of IL targets.
    pub il_old_label_bits_masked: usize,
    /// Hard old-class labels that reached any IL loss term. Must stay zero.
    pub il_hard_old_label_leaks: usize,
    /// Batches trained with full seen-class targets (CL).
    pub cl_full_space_batches: usize,
    /// Expert parameter drift detections. Must stay zero.
    pub expert_checksum_mismatches: usize,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub mode: TrainerMode,
    pub per_task: Vec<TaskOutcome>,
    pub history: HistoryMatrix,
    pub forgetting: Vec<ForgettingReport>,
    pub audit: TrainAudit,
}

impl RunRecord {
    /// mAP over the union of all seen test sets after the final task.
    pub fn final_seen_map(&self) -> f64 {
        self.per_task.last().expect("at least one task").seen_map
    }

    pub fn forgetting_for(&self, metric: &str) -> Option<&ForgettingReport> {
        self.forgetting.iter().find(|f| f.metric == metric)
    }
}

/// Self-describing training checkpoint: all parameters, the task index, the
/// class registry, and the matrix carried into the next task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelState,
    pub acm: Option<AcMatrix>,
    pub task: usize,
    pub class_registry: Vec<Vec<usize>>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)
        .map_err(|e| Error::Data(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("checkpoint parse: {e}")))
}

fn node_mode_for(mode: TrainerMode) -> NodeMode {
    match mode {
        TrainerMode::AgcnClassic => NodeMode::Static,
        _ => NodeMode::Ple,
    }
}

fn has_graph_branch(mode: TrainerMode) -> bool {
    !matches!(mode, TrainerMode::FineTuning)
}

fn shuffle_rng(seed: u64, task: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (task as u64 + 17).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

struct TaskTrainer<'a> {
    stream: &'a TaskStream,
    config: &'a RunConfig,
    audit: &'a mut TrainAudit,
}

impl TaskTrainer<'_> {
    /// One epoch over task `t` (0-based). Returns the final assembled matrix
    /// for graph modes.
    fn train_task(
        &mut self,
        state: &mut ModelState,
        expert: Option<&ExpertSnapshot>,
        t: usize,
    ) -> Result<Option<AcMatrix>> {
        let config = self.config;
        let stream = self.stream;
        let graph = has_graph_branch(config.mode);
        let first_task = t == 0;
        if graph && !first_task && expert.is_none() {
            return Err(Error::State(format!(
                "task {} needs the expert snapshot from the previous task",
                t + 1
            )));
        }
        let new_classes = stream.tasks[t].classes.len();
        let old_classes = stream.seen_count(t) - new_classes;
        let mut counters = CoocCounters::new(config.scenario, old_classes, new_classes);
        let prev_acm = expert.map(|e| e.acm.clone());

        let mut order: Vec<usize> = (0..stream.train[t].len()).collect();
        order.shuffle(&mut shuffle_rng(config.seed, t + 1));

        let mut adam: Vec<AdamState> = state
            .params()
            .iter()
            .map(|p| AdamState::new(p.rows(), p.cols(), config.adam))
            .collect();

        let mut trained = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let examples: Vec<_> = batch.iter().map(|&i| &stream.train[t][i]).collect();

            // Per-example targets and expert outputs (plain math, no tape).
            let mut targets = Vec::with_capacity(examples.len());
            let mut expert_outs = Vec::with_capacity(examples.len());
            for ex in &examples {
                let target = stream.project_train(ex, t);
                if config.scenario == Scenario::Il {
                    if target.len() != new_classes {
                        self.audit.il_hard_old_label_leaks += 1;
                    }
                    if old_classes > 0 {
                        let old_set = stream.seen_classes(t - 1);
                        self.audit.il_old_label_bits_masked += ex
                            .labels
                            .iter()
                            .filter(|l| old_set.contains(l))
                            .count();
                    }
                }
                targets.push(target);
                if graph && !first_task {
                    expert_outs.push(Some(expert.unwrap().forward(&ex.features)?));
                } else {
                    expert_outs.push(None);
                }
            }
            if config.scenario == Scenario::Cl {
                self.audit.cl_full_space_batches += 1;
            }

            // Statistics first, then the forward pass on the updated matrix.
            let a_hat = if graph {
                for (target, expert_out) in targets.iter().zip(&expert_outs) {
                    counters.update_hard(target)?;
                    if config.scenario == Scenario::Il {
                        if let Some(out) = expert_out {
                            counters.update_soft(&out.soft, target)?;
                        }
                    }
                }
                let acm = assemble_acm(&counters, prev_acm.as_ref(), config.disable_rq)?;
                Some(match config.acm_binarize {
                    Some(th) => normalize_for_gcn_binarized(&acm.values, th),
                    None => normalize_for_gcn(&acm.values),
                })
            } else {
                None
            };

            let mut tape = Tape::new();
            let bound = state.bind(&mut tape);
            let mut example_losses = Vec::with_capacity(examples.len());
            for ((ex, target), expert_out) in
                examples.iter().zip(&targets).zip(&expert_outs)
            {
                let outputs = match &a_hat {
                    Some(a) => bound.forward(
                        &mut tape,
                        &ex.features,
                        a,
                        expert_out.as_ref().map(|o| o.feature.as_slice()),
                        if expert_out.is_some() { old_classes } else { 0 },
                    )?,
                    None => bound.forward_no_graph(&mut tape, &ex.features)?,
                };
                // IL trains on the new-class slice; CL on the full vector.
                let cls_probs = match config.scenario {
                    Scenario::Il if old_classes > 0 => {
                        tape.slice_rows(outputs.probs, old_classes, state.class_count)?
                    }
                    _ => outputs.probs,
                };
                let cls = cls_loss_node(&mut tape, target, cls_probs)?;
                let loss = if first_task || !graph {
                    cls
                } else {
                    let out = expert_out.as_ref().expect("expert outputs exist past task 1");
                    let mut total = tape.scale(cls, config.weights.lambda1);
                    if !config.disable_dst {
                        let dst = dst_loss_node(&mut tape, &out.soft, outputs.probs)?;
                        let dst = tape.scale(dst, config.weights.lambda2);
                        total = tape.add(total, dst)?;
                    }
                    if !config.disable_gph {
                        let gph = gph_loss_node(&mut tape, &out.graph, outputs.y_gph)?;
                        let gph = tape.scale(gph, config.weights.lambda3);
                        total = tape.add(total, gph)?;
                    }
                    total
                };
                example_losses.push(loss);
            }
            let mut batch_loss = example_losses[0];
            for &l in &example_losses[1..] {
                batch_loss = tape.add(batch_loss, l)?;
            }
            let batch_loss = tape.scale(batch_loss, 1.0 / examples.len() as f64);
            let loss_value = tape.value(batch_loss).scalar()?;
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss in task {} after {} examples",
                    t + 1,
                    trained
                )));
            }

            let grads = tape.backward(batch_loss)?;
            let ids = bound.param_ids().to_vec();
            for ((param, opt), id) in
                state.params_mut().into_iter().zip(adam.iter_mut()).zip(ids)
            {
                let (r, c) = param.shape();
                let g = grads.get_or_zeros(id, r, c);
                opt.step(param, &g)?;
            }
            trained += examples.len();
        }
        self.audit.examples_per_task.push(trained);

        if let Some(e) = expert {
            if !e.is_intact() {
                self.audit.expert_checksum_mismatches += 1;
            }
        }

        if graph {
            Ok(Some(assemble_acm(&counters, prev_acm.as_ref(), config.disable_rq)?))
        } else {
            Ok(None)
        }
    }
}

fn assemble_acm(
    counters: &CoocCounters,
    prev: Option<&AcMatrix>,
    disable_rq: bool,
) -> Result<AcMatrix> {
    let (b, mut r, mut q) = counters.assemble_blocks();
    if disable_rq {
        r = Matrix::zeros(r.rows(), r.cols());
        q = Matrix::zeros(q.rows(), q.cols());
    }
    augment(prev, &b, &r, &q)
}

/// Scores every example of each seen test set against the post-task state,
/// in parallel, merged by example index. `expert` is the snapshot the task
/// trained against, so node construction matches training exactly.
fn sweep_evaluation(
    state: &ModelState,
    stream: &TaskStream,
    t: usize,
    acm: Option<&AcMatrix>,
    expert: Option<&ExpertSnapshot>,
    config: &RunConfig,
) -> Result<(Vec<MetricReport>, f64)> {
    let a_hat = acm.map(|a| match config.acm_binarize {
        Some(th) => normalize_for_gcn_binarized(&a.values, th),
        None => normalize_for_gcn(&a.values),
    });
    let score = |ex: &crate::stream::LabeledExample| -> Result<Vec<f64>> {
        let out: PlainOutputs = match &a_hat {
            Some(a) => state.eval_forward(&ex.features, a, expert)?,
            None => state.eval_forward_no_graph(&ex.features)?,
        };
        Ok(out.probs)
    };

    let mut reports = Vec::with_capacity(t + 1);
    let mut union_scores: Vec<Vec<f64>> = Vec::new();
    let mut union_truth: Vec<Vec<f64>> = Vec::new();
    for j in 0..=t {
        if stream.test[j].is_empty() {
            return Err(Error::Eval(format!("task {} has an empty test set", j + 1)));
        }
        let scores: Vec<Vec<f64>> = stream.test[j]
            .par_iter()
            .map(|ex| score(ex))
            .collect::<Result<_>>()?;
        let truth: Vec<Vec<f64>> =
            stream.test[j].iter().map(|ex| stream.project_test(ex, t)).collect();
        let batch = EvalBatch::new(Matrix::from_rows(&scores)?, Matrix::from_rows(&truth)?)?;
        reports.push(evaluate(&batch, config.threshold)?);
        union_scores.extend(scores);
        union_truth.extend(truth);
    }
    let union = EvalBatch::new(
        Matrix::from_rows(&union_scores)?,
        Matrix::from_rows(&union_truth)?,
    )?;
    let seen_map = 100.0 * mean_average_precision(&union)?;
    Ok((reports, seen_map))
}

/// The continual loop: expand, train one epoch, snapshot the expert, dump
/// the matrix, evaluate every seen test set. Optionally writes a checkpoint
/// after each task so a later divergence leaves a last-good state behind.
pub fn run_continual_with_checkpoints(
    stream: &TaskStream,
    config: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<RunRecord> {
    if config.mode == TrainerMode::MultiTask {
        return Err(Error::Config(
            "multi-task mode runs through run_multitask".into(),
        ));
    }
    if stream.feature_dim != config.dims.input_dim {
        return Err(Error::Data(format!(
            "stream features have length {}, model expects {}",
            stream.feature_dim, config.dims.input_dim
        )));
    }
    let node_mode = node_mode_for(config.mode);
    let mut state = ModelState::new(
        config.dims,
        node_mode,
        stream.tasks[0].classes.len(),
        config.seed,
    )?;
    let mut expert: Option<ExpertSnapshot> = None;
    let mut audit = TrainAudit::default();
    let mut per_task = Vec::new();
    let mut history = HistoryMatrix::new();

    for t in 0..stream.task_count() {
        if t > 0 {
            state.expand_for_task(t + 1, stream.tasks[t].classes.len(), config.seed)?;
        }
        let acm = {
            let mut trainer = TaskTrainer { stream, config, audit: &mut audit };
            trainer.train_task(&mut state, expert.as_ref(), t)?
        };

        // Evaluate against the expert the task trained with, then roll the
        // expert forward.
        let (reports, seen_map) =
            sweep_evaluation(&state, stream, t, acm.as_ref(), expert.as_ref(), config)?;
        history.push_row(reports.clone())?;
        per_task.push(TaskOutcome { task: t + 1, reports, seen_map, acm: acm.clone() });

        if has_graph_branch(config.mode) {
            let acm_now = acm.clone().expect("graph modes always assemble a matrix");
            let chain = expert.take().map(|e| e.model.backbone);
            let (snapshot_model, chain) = if config.random_expert {
                // A self-contained random-weights stand-in.
                let random = ModelState::new(
                    config.dims,
                    node_mode,
                    state.class_count,
                    config.seed ^ 0xbad5_eed0 ^ (t as u64 + 1),
                )?;
                (random, None)
            } else {
                (state.clone(), chain)
            };
            expert = Some(ExpertSnapshot::new(
                snapshot_model,
                acm_now,
                chain,
                config.acm_binarize,
            ));
        }

        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(
                &dir.join(format!("checkpoint_t{}.json", t + 1)),
                &Checkpoint {
                    model: state.clone(),
                    acm,
                    task: t + 1,
                    class_registry: stream.tasks.iter().map(|s| s.classes.clone()).collect(),
                },
            )?;
        }
    }

    let mut forgetting_reports = Vec::new();
    if stream.task_count() >= 2 {
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let (average, per_task_f) = forgetting(&history, |r| r.values()[i])?;
            forgetting_reports.push(ForgettingReport {
                metric: name,
                average,
                per_task: per_task_f,
            });
        }
    }

    Ok(RunRecord {
        scenario: config.scenario,
        mode: config.mode,
        per_task,
        history,
        forgetting: forgetting_reports,
        audit,
    })
}

pub fn run_continual(stream: &TaskStream, config: &RunConfig) -> Result<RunRecord> {
    run_continual_with_checkpoints(stream, config, None)
}

/// Finite-difference check of the full second-task objective (all three
/// terms) on a toy two-task instance: every trainable parameter of the model
/// is compared entry by entry. `fault` corrupts one analytic gradient to
/// prove the check can fail.
pub fn gradcheck_full_objective(
    config: &RunConfig,
    options: &crate::optim::GradCheckOptions,
) -> Result<crate::optim::GradCheckReport> {
    use crate::config::SyntheticSpec;
    use crate::losses::{cls_loss, dst_loss, gph_loss};

    let dims = config.dims;
    let spec = SyntheticSpec {
        classes: 6,
        examples: 60,
        noise: 0.3,
        marginals: vec![0.45],
        pair_base: 0.2,
        pair_overrides: vec![(0, 3, 0.32), (1, 4, 0.3)],
        prototype_scales: vec![1.0],
        tasks: vec![vec![0, 1, 2], vec![3, 4, 5]],
        train_fraction: 0.8,
    };
    let stream = spec.build_stream(config.scenario, dims.input_dim, config.seed)?;

    // A model expanded to the second task, plus its first-task expert.
    let node_mode = node_mode_for(config.mode);
    let mut state = ModelState::new(dims, node_mode, 3, config.seed)?;
    let mut audit = TrainAudit::default();
    let acm1 = {
        let mut trainer = TaskTrainer { stream: &stream, config, audit: &mut audit };
        trainer
            .train_task(&mut state, None, 0)?
            .ok_or_else(|| Error::Config("gradcheck needs a graph mode".into()))?
    };
    let expert = ExpertSnapshot::new(state.clone(), acm1, None, config.acm_binarize);
    state.expand_for_task(2, 3, config.seed)?;

    // Second-task statistics over a handful of examples.
    let old_classes = 3;
    let batch: Vec<&crate::stream::LabeledExample> = stream.train[1].iter().take(6).collect();
    let mut counters = CoocCounters::new(config.scenario, old_classes, 3);
    let mut targets = Vec::new();
    let mut expert_outs = Vec::new();
    for ex in &batch {
        let target = stream.project_train(ex, 1);
        let out = expert.forward(&ex.features)?;
        counters.update_hard(&target)?;
        if config.scenario == Scenario::Il {
            counters.update_soft(&out.soft, &target)?;
        }
        targets.push(target);
        expert_outs.push(out);
    }
    let acm = assemble_acm(&counters, Some(&expert.acm), config.disable_rq)?;
    let a_hat = normalize_for_gcn(&acm.values);

    let named: Vec<(String, Matrix)> = state
        .param_names()
        .into_iter()
        .zip(state.params().into_iter().cloned())
        .collect();
    let weights = config.weights;
    let scenario = config.scenario;
    let class_count = state.class_count;
    let report = crate::optim::grad_check(&named, options, &|tape, ids| {
        let bound = state.bind_ids(ids);
        let mut example_losses = Vec::new();
        for (ex, (target, out)) in batch.iter().zip(targets.iter().zip(&expert_outs)) {
            let outputs =
                bound.forward(tape, &ex.features, &a_hat, Some(&out.feature), old_classes)?;
            let cls_probs = match scenario {
                Scenario::Il => tape.slice_rows(outputs.probs, old_classes, class_count)?,
                Scenario::Cl => outputs.probs,
            };
            let cls = cls_loss_node(tape, target, cls_probs)?;
            let dst = dst_loss_node(tape, &out.soft, outputs.probs)?;
            let gph = gph_loss_node(tape, &out.graph, outputs.y_gph)?;
            let mut total = tape.scale(cls, weights.lambda1);
            let dst = tape.scale(dst, weights.lambda2);
            total = tape.add(total, dst)?;
            let gph = tape.scale(gph, weights.lambda3);
            total = tape.add(total, gph)?;
            example_losses.push(total);
        }
        let mut sum = example_losses[0];
        for &l in &example_losses[1..] {
            sum = tape.add(sum, l)?;
        }
        Ok(tape.scale(sum, 1.0 / batch.len() as f64))
    })?;

    // Parity guard: the plain losses agree with the tape construction at the
    // current parameters.
    {
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape);
        let ex = batch[0];
        let out = &expert_outs[0];
        let outputs =
            bound.forward(&mut tape, &ex.features, &a_hat, Some(&out.feature), old_classes)?;
        let probs_all: Vec<f64> = (0..class_count)
            .map(|i| tape.value(outputs.probs).get(i, 0))
            .collect();
        let gph_all: Vec<f64> = (0..class_count)
            .map(|i| tape.value(outputs.y_gph).get(i, 0))
            .collect();
        let cls_plain = match scenario {
            Scenario::Il => cls_loss(&targets[0], &probs_all[old_classes..])?,
            Scenario::Cl => cls_loss(&targets[0], &probs_all)?,
        };
        let dst_plain = dst_loss(&out.soft, &probs_all[..old_classes])?;
        let gph_plain = gph_loss(&out.graph, &gph_all)?;
        if !(cls_plain.is_finite() && dst_plain.is_finite() && gph_plain.is_finite()) {
            return Err(Error::Diverged("non-finite loss in gradient check".into()));
        }
    }
    Ok(report)
}

/// Lower-bound reference: sequential class-head tuning, no graph machinery.
pub fn run_finetuning(stream: &TaskStream, config: &RunConfig) -> Result<RunRecord> {
    let cfg = RunConfig { mode: TrainerMode::FineTuning, ..config.clone() };
    run_continual(stream, &cfg)
}

/// Upper-bound reference: the full model trained offline on one shuffled
/// pass over the union of all tasks, evaluated on the union test set.
pub fn run_multitask(stream: &TaskStream, config: &RunConfig) -> Result<MetricReport> {
    let all_classes: Vec<usize> = stream
        .tasks
        .iter()
        .flat_map(|t| t.classes.iter().copied())
        .collect();
    let merged = TaskStream {
        scenario: Scenario::Cl,
        tasks: vec![TaskSpec { index: 0, classes: all_classes }],
        train: vec![stream.train.iter().flatten().cloned().collect()],
        test: vec![stream.test.iter().flatten().cloned().collect()],
        feature_dim: stream.feature_dim,
    };
    let cfg = RunConfig {
        mode: TrainerMode::AgcnPlusPlus,
        scenario: Scenario::Cl,
        ..config.clone()
    };
    let record = run_continual(&merged, &cfg)?;
    Ok(record.per_task[0].reports[0])
}
