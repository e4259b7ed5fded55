use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{adam_step, AdamConfig, Grads};
use crate::eval::{label_names, map_multilabel};
use crate::graph::FeatureProvider;
use crate::schema::{triplet_vocabulary, Dataset, Split};

use super::task_targets;
use super::{total_loss, LossBreakdown, LossParts, Model, ModelConfig, ModelError, Prepared, Task};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    /// Stage 2: mean task BCE on training frames.
    pub train_task: Option<f64>,
    /// Stage 2: mAP on the selection split.
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    /// One breakdown per optimizer step, from the minibatch-averaged terms.
    pub steps: Vec<LossBreakdown>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub model: Model,
    pub history: History,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub model: Model,
    pub history: History,
    /// Selection-split mAP before any stage-2 update.
    pub initial_map: Option<f64>,
}

fn prepare(d: &Dataset, split: Split, fp: &dyn FeatureProvider) -> Result<Vec<Prepared>, ModelError> {
    d.split_frames(split)
        .into_iter()
        .map(|f| Prepared::new(f, &d.catalog, fp))
        .collect()
}

fn mean_parts(acc: &mut LossParts, p: &LossParts, w: f64) {
    acc.edge_exist += w * p.edge_exist;
    acc.spatial += w * p.spatial;
    acc.action += w * p.action;
    acc.hand += w * p.hand;
}

fn mean_loss(model: &Model, frames: &[Prepared]) -> Result<(LossParts, f64), ModelError> {
    let mut acc = LossParts::default();
    let mut task = 0.0;
    let w = 1.0 / frames.len().max(1) as f64;
    for p in frames {
        let (parts, t) = model.frame_task_loss(p)?;
        mean_parts(&mut acc, &parts, w);
        task += w * t;
    }
    Ok((acc, task))
}

/// One pass over `train` in a seeded shuffled order; returns the epoch's mean terms and task loss.
fn run_epoch(
    model: &mut Model,
    train: &[Prepared],
    rng: &mut ChaCha8Rng,
    aux: f64,
    history: &mut History,
) -> Result<(LossParts, f64), ModelError> {
    let cfg = model.config.clone();
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut epoch = LossParts::default();
    let mut epoch_task = 0.0;
    let n = train.len() as f64;
    for batch in order.chunks(cfg.batch_size) {
        let w = 1.0 / batch.len() as f64;
        let mut grads = Grads::default();
        let mut parts = LossParts::default();
        for &i in batch {
            let (p, task, g) = model.frame_grads(&train[i], w, aux)?;
            grads.merge(&g);
            mean_parts(&mut parts, &p, w);
            epoch_task += task / n;
        }
        history.steps.push(total_loss(&parts, cfg.lambda_action, cfg.lambda_hand)?);
        mean_parts(&mut epoch, &parts, batch.len() as f64 / n);
        adam_step(&mut model.params, &grads, &adam)?;
    }
    Ok((epoch, epoch_task))
}

/// Stage 1: minimize the composite loss on the training split, keeping the
/// weights with the lowest validation total (training total when there is no
/// validation split).
pub fn train_stage1(dataset: &Dataset, fp: &dyn FeatureProvider, cfg: &ModelConfig) -> Result<Stage1Output, ModelError> {
    let train = prepare(dataset, Split::Train, fp)?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit(Split::Train));
    }
    let val = prepare(dataset, Split::Val, fp)?;
    let mut model = Model::new(cfg.clone(), &dataset.catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4531);
    let mut history = History::default();
    let mut best = (f64::INFINITY, model.params.clone());

    for epoch in 1..=cfg.epochs {
        let (parts, _) = run_epoch(&mut model, &train, &mut rng, 1.0, &mut history)?;
        let train_b = total_loss(&parts, cfg.lambda_action, cfg.lambda_hand)?;
        let val_b = if val.is_empty() {
            None
        } else {
            let (vp, _) = mean_loss(&model, &val)?;
            Some(total_loss(&vp, cfg.lambda_action, cfg.lambda_hand)?)
        };
        let score = match val_b {
            Some(v) => v.total,
            None => mean_loss(&model, &train).and_then(|(p, _)| total_loss(&p, cfg.lambda_action, cfg.lambda_hand))?.total,
        };
        if score < best.0 {
            best = (score, model.params.clone());
            history.best_epoch = epoch;
        }
        history.epochs.push(EpochRecord { epoch, train: train_b, val: val_b, train_task: None, val_map: None });
    }
    if history.best_epoch > 0 {
        model.params = best.1;
    }
    Ok(Stage1Output { model, history })
}

fn task_map(model: &Model, frames: &[Prepared]) -> Result<Option<f64>, ModelError> {
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for p in frames {
        let Some(t) = p.task_targets() else { continue };
        labels.push(t.iter().map(|&v| v > 0.5).collect::<Vec<bool>>());
        scores.push(model.predict(p)?.task.unwrap_or_default());
    }
    if scores.is_empty() {
        return Ok(None);
    }
    let report = map_multilabel(&scores, &labels, &model.task_labels)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    Ok(report.map)
}

/// Stage 2: attach a task decoder to a stage-1 model and fine-tune everything
/// on per-label BCE (plus the stage-1 terms when `stage2_aux` is set), keeping
/// the epoch with the best selection-split mAP; the earliest epoch wins ties.
pub fn train_stage2(
    stage1: &Model,
    task: Task,
    dataset: &Dataset,
    fp: &dyn FeatureProvider,
    cfg: &ModelConfig,
) -> Result<Stage2Output, ModelError> {
    let expected = dataset.catalog.content_hash();
    if stage1.catalog_hash != expected {
        return Err(ModelError::CatalogMismatch { expected, found: stage1.catalog_hash.clone() });
    }
    let vocabulary = match task {
        Task::Cvs => Vec::new(),
        Task::Triplet => triplet_vocabulary(dataset),
    };
    let has_labels = match task {
        Task::Cvs => dataset.frames.iter().any(|f| f.cvs.is_some()),
        Task::Triplet => !vocabulary.is_empty(),
    };
    if !has_labels {
        return Err(ModelError::MissingTaskLabels(task));
    }

    let base = &stage1.config;
    let config = ModelConfig {
        d_node: base.d_node,
        d_edge: base.d_edge,
        d_hidden: base.d_hidden,
        gcn_layers: base.gcn_layers,
        readout: cfg.readout,
        heads_detached: base.heads_detached,
        init: base.init,
        ..cfg.clone()
    };
    config.validate()?;
    let mut model = stage1.clone();
    model.config = config.clone();
    model.params.reset_optimizer();
    let names = label_names(task, &vocabulary, dataset);
    model.attach_decoder(task, names, vocabulary.clone())?;

    let with_targets = |split| -> Result<Vec<Prepared>, ModelError> {
        let frames = dataset.split_frames(split);
        let prepared = prepare(dataset, split, fp)?;
        Ok(prepared
            .into_iter()
            .zip(frames)
            .map(|(p, f)| p.with_task_targets(task_targets(f, task, &vocabulary)))
            .collect())
    };
    let train = with_targets(Split::Train)?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit(Split::Train));
    }
    let val = with_targets(Split::Val)?;
    let select = if val.iter().any(|p| p.task_targets().is_some()) { &val } else { &train };

    let aux = if config.stage2_aux { 1.0 } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5354_4147_4532);
    let mut history = History::default();
    let initial_map = task_map(&model, select)?;
    let mut best = (initial_map.unwrap_or(f64::NEG_INFINITY), model.params.clone());

    for epoch in 1..=config.epochs {
        let (parts, train_task) = run_epoch(&mut model, &train, &mut rng, aux, &mut history)?;
        let train_b = total_loss(&parts, config.lambda_action, config.lambda_hand)?;
        let val_b = if val.is_empty() {
            None
        } else {
            let (vp, _) = mean_loss(&model, &val)?;
            Some(total_loss(&vp, config.lambda_action, config.lambda_hand)?)
        };
        let map = task_map(&model, select)?;
        if let Some(m) = map {
            if m > best.0 {
                best = (m, model.params.clone());
                history.best_epoch = epoch;
            }
        }
        history.epochs.push(EpochRecord { epoch, train: train_b, val: val_b, train_task: Some(train_task), val_map: map });
    }
    model.params = best.1;
    model.params.reset_optimizer();
    Ok(Stage2Output { model, history, initial_map })
}
