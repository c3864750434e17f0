use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::{RunConfig, SelectionMetric};
use crate::datapipe::{
    augment, batch_tensors, logit_map, sample_seed, synthetic_dataset, BinaryMask, DatasetLayout, SamplePair,
};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::objective::{confusion_matrix, deep_supervision_loss, ConfusionMatrix, LossBreakdown, MetricReport};
use crate::optim::OptimizerState;
use crate::params::Ctx;
use crate::tensor::{BatchNormMode, Real, Tensor};

/// One forward/backward/AdamW update on a batch.
pub fn train_step<T: Real>(
    net: &mut Network<T>,
    opt: &mut OptimizerState<T>,
    img_a: &Tensor<T>,
    img_b: &Tensor<T>,
    labels: &Tensor<T>,
) -> Result<LossBreakdown> {
    let step = opt.step + 1;
    let (grads, breakdown) = {
        let mut ctx = Ctx::new(&net.params, &mut net.buffers, BatchNormMode::Train);
        let a = ctx.tape.constant(img_a.clone());
        let b = ctx.tape.constant(img_b.clone());
        let outs = net.model.forward(&mut ctx, a, b)?;
        let (loss, breakdown) = deep_supervision_loss(&mut ctx.tape, &outs, labels)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        (ctx.backward(loss)?, breakdown)
    };
    net.params.zero_grad();
    net.params.accumulate(grads);
    opt.step(&mut net.params)?;
    Ok(breakdown)
}

pub fn train_step_on<T: Real>(
    net: &mut Network<T>,
    opt: &mut OptimizerState<T>,
    batch: &[SamplePair],
) -> Result<LossBreakdown> {
    let (a, b, l) = batch_tensors::<T>(batch)?;
    train_step(net, opt, &a, &b, &l)
}

/// Binary prediction of the main head for one pair (eval mode, direct forward).
pub fn predict_mask(net: &mut Network<f32>, sample: &SamplePair) -> Result<BinaryMask> {
    let (a, b, _) = batch_tensors::<f32>(std::slice::from_ref(sample))?;
    let logits = net.predict(&a, &b)?;
    Ok(BinaryMask::from_logits(&logit_map(&logits, 0)?))
}

/// Confusion matrix accumulated over `samples`, thresholding at 0.5.
pub fn evaluate(net: &mut Network<f32>, samples: &[SamplePair]) -> Result<ConfusionMatrix> {
    let mut total = ConfusionMatrix::default();
    for s in samples {
        let pred = predict_mask(net, s).map_err(|e| Error::Sample {
            id: s.id.clone(),
            source: Box::new(e),
        })?;
        total += confusion_matrix(&pred, &s.label)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub matrix: ConfusionMatrix,
    pub report: MetricReport,
    /// Value of the selection metric.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: LossBreakdown,
    #[serde(default)]
    pub validation: Option<Validation>,
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub optimizer: OptimizerState<f32>,
    pub history: Vec<LogEntry>,
    /// `(step, score)` of the best validation.
    pub best: Option<(u64, f64)>,
}

/// Training and validation pairs per the run's data section.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    if let Some(syn) = cfg.data.synthetic {
        // The synthetic task is an overfitting probe: validate on the training pairs.
        let pairs = synthetic_dataset(syn.pairs, syn.size, cfg.seed);
        return Ok((pairs.clone(), pairs));
    }
    let layout = DatasetLayout {
        root: cfg.data.resolved_root()?,
        manifest: cfg.data.manifest.clone(),
    };
    Ok((
        layout.load_split(&cfg.data.train_split)?,
        layout.load_split(&cfg.data.val_split)?,
    ))
}

fn score(cm: &ConfusionMatrix, metric: SelectionMetric) -> Result<(MetricReport, f64)> {
    let report = cm.metrics()?;
    let s = match metric {
        SelectionMetric::Iou => report.iou,
        SelectionMetric::MeanIou => cm.mean_iou()?,
    };
    Ok((report, s))
}

/// Seeded training loop. With `checkpoint_dir`, writes `best/` on every
/// validation improvement and `last/` at the end.
pub fn run_training(
    cfg: &RunConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let model_cfg = cfg.model_config()?;
    let mut net = Network::<f32>::new(&model_cfg, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &net.params)?;
    info!(
        "training {} parameters for {} steps, batch {}",
        net.parameter_count(),
        cfg.max_steps,
        cfg.batch_size
    );

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut history = Vec::with_capacity(cfg.max_steps as usize);
    let mut best: Option<(u64, f64)> = None;

    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                if !order.is_empty() {
                    epoch += 1;
                }
                order = (0..train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, "order")));
                cursor = 0;
            }
            let s = &train[order[cursor]];
            cursor += 1;
            batch.push(augment(s, sample_seed(cfg.seed, epoch, &s.id), &cfg.augment)?);
        }
        let loss = train_step_on(&mut net, &mut opt, &batch)?;
        let mut entry = LogEntry {
            step,
            loss,
            validation: None,
        };
        if (step % cfg.val_every == 0 || step == cfg.max_steps) && !val.is_empty() {
            let matrix = evaluate(&mut net, val)?;
            let (report, s) = score(&matrix, cfg.selection_metric)?;
            info!(
                "step {step}: loss {:.5} (main {:.5}, K={}) val {:?} {:.4}",
                entry.loss.total,
                entry.loss.main,
                entry.loss.aux.len(),
                cfg.selection_metric,
                s
            );
            entry.validation = Some(Validation {
                matrix,
                report,
                score: s,
            });
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((step, s));
                history.push(entry.clone());
                if let Some(dir) = checkpoint_dir {
                    save_checkpoint(&dir.join("best"), &net, None, step, &history)?;
                }
                continue;
            }
        }
        history.push(entry);
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("last"), &net, Some(&opt), cfg.max_steps, &history)?;
    }
    Ok(TrainOutcome {
        network: net,
        optimizer: opt,
        history,
        best,
    })
}
