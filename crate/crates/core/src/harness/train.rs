//! Minibatch training of [`ModelParams`] on labeled clouds.
//!
//! Per-cloud gradients are computed in parallel but summed in a fixed order,
//! so a run is bitwise reproducible for a given seed regardless of the
//! thread count.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Optimizer, TrainConfig};
use super::HarnessError;
use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::geometry::PointCloud;
use crate::loss::{self, LossConfig, LossError, SemMode};
use crate::model::{self, argmax, Architecture, Checkpoint, ModelError, ModelParams};
use crate::seed;

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_ANCHORS: u64 = 4;
const STREAM_VAL: u64 = 5;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total objective over the epoch's training clouds.
    pub loss: f64,
    pub ce: f64,
    /// Mean self-entropy term, before weighting. Zero when disabled.
    pub sem: f64,
    pub train_error: f64,
    /// `None` without a validation split.
    pub val_error: Option<f64>,
    pub val_ce: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    /// 0-based epoch the checkpoint comes from.
    pub best_epoch: usize,
}

/// Per-cloud objective and gradients.
struct Step {
    grads: Vec<Tensor>,
    loss: f64,
    ce: f64,
    sem: f64,
    correct: bool,
}

fn loss_err(e: LossError) -> HarnessError {
    HarnessError::from(e)
}

/// Objective terms for one cloud recorded on `g`. Returns `(total, ce, sem)`
/// nodes and values; `sem` is evaluated even when it carries no weight.
fn cloud_step(params: &ModelParams, cloud: &PointCloud, cfg: &TrainConfig, anchor_seed: u64) -> Result<Step, HarnessError> {
    let label = cloud
        .label()
        .ok_or_else(|| HarnessError::Data("training cloud without a label".into()))? as usize;
    let mut g = Graph::new();
    let p = model::bind_params(&mut g, params, true);
    let anchors = match params.dims().arch {
        Architecture::Attention => model::select_anchors(cloud, &cfg.sampler, &mut seed::rng(anchor_seed))?,
        Architecture::PointMlp => Vec::new(),
    };
    let nodes = model::record_forward(&mut g, params, &p, cloud, &anchors, params.dims().group_k)?;
    let lc: &LossConfig = &cfg.loss;
    let ce = loss::graph::smoothed_cross_entropy(&mut g, nodes.logits, label, lc.smoothing_eps).map_err(loss_err)?;
    let sem_node = match lc.sem_mode {
        SemMode::Off => None,
        SemMode::Attention if nodes.attention_maps.is_empty() => None,
        SemMode::Attention => {
            Some(loss::graph::attention_sem_loss(&mut g, &nodes.attention_maps, &lc.sem_layers, lc.tau).map_err(loss_err)?)
        }
        SemMode::Channel => Some(loss::graph::channel_sem_loss(&mut g, nodes.point_features, lc.tau).map_err(loss_err)?),
    };
    let total = match sem_node {
        Some(s) if lc.lambda > 0.0 => loss::graph::total_loss(&mut g, ce, s, lc.lambda).map_err(loss_err)?,
        _ => ce,
    };
    let loss_value = g.value(total).item()?;
    if !loss_value.is_finite() {
        return Err(AutodiffError::NonFinite("loss").into());
    }
    let mut grads = g.backward(total)?;
    let grads = p
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok(Step {
        grads,
        loss: loss_value,
        ce: g.value(ce).item()?,
        sem: sem_node.map(|s| g.value(s).item()).transpose()?.unwrap_or(0.0),
        correct: argmax(g.value(nodes.logits).data()) == label,
    })
}

/// `(error, mean smoothed CE)` of `params` on `clouds`, one draw per cloud.
fn validate(params: &ModelParams, clouds: &[(usize, &PointCloud)], cfg: &TrainConfig) -> Result<(f64, f64), HarnessError> {
    let results = clouds
        .par_iter()
        .map(|&(idx, cloud)| -> Result<(bool, f64), HarnessError> {
            let label = cloud.label().unwrap_or(0) as usize;
            let mut rng = seed::rng(seed::derive(cfg.seed, &[STREAM_VAL, idx as u64]));
            let trace = model::forward(cloud, params, &cfg.sampler, &mut rng)?;
            let ce = loss::smoothed_cross_entropy(&trace.logits, label, cfg.loss.smoothing_eps)?;
            Ok((trace.prediction() != label, ce))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = results.len() as f64;
    let errors = results.iter().filter(|r| r.0).count() as f64;
    Ok((errors / n, results.iter().map(|r| r.1).sum::<f64>() / n))
}

/// Indices of the held-out validation clouds, fixed by the seed.
pub fn validation_split(n: usize, fraction: f64, seed_value: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed_value, &[STREAM_SPLIT])));
    let n_val = if n >= 2 { ((n as f64 * fraction).round() as usize).min(n - 1) } else { 0 };
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn apply_update(params: &mut ModelParams, grads: &[Tensor], cfg: &TrainConfig, adam: &mut AdamState) {
    adam.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(adam.t);
    let bc2 = 1.0 - ADAM_BETA2.powi(adam.t);
    for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= cfg.lr * d;
                }
            }
            Optimizer::Adam => {
                let (m, v) = (&mut adam.m[i], &mut adam.v[i]);
                for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * d;
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * d * d;
                    *w -= cfg.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Trains on `clouds` (labels required) and returns the parameters of the
/// epoch with the lowest validation error, ties broken by validation
/// cross-entropy and then by the earlier epoch. Without a validation split
/// the last epoch is kept.
pub fn train(clouds: &[PointCloud], cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    train_with_progress(clouds, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress<F: FnMut(&EpochStats)>(
    clouds: &[PointCloud],
    cfg: &TrainConfig,
    mut progress: F,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if clouds.is_empty() {
        return Err(HarnessError::Data("no training clouds".into()));
    }
    if let Some(bad) = clouds.iter().position(|c| c.label().is_none_or(|l| l as usize >= cfg.dims.classes)) {
        return Err(HarnessError::Data(format!(
            "training cloud {bad} has a missing or out-of-range label"
        )));
    }
    let (mut train_idx, val_idx) = validation_split(clouds.len(), cfg.val_fraction, cfg.seed);
    let val: Vec<(usize, &PointCloud)> = val_idx.iter().map(|&i| (i, &clouds[i])).collect();
    let mut params = ModelParams::init(cfg.dims, &mut seed::rng(seed::derive(cfg.seed, &[STREAM_INIT])))?;
    let mut adam = AdamState {
        m: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        v: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        t: 0,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[STREAM_SHUFFLE, epoch as u64])));
        let (mut loss_sum, mut ce_sum, mut sem_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in train_idx.chunks(cfg.batch_size) {
            let steps = batch
                .par_iter()
                .map(|&i| {
                    let anchor_seed = seed::derive(cfg.seed, &[STREAM_ANCHORS, epoch as u64, i as u64]);
                    cloud_step(&params, &clouds[i], cfg, anchor_seed)
                })
                .collect::<Vec<_>>();
            let mut total: Option<Vec<Tensor>> = None;
            for step in steps {
                let step = step.map_err(|e| diverged(epoch, e))?;
                loss_sum += step.loss;
                ce_sum += step.ce;
                sem_sum += step.sem;
                correct += step.correct as usize;
                match total.as_mut() {
                    None => total = Some(step.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&step.grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for t in grads.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            apply_update(&mut params, &grads, cfg, &mut adam);
            if params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(HarnessError::Diverged {
                    epoch,
                    detail: "parameters became non-finite after an update".into(),
                });
            }
        }
        let n = train_idx.len() as f64;
        let (val_error, val_ce) = if val.is_empty() {
            (None, None)
        } else {
            let (e, c) = validate(&params, &val, cfg).map_err(|e| diverged(epoch, e))?;
            (Some(e), Some(c))
        };
        let stats = EpochStats {
            epoch,
            loss: loss_sum / n,
            ce: ce_sum / n,
            sem: sem_sum / n,
            train_error: 1.0 - correct as f64 / n,
            val_error,
            val_ce,
        };
        if !stats.loss.is_finite() {
            return Err(HarnessError::Diverged {
                epoch,
                detail: format!("mean loss {}", stats.loss),
            });
        }
        let key = (val_error.unwrap_or(0.0), val_ce.unwrap_or(0.0));
        let better = match &best {
            None => true,
            Some(_) if val.is_empty() => true,
            Some((e, c, _, _)) => key.0 < *e || (key.0 == *e && key.1 < *c),
        };
        if better {
            best = Some((key.0, key.1, epoch, params.clone()));
        }
        progress(&stats);
        history.push(stats);
    }
    let (_, _, best_epoch, best_params) = best.expect("at least one epoch");
    let sampler = crate::sampling::SampleSpec {
        m: cfg.dims.anchors,
        ..cfg.sampler
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params: best_params,
            sampler,
        },
        history,
        best_epoch,
    })
}

fn diverged(epoch: usize, e: HarnessError) -> HarnessError {
    match e {
        HarnessError::Model(ModelError::Autodiff(AutodiffError::NonFinite(op)))
        | HarnessError::Autodiff(AutodiffError::NonFinite(op)) => HarnessError::Diverged {
            epoch,
            detail: format!("{op} produced a non-finite value"),
        },
        HarnessError::Loss(LossError::Autodiff(AutodiffError::NonFinite(op))) => HarnessError::Diverged {
            epoch,
            detail: format!("{op} produced a non-finite value"),
        },
        other => other,
    }
}

/// One CSV row per epoch.
pub fn write_history_csv<W: Write>(history: &[EpochStats], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "ce", "sem", "train_error", "val_error", "val_ce"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in history {
        out.write_record([
            s.epoch.to_string(),
            s.loss.to_string(),
            s.ce.to_string(),
            s.sem.to_string(),
            s.train_error.to_string(),
            opt(s.val_error),
            opt(s.val_ce),
        ])?;
    }
    out.flush()?;
    Ok(())
}
