//! Training objectives: label-smoothed cross-entropy and the self-entropy
//! penalties on attention rows and on point-feature channels.
//!
//! Entropies are in nats. The self-entropy terms apply their own
//! temperature softmax to raw scores, independent of any softmax the model
//! uses internally.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemMode {
    /// Row entropy of the selected attention score maps.
    Attention,
    /// Column entropy of the feature map that feeds the global pool.
    Channel,
    Off,
}

impl fmt::Display for SemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemMode::Attention => "attention",
            SemMode::Channel => "channel",
            SemMode::Off => "off",
        })
    }
}

impl FromStr for SemMode {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "attention" => Ok(SemMode::Attention),
            "channel" => Ok(SemMode::Channel),
            "off" | "none" => Ok(SemMode::Off),
            other => Err(LossError::InvalidArgument(format!("unknown sem_mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the self-entropy term.
    pub lambda: f64,
    /// Softmax temperature inside the self-entropy term.
    pub tau: f64,
    pub sem_mode: SemMode,
    /// 1-based attention layers that receive the penalty.
    pub sem_layers: Vec<usize>,
    /// Probability mass spread over the wrong classes.
    pub smoothing_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 1.0,
            sem_mode: SemMode::Attention,
            sem_layers: vec![1, 2, 3, 4],
            smoothing_eps: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, attention_layers: usize) -> Result<(), LossError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LossError::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            return Err(LossError::InvalidArgument(format!(
                "smoothing_eps must lie in [0, 1), got {}",
                self.smoothing_eps
            )));
        }
        if self.sem_mode != SemMode::Off && self.lambda > 0.0 {
            check_tau(self.tau)?;
        }
        if self.sem_mode == SemMode::Attention {
            check_layers(&self.sem_layers, attention_layers)?;
        }
        Ok(())
    }

    /// Whether the self-entropy term contributes to the objective.
    pub fn sem_active(&self) -> bool {
        self.sem_mode != SemMode::Off && self.lambda > 0.0
    }
}

/// The last `n` of `total` layers, 1-based.
pub fn last_layers(n: usize, total: usize) -> Vec<usize> {
    (total.saturating_sub(n) + 1..=total).collect()
}

fn check_tau(tau: f64) -> Result<(), LossError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(LossError::InvalidTau(tau))
    }
}

fn check_layers(layers: &[usize], available: usize) -> Result<(), LossError> {
    if layers.is_empty() {
        return Err(LossError::InvalidArgument("sem_layers is empty".into()));
    }
    if let Some(&l) = layers.iter().find(|&&l| l == 0 || l > available) {
        return Err(LossError::InvalidArgument(format!(
            "sem layer {l} outside 1..={available}"
        )));
    }
    Ok(())
}

/// Shannon entropy of `softmax(row / tau)`.
pub fn row_entropy(row: &[f64], tau: f64) -> Result<f64, LossError> {
    check_tau(tau)?;
    if row.is_empty() {
        return Err(LossError::InvalidArgument("empty row".into()));
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = row.iter().map(|v| (v - max) / tau).collect();
    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    let h = -z
        .iter()
        .map(|v| {
            let logq = v - lse;
            logq.exp() * logq
        })
        .sum::<f64>();
    if !h.is_finite() {
        return Err(AutodiffError::NonFinite("row_entropy").into());
    }
    // rounding can leave a one-hot row a hair below zero
    Ok(h.max(0.0))
}

/// Mean row entropy over the selected (1-based) layers and all their rows.
pub fn attention_sem_loss(maps: &[Tensor], sem_layers: &[usize], tau: f64) -> Result<f64, LossError> {
    check_layers(sem_layers, maps.len())?;
    let mut total = 0.0;
    for &l in sem_layers {
        let map = &maps[l - 1];
        let rows = map.rows();
        let mut sum = 0.0;
        for r in 0..rows {
            sum += row_entropy(map.row(r), tau)?;
        }
        total += sum / rows as f64;
    }
    Ok(total / sem_layers.len() as f64)
}

/// Mean over channels of the entropy of each column's softmax across points.
pub fn channel_sem_loss(features: &Tensor, tau: f64) -> Result<f64, LossError> {
    let (m, d) = features.dims2()?;
    let mut total = 0.0;
    let mut column = vec![0.0; m];
    for c in 0..d {
        for (r, v) in column.iter_mut().enumerate() {
            *v = features.get(r, c);
        }
        total += row_entropy(&column, tau)?;
    }
    Ok(total / d as f64)
}

/// Cross-entropy against `(1 - eps)` on `label` and `eps / (C - 1)` on every
/// other class.
pub fn smoothed_cross_entropy(logits: &[f64], label: usize, eps: f64) -> Result<f64, LossError> {
    let target = smoothed_target(logits.len(), label, eps)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    Ok(-target
        .iter()
        .zip(logits)
        .map(|(t, l)| t * (l - lse))
        .sum::<f64>())
}

fn smoothed_target(classes: usize, label: usize, eps: f64) -> Result<Vec<f64>, LossError> {
    if label >= classes {
        return Err(LossError::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(LossError::InvalidArgument(format!("eps must lie in [0, 1), got {eps}")));
    }
    if classes < 2 && eps > 0.0 {
        return Err(LossError::InvalidArgument(
            "label smoothing needs at least two classes".into(),
        ));
    }
    let off = if classes > 1 { eps / (classes - 1) as f64 } else { 0.0 };
    let mut t = vec![off; classes];
    t[label] = 1.0 - eps;
    Ok(t)
}

pub fn total_loss(ce: f64, sem: f64, lambda: f64) -> f64 {
    ce + lambda * sem
}

/// The same objectives recorded on an autodiff [`Graph`].
pub mod graph {
    use super::*;

    /// Sum over rows of the row entropy of `softmax(x / tau)`.
    fn summed_row_entropy(g: &mut Graph, x: NodeId, tau: f64) -> Result<NodeId, LossError> {
        let q = g.softmax_rows(x, tau)?;
        let logq = g.log_softmax_rows(x, tau)?;
        let qlogq = g.mul(q, logq)?;
        let s = g.sum(qlogq)?;
        Ok(g.scale(s, -1.0)?)
    }

    pub fn row_entropy_mean(g: &mut Graph, x: NodeId, tau: f64) -> Result<NodeId, LossError> {
        check_tau(tau)?;
        let rows = g.value(x).dims2()?.0;
        let s = summed_row_entropy(g, x, tau)?;
        Ok(g.scale(s, 1.0 / rows as f64)?)
    }

    pub fn attention_sem_loss(
        g: &mut Graph,
        maps: &[NodeId],
        sem_layers: &[usize],
        tau: f64,
    ) -> Result<NodeId, LossError> {
        check_tau(tau)?;
        check_layers(sem_layers, maps.len())?;
        let mut acc: Option<NodeId> = None;
        for &l in sem_layers {
            let h = row_entropy_mean(g, maps[l - 1], tau)?;
            acc = Some(match acc {
                Some(a) => g.add(a, h)?,
                None => h,
            });
        }
        let acc = acc.expect("non-empty layer list");
        Ok(g.scale(acc, 1.0 / sem_layers.len() as f64)?)
    }

    pub fn channel_sem_loss(g: &mut Graph, features: NodeId, tau: f64) -> Result<NodeId, LossError> {
        check_tau(tau)?;
        let t = g.transpose(features)?;
        row_entropy_mean(g, t, tau)
    }

    /// `logits` is a `1 x C` node.
    pub fn smoothed_cross_entropy(
        g: &mut Graph,
        logits: NodeId,
        label: usize,
        eps: f64,
    ) -> Result<NodeId, LossError> {
        let classes = g.value(logits).numel();
        let target = smoothed_target(classes, label, eps)?;
        let target = g.constant(Tensor::matrix(1, classes, target)?);
        let logp = g.log_softmax_rows(logits, 1.0)?;
        let prod = g.mul(target, logp)?;
        let s = g.sum(prod)?;
        Ok(g.scale(s, -1.0)?)
    }

    pub fn total_loss(g: &mut Graph, ce: NodeId, sem: NodeId, lambda: f64) -> Result<NodeId, LossError> {
        let weighted = g.scale(sem, lambda)?;
        Ok(g.add(ce, weighted)?)
    }
}
