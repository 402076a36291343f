//! Small dense networks trained with exact gradients.
//!
//! [`MlpModel`] maps a local CSI feature vector to a distribution over remote
//! codeword indices (or to a log angular spectrum). [`GruSeq2Seq`] maps a
//! window of past feature vectors to a sequence of future outputs with an
//! encoder-decoder pair of gated recurrent cells.
//!
//! Everything runs on `ndarray` with batch rows; reductions always happen in a
//! fixed order, so training is bit-reproducible for a given seed.

mod checkpoint;
mod gru;
mod mlp;
mod optim;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{rng_for, streams};

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION,
};
pub use gru::{gru_forward, gru_forward_batch, gru_gradients, gru_loss, GruCell, GruGradients, GruSeq2Seq, SequenceBatch};
pub use mlp::{mlp_forward, mlp_forward_batch, mlp_gradients, mlp_loss, Dense, MlpGradients, MlpModel};
pub use optim::{Optimizer, OptimizerKind};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("input has {got} features, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("target shape mismatch: {0}")]
    TargetShape(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Vec<f64>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("k = {k} must lie in 1..={classes}")]
    BadTopK { k: usize, classes: usize },
}

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Normalized exponentials over `K` classes, cross-entropy loss.
    Softmax,
    /// Linear output interpreted as a log spectrum; the forward pass returns
    /// its exponential and the loss is the mean squared error in the log domain.
    LogSpectrum,
}

/// Supervision for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// Log-domain target rows for [`Head::LogSpectrum`].
    LogValues(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::LogValues(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Labels(l) => Targets::Labels(rows.iter().map(|&i| l[i]).collect()),
            Targets::LogValues(v) => Targets::LogValues(v.select(Axis(0), rows)),
        }
    }
}

/// Models whose parameters can be visited as flat slices in a fixed order.
pub trait Trainable: Clone {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn params_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement (0 = off).
    #[serde(default)]
    pub patience: usize,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(NeuralError::Config("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub validation_trace: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Mini-batch training loop shared by every architecture.
///
/// `loss_grad` returns the mean loss over the given sample indices and the
/// gradient as flat slices in [`Trainable::param_slices`] order. When
/// `validate` is given, the parameters with the lowest validation loss are
/// restored at the end.
pub fn train_with<M, G, V>(
    model: &mut M,
    n_samples: usize,
    mut loss_grad: G,
    mut validate: Option<V>,
    cfg: &TrainConfig,
) -> Result<TrainReport, NeuralError>
where
    M: Trainable,
    G: FnMut(&M, &[usize]) -> Result<(f64, Vec<Vec<f64>>), NeuralError>,
    V: FnMut(&M) -> Result<f64, NeuralError>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut validation_trace = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, streams::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_grad(model, chunk)?;
            if !loss.is_finite() || loss > 1e6 {
                loss_trace.push(loss);
                return Err(NeuralError::Diverged {
                    epoch,
                    loss,
                    trace: loss_trace,
                });
            }
            total += loss * chunk.len() as f64;
            opt.step(model, &grads);
        }
        let epoch_loss = total / n_samples as f64;
        loss_trace.push(epoch_loss);
        if let Some(v) = validate.as_mut() {
            let vl = v(model)?;
            validation_trace.push(vl);
            let improved = best.as_ref().map_or(true, |(_, b, _)| vl < *b);
            if improved {
                best = Some((epoch, vl, model.params_flat()));
            } else if cfg.patience > 0 {
                let since = epoch - best.as_ref().map_or(0, |(e, _, _)| *e);
                if since >= cfg.patience {
                    break;
                }
            }
        }
    }
    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, params)) = best {
        model.set_params_flat(&params);
    }
    Ok(TrainReport {
        loss_trace,
        validation_trace,
        best_epoch,
    })
}

/// Indices of the `k` largest entries, descending, ties toward the smaller index.
pub fn predict_topk(probs: &[f64], k: usize) -> Result<Vec<usize>, NeuralError> {
    if k == 0 || k > probs.len() {
        return Err(NeuralError::BadTopK { k, classes: probs.len() });
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub(crate) fn check_finite(x: ArrayView2<f64>) -> Result<(), NeuralError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NeuralError::NonFiniteInput)
    }
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Stacks feature rows into a batch matrix.
pub fn rows_to_matrix(rows: &[&[f64]]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_topk_tie_rule_and_permutation() {
        let p = vec![0.25; 4];
        assert_eq!(predict_topk(&p, 1).unwrap(), vec![0]);
        let mut all = predict_topk(&[0.1, 0.4, 0.2, 0.3], 4).unwrap();
        assert_eq!(all, vec![1, 3, 2, 0]);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(predict_topk(&p, 0).is_err());
        assert!(predict_topk(&p, 5).is_err());
    }

    #[test]
    fn test_softmax_rows_sum_to_one() {
        let mut z = Array2::from_shape_vec((2, 3), vec![1000.0, 0.0, -5.0, 1.0, 2.0, 3.0]).unwrap();
        softmax_rows(&mut z);
        for r in z.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
