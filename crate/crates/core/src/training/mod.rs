//! Losses, batch sampling, optimization and the training loop.

pub mod adam;
pub mod sampler;
pub mod trainer;
pub mod triplet;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Real;

pub use adam::{adam_step, adam_step_reference, AdamConfig, AdamState};
pub use sampler::{sample_window, BaSampler};
pub use trainer::{
    read_loss_csv, train_loop, CheckpointSink, CsvLossLog, DirCheckpoints, LossRecord, LossSink, TrainData, Trainer,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Subjects per batch.
    pub p: usize,
    /// Sequences per subject.
    pub k: usize,
    pub margin: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    pub frames_per_sample: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Full-scale schedule: P = K = 8, learning rate 1e-4, 90 000 iterations.
    pub fn full() -> Self {
        TrainConfig {
            p: 8,
            k: 8,
            margin: 0.2,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 90_000,
            frames_per_sample: 30,
            seed: 0,
            checkpoint_every: 10_000,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            k: 2,
            lr: 3e-3,
            iterations: 2_000,
            checkpoint_every: 250,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "train.p and train.k must both be at least 2 (got P={}, K={})",
                self.p, self.k
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("train.margin must be positive, got {}", self.margin)));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("train.lr and train.eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if self.frames_per_sample == 0 {
            return Err(Error::Config("train.frames must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// The three loss nodes of one training step.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub triplet: Var,
    pub ce: Var,
    pub joint: Var,
}

/// Unweighted sum of the strip-averaged batch-all triplet loss on
/// `(batch, strips, d)` embeddings and the strip-averaged cross-entropy on
/// `(batch, strips, classes)` logits.
pub fn joint_loss<T: Real>(
    g: &mut Graph<T>,
    embeddings: Var,
    logits: Var,
    labels: &[usize],
    margin: T,
) -> Result<JointLoss> {
    let (n, s) = match *g.shape(embeddings) {
        [n, s, _] => (n, s),
        _ => return Err(Error::dim("joint_loss", "rank", "embeddings must be (batch, strips, d)")),
    };
    let c = match *g.shape(logits) {
        [ln, ls, c] if ln == n && ls == s => c,
        _ => {
            return Err(Error::dim(
                "joint_loss",
                "strips",
                format!("logits {:?} do not match embeddings {:?}", g.shape(logits), g.shape(embeddings)),
            ))
        }
    };
    let per_strip = g.permute(embeddings, &[1, 0, 2])?;
    let triplet = g.batch_all_triplet(per_strip, labels, margin)?;
    let rows = g.reshape(logits, &[n * s, c])?;
    let row_labels: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat(l).take(s)).collect();
    let ce = g.softmax_cross_entropy(rows, &row_labels)?;
    let joint = g.add(triplet, ce)?;
    Ok(JointLoss { triplet, ce, joint })
}
