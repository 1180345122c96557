//! Masked-reconstruction training loop.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_frames, MaskSpec, NoiseSpec};
use super::loss::pretrain_loss;
use crate::error::{Error, Result};
use crate::model::{derive_rng, MotionPrior};
use crate::optim::{Adam, AdamConfig};
use crate::skeleton::{flip_frames, PoseSequence};

const SHUFFLE_STREAM: u64 = 1;
const ITEM_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub velocity_weight: f64,
    /// Longer sequences are randomly cropped to this many frames.
    pub sequence_length: usize,
    pub flip_augment: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            learning_rate: 5e-4,
            batch_size: 64,
            velocity_weight: 20.0,
            sequence_length: 243,
            flip_augment: true,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.sequence_length == 0 {
            return Err(Error::Config("batch_size and sequence_length must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(self.velocity_weight >= 0.0 && self.velocity_weight.is_finite()) {
            return Err(Error::Config(format!("velocity_weight must be nonnegative, got {}", self.velocity_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub total: f64,
    pub l3d: f64,
    pub lvel: f64,
}

pub fn run_pretraining(
    model: MotionPrior,
    dataset: &[PoseSequence],
    cfg: &PretrainConfig,
    mask: &MaskSpec,
    noise: &NoiseSpec,
) -> Result<(MotionPrior, Vec<PretrainEpoch>)> {
    run_pretraining_with(model, dataset, cfg, mask, noise, |_, _| Ok(()))
}

/// Trains `model` to reconstruct clean sequences from masked, noised copies.
/// `on_epoch` sees every finished epoch and the current parameters.
pub fn run_pretraining_with(
    mut model: MotionPrior,
    dataset: &[PoseSequence],
    cfg: &PretrainConfig,
    mask: &MaskSpec,
    noise: &NoiseSpec,
    mut on_epoch: impl FnMut(&PretrainEpoch, &MotionPrior) -> Result<()>,
) -> Result<(MotionPrior, Vec<PretrainEpoch>)> {
    cfg.validate()?;
    mask.validate()?;
    noise.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max = model.config().max_frames;
    for (i, seq) in dataset.iter().enumerate() {
        if !seq.is_fully_valid() {
            return Err(Error::Config(format!("training sequence {i} has invalid frames")));
        }
        if seq.num_joints() != model.joints() {
            return Err(Error::Shape(format!(
                "training sequence {i} has {} joints, the model expects {}",
                seq.num_joints(),
                model.joints()
            )));
        }
        let frames = seq.num_frames().min(cfg.sequence_length);
        if frames > max {
            return Err(Error::TooLong { frames, max });
        }
    }

    let n = dataset.len();
    let mut opt = Adam::new(AdamConfig::adam(cfg.learning_rate), model.params().values());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let mut sums = [0.0; 3];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Array2<f64>> = model.params().values().iter().map(|p| Array2::zeros(p.dim())).collect();
            for (k, &item) in batch.iter().enumerate() {
                let global = (epoch * n + b * cfg.batch_size + k) as u64;
                let mut rng = derive_rng(cfg.seed, ITEM_STREAM, global);
                let seq = &dataset[item];
                let len = seq.num_frames().min(cfg.sequence_length);
                let start = rng.random_range(0..=seq.num_frames() - len);
                let mut clean = seq.frames().slice(s![start..start + len, .., ..]).to_owned();
                if cfg.flip_augment && !seq.topology().left_right_pairs().is_empty() && rng.random_bool(0.5) {
                    clean = flip_frames(&clean.view(), seq.topology());
                }
                let (input, map) = corrupt_frames(
                    &clean.view(),
                    mask,
                    noise,
                    &mut derive_rng(mask.seed, ITEM_STREAM, global),
                    &mut derive_rng(noise.seed, ITEM_STREAM, global),
                )?;
                let mut parts = [0.0; 3];
                let mut drop_rng = derive_rng(cfg.seed, DROPOUT_STREAM, global);
                let (_, _, grads) = model.loss_and_grads(&input.view(), Some(&map), Some(&mut drop_rng), |out| {
                    let l = pretrain_loss(&out.view(), &clean.view(), cfg.velocity_weight)?;
                    parts = [l.total, l.l3d, l.lvel];
                    Ok((l.total, l.grad))
                })?;
                if !parts[0].is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                for (s, v) in sums.iter_mut().zip(parts) {
                    *s += v;
                }
                for (a, g) in acc.iter_mut().zip(&grads) {
                    *a += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.mapv_inplace(|v| v * scale);
            }
            opt.step(model.params_mut().values_mut(), &acc);
        }
        let record = PretrainEpoch {
            epoch,
            total: sums[0] / n as f64,
            l3d: sums[1] / n as f64,
            lvel: sums[2] / n as f64,
        };
        log::info!("pretrain epoch {epoch}: loss {:.6} (l3d {:.6}, lvel {:.6})", record.total, record.l3d, record.lvel);
        on_epoch(&record, &model)?;
        history.push(record);
    }
    Ok((model, history))
}
