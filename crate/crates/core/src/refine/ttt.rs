//! Per-video test-time adaptation of the motion prior.

use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::fill::linear_fill;
use super::losses::{total_loss, LossWeights};
use crate::error::{Error, Result};
use crate::model::{derive_rng, MotionPrior, ParamGrads};
use crate::optim::{Adam, AdamConfig};
use crate::skeleton::PoseSequence;

const DROPOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TttConfig {
    /// 0 returns the prior's output on the filled sequence.
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_per_epoch: f64,
    /// Window length for long videos; 0 means the model's `max_frames`.
    pub window: usize,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 2e-4,
            weight_decay: 0.01,
            lr_decay_per_epoch: 0.99,
            window: 0,
            seed: 0,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_per_epoch must be in (0, 1], got {}",
                self.lr_decay_per_epoch
            )));
        }
        Ok(())
    }

    fn window_for(&self, model: &MotionPrior) -> Result<usize> {
        let max = model.config().max_frames;
        match self.window {
            0 => Ok(max),
            w if w > max => Err(Error::Config(format!("window {w} exceeds the model's max_frames {max}"))),
            w => Ok(w),
        }
    }
}

/// Mean loss components over the windows of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TttEpoch {
    pub epoch: usize,
    pub total: f64,
    pub lim: f64,
    pub mpjp: f64,
    pub nmpjp: f64,
    pub vel: f64,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub refined: PoseSequence,
    pub pseudo: PoseSequence,
    pub model: MotionPrior,
    pub history: Vec<TttEpoch>,
}

fn windows(t: usize, w: usize) -> Vec<(usize, usize)> {
    (0..t).step_by(w).map(|s| (s, (s + w).min(t))).collect()
}

/// Runs the model over non-overlapping windows and concatenates the output.
pub fn forward_windowed(model: &MotionPrior, frames: &Array3<f64>, window: usize) -> Result<Array3<f64>> {
    let parts = windows(frames.dim().0, window)
        .into_iter()
        .map(|(a, b)| model.forward_frames(&frames.slice(s![a..b, .., ..]), None))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("windows share J x 3"))
}

/// Fills gaps to form frozen pseudo-labels, adapts a private copy of `model`
/// to them, and returns the adapted model's output. The input model is not
/// modified.
pub fn ttt_refine(noisy: &PoseSequence, model: &MotionPrior, cfg: &TttConfig, w: &LossWeights) -> Result<Refinement> {
    cfg.validate()?;
    w.validate()?;
    let pseudo = linear_fill(noisy)?;
    let window = cfg.window_for(model)?;
    let topo = pseudo.topology().clone();
    let target = pseudo.frames();
    let spans = windows(pseudo.num_frames(), window);

    let mut adapted = model.clone();
    let mut opt = Adam::new(AdamConfig::adamw(cfg.learning_rate, cfg.weight_decay), adapted.params().values());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 5];
        for &(a, b) in &spans {
            let chunk = target.slice(s![a..b, .., ..]);
            let mut rng = derive_rng(cfg.seed, DROPOUT_STREAM, step);
            step += 1;
            let mut parts = None;
            let (_, _, grads): (f64, Array3<f64>, ParamGrads) =
                adapted.loss_and_grads(&chunk, None, Some(&mut rng), |out| {
                    let l = total_loss(&out.view(), &chunk, &topo, w)?;
                    parts = Some([l.total, l.lim, l.mpjp, l.nmpjp, l.vel]);
                    Ok((l.total, l.grad))
                })?;
            let parts = parts.expect("loss evaluated");
            if parts.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            for (s, v) in sums.iter_mut().zip(parts) {
                *s += v;
            }
            opt.step(adapted.params_mut().values_mut(), &grads);
        }
        let n = spans.len() as f64;
        history.push(TttEpoch {
            epoch,
            total: sums[0] / n,
            lim: sums[1] / n,
            mpjp: sums[2] / n,
            nmpjp: sums[3] / n,
            vel: sums[4] / n,
        });
        let lr = opt.learning_rate() * cfg.lr_decay_per_epoch;
        opt.set_learning_rate(lr);
    }
    let refined = pseudo.with_frames(forward_windowed(&adapted, target, window)?)?;
    Ok(Refinement {
        refined,
        pseudo,
        model: adapted,
        history,
    })
}
