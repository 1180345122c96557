//! Pose-level occlusion fixtures: contiguous detection failures plus
//! corruption of the surviving frames.

use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refine::linear_fill;
use crate::skeleton::PoseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionSpec {
    pub span_seconds: f64,
    pub period_seconds: f64,
    /// Fraction of joints lost inside a span; 1 drops whole frames.
    pub coverage: f64,
    pub survivor_noise_sigma: f64,
    pub per_joint_dropout: f64,
    pub seed: u64,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        Self {
            span_seconds: 1.6,
            period_seconds: 3.2,
            coverage: 1.0,
            survivor_noise_sigma: 0.0,
            per_joint_dropout: 0.0,
            seed: 0,
        }
    }
}

impl OcclusionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_seconds > 0.0 && self.period_seconds.is_finite()) {
            return Err(Error::Config(format!("period_seconds must be positive, got {}", self.period_seconds)));
        }
        if !(self.span_seconds >= 0.0 && self.span_seconds <= self.period_seconds) {
            return Err(Error::Config(format!(
                "span_seconds must lie in [0, period_seconds = {}], got {}",
                self.period_seconds, self.span_seconds
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.coverage) || !unit(self.per_joint_dropout) {
            return Err(Error::Config("coverage and per_joint_dropout must lie in [0, 1]".into()));
        }
        if !(self.survivor_noise_sigma >= 0.0 && self.survivor_noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "survivor_noise_sigma must be nonnegative, got {}",
                self.survivor_noise_sigma
            )));
        }
        Ok(())
    }
}

/// Occluded frame ranges `[start, end)`, one per period window. A trailing
/// partial window gets a proportionally shorter span.
pub fn occlusion_spans(frames: usize, fps: f64, spec: &OcclusionSpec) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let span = (spec.span_seconds * fps).round() as usize;
    let period = ((spec.period_seconds * fps).round() as usize).max(1);
    if span > frames {
        return Err(Error::Config(format!(
            "occlusion span of {span} frames is longer than the {frames}-frame sequence"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for start in (0..frames).step_by(period) {
        let len = period.min(frames - start);
        let this = if len == period {
            span.min(len)
        } else {
            ((span * len) as f64 / period as f64).round() as usize
        };
        let offset = rng.random_range(0..=len - this);
        if this > 0 {
            out.push((start + offset, start + offset + this));
        }
    }
    Ok(out)
}

/// Applies the occlusion recipe to a fully valid ground-truth sequence.
pub fn occlude(gt: &PoseSequence, spec: &OcclusionSpec) -> Result<PoseSequence> {
    if !gt.is_fully_valid() {
        return Err(Error::Config("occlusion needs a fully valid ground-truth sequence".into()));
    }
    let (t, j, _) = gt.frames().dim();
    let spans = occlusion_spans(t, gt.fps(), spec)?;
    let mut in_span = vec![false; t];
    for &(a, b) in &spans {
        in_span[a..b].fill(true);
    }
    // Span placement consumed the head of this stream; corruption uses its own.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, spec.survivor_noise_sigma).expect("validated");
    let mut frames: Array3<f64> = gt.frames().clone();
    let mut valid = vec![true; t];
    let mut last: Option<usize> = None;
    for ti in 0..t {
        let mut dropped = vec![false; j];
        if in_span[ti] {
            if spec.coverage >= 1.0 {
                valid[ti] = false;
                frames.index_axis_mut(ndarray::Axis(0), ti).fill(0.0);
                continue;
            }
            let k = (spec.coverage * j as f64).round() as usize;
            for idx in sample(&mut rng, j, k) {
                dropped[idx] = true;
            }
        } else {
            if spec.survivor_noise_sigma > 0.0 {
                for v in frames.index_axis_mut(ndarray::Axis(0), ti).iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            if spec.per_joint_dropout > 0.0 {
                for d in dropped.iter_mut() {
                    *d = rng.random_bool(spec.per_joint_dropout);
                }
            }
        }
        let survivors: Vec<usize> = (0..j).filter(|&k| !dropped[k]).collect();
        if survivors.is_empty() {
            valid[ti] = false;
            frames.index_axis_mut(ndarray::Axis(0), ti).fill(0.0);
            continue;
        }
        for k in (0..j).filter(|&k| dropped[k]) {
            for d in 0..3 {
                frames[[ti, k, d]] = match last {
                    Some(p) => frames[[p, k, d]],
                    None => survivors.iter().map(|&s| frames[[ti, s, d]]).sum::<f64>() / survivors.len() as f64,
                };
            }
        }
        last = Some(ti);
    }
    PoseSequence::new(frames, gt.fps(), valid, gt.topology().clone())
}

/// The interpolation baseline: gaps filled linearly.
pub fn baseline_interpolate(corrupted: &PoseSequence) -> Result<PoseSequence> {
    linear_fill(corrupted)
}
