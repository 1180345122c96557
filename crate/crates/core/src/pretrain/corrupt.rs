//! Masking and smooth noise used to corrupt clean sequences.

use ndarray::{Array2, Array3, ArrayView3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::PoseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub frame_mask_ratio: f64,
    pub joint_mask_ratio: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            frame_mask_ratio: 0.10,
            joint_mask_ratio: 0.05,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(self.frame_mask_ratio) || !ok(self.joint_mask_ratio) {
            return Err(Error::Config("mask ratios must lie in [0, 1]".into()));
        }
        if self.frame_mask_ratio + self.joint_mask_ratio > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "frame_mask_ratio + joint_mask_ratio = {} exceeds 1",
                self.frame_mask_ratio + self.joint_mask_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub keyframes: usize,
    pub residual_sigma: f64,
    pub keyframe_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            keyframes: 27,
            residual_sigma: 0.002,
            keyframe_sigma: 0.05,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.keyframes < 2 {
            return Err(Error::Config(format!("keyframes must be at least 2, got {}", self.keyframes)));
        }
        for (name, s) in [("residual_sigma", self.residual_sigma), ("keyframe_sigma", self.keyframe_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

pub(crate) fn smooth_noise_with(t: usize, j: usize, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Array3<f64>> {
    spec.validate()?;
    if t < 2 {
        return Err(Error::TooShort { need: 2, got: t });
    }
    let k = spec.keyframes;
    if k > t {
        return Err(Error::Config(format!("{k} noise keyframes exceed the {t}-frame sequence")));
    }
    let key_dist = normal(spec.keyframe_sigma);
    let keys = Array3::from_shape_fn((k, j, 3), |_| key_dist.sample(rng));
    let res_dist = normal(spec.residual_sigma);
    let mut out = Array3::zeros((t, j, 3));
    let step = (k - 1) as f64 / (t - 1) as f64;
    for ti in 0..t {
        let u = ti as f64 * step;
        let a = u.floor() as usize;
        let w = u - a as f64;
        for ji in 0..j {
            for d in 0..3 {
                let z = if a + 1 >= k || w == 0.0 {
                    keys[[a.min(k - 1), ji, d]]
                } else {
                    keys[[a, ji, d]] + w * (keys[[a + 1, ji, d]] - keys[[a, ji, d]])
                };
                out[[ti, ji, d]] = z + res_dist.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Keyframe noise at `spec.keyframes` evenly spaced times, linearly
/// upsampled to `t` frames, plus independent residual noise.
pub fn sample_smooth_noise(t: usize, j: usize, spec: &NoiseSpec) -> Result<Array3<f64>> {
    smooth_noise_with(t, j, spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// Boolean `T x J` mask: whole frames first, then single cells among the rest.
pub(crate) fn sample_mask(t: usize, j: usize, spec: &MaskSpec, rng: &mut ChaCha8Rng) -> Result<Array2<bool>> {
    spec.validate()?;
    let frames = (spec.frame_mask_ratio * t as f64).floor() as usize;
    let cells = (spec.joint_mask_ratio * (t * j) as f64).round() as usize;
    let remaining = (t - frames) * j;
    if cells > remaining {
        return Err(Error::Config(format!(
            "{cells} joint masks requested but only {remaining} cells remain after frame masking"
        )));
    }
    let mut mask = Array2::from_elem((t, j), false);
    let mut keep = vec![true; t];
    for f in sample(rng, t, frames) {
        keep[f] = false;
        mask.row_mut(f).fill(true);
    }
    let open: Vec<(usize, usize)> = (0..t)
        .filter(|&f| keep[f])
        .flat_map(|f| (0..j).map(move |ji| (f, ji)))
        .collect();
    for i in sample(rng, open.len(), cells) {
        mask[open[i]] = true;
    }
    Ok(mask)
}

pub(crate) fn corrupt_frames(
    clean: &ArrayView3<f64>,
    mask: &MaskSpec,
    noise: &NoiseSpec,
    mask_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(Array3<f64>, Array2<bool>)> {
    let (t, j, _) = clean.dim();
    let map = sample_mask(t, j, mask, mask_rng)?;
    let z = smooth_noise_with(t, j, noise, noise_rng)?;
    let mut out = clean.to_owned() + &z;
    for ((ti, ji), &m) in map.indexed_iter() {
        if m {
            for d in 0..3 {
                out[[ti, ji, d]] = 0.0;
            }
        }
    }
    Ok((out, map))
}

/// Masks frames and joint cells of a clean sequence (masked cells become
/// zero) and adds smooth noise everywhere else.
pub fn mask_sequence(clean: &PoseSequence, mask: &MaskSpec, noise: &NoiseSpec) -> Result<(PoseSequence, Array2<bool>)> {
    if !clean.is_fully_valid() {
        return Err(Error::Config("masking needs a fully valid clean sequence".into()));
    }
    let (out, map) = corrupt_frames(
        &clean.frames().view(),
        mask,
        noise,
        &mut ChaCha8Rng::seed_from_u64(mask.seed),
        &mut ChaCha8Rng::seed_from_u64(noise.seed),
    )?;
    Ok((clean.with_frames(out)?, map))
}
