//! Procedural articulated motion for running the pipeline without mocap.

use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::derive_rng;
use crate::skeleton::{PoseSequence, SkeletonTopology, H36M_REST_OFFSETS};

const SYNTH_STREAM: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub fps: f64,
    /// Frames between joint-angle keyframes.
    pub keyframe_interval: usize,
    /// Per-axis bound of keyframe joint rotations, radians.
    pub angle_amplitude: f64,
    /// Per-axis bound of the root displacement between keyframes, meters.
    pub root_step: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            fps: 25.0,
            keyframe_interval: 10,
            angle_amplitude: 0.5,
            root_step: 0.1,
        }
    }
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, s: f64) -> f64 {
    let s2 = s * s;
    0.5 * (2.0 * p1 + (p2 - p0) * s + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s2 + (3.0 * (p1 - p2) + p3 - p0) * s2 * s)
}

/// Samples `count` keyframe vectors of width `dim` and evaluates a C1 spline
/// through them at every frame.
fn spline_track(rng: &mut ChaCha8Rng, frames: usize, interval: usize, dim: usize, mut key: impl FnMut(&mut ChaCha8Rng, usize, &[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let segments = (frames.saturating_sub(1)).div_ceil(interval).max(1);
    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(segments + 3);
    let mut prev = vec![0.0; dim];
    for i in 0..segments + 3 {
        let k = key(rng, i, &prev);
        prev.clone_from(&k);
        keys.push(k);
    }
    (0..frames)
        .map(|t| {
            let u = t as f64 / interval as f64;
            let i = (u.floor() as usize).min(segments - 1);
            let s = u - i as f64;
            (0..dim)
                .map(|d| catmull_rom(keys[i][d], keys[i + 1][d], keys[i + 2][d], keys[i + 3][d], s))
                .collect()
        })
        .collect()
}

fn bone_offsets(topo: &SkeletonTopology, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let is_h36m = topo.joint_count() == 17 && topo.parents() == SkeletonTopology::h36m17().parents();
    let body = rng.random_range(0.85..1.15);
    (0..topo.joint_count())
        .map(|j| {
            if topo.parent(j).is_none() {
                return Vector3::zeros();
            }
            if is_h36m {
                let o = H36M_REST_OFFSETS[j];
                Vector3::new(o[0], o[1], o[2]) * body * rng.random_range(0.9..1.1)
            } else {
                let dir = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                dir.normalize() * body * rng.random_range(0.1..0.4)
            }
        })
        .collect()
}

fn one_sequence(frames: usize, topo: &Arc<SkeletonTopology>, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Result<PoseSequence> {
    let j = topo.joint_count();
    let offsets = bone_offsets(topo, rng);
    let a = opts.angle_amplitude;
    let angles = spline_track(rng, frames, opts.keyframe_interval, 3 * j, |rng, _, _| {
        (0..3 * j).map(|_| rng.random_range(-a..a)).collect()
    });
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let step = opts.root_step;
    let root = spline_track(rng, frames, opts.keyframe_interval, 4, |rng, i, prev| {
        if i == 0 {
            vec![rng.random_range(-0.3..0.3), 0.0, rng.random_range(-0.3..0.3), heading]
        } else {
            vec![
                prev[0] + rng.random_range(-step..step),
                prev[1] + rng.random_range(-0.2 * step..0.2 * step),
                prev[2] + rng.random_range(-step..step),
                prev[3] + rng.random_range(-0.4..0.4),
            ]
        }
    });
    let order = topo.topological_order();
    let mut out = Array3::zeros((frames, j, 3));
    let mut global = vec![Rotation3::identity(); j];
    let mut pos = vec![Vector3::zeros(); j];
    for t in 0..frames {
        let local = |k: usize| Rotation3::new(Vector3::new(angles[t][3 * k], angles[t][3 * k + 1], angles[t][3 * k + 2]));
        for &k in &order {
            match topo.parent(k) {
                None => {
                    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), root[t][3]);
                    global[k] = yaw * Rotation3::new(Vector3::new(angles[t][3 * k], 0.0, angles[t][3 * k + 2]) * 0.2);
                    pos[k] = Vector3::new(root[t][0], root[t][1], root[t][2]);
                }
                Some(p) => {
                    global[k] = global[p] * local(k);
                    pos[k] = pos[p] + global[k] * offsets[k];
                }
            }
            for d in 0..3 {
                out[[t, k, d]] = pos[k][d];
            }
        }
    }
    PoseSequence::dense(out, opts.fps, topo.clone())
}

/// Random articulated motions with constant bone lengths within each
/// sequence, smooth joint rotations and a smooth root path.
pub fn generate_synthetic_motion(count: usize, frames: usize, topology: &SkeletonTopology, seed: u64) -> Result<Vec<PoseSequence>> {
    generate_synthetic_motion_with(count, frames, topology, seed, &SynthOptions::default())
}

pub fn generate_synthetic_motion_with(
    count: usize,
    frames: usize,
    topology: &SkeletonTopology,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<PoseSequence>> {
    if frames == 0 {
        return Err(Error::Config("synthetic sequences need at least one frame".into()));
    }
    if opts.keyframe_interval == 0 {
        return Err(Error::Config("keyframe_interval must be positive".into()));
    }
    let topo = Arc::new(topology.clone());
    (0..count)
        .map(|i| one_sequence(frames, &topo, opts, &mut derive_rng(seed, SYNTH_STREAM, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{diff_frames, limb_lengths};

    #[test]
    fn rigid_and_deterministic() {
        let topo = SkeletonTopology::h36m17();
        let a = generate_synthetic_motion(4, 48, &topo, 11).unwrap();
        let b = generate_synthetic_motion(4, 48, &topo, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for seq in &a {
            let l = limb_lengths(seq, false).unwrap().lengths;
            for col in l.columns() {
                let m = col.mean().unwrap();
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
                assert!(var < 1e-10);
            }
            let acc = diff_frames(&seq.frames().view(), 2).unwrap();
            assert!(acc.iter().all(|v| v.abs() < 0.1), "motion is smooth");
        }
    }

    #[test]
    fn arbitrary_topology() {
        let topo = SkeletonTopology::new(vec![None, Some(0), Some(1), Some(1)], None, vec![(2, 3)]).unwrap();
        let seqs = generate_synthetic_motion(2, 5, &topo, 0).unwrap();
        assert_eq!(seqs[0].frames().dim(), (5, 4, 3));
        let one = generate_synthetic_motion(1, 1, &topo, 0).unwrap();
        assert_eq!(one[0].num_frames(), 1);
    }
}
