//! Gap filling by linear interpolation and extrapolation.

use ndarray::{s, Array3, Zip};

use crate::error::{Error, Result};
use crate::skeleton::PoseSequence;

/// Fills invalid frames: interior gaps are interpolated between the nearest
/// valid neighbours, leading and trailing gaps are extrapolated from the two
/// nearest valid frames (held constant when only one frame is valid). Valid
/// frames are copied unchanged.
pub fn linear_fill(noisy: &PoseSequence) -> Result<PoseSequence> {
    let valid: Vec<usize> = (0..noisy.num_frames()).filter(|&t| noisy.valid()[t]).collect();
    if valid.is_empty() {
        return Err(Error::NoValidFrames);
    }
    let src = noisy.frames();
    let mut out: Array3<f64> = src.clone();
    let last = *valid.last().expect("nonempty");
    for t in 0..noisy.num_frames() {
        if noisy.valid()[t] {
            continue;
        }
        let (a, b) = if valid.len() == 1 {
            (valid[0], valid[0])
        } else if t < valid[0] {
            (valid[0], valid[1])
        } else if t > last {
            (valid[valid.len() - 2], last)
        } else {
            let next = valid.partition_point(|&v| v < t);
            (valid[next - 1], valid[next])
        };
        let fa = src.slice(s![a, .., ..]);
        let mut row = out.slice_mut(s![t, .., ..]);
        if a == b {
            row.assign(&fa);
            continue;
        }
        let fb = src.slice(s![b, .., ..]);
        let w = (t as f64 - a as f64) / (b as f64 - a as f64);
        Zip::from(&mut row).and(&fa).and(&fb).for_each(|o, &x, &y| {
            *o = x + w * (y - x);
        });
    }
    PoseSequence::new(out, noisy.fps(), vec![true; noisy.num_frames()], noisy.topology().clone())
}
