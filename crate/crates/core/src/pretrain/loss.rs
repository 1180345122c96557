//! Reconstruction loss for masked pretraining.

use ndarray::{Array3, ArrayView3};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct PretrainLoss {
    pub total: f64,
    pub l3d: f64,
    pub lvel: f64,
    /// False when the sequence has a single frame and `lvel` is set to 0.
    pub velocity_defined: bool,
    #[serde(skip)]
    pub grad: Array3<f64>,
}

fn norm3(a: f64, b: f64, c: f64) -> f64 {
    (a * a + b * b + c * c).sqrt()
}

/// Mean per-joint Euclidean distance plus `velocity_weight` times the mean
/// per-joint Euclidean distance of first differences.
pub fn pretrain_loss(pred: &ArrayView3<f64>, target: &ArrayView3<f64>, velocity_weight: f64) -> Result<PretrainLoss> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let (t, j, _) = pred.dim();
    let mut grad = Array3::zeros(pred.dim());
    let n3d = (t * j) as f64;
    let mut l3d = 0.0;
    for ti in 0..t {
        for ji in 0..j {
            let e = [0, 1, 2].map(|d| pred[[ti, ji, d]] - target[[ti, ji, d]]);
            let r = norm3(e[0], e[1], e[2]);
            l3d += r;
            if r > 0.0 {
                for d in 0..3 {
                    grad[[ti, ji, d]] += e[d] / (r * n3d);
                }
            }
        }
    }
    l3d /= n3d;

    let mut lvel = 0.0;
    let velocity_defined = t >= 2;
    if velocity_defined {
        let nv = ((t - 1) * j) as f64;
        for ti in 0..t - 1 {
            for ji in 0..j {
                let e = [0, 1, 2].map(|d| {
                    (pred[[ti + 1, ji, d]] - pred[[ti, ji, d]]) - (target[[ti + 1, ji, d]] - target[[ti, ji, d]])
                });
                let r = norm3(e[0], e[1], e[2]);
                lvel += r;
                if r > 0.0 {
                    for d in 0..3 {
                        let g = velocity_weight * e[d] / (r * nv);
                        grad[[ti + 1, ji, d]] += g;
                        grad[[ti, ji, d]] -= g;
                    }
                }
            }
        }
        lvel /= nv;
    }
    Ok(PretrainLoss {
        total: l3d + velocity_weight * lvel,
        l3d,
        lvel,
        velocity_defined,
        grad,
    })
}
