//! Evaluation metrics, reported in millimeters.
//!
//! Frames whose ground truth is invalid are left out of every mean.
//! Prediction coordinates are used as given.

use log::warn;
use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::PoseSequence;

const MM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Subtract the root joint from every frame before MPJPE and Accel.
    pub root_relative: bool,
    /// One similarity transform for the whole sequence instead of per frame.
    pub pa_sequence_level: bool,
    /// Report Accel per second squared instead of per frame squared.
    pub accel_per_second: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    /// Absent for sequences shorter than three frames.
    pub accel_mm: Option<f64>,
    /// NaN where the ground truth is invalid.
    pub per_frame_mpjpe_mm: Vec<f64>,
    pub frames_evaluated: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mpjpe_mm,pa_mpjpe_mm,accel_mm,frames_evaluated";

    pub fn csv_row(&self) -> String {
        let accel = self.accel_mm.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.mpjpe_mm, self.pa_mpjpe_mm, accel, self.frames_evaluated)
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        // JSON has no NaN; invalid frames become null.
        v["per_frame_mpjpe_mm"] = self
            .per_frame_mpjpe_mm
            .iter()
            .map(|x| if x.is_finite() { serde_json::json!(x) } else { serde_json::Value::Null })
            .collect();
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.frames().dim() != gt.frames().dim() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.frames().dim(),
            gt.frames().dim()
        )));
    }
    if gt.valid_count() == 0 {
        return Err(Error::NoValidFrames);
    }
    Ok(())
}

fn joint_dist(a: &ArrayView2<f64>, b: &ArrayView2<f64>, j: usize) -> f64 {
    (0..3).map(|d| (a[[j, d]] - b[[j, d]]).powi(2)).sum::<f64>().sqrt()
}

fn frame_error(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let j = a.nrows();
    (0..j).map(|k| joint_dist(a, b, k)).sum::<f64>() / j as f64
}

fn root_relative(frames: &ArrayView3<f64>, root: usize) -> ndarray::Array3<f64> {
    let mut out = frames.to_owned();
    for mut f in out.outer_iter_mut() {
        let r = f.row(root).to_owned();
        for mut row in f.rows_mut() {
            row -= &r;
        }
    }
    out
}

fn frames_for(seq: &PoseSequence, opts: &EvalOptions) -> ndarray::Array3<f64> {
    if opts.root_relative {
        root_relative(&seq.frames().view(), seq.topology().root())
    } else {
        seq.frames().clone()
    }
}

fn per_frame(pred: &ArrayView3<f64>, gt: &ArrayView3<f64>, valid: &[bool]) -> Vec<f64> {
    pred.outer_iter()
        .zip(gt.outer_iter())
        .zip(valid)
        .map(|((p, g), &v)| if v { MM * frame_error(&p, &g) } else { f64::NAN })
        .collect()
}

fn mean_valid(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean per-joint Euclidean error in millimeters.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    mpjpe_with(pred, gt, &EvalOptions::default())
}

pub fn mpjpe_with(pred: &PoseSequence, gt: &PoseSequence, opts: &EvalOptions) -> Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = (frames_for(pred, opts), frames_for(gt, opts));
    Ok(mean_valid(&per_frame(&p.view(), &g.view(), gt.valid())))
}

/// Similarity transform `(s, R, t)` minimizing `sum |s R x_i + t - y_i|^2`,
/// applied to the rows of `x`. `None` when either point set has no spread.
pub fn procrustes_align(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = x.nrows() as f64;
    let mx = x.mean_axis(Axis(0))?;
    let my = y.mean_axis(Axis(0))?;
    let x0 = x - &mx;
    let y0 = y - &my;
    let var_x: f64 = x0.iter().map(|v| v * v).sum();
    let var_y: f64 = y0.iter().map(|v| v * v).sum();
    if var_x <= f64::EPSILON * n || var_y <= f64::EPSILON * n {
        return None;
    }
    let mut h = Matrix3::zeros();
    for (a, b) in x0.rows().into_iter().zip(y0.rows()) {
        h += Vector3::new(a[0], a[1], a[2]) * Vector3::new(b[0], b[1], b[2]).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let s = (svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2]) / var_x;
    let mut out = Array2::zeros(x.dim());
    for (mut o, a) in out.rows_mut().into_iter().zip(x0.rows()) {
        let q = r * Vector3::new(a[0], a[1], a[2]) * s;
        for k in 0..3 {
            o[k] = q[k] + my[k];
        }
    }
    Some(out)
}

/// MPJPE after similarity alignment of the prediction to the ground truth,
/// per frame. Frames where either pose collapses to a point are skipped.
pub fn pa_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    pa_mpjpe_with(pred, gt, &EvalOptions::default())
}

pub fn pa_mpjpe_with(pred: &PoseSequence, gt: &PoseSequence, opts: &EvalOptions) -> Result<f64> {
    check_pair(pred, gt)?;
    let valid: Vec<usize> = (0..gt.num_frames()).filter(|&t| gt.valid()[t]).collect();
    let j = gt.num_joints();
    if opts.pa_sequence_level {
        let stack = |s: &PoseSequence| {
            let rows: Vec<_> = valid.iter().map(|&t| s.frames().index_axis(Axis(0), t)).collect();
            ndarray::concatenate(Axis(0), &rows).expect("same width")
        };
        let (p, g) = (stack(pred), stack(gt));
        let aligned = procrustes_align(&p.view(), &g.view())
            .ok_or_else(|| Error::Degenerate("all joints coincide in every frame".into()))?;
        return Ok(MM * frame_error(&aligned.view(), &g.view()));
    }
    let mut errs = Vec::with_capacity(valid.len());
    for &t in &valid {
        let p = pred.frames().index_axis(Axis(0), t);
        let g = gt.frames().index_axis(Axis(0), t);
        match procrustes_align(&p, &g) {
            Some(a) => errs.push(MM * frame_error(&a.view(), &g)),
            None => warn!("frame {t}: joints coincide, skipped in PA-MPJPE"),
        }
    }
    if j < 3 {
        warn!("PA-MPJPE with {j} joints is ill-posed");
    }
    if errs.is_empty() {
        return Err(Error::Degenerate("every frame is degenerate for alignment".into()));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean Euclidean difference of second temporal differences, in mm per
/// frame squared. Only triples of consecutive valid ground-truth frames
/// count.
pub fn accel_error(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    accel_error_with(pred, gt, &EvalOptions::default())
}

pub fn accel_error_with(pred: &PoseSequence, gt: &PoseSequence, opts: &EvalOptions) -> Result<f64> {
    check_pair(pred, gt)?;
    let t = gt.num_frames();
    if t < 3 {
        return Err(Error::TooShort { need: 3, got: t });
    }
    let (p, g) = (frames_for(pred, opts), frames_for(gt, opts));
    let valid = gt.valid();
    let j = gt.num_joints();
    let mut sum = 0.0;
    let mut count = 0usize;
    for ti in 0..t - 2 {
        if !(valid[ti] && valid[ti + 1] && valid[ti + 2]) {
            continue;
        }
        for k in 0..j {
            let sq: f64 = (0..3)
                .map(|d| {
                    let ap = p[[ti + 2, k, d]] - 2.0 * p[[ti + 1, k, d]] + p[[ti, k, d]];
                    let ag = g[[ti + 2, k, d]] - 2.0 * g[[ti + 1, k, d]] + g[[ti, k, d]];
                    (ap - ag).powi(2)
                })
                .sum();
            sum += sq.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no three consecutive valid ground-truth frames".into()));
    }
    let scale = if opts.accel_per_second { gt.fps() * gt.fps() } else { 1.0 };
    Ok(MM * scale * sum / count as f64)
}

pub fn evaluate(pred: &PoseSequence, gt: &PoseSequence, opts: &EvalOptions) -> Result<EvalReport> {
    check_pair(pred, gt)?;
    let (p, g) = (frames_for(pred, opts), frames_for(gt, opts));
    let per_frame_mpjpe_mm = per_frame(&p.view(), &g.view(), gt.valid());
    let accel_mm = if gt.num_frames() >= 3 {
        match accel_error_with(pred, gt, opts) {
            Ok(a) => Some(a),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(EvalReport {
        mpjpe_mm: mean_valid(&per_frame_mpjpe_mm),
        pa_mpjpe_mm: pa_mpjpe_with(pred, gt, opts)?,
        accel_mm,
        per_frame_mpjpe_mm,
        frames_evaluated: gt.valid_count(),
    })
}
