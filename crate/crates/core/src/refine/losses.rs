//! Self-supervised test-time losses and their gradients w.r.t. the
//! prediction.
//!
//! Position and velocity terms are per-coordinate absolute differences
//! averaged over the summed cells. The limb term is the population variance
//! over time of each normalized limb length, summed over limbs and divided by
//! the joint count.

use log::warn;
use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{raw_limb_lengths, SkeletonTopology};

/// Weight of each test-time loss term, named by loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lim: f64,
    pub mpjp: f64,
    pub nmpjp: f64,
    pub vel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lim: 200.0,
            mpjp: 1.0,
            nmpjp: 0.5,
            vel: 20.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lim: 0.0,
        mpjp: 0.0,
        nmpjp: 0.0,
        vel: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lim", self.lim), ("mpjp", self.mpjp), ("nmpjp", self.nmpjp), ("vel", self.vel)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }

    /// Parses overrides like `lim=200,vel=20`; unnamed terms keep `self`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("weight override {part:?} is not name=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("weight {k:?} has non-numeric value {v:?}")))?;
            match k.trim() {
                "lim" => self.lim = v,
                "mpjp" => self.mpjp = v,
                "nmpjp" => self.nmpjp = v,
                "vel" => self.vel = v,
                other => return Err(Error::Config(format!("unknown loss weight {other:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// A scalar loss and its gradient w.r.t. the prediction.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub grad: Array3<f64>,
}

fn check_same_shape(pred: &ArrayView3<f64>, pseudo: &ArrayView3<f64>) -> Result<()> {
    if pred.dim() != pseudo.dim() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but pseudo-labels are {:?}",
            pred.dim(),
            pseudo.dim()
        )));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Limb-length consistency: mean over the `J` joints of the temporal
/// variance of every normalized limb length.
pub fn loss_limb(pred: &ArrayView3<f64>, topo: &SkeletonTopology) -> Result<Loss> {
    let (t, j, _) = pred.dim();
    if j != topo.joint_count() {
        return Err(Error::Shape(format!(
            "prediction has {j} joints, topology has {}",
            topo.joint_count()
        )));
    }
    if topo.limb_count() == 0 {
        return Err(Error::Topology("skeleton has no limbs".into()));
    }
    if t < 2 {
        warn!("limb loss needs at least 2 frames, got {t}; returning 0");
        return Ok(Loss {
            value: 0.0,
            grad: Array3::zeros(pred.dim()),
        });
    }
    let raw = raw_limb_lengths(pred, topo);
    let tf = t as f64;
    let c = raw.sum() / tf;
    if c <= 0.0 {
        return Err(Error::Degenerate(
            "zero mean skeleton length: all joints coincide".into(),
        ));
    }
    let norm = &raw / c;
    let limbs = topo.limb_count();
    let inv_j = 1.0 / j as f64;
    let mut value = 0.0;
    // d loss / d normalized length
    let mut dn = norm.clone();
    for k in 0..limbs {
        let col = norm.column(k);
        let mean = col.sum() / tf;
        value += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tf;
        dn.column_mut(k).mapv_inplace(|v| 2.0 * inv_j * (v - mean) / tf);
    }
    value *= inv_j;
    // n = l / c with c = sum(l) / T, so
    // d/dl_sk = dn_sk / c - sum(dn * l) / (c^2 T).
    let coupling = (&dn * &raw).sum() / (c * c * tf);
    let dl = dn.mapv(|g| g / c - coupling);
    let mut grad = Array3::zeros(pred.dim());
    for ti in 0..t {
        for (k, (child, parent)) in topo.limbs().enumerate() {
            let len = raw[[ti, k]];
            if len == 0.0 {
                continue;
            }
            for d in 0..3 {
                let u = (pred[[ti, child, d]] - pred[[ti, parent, d]]) / len;
                grad[[ti, child, d]] += dl[[ti, k]] * u;
                grad[[ti, parent, d]] -= dl[[ti, k]] * u;
            }
        }
    }
    Ok(Loss { value, grad })
}

/// Mean absolute per-coordinate difference between prediction and
/// pseudo-labels.
pub fn loss_mpjp(pred: &ArrayView3<f64>, pseudo: &ArrayView3<f64>) -> Result<Loss> {
    check_same_shape(pred, pseudo)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad).and(pred).and(pseudo).for_each(|g, &p, &q| {
        let d = p - q;
        value += d.abs();
        *g = sign(d) / n;
    });
    Ok(Loss {
        value: value / n,
        grad,
    })
}

/// Least-squares scale `s` minimizing `|s * pred - pseudo|^2`.
pub fn scale_factor(pred: &ArrayView3<f64>, pseudo: &ArrayView3<f64>) -> Result<f64> {
    check_same_shape(pred, pseudo)?;
    let mut num = 0.0;
    let mut den = 0.0;
    Zip::from(pred).and(pseudo).for_each(|&p, &q| {
        num += p * q;
        den += p * p;
    });
    if den == 0.0 {
        return Err(Error::Degenerate("degenerate prediction: all coordinates are zero".into()));
    }
    Ok(num / den)
}

/// Scale-normalized position loss: [`loss_mpjp`] of `s * pred` where `s`
/// is [`scale_factor`].
pub fn loss_nmpjp(pred: &ArrayView3<f64>, pseudo: &ArrayView3<f64>) -> Result<Loss> {
    let s = scale_factor(pred, pseudo)?;
    let n = pred.len() as f64;
    let den = pred.iter().map(|p| p * p).sum::<f64>();
    let mut value = 0.0;
    // sum_k sign_k pred_k, needed for the gradient through s.
    let mut signed_pred = 0.0;
    let mut signs = Array3::zeros(pred.dim());
    Zip::from(&mut signs).and(pred).and(pseudo).for_each(|sg, &p, &q| {
        let d = s * p - q;
        value += d.abs();
        *sg = sign(d);
        signed_pred += *sg * p;
    });
    // ds/dp_i = (q_i - 2 s p_i) / den
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad)
        .and(&signs)
        .and(pred)
        .and(pseudo)
        .for_each(|g, &sg, &p, &q| {
            let ds = (q - 2.0 * s * p) / den;
            *g = (sg * s + signed_pred * ds) / n;
        });
    Ok(Loss {
        value: value / n,
        grad,
    })
}

/// Mean absolute difference between first temporal differences.
pub fn loss_vel(pred: &ArrayView3<f64>, pseudo: &ArrayView3<f64>) -> Result<Loss> {
    check_same_shape(pred, pseudo)?;
    let (t, j, c) = pred.dim();
    let mut grad = Array3::zeros(pred.dim());
    if t < 2 {
        warn!("velocity loss needs at least 2 frames, got {t}; returning 0");
        return Ok(Loss { value: 0.0, grad });
    }
    let n = ((t - 1) * j * c) as f64;
    let mut value = 0.0;
    for ti in 0..t - 1 {
        for ji in 0..j {
            for d in 0..c {
                let dv = (pred[[ti + 1, ji, d]] - pred[[ti, ji, d]])
                    - (pseudo[[ti + 1, ji, d]] - pseudo[[ti, ji, d]]);
                value += dv.abs();
                let g = sign(dv) / n;
                grad[[ti + 1, ji, d]] += g;
                grad[[ti, ji, d]] -= g;
            }
        }
    }
    Ok(Loss {
        value: value / n,
        grad,
    })
}

/// Weighted sum of the four test-time losses with every component.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub lim: f64,
    pub mpjp: f64,
    pub nmpjp: f64,
    pub vel: f64,
    pub grad: Array3<f64>,
}

pub fn total_loss(
    pred: &ArrayView3<f64>,
    pseudo: &ArrayView3<f64>,
    topo: &SkeletonTopology,
    w: &LossWeights,
) -> Result<TotalLoss> {
    let lim = loss_limb(pred, topo)?;
    let mpjp = loss_mpjp(pred, pseudo)?;
    let nmpjp = loss_nmpjp(pred, pseudo)?;
    let vel = loss_vel(pred, pseudo)?;
    let total = w.lim * lim.value + w.mpjp * mpjp.value + w.nmpjp * nmpjp.value + w.vel * vel.value;
    let mut grad = Array3::zeros(pred.dim());
    for (weight, part) in [(w.lim, &lim), (w.mpjp, &mpjp), (w.nmpjp, &nmpjp), (w.vel, &vel)] {
        if weight != 0.0 {
            grad.scaled_add(weight, &part.grad);
        }
    }
    Ok(TotalLoss {
        total,
        lim: lim.value,
        mpjp: mpjp.value,
        nmpjp: nmpjp.value,
        vel: vel.value,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{brute, central_difference, random_frames, rigid_motion};

    #[test]
    fn limb_loss_zero_on_rigid_motion() {
        let (seq, topo) = rigid_motion(24, 3);
        let l = loss_limb(&seq.view(), &topo).unwrap();
        assert!(l.value < 1e-10, "{}", l.value);
    }

    #[test]
    fn limb_loss_two_point_variance() {
        // Two joints, one limb, lengths 1 and 3 across two frames.
        let topo = SkeletonTopology::new(vec![None, Some(0)], None, vec![]).unwrap();
        let mut f = Array3::zeros((2, 2, 3));
        f[[0, 1, 0]] = 1.0;
        f[[1, 1, 1]] = 3.0;
        // c = (1 + 3) / 2 = 2; normalized a = 0.5, b = 1.5, m = 1.
        let var = ((0.5f64 - 1.0).powi(2) + (1.5f64 - 1.0).powi(2)) / 2.0;
        let l = loss_limb(&f.view(), &topo).unwrap();
        assert!((l.value - var / 2.0).abs() < 1e-15);
    }

    #[test]
    fn limb_loss_scale_invariant_and_short_input() {
        let topo = SkeletonTopology::h36m17();
        let f = random_frames(6, 17, 1);
        let a = loss_limb(&f.view(), &topo).unwrap().value;
        let b = loss_limb(&(&f * 3.0).view(), &topo).unwrap().value;
        assert!((a - b).abs() < 1e-12);
        let one = random_frames(1, 17, 2);
        assert_eq!(loss_limb(&one.view(), &topo).unwrap().value, 0.0);
    }

    #[test]
    fn mpjp_examples() {
        let p = random_frames(3, 4, 5);
        assert_eq!(loss_mpjp(&p.view(), &p.view()).unwrap().value, 0.0);
        let q = &p + 0.3;
        assert!((loss_mpjp(&q.view(), &p.view()).unwrap().value - 0.3).abs() < 1e-12);
        let r = random_frames(3, 5, 5);
        assert!(matches!(loss_mpjp(&p.view(), &r.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn scale_factor_examples() {
        let p = random_frames(3, 4, 6);
        assert_eq!(scale_factor(&p.view(), &p.view()).unwrap(), 1.0);
        let q = &p * 2.0;
        assert!((scale_factor(&p.view(), &q.view()).unwrap() - 2.0).abs() < 1e-12);
        let z = Array3::zeros((3, 4, 3));
        let err = scale_factor(&z.view(), &p.view()).unwrap_err();
        assert!(err.to_string().contains("degenerate prediction"));
    }

    #[test]
    fn scale_factor_matches_golden_section_minimizer() {
        for seed in 0..10 {
            let p = random_frames(3, 4, 100 + seed);
            let q = random_frames(3, 4, 200 + seed);
            let s = scale_factor(&p.view(), &q.view()).unwrap();
            let f = |s: f64| (&p * s - &q).mapv(|v| v * v).sum();
            let oracle = brute::golden_section(f, -10.0, 10.0, 1e-12);
            assert!((s - oracle).abs() < 1e-6, "{s} vs {oracle}");
        }
    }

    #[test]
    fn nmpjp_examples() {
        let p = random_frames(4, 5, 7);
        let q = &p * 1.7;
        assert!(loss_nmpjp(&p.view(), &q.view()).unwrap().value < 1e-12);
        let pseudo = random_frames(4, 5, 8);
        let base = loss_nmpjp(&p.view(), &pseudo.view()).unwrap().value;
        for beta in [0.1, 1.0, 10.0] {
            let v = loss_nmpjp(&(&p * beta).view(), &pseudo.view()).unwrap().value;
            assert!((v - base).abs() < 1e-8);
        }
        let s = brute::scale(&p, &pseudo);
        let composed = brute::mpjp(&(&p * s), &pseudo);
        assert!((base - composed).abs() < 1e-12);
    }

    #[test]
    fn vel_examples() {
        let p = random_frames(5, 3, 9);
        let q = &p + 0.25;
        assert!(loss_vel(&q.view(), &p.view()).unwrap().value < 1e-15);
        let still = Array3::from_shape_fn((4, 3, 3), |(_, j, d)| (j * 3 + d) as f64);
        let still2 = Array3::from_shape_fn((4, 3, 3), |(_, j, d)| (j + d) as f64 * 0.5);
        assert_eq!(loss_vel(&still.view(), &still2.view()).unwrap().value, 0.0);
        let one = random_frames(1, 3, 1);
        assert_eq!(loss_vel(&one.view(), &one.view()).unwrap().value, 0.0);
    }

    #[test]
    fn total_loss_composition() {
        let topo = SkeletonTopology::h36m17();
        let (rigid, _) = rigid_motion(8, 4);
        let t = total_loss(&rigid.view(), &rigid.view(), &topo, &LossWeights::default()).unwrap();
        assert!(t.total < 1e-8 && t.lim < 1e-10 && t.mpjp == 0.0 && t.nmpjp < 1e-12 && t.vel == 0.0);

        let p = random_frames(5, 17, 10);
        let q = random_frames(5, 17, 11);
        let zero = total_loss(&p.view(), &q.view(), &topo, &LossWeights::ZERO).unwrap();
        assert_eq!(zero.total, 0.0);
        assert!(zero.grad.iter().all(|&g| g == 0.0));

        let w = LossWeights::default();
        let t = total_loss(&p.view(), &q.view(), &topo, &w).unwrap();
        let hand = 200.0 * brute::limb(&p, &topo)
            + brute::mpjp(&p, &q)
            + 0.5 * brute::mpjp(&(&p * brute::scale(&p, &q)), &q)
            + 20.0 * brute::vel(&p, &q);
        assert!((t.total - hand).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_central_differences() {
        let topo = SkeletonTopology::h36m17();
        let p = random_frames(8, 17, 12);
        let q = random_frames(8, 17, 13);
        let checks: Vec<(&str, Box<dyn Fn(&Array3<f64>) -> Loss>)> = vec![
            ("lim", Box::new(|x: &Array3<f64>| loss_limb(&x.view(), &topo).unwrap())),
            ("mpjp", Box::new(|x: &Array3<f64>| loss_mpjp(&x.view(), &q.view()).unwrap())),
            ("nmpjp", Box::new(|x: &Array3<f64>| loss_nmpjp(&x.view(), &q.view()).unwrap())),
            ("vel", Box::new(|x: &Array3<f64>| loss_vel(&x.view(), &q.view()).unwrap())),
        ];
        for (name, f) in checks {
            let analytic = f(&p).grad;
            let numeric = central_difference(&p, 1e-5, |x| f(x).value);
            let err = crate::testutil::max_relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn weight_overrides() {
        let w = LossWeights::default().with_overrides("lim=1, vel=0").unwrap();
        assert_eq!(w.lim, 1.0);
        assert_eq!(w.vel, 0.0);
        assert_eq!(w.mpjp, 1.0);
        assert!(LossWeights::default().with_overrides("foo=1").is_err());
        assert!(LossWeights::default().with_overrides("lim=-1").is_err());
        assert!(LossWeights::default().with_overrides("lim").is_err());
    }
}
