//! Shared fixtures and brute-force oracles for unit tests.

use nalgebra::{Rotation3, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::skeleton::{SkeletonTopology, H36M_REST_OFFSETS};

pub fn random_frames(t: usize, j: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((t, j, 3), |_| rng.random_range(-1.0..1.0))
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Rotation3::new(axis * rng.random_range(0.0..3.0))
}

/// The h36m rest pose moved by a different rigid transform every frame.
pub fn rigid_motion(t: usize, seed: u64) -> (Array3<f64>, SkeletonTopology) {
    let topo = SkeletonTopology::h36m17();
    let mut rest = [[0.0; 3]; 17];
    for j in topo.topological_order() {
        if let Some(p) = topo.parent(j) {
            for d in 0..3 {
                rest[j][d] = rest[p][d] + H36M_REST_OFFSETS[j][d];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::zeros((t, 17, 3));
    for ti in 0..t {
        let r = random_rotation(&mut rng);
        let shift = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        for (j, p) in rest.iter().enumerate() {
            let q = r * Vector3::new(p[0], p[1], p[2]) + shift;
            for d in 0..3 {
                out[[ti, j, d]] = q[d];
            }
        }
    }
    (out, topo)
}

pub fn central_difference(x: &Array3<f64>, h: f64, f: impl Fn(&Array3<f64>) -> f64) -> Array3<f64> {
    let mut grad = Array3::zeros(x.dim());
    let mut probe = x.clone();
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        *g = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest elementwise error relative to the largest gradient magnitude.
pub fn max_relative_error(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(1e-12_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub mod brute {
    use super::*;

    pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > tol {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        (a + b) / 2.0
    }

    pub fn mpjp(p: &Array3<f64>, q: &Array3<f64>) -> f64 {
        let (t, j, c) = p.dim();
        let mut s = 0.0;
        for ti in 0..t {
            for ji in 0..j {
                for d in 0..c {
                    s += (p[[ti, ji, d]] - q[[ti, ji, d]]).abs();
                }
            }
        }
        s / (t * j * c) as f64
    }

    pub fn vel(p: &Array3<f64>, q: &Array3<f64>) -> f64 {
        let (t, j, c) = p.dim();
        let mut s = 0.0;
        for ti in 1..t {
            for ji in 0..j {
                for d in 0..c {
                    let vp = p[[ti, ji, d]] - p[[ti - 1, ji, d]];
                    let vq = q[[ti, ji, d]] - q[[ti - 1, ji, d]];
                    s += (vp - vq).abs();
                }
            }
        }
        s / ((t - 1) * j * c) as f64
    }

    pub fn scale(p: &Array3<f64>, q: &Array3<f64>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in p.iter().zip(q.iter()) {
            num += a * b;
            den += a * a;
        }
        num / den
    }

    pub fn limb(p: &Array3<f64>, topo: &SkeletonTopology) -> f64 {
        let t = p.dim().0;
        let limbs: Vec<(usize, usize)> = topo.limbs().collect();
        let mut len = vec![vec![0.0; limbs.len()]; t];
        let mut total = 0.0;
        for ti in 0..t {
            for (k, &(c, par)) in limbs.iter().enumerate() {
                let mut sq = 0.0;
                for d in 0..3 {
                    sq += (p[[ti, c, d]] - p[[ti, par, d]]).powi(2);
                }
                len[ti][k] = sq.sqrt();
                total += len[ti][k];
            }
        }
        let norm = total / t as f64;
        let mut sum = 0.0;
        for k in 0..limbs.len() {
            let mean: f64 = (0..t).map(|ti| len[ti][k] / norm).sum::<f64>() / t as f64;
            sum += (0..t).map(|ti| (len[ti][k] / norm - mean).powi(2)).sum::<f64>() / t as f64;
        }
        sum / topo.joint_count() as f64
    }
}
