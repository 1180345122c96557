//! Branch-free `exp` that the compiler can vectorize over slices.
//!
//! `exp(x) = 2^n * exp(r)` with `n = round(x / ln 2)` and `|r| <= ln(2) / 2`;
//! `exp(r)` is a degree-13 Taylor polynomial, accurate to a few ulp.

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const LOG2E: f64 = std::f64::consts::LOG2_E;
const ROUNDER: f64 = 6_755_399_441_055_744.0;

// 1/k! for k = 13 down to 0.
const COEFFS: [f64; 14] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
    1.0,
    1.0,
];

#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    let shifted = x * LOG2E + ROUNDER;
    let n = shifted - ROUNDER;
    let ni = (shifted.to_bits() as i64).wrapping_sub(ROUNDER.to_bits() as i64);
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = COEFFS[0];
    for &c in &COEFFS[1..] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((ni + 1023) as u64) << 52);
    p * scale
}

/// `tanh` through `exp`, with absolute error near machine precision.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let e = exp(-2.0 * x.abs());
    let t = (1.0 - e) / (1.0 + e);
    t.copysign(x)
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

pub fn exp_inplace(values: &mut [f64]) {
    for v in values {
        *v = exp(*v);
    }
}
