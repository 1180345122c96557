//! Pre-norm transformer block with spatial or temporal self-attention.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::autodiff::{AttentionLayout, AttentionShape, Tape, Var};
use crate::error::{Error, Result};

/// Parameter handles of one block on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub qkv_weight: Var,
    pub qkv_bias: Var,
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub fc1_weight: Var,
    pub fc1_bias: Var,
    pub fc2_weight: Var,
    pub fc2_bias: Var,
}

/// Suffixes of a block's parameters, in [`BlockVars`] field order.
pub(crate) const BLOCK_PARAMS: [&str; 12] = [
    "ln1.gain",
    "ln1.bias",
    "attn.qkv.weight",
    "attn.qkv.bias",
    "attn.proj.weight",
    "attn.proj.bias",
    "ln2.gain",
    "ln2.bias",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

impl BlockVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            ln1_gain: v[0],
            ln1_bias: v[1],
            qkv_weight: v[2],
            qkv_bias: v[3],
            proj_weight: v[4],
            proj_bias: v[5],
            ln2_gain: v[6],
            ln2_bias: v[7],
            fc1_weight: v[8],
            fc1_bias: v[9],
            fc2_weight: v[10],
            fc2_bias: v[11],
        }
    }
}

/// Shapes of a block's parameters for feature width `dim` and MLP width
/// `hidden`, in [`BLOCK_PARAMS`] order.
pub(crate) fn block_shapes(dim: usize, hidden: usize) -> [(usize, usize); 12] {
    [
        (1, dim),
        (1, dim),
        (dim, 3 * dim),
        (1, 3 * dim),
        (dim, dim),
        (1, dim),
        (1, dim),
        (1, dim),
        (dim, hidden),
        (1, hidden),
        (hidden, dim),
        (1, dim),
    ]
}

/// Dropout state for a training forward pass.
pub(crate) struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn apply_dropout<R: Rng>(tape: &mut Tape, x: Var, dropout: &mut Option<Dropout<'_, R>>) -> Var {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let (r, c) = tape.value(x).dim();
            let mask = Array2::from_shape_fn((r, c), |_| {
                if d.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            let m = tape.leaf(mask);
            tape.mul(x, m)
        }
        _ => x,
    }
}

/// `x + proj(attn(ln1(x)))` followed by `x + mlp(ln2(x))`. Returns the block
/// output and the attention node.
pub(crate) fn block_forward<R: Rng>(
    tape: &mut Tape,
    x: Var,
    w: &BlockVars,
    shape: AttentionShape,
    dropout: &mut Option<Dropout<'_, R>>,
) -> (Var, Var) {
    let y = tape.layer_norm(x, w.ln1_gain, w.ln1_bias);
    let qkv = tape.linear(y, w.qkv_weight, w.qkv_bias);
    let attn = tape.attention(qkv, shape);
    let proj = tape.linear(attn, w.proj_weight, w.proj_bias);
    let proj = apply_dropout(tape, proj, dropout);
    let x = tape.add(x, proj);
    let y = tape.layer_norm(x, w.ln2_gain, w.ln2_bias);
    let h = tape.linear(y, w.fc1_weight, w.fc1_bias);
    let h = tape.gelu(h);
    let h = tape.linear(h, w.fc2_weight, w.fc2_bias);
    let h = apply_dropout(tape, h, dropout);
    (tape.add(x, h), attn)
}

/// Weights of one attention block, owned.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub heads: usize,
    /// Tensors in the order `ln1.gain, ln1.bias, attn.qkv.weight,
    /// attn.qkv.bias, attn.proj.weight, attn.proj.bias, ln2.gain, ln2.bias,
    /// mlp.fc1.weight, mlp.fc1.bias, mlp.fc2.weight, mlp.fc2.bias`.
    pub tensors: Vec<Array2<f64>>,
}

impl BlockWeights {
    pub fn feature_dim(&self) -> usize {
        self.tensors[0].ncols()
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        BLOCK_PARAMS
            .iter()
            .position(|&n| n == name)
            .map(|i| &self.tensors[i])
    }

    fn validate(&self) -> Result<()> {
        if self.tensors.len() != BLOCK_PARAMS.len() {
            return Err(Error::Shape(format!(
                "a block needs {} tensors, got {}",
                BLOCK_PARAMS.len(),
                self.tensors.len()
            )));
        }
        let dim = self.feature_dim();
        let hidden = self.tensors[8].ncols();
        if self.heads == 0 || dim % self.heads != 0 {
            return Err(Error::Shape(format!("feature dim {dim} does not split into {} heads", self.heads)));
        }
        for ((t, want), name) in self.tensors.iter().zip(block_shapes(dim, hidden)).zip(BLOCK_PARAMS) {
            if t.dim() != want {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected {want:?}", t.dim())));
            }
        }
        Ok(())
    }
}

/// Output of a standalone attention block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub features: Array3<f64>,
    /// Attention probabilities, `[group][head][query][key]`.
    pub attention: Vec<f64>,
}

fn run_block(features: &Array3<f64>, weights: &BlockWeights, layout: AttentionLayout) -> Result<BlockOutput> {
    weights.validate()?;
    let (t, j, c) = features.dim();
    if c != weights.feature_dim() {
        return Err(Error::Shape(format!(
            "features have width {c}, block expects {}",
            weights.feature_dim()
        )));
    }
    if t == 0 || j == 0 {
        return Err(Error::Shape("features must have at least one frame and joint".into()));
    }
    let mut tape = Tape::new();
    let flat = features
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t * j, c))
        .expect("contiguous");
    let x = tape.leaf(flat);
    let vars: Vec<Var> = weights.tensors.iter().map(|w| tape.leaf(w.clone())).collect();
    let shape = AttentionShape {
        frames: t,
        joints: j,
        heads: weights.heads,
        layout,
    };
    let (out, attn) = block_forward::<rand_chacha::ChaCha8Rng>(
        &mut tape,
        x,
        &BlockVars::from_slice(&vars),
        shape,
        &mut None,
    );
    Ok(BlockOutput {
        features: tape
            .value(out)
            .clone()
            .into_shape_with_order((t, j, c))
            .expect("shape preserved"),
        attention: tape.attention_probs(attn).expect("attention node").to_vec(),
    })
}

/// Spatial block: per frame, self-attention across the joint tokens.
pub fn spatial_attention(features: &Array3<f64>, weights: &BlockWeights) -> Result<BlockOutput> {
    run_block(features, weights, AttentionLayout::Spatial)
}

/// Temporal block: per joint, self-attention across the frame tokens.
pub fn temporal_attention(features: &Array3<f64>, weights: &BlockWeights) -> Result<BlockOutput> {
    run_block(features, weights, AttentionLayout::Temporal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_block(dim: usize, hidden: usize, heads: usize, seed: u64) -> BlockWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = block_shapes(dim, hidden)
            .iter()
            .map(|&s| Array2::from_shape_fn(s, |_| rng.random_range(-0.5..0.5)))
            .collect();
        BlockWeights { heads, tensors }
    }

    fn random_features(t: usize, j: usize, c: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((t, j, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rows_sum_to_one() {
        let w = random_block(8, 16, 2, 1);
        let f = random_features(3, 5, 8, 2);
        for out in [spatial_attention(&f, &w).unwrap(), temporal_attention(&f, &w).unwrap()] {
            assert_eq!(out.features.dim(), (3, 5, 8));
            let n = if out.attention.len() == 3 * 2 * 25 { 5 } else { 3 };
            for row in out.attention.chunks(n) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_joint_spatial_attention_is_trivial() {
        let w = random_block(8, 16, 2, 3);
        let f = random_features(4, 1, 8, 4);
        let out = spatial_attention(&f, &w).unwrap();
        assert!(out.attention.iter().all(|&p| p == 1.0));
        // With a single token the block output depends on each frame alone.
        let alone = spatial_attention(&f.slice(ndarray::s![1..2, .., ..]).to_owned(), &w).unwrap();
        for (a, b) in out.features.index_axis(Axis(0), 1).iter().zip(alone.features.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_temporal_attention_is_trivial() {
        let w = random_block(8, 16, 4, 5);
        let f = random_features(1, 6, 8, 6);
        let out = temporal_attention(&f, &w).unwrap();
        assert!(out.attention.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn spatial_block_is_joint_permutation_equivariant() {
        let w = random_block(8, 16, 2, 7);
        let f = random_features(2, 4, 8, 8);
        let perm = [2, 0, 3, 1];
        let permuted = Array3::from_shape_fn(f.dim(), |(t, j, c)| f[[t, perm[j], c]]);
        let a = spatial_attention(&f, &w).unwrap().features;
        let b = spatial_attention(&permuted, &w).unwrap().features;
        for t in 0..2 {
            for j in 0..4 {
                for c in 0..8 {
                    assert!((b[[t, j, c]] - a[[t, perm[j], c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn temporal_block_is_time_reversal_equivariant() {
        let w = random_block(8, 16, 2, 9);
        let f = random_features(4, 3, 8, 10);
        let mut rev = f.clone();
        rev.invert_axis(Axis(0));
        let a = temporal_attention(&f, &w).unwrap().features;
        let mut b = temporal_attention(&rev, &w).unwrap().features;
        b.invert_axis(Axis(0));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let w = random_block(8, 16, 2, 11);
        assert!(spatial_attention(&random_features(2, 3, 6, 12), &w).is_err());
        let mut bad = w.clone();
        bad.tensors.pop();
        assert!(temporal_attention(&random_features(2, 3, 8, 12), &bad).is_err());
    }
}
