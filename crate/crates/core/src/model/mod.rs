//! Dual-stream spatio-temporal transformer motion prior.
//!
//! Each depth level runs two streams on the same input features: stream A
//! applies a spatial block then a temporal block, stream B the reverse. The
//! streams are merged per element by a learned sigmoid gate
//! `alpha * A + (1 - alpha) * B` with `alpha = sigmoid(W [A; B] + b)`.
//! Coordinates enter through a linear embedding plus learned spatial and
//! temporal position tables, and leave through a final LayerNorm and a linear
//! regression head. There is no residual path from input coordinates to the
//! output, so fully masked frames can be overwritten.

mod block;
pub mod checkpoint;
mod config;

use std::collections::HashMap;

use ndarray::{Array2, Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use block::{spatial_attention, temporal_attention, BlockOutput, BlockWeights};
pub use config::MotionPriorConfig;

use crate::autodiff::{AttentionLayout, AttentionShape, Tape, Var};
use crate::error::{Error, Result};
use crate::skeleton::PoseSequence;
use block::{block_forward, block_shapes, BlockVars, Dropout, BLOCK_PARAMS};

const INIT_STD: f64 = 0.02;

/// Named parameter tensors, in a fixed order determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn from_pairs(pairs: Vec<(String, Array2<f64>)>) -> Self {
        let index = pairs.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        let (names, values) = pairs.into_iter().unzip();
        Self { names, values, index }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Gradients of a scalar loss w.r.t. every parameter, aligned with
/// [`ParamSet::values`].
pub type ParamGrads = Vec<Array2<f64>>;

/// How parameters are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitKind {
    Normal,
    Zeros,
    Ones,
}

/// Parameter names, shapes and init kinds for a config and joint count.
fn layout(config: &MotionPriorConfig, joints: usize) -> Vec<(String, (usize, usize), InitKind)> {
    use InitKind::*;
    let e = config.embed_dim;
    let d = config.feature_dim;
    let c = MotionPriorConfig::INPUT_CHANNELS;
    let mut out = vec![
        ("embed.weight".to_string(), (c, e), Normal),
        ("embed.bias".to_string(), (1, e), Zeros),
        ("mask_token".to_string(), (1, e), Normal),
        ("pos.spatial".to_string(), (joints, e), Normal),
        ("pos.temporal".to_string(), (config.max_frames, e), Normal),
    ];
    if e != d {
        out.push(("proj_in.weight".to_string(), (e, d), Normal));
        out.push(("proj_in.bias".to_string(), (1, d), Zeros));
    }
    let shapes = block_shapes(d, config.hidden_dim());
    for level in 0..config.depth {
        for (stream, kinds) in [("a", ["spatial", "temporal"]), ("b", ["temporal", "spatial"])] {
            for kind in kinds {
                for (suffix, shape) in BLOCK_PARAMS.iter().zip(shapes) {
                    let init = if suffix.ends_with("gain") {
                        Ones
                    } else if suffix.ends_with("bias") {
                        Zeros
                    } else {
                        Normal
                    };
                    out.push((format!("blocks.{level}.{stream}.{kind}.{suffix}"), shape, init));
                }
            }
        }
        out.push((format!("fusion.{level}.weight"), (2 * d, d), Normal));
        out.push((format!("fusion.{level}.bias"), (1, d), Zeros));
    }
    out.push(("norm.gain".to_string(), (1, d), Ones));
    out.push(("norm.bias".to_string(), (1, d), Zeros));
    out.push(("head.weight".to_string(), (d, c), Normal));
    out.push(("head.bias".to_string(), (1, c), Zeros));
    out
}

/// Normal samples with standard deviation `std`, redrawn outside two
/// standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_fn(shape, |_| loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Tape handles produced by one forward pass.
pub struct ForwardTrace {
    pub tape: Tape,
    /// One variable per parameter, in [`ParamSet`] order.
    pub params: Vec<Var>,
    /// `(T*J) x 3` regressed coordinates.
    pub output: Var,
    /// Fusion gates, one per depth level, each `(T*J) x feature_dim`.
    pub fusion_gates: Vec<Var>,
    /// Attention nodes in execution order.
    pub attention: Vec<Var>,
    pub frames: usize,
    pub joints: usize,
    /// Centroid of the visible input, removed before embedding and added back
    /// to the regressed coordinates.
    pub center: [f64; 3],
}

impl ForwardTrace {
    pub fn output_frames(&self) -> Array3<f64> {
        self.tape
            .value(self.output)
            .clone()
            .into_shape_with_order((self.frames, self.joints, 3))
            .expect("output has T*J rows")
            + &ndarray::aview1(&self.center)
    }

    /// Back-propagates `d loss / d output` (a `T x J x 3` array) to every
    /// parameter.
    pub fn param_grads(&self, upstream: &Array3<f64>) -> ParamGrads {
        let seed = upstream
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.frames * self.joints, 3))
            .expect("upstream gradient has output shape");
        let mut grads = self.tape.backward(self.output, seed);
        self.params
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Array2::zeros(self.tape.value(v).dim()))
            })
            .collect()
    }
}

/// The motion prior network.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrior {
    config: MotionPriorConfig,
    joints: usize,
    params: ParamSet,
}

impl MotionPrior {
    /// A freshly initialised model for skeletons with `joints` joints.
    pub fn new(config: MotionPriorConfig, joints: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if joints == 0 {
            return Err(Error::Config("joint count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = layout(&config, joints)
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match init {
                    InitKind::Normal => truncated_normal(&mut rng, shape, INIT_STD),
                    InitKind::Zeros => Array2::zeros(shape),
                    InitKind::Ones => Array2::ones(shape),
                };
                (name, value)
            })
            .collect();
        Ok(Self {
            config,
            joints,
            params: ParamSet::from_pairs(pairs),
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_params(
        config: MotionPriorConfig,
        joints: usize,
        tensors: Vec<(String, Array2<f64>)>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, joints);
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), (got_name, value)) in expected.iter().zip(&tensors) {
            if name != got_name || *shape != value.dim() {
                return Err(Error::Format(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    value.dim()
                )));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("parameter {name} has non-finite entries")));
            }
        }
        Ok(Self {
            config,
            joints,
            params: ParamSet::from_pairs(tensors),
        })
    }

    pub fn config(&self) -> &MotionPriorConfig {
        &self.config
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Weights of one attention block, e.g. `block_weights(0, 'a', Spatial)`.
    pub fn block_weights(&self, level: usize, stream: char, layout: AttentionLayout) -> Option<BlockWeights> {
        let kind = match layout {
            AttentionLayout::Spatial => "spatial",
            AttentionLayout::Temporal => "temporal",
        };
        let tensors = BLOCK_PARAMS
            .iter()
            .map(|s| self.params.get(&format!("blocks.{level}.{stream}.{kind}.{s}")).cloned())
            .collect::<Option<Vec<_>>>()?;
        Some(BlockWeights {
            heads: self.config.heads,
            tensors,
        })
    }

    fn check_input(&self, frames: &ArrayView3<f64>, mask: Option<&Array2<bool>>) -> Result<()> {
        let (t, j, c) = frames.dim();
        if c != MotionPriorConfig::INPUT_CHANNELS {
            return Err(Error::Shape(format!("expected 3 coordinates per joint, got {c}")));
        }
        if j != self.joints {
            return Err(Error::Shape(format!(
                "input has {j} joints, model was built for {}",
                self.joints
            )));
        }
        if t == 0 {
            return Err(Error::Shape("input has no frames".into()));
        }
        if t > self.config.max_frames {
            return Err(Error::TooLong {
                frames: t,
                max: self.config.max_frames,
            });
        }
        if let Some(m) = mask {
            if m.dim() != (t, j) {
                return Err(Error::Shape(format!(
                    "mask is {:?}, input is {:?}",
                    m.dim(),
                    (t, j)
                )));
            }
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite input coordinate".into()));
        }
        Ok(())
    }

    /// Records a forward pass on a fresh tape. `mask` flags cells whose
    /// coordinates were zeroed by masking; they receive the mask embedding.
    /// Dropout is active only when `rng` is given and the rate is positive.
    pub fn trace(
        &self,
        frames: &ArrayView3<f64>,
        mask: Option<&Array2<bool>>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardTrace> {
        self.check_input(frames, mask)?;
        let (t, j, _) = frames.dim();
        let n = t * j;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.values.iter().map(|v| tape.leaf(v.clone())).collect();
        let p = |name: &str| params[self.params.index[name]];
        let mut dropout = rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });

        let center = visible_centroid(frames, mask);
        let input = tape.leaf(
            (frames.to_owned() - &ndarray::aview1(&center))
                .into_shape_with_order((n, 3))
                .expect("contiguous"),
        );
        let mut h = tape.linear(input, p("embed.weight"), p("embed.bias"));
        if let Some(m) = mask {
            h = tape.masked_add_row(h, p("mask_token"), m.iter().copied().collect());
        }
        let spatial = tape.gather_rows(p("pos.spatial"), (0..n).map(|r| r % j).collect());
        let temporal = tape.gather_rows(p("pos.temporal"), (0..n).map(|r| r / j).collect());
        h = tape.add(h, spatial);
        h = tape.add(h, temporal);
        if self.config.embed_dim != self.config.feature_dim {
            h = tape.linear(h, p("proj_in.weight"), p("proj_in.bias"));
        }

        let shape = |layout| AttentionShape {
            frames: t,
            joints: j,
            heads: self.config.heads,
            layout,
        };
        let block_vars = |level: usize, stream: &str, kind: &str| {
            let vars: Vec<Var> = BLOCK_PARAMS
                .iter()
                .map(|s| p(&format!("blocks.{level}.{stream}.{kind}.{s}")))
                .collect();
            BlockVars::from_slice(&vars)
        };
        let mut fusion_gates = Vec::with_capacity(self.config.depth);
        let mut attention = Vec::with_capacity(4 * self.config.depth);
        for level in 0..self.config.depth {
            use AttentionLayout::{Spatial, Temporal};
            let (a, att) = block_forward(&mut tape, h, &block_vars(level, "a", "spatial"), shape(Spatial), &mut dropout);
            attention.push(att);
            let (a, att) = block_forward(&mut tape, a, &block_vars(level, "a", "temporal"), shape(Temporal), &mut dropout);
            attention.push(att);
            let (b, att) = block_forward(&mut tape, h, &block_vars(level, "b", "temporal"), shape(Temporal), &mut dropout);
            attention.push(att);
            let (b, att) = block_forward(&mut tape, b, &block_vars(level, "b", "spatial"), shape(Spatial), &mut dropout);
            attention.push(att);

            let both = tape.concat_cols(a, b);
            let logits = tape.linear(
                both,
                p(&format!("fusion.{level}.weight")),
                p(&format!("fusion.{level}.bias")),
            );
            let alpha = tape.sigmoid(logits);
            let diff = tape.sub(a, b);
            let gated = tape.mul(alpha, diff);
            h = tape.add(b, gated);
            fusion_gates.push(alpha);
        }
        let h = tape.layer_norm(h, p("norm.gain"), p("norm.bias"));
        let output = tape.linear(h, p("head.weight"), p("head.bias"));
        Ok(ForwardTrace {
            tape,
            params,
            output,
            fusion_gates,
            attention,
            frames: t,
            joints: j,
            center,
        })
    }

    /// Refines a dense `T x J x 3` array.
    pub fn forward_frames(&self, frames: &ArrayView3<f64>, mask: Option<&Array2<bool>>) -> Result<Array3<f64>> {
        Ok(self.trace(frames, mask, None)?.output_frames())
    }

    /// Refines a fully valid sequence. Gaps must be filled beforehand.
    pub fn forward(&self, noisy: &PoseSequence) -> Result<PoseSequence> {
        if !noisy.is_fully_valid() {
            return Err(Error::Config(
                "the motion prior needs a dense sequence; fill invalid frames first".into(),
            ));
        }
        let out = self.forward_frames(&noisy.frames().view(), None)?;
        noisy.with_frames(out)
    }

    /// Refines several sequences independently.
    pub fn forward_batch(&self, batch: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
        batch.iter().map(|s| self.forward(s)).collect()
    }

    /// Loss value and parameter gradients for one input. `loss` maps the
    /// model output to a scalar and its gradient w.r.t. that output.
    pub fn loss_and_grads<F>(
        &self,
        frames: &ArrayView3<f64>,
        mask: Option<&Array2<bool>>,
        rng: Option<&mut ChaCha8Rng>,
        loss: F,
    ) -> Result<(f64, Array3<f64>, ParamGrads)>
    where
        F: FnOnce(&Array3<f64>) -> Result<(f64, Array3<f64>)>,
    {
        let trace = self.trace(frames, mask, rng)?;
        let out = trace.output_frames();
        let (value, upstream) = loss(&out)?;
        let grads = trace.param_grads(&upstream);
        Ok((value, out, grads))
    }
}

/// Mean position over the cells not covered by `mask`; zero when every cell
/// is masked.
fn visible_centroid(frames: &ArrayView3<f64>, mask: Option<&Array2<bool>>) -> [f64; 3] {
    let (t, j, _) = frames.dim();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for ti in 0..t {
        for k in 0..j {
            if mask.is_some_and(|m| m[[ti, k]]) {
                continue;
            }
            for (d, acc) in sum.iter_mut().enumerate() {
                *acc += frames[[ti, k, d]];
            }
            n += 1;
        }
    }
    if n == 0 {
        return [0.0; 3];
    }
    sum.map(|v| v / n as f64)
}

/// Independent generator for item `index` of stream `stream` in a run seeded
/// by `seed`.
pub(crate) fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 40) | (index & ((1 << 40) - 1)));
    rng
}
