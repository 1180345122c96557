use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of the dual-stream motion prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionPriorConfig {
    pub depth: usize,
    pub heads: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub max_frames: usize,
    pub mlp_ratio: f64,
    pub dropout: f64,
}

impl Default for MotionPriorConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            heads: 8,
            feature_dim: 512,
            embed_dim: 512,
            max_frames: 243,
            mlp_ratio: 4.0,
            dropout: 0.0,
        }
    }
}

impl MotionPriorConfig {
    /// Coordinates per joint fed to the embedding.
    pub const INPUT_CHANNELS: usize = 3;

    /// A small configuration for desk-scale runs.
    pub fn small(depth: usize, dim: usize, max_frames: usize) -> Self {
        Self {
            depth,
            heads: 8,
            feature_dim: dim,
            embed_dim: dim,
            max_frames,
            mlp_ratio: 4.0,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.heads == 0 || self.feature_dim == 0 || self.embed_dim == 0 {
            return fail("depth, heads, feature_dim and embed_dim must be positive".into());
        }
        if self.feature_dim % self.heads != 0 {
            return fail(format!(
                "feature_dim {} is not divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if self.max_frames == 0 {
            return fail("max_frames must be at least 1".into());
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return fail(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        if self.hidden_dim() == 0 {
            return fail("mlp_ratio * feature_dim rounds to zero".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        (self.feature_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }
}
