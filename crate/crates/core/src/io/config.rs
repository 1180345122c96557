//! TOML run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::model::MotionPriorConfig;
use crate::occlusion::OcclusionSpec;
use crate::pretrain::{MaskSpec, NoiseSpec, PretrainConfig};
use crate::refine::{LossWeights, TttConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub frames: usize,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 64,
            frames: 48,
            fps: 25.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, every section's seed is derived from this one.
    pub seed: Option<u64>,
    /// Topology preset name or path to a topology file.
    pub topology: String,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub model: MotionPriorConfig,
    pub mask: MaskSpec,
    pub noise: NoiseSpec,
    pub pretrain: PretrainConfig,
    pub weights: LossWeights,
    pub ttt: TttConfig,
    pub occlusion: OcclusionSpec,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            topology: crate::skeleton::H36M17.into(),
            paths: Paths::default(),
            synth: SynthConfig::default(),
            model: MotionPriorConfig::default(),
            mask: MaskSpec::default(),
            noise: NoiseSpec::default(),
            pretrain: PretrainConfig::default(),
            weights: LossWeights::default(),
            ttt: TttConfig::default(),
            occlusion: OcclusionSpec::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.with_derived_seeds())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.frames == 0 || !(self.synth.fps > 0.0) {
            return Err(Error::Config("synth.frames and synth.fps must be positive".into()));
        }
        self.model.validate()?;
        self.mask.validate()?;
        self.noise.validate()?;
        self.pretrain.validate()?;
        self.weights.validate()?;
        self.ttt.validate()?;
        self.occlusion.validate()
    }

    /// Replaces the global seed and rederives the section seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.with_derived_seeds()
    }

    fn with_derived_seeds(mut self) -> Self {
        if let Some(s) = self.seed {
            self.mask.seed = s.wrapping_add(1);
            self.noise.seed = s.wrapping_add(2);
            self.pretrain.seed = s.wrapping_add(3);
            self.ttt.seed = s.wrapping_add(4);
            self.occlusion.seed = s.wrapping_add(5);
        }
        self
    }

    /// Seed for the synthetic-motion generator.
    pub fn synth_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.weights.lim, 200.0);
        assert_eq!(cfg.pretrain.epochs, 90);
    }

    #[test]
    fn partial_files_and_seeds() {
        let cfg = RunConfig::from_toml("seed = 7\n[model]\ndepth = 2\nfeature_dim = 64\nembed_dim = 64\n").unwrap();
        assert_eq!(cfg.model.depth, 2);
        assert_eq!(cfg.model.heads, 8);
        assert_eq!(cfg.mask.seed, 8);
        assert_eq!(cfg.clone().with_seed(7), cfg);
    }

    #[test]
    fn invariants_checked_at_load() {
        assert!(RunConfig::from_toml("[model]\nfeature_dim = 60\n").is_err());
        assert!(RunConfig::from_toml("[mask]\nframe_mask_ratio = 0.8\njoint_mask_ratio = 0.5\n").is_err());
        assert!(RunConfig::from_toml("[weights]\nlim = -1\n").is_err());
        assert!(RunConfig::from_toml("[ttt]\nlr_decay_per_epoch = 1.5\n").is_err());
        assert!(RunConfig::from_toml("[occlusion]\nspan_seconds = 5.0\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }
}
