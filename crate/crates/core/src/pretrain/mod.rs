//! Masked-reconstruction pretraining of the motion prior.

mod corrupt;
mod loss;
mod synth;
mod train;

pub use corrupt::{mask_sequence, sample_smooth_noise, MaskSpec, NoiseSpec};
pub use loss::{pretrain_loss, PretrainLoss};
pub use synth::{generate_synthetic_motion, generate_synthetic_motion_with, SynthOptions};
pub use train::{run_pretraining, run_pretraining_with, PretrainConfig, PretrainEpoch};
