//! Gap filling, self-supervised losses and test-time adaptation.

mod fill;
pub mod losses;
mod ttt;

pub use fill::linear_fill;
pub use losses::{loss_limb, loss_mpjp, loss_nmpjp, loss_vel, scale_factor, total_loss, Loss, LossWeights, TotalLoss};
pub use ttt::{forward_windowed, ttt_refine, Refinement, TttConfig, TttEpoch};
