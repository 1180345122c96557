//! File formats and configuration.

pub mod config;
pub mod pseq;

pub use config::RunConfig;
pub use pseq::{read_pseq, read_pseq_document, write_pseq, write_pseq_document, FrameEncoding, PseqDocument};
