//! The trainable PLF network: conv front end, PLF bottleneck, phone scoring
//! through the conversion matrix, the three training paths and the training
//! loop.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod params;
pub mod scoring;
pub mod train;

pub use checkpoint::{extract_plf, Checkpoint, PhoneScores, PlfLogits};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{LossBreakdown, PathWeights};
pub use params::{ConvLayer, FrontEndConfig, PlfNetParams};
pub use scoring::{compress, grouped_posterior, phone_scores, plf_posterior, Calibration, PhoneScorer};
pub use train::{evaluate, train, write_training_log, EpochLog, EvalReport, TrainConfig};
