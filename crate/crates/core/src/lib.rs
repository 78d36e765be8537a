//! Weakly supervised phonological-feature (PLF) bottleneck training and
//! utterance-level PLF features for intelligibility regression and pathology
//! classification.

pub mod corpus;
pub mod downstream;
pub mod error;
pub mod features;
pub mod phonology;
pub mod plfnet;
pub mod seeds;
pub mod signal;
pub mod synthcorpus;

pub use error::{Error, Result};
