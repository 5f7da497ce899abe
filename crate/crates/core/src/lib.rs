//! Color and texture time-series features with an LSTM classifier for face
//! presentation attack detection.
//!
//! The pipeline: frames are converted to HSV and Y'CbCr planes, each plane
//! contributes a color histogram and a rotation-invariant uniform LBP
//! histogram, `n` consecutive frame vectors form one sample, and a recurrent
//! classifier trained with RMSprop labels samples as bona fide or attack.
//! Per-video decisions come from a majority vote over the video's samples.

pub mod cache;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod lbp;
pub mod metrics;
pub mod nn;
pub mod pixel;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
