// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod config;
pub mod dynamics;
pub mod eq;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod fixtures;
pub mod levels;
pub mod loudness;
pub mod panning;
pub mod par;
pub mod pipeline;
pub mod reverb;
pub mod stft;
pub mod wav;

pub use audio::{StemSet, StemType, StereoWaveform};
pub use error::{Error, Result};
