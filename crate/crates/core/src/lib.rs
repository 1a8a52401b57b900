//! Bidirectional cycle-consistent rectified-flow frame interpolation on toy
//! video.
//!
//! A direction-conditioned velocity network learns to interpolate between
//! two endpoint frames both forward and backward in time, with a
//! short-then-long curriculum over multi-rate clips.

pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod flowmatch;
pub mod format;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use codec::Codec;
pub use error::{Error, Result};
pub use model::{AdaptedParameters, Direction, Gradients, ModelConfig, ModelRef, ParamSet, Parameters};
pub use tensor::{Frame, LatentTensor, VideoTensor};
