//! Direction-conditioned velocity network.
//!
//! A compact spatiotemporal transformer: latent frames plus endpoint
//! channels are patchified into tokens, every token attends to every other
//! token, then cross-attends to the condition sequence whose first row is the
//! directional token.

mod checkpoint;
mod condition;
mod gradcheck;
mod lora;
mod net;
pub(crate) mod ops;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint_records, save_checkpoint, Checkpoint,
    CheckpointRecord, CHECKPOINT_MAGIC,
};
pub use condition::{build_condition, build_condition_with, ConditionSequence, TokenSource};
pub use gradcheck::{gradient_check, gradient_check_at, GradCheckReport, Probe};
pub use lora::{inject_adapters, AdaptedParameters, Adapter};
pub use net::{
    backward_velocity_batch, forward_velocity, forward_velocity_batch, ForwardCache, ModelRef, VelocityInput,
};
pub use params::{Gradients, ParamSet, ParamTensor, Parameters};

/// Temporal orientation of a generation or training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Direction::Forward),
            "backward" | "bwd" => Ok(Direction::Backward),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// Architecture hyperparameters. Every tensor shape derives from these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub patch: usize,
    pub d_hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Longest latent clip the temporal position table covers.
    pub max_frames: usize,
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 1,
            latent_height: 8,
            latent_width: 8,
            patch: 2,
            d_hidden: 64,
            blocks: 4,
            heads: 4,
            mlp_hidden: 256,
            max_frames: 17,
            vocab: crate::data::VOCAB_SIZE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.patch == 0
            || !self.latent_height.is_multiple_of(self.patch)
            || !self.latent_width.is_multiple_of(self.patch)
        {
            return bad(format!(
                "latent {}×{} is not divisible by patch {}",
                self.latent_height, self.latent_width, self.patch
            ));
        }
        if self.heads == 0 || !self.d_hidden.is_multiple_of(self.heads) {
            return bad(format!("d_hidden {} not divisible by {} heads", self.d_hidden, self.heads));
        }
        if !self.d_hidden.is_multiple_of(2) {
            return bad("d_hidden must be even".into());
        }
        if self.latent_channels == 0 || self.blocks == 0 || self.max_frames < 2 || self.mlp_hidden == 0 {
            return bad("channels, blocks, mlp width must be ≥ 1 and max_frames ≥ 2".into());
        }
        Ok(())
    }

    /// Tokens contributed by one latent frame.
    pub fn tokens_per_frame(&self) -> usize {
        (self.latent_height / self.patch) * (self.latent_width / self.patch)
    }

    /// Input channels after appending start, end and mask planes.
    pub fn input_channels(&self) -> usize {
        3 * self.latent_channels + 1
    }

    pub fn patch_in(&self) -> usize {
        self.input_channels() * self.patch * self.patch
    }

    pub fn patch_out(&self) -> usize {
        self.latent_channels * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.d_hidden / self.heads
    }

    /// Parameter census derived from the configuration alone.
    pub fn param_count(&self) -> usize {
        let d = self.d_hidden;
        let linear = |i: usize, o: usize| i * o + o;
        let embeddings = self.vocab * d + 2 * d + self.tokens_per_frame() * d + self.max_frames * d;
        let stem = linear(self.patch_in(), d) + 2 * linear(d, d);
        let block = 3 * 2 * d + 8 * linear(d, d) + linear(d, self.mlp_hidden) + linear(self.mlp_hidden, d);
        let head = 2 * d + linear(d, self.patch_out());
        embeddings + stem + self.blocks * block + head
    }

    /// Names of every matrix that can carry a low-rank adapter.
    pub fn adapter_targets(&self) -> Vec<String> {
        let mut out = Vec::new();
        for b in 0..self.blocks {
            for kind in ["attn", "xattn"] {
                for proj in ["q", "k", "v", "o"] {
                    out.push(format!("blocks.{b}.{kind}.{proj}"));
                }
            }
        }
        out
    }
}
