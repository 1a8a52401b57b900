//! Clip containers shared by every module.
//!
//! Both pixel clips and latent clips are stored frame-major as
//! `frames × channels × height × width` in a flat row-major buffer.

use crate::error::{ensure_same_shape, Error, Result};

/// A single frame, `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "frame buffer has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

macro_rules! clip_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            frames: usize,
            channels: usize,
            height: usize,
            width: usize,
            data: Vec<f64>,
        }

        impl $name {
            pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
                Self {
                    frames,
                    channels,
                    height,
                    width,
                    data: vec![0.0; frames * channels * height * width],
                }
            }

            pub fn filled(
                frames: usize,
                channels: usize,
                height: usize,
                width: usize,
                value: f64,
            ) -> Self {
                Self {
                    frames,
                    channels,
                    height,
                    width,
                    data: vec![value; frames * channels * height * width],
                }
            }

            /// `[frames, channels, height, width]`
            pub fn shape(&self) -> [usize; 4] {
                [self.frames, self.channels, self.height, self.width]
            }

            pub fn frames(&self) -> usize {
                self.frames
            }

            pub fn channels(&self) -> usize {
                self.channels
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn into_data(self) -> Vec<f64> {
                self.data
            }

            /// Number of values in one frame.
            pub fn frame_len(&self) -> usize {
                self.channels * self.height * self.width
            }

            pub fn frame_data(&self, index: usize) -> &[f64] {
                let n = self.frame_len();
                &self.data[index * n..(index + 1) * n]
            }

            pub fn frame(&self, index: usize) -> Frame {
                Frame {
                    channels: self.channels,
                    height: self.height,
                    width: self.width,
                    data: self.frame_data(index).to_vec(),
                }
            }

            pub fn first_frame(&self) -> Frame {
                self.frame(0)
            }

            pub fn last_frame(&self) -> Frame {
                self.frame(self.frames - 1)
            }

            /// Frame order inverted; values untouched.
            pub fn reverse_time(&self) -> Self {
                let n = self.frame_len();
                let mut data = Vec::with_capacity(self.data.len());
                for chunk in self.data.chunks_exact(n).rev() {
                    data.extend_from_slice(chunk);
                }
                Self { data, ..*self }
            }

            pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
                ensure_same_shape(&self.shape(), &other.shape())
            }

            pub fn max_abs(&self) -> f64 {
                self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| v.is_finite())
            }
        }
    };
}

clip_type!(
    /// Pixel-space clip with values in `[0, 1]` and at least two frames.
    VideoTensor
);

clip_type!(
    /// Latent clip produced by the codec; values are unbounded but finite.
    LatentTensor
);

impl VideoTensor {
    pub fn from_vec(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if frames < 2 {
            return Err(Error::Dimension(format!("a video needs at least 2 frames, got {frames}")));
        }
        if data.len() != frames * channels * height * width {
            return Err(Error::Dimension(format!(
                "video buffer has {} values, expected {}",
                data.len(),
                frames * channels * height * width
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("video value {bad} is outside [0, 1]")));
        }
        Ok(Self { frames, channels, height, width, data })
    }

    /// Builds a clip from frames of identical shape.
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Dimension("no frames given".into()))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            ensure_same_shape(&f.shape(), &first.shape())?;
            data.extend_from_slice(&f.data);
        }
        Self::from_vec(frames.len(), first.channels, first.height, first.width, data)
    }
}

impl LatentTensor {
    pub fn from_vec(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::Dimension(format!(
                "latent buffer has {} values, expected {}",
                data.len(),
                frames * channels * height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent contains non-finite values".into()));
        }
        Ok(Self { frames, channels, height, width, data })
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame_data_mut(&mut self, index: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Same shape, new buffer. Panics if the length differs.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len(), "latent buffer length");
        Self { data, ..*self }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }
}
