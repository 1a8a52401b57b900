//! Deterministic toy autoencoder: 2×2 average-pool encode, nearest-neighbour
//! decode.
//!
//! With a temporal factor `k > 1` the first frame is coded alone and the
//! remaining frames in groups of `k`, so a clip of `L = 1 + (l - 1)·k` frames
//! maps to `l` latent frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Frame, LatentTensor, VideoTensor};

/// Spatial downsampling factor of the codec.
pub const SPATIAL_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub temporal_factor: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { temporal_factor: 1 }
    }
}

impl Codec {
    pub fn new(temporal_factor: usize) -> Result<Self> {
        if temporal_factor == 0 {
            return Err(Error::InvalidArgument("temporal factor must be ≥ 1".into()));
        }
        Ok(Self { temporal_factor })
    }

    pub fn latent_frames(&self, frames: usize) -> Result<usize> {
        let k = self.temporal_factor;
        if frames == 0 || !(frames - 1).is_multiple_of(k) {
            return Err(Error::Dimension(format!("{frames} frames is not 1 + multiple of temporal factor {k}")));
        }
        Ok(1 + (frames - 1) / k)
    }

    pub fn pixel_frames(&self, latent_frames: usize) -> usize {
        1 + latent_frames.saturating_sub(1) * self.temporal_factor
    }

    /// Pixel frames `[start, end)` that make up latent frame `j`.
    fn group(&self, j: usize) -> (usize, usize) {
        if j == 0 {
            (0, 1)
        } else {
            let start = 1 + (j - 1) * self.temporal_factor;
            (start, start + self.temporal_factor)
        }
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<LatentTensor> {
        let [frames, c, h, w] = video.shape();
        let (lh, lw) = latent_hw(h, w)?;
        let l = self.latent_frames(frames)?;
        let mut out = Vec::with_capacity(l * c * lh * lw);
        for j in 0..l {
            let (start, end) = self.group(j);
            let scale = 1.0 / ((end - start) * SPATIAL_FACTOR * SPATIAL_FACTOR) as f64;
            for ch in 0..c {
                for y in 0..lh {
                    for x in 0..lw {
                        let mut acc = 0.0;
                        for f in start..end {
                            let plane = &video.frame_data(f)[ch * h * w..(ch + 1) * h * w];
                            // pairwise sums keep block-constant input exact
                            acc += (plane[2 * y * w + 2 * x] + plane[2 * y * w + 2 * x + 1])
                                + (plane[(2 * y + 1) * w + 2 * x] + plane[(2 * y + 1) * w + 2 * x + 1]);
                        }
                        out.push(acc * scale);
                    }
                }
            }
        }
        LatentTensor::from_vec(l, c, lh, lw, out)
    }

    /// Decoded pixels without clamping, as a flat `frames × c × H × W` buffer.
    /// This is the differentiable path used by the pixel loss.
    pub fn decode_unclamped(&self, latent: &LatentTensor) -> (Vec<f64>, [usize; 4]) {
        let [l, c, lh, lw] = latent.shape();
        let (h, w) = (lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR);
        let frames = self.pixel_frames(l);
        let mut out = vec![0.0; frames * c * h * w];
        for j in 0..l {
            let (start, end) = self.group(j);
            let src = latent.frame_data(j);
            for f in start..end {
                let dst = &mut out[f * c * h * w..(f + 1) * c * h * w];
                upsample_into(src, c, lh, lw, dst);
            }
        }
        (out, [frames, c, h, w])
    }

    /// Adjoint of [`Codec::decode_unclamped`]: maps a pixel-space gradient to
    /// the latent-space gradient.
    pub fn decode_adjoint(&self, grad_pixels: &[f64], latent_shape: [usize; 4]) -> Vec<f64> {
        let [l, c, lh, lw] = latent_shape;
        let (h, w) = (lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR);
        let mut out = vec![0.0; l * c * lh * lw];
        for j in 0..l {
            let (start, end) = self.group(j);
            let dst = &mut out[j * c * lh * lw..(j + 1) * c * lh * lw];
            for f in start..end {
                let src = &grad_pixels[f * c * h * w..(f + 1) * c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            dst[ch * lh * lw + (y / 2) * lw + x / 2] += src[ch * h * w + y * w + x];
                        }
                    }
                }
            }
        }
        out
    }

    /// Output decode: nearest-neighbour upsampling clamped to `[0, 1]`.
    pub fn decode(&self, latent: &LatentTensor) -> Result<VideoTensor> {
        let (mut pixels, [frames, c, h, w]) = self.decode_unclamped(latent);
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        VideoTensor::from_vec(frames, c, h, w, pixels)
    }

    /// Encodes one frame on its own (the first-frame group of the codec).
    pub fn encode_frame(&self, frame: &Frame) -> Result<Vec<f64>> {
        let (lh, lw) = latent_hw(frame.height, frame.width)?;
        let (c, w) = (frame.channels, frame.width);
        let plane = frame.height * w;
        let mut out = Vec::with_capacity(c * lh * lw);
        for ch in 0..c {
            let p = &frame.data[ch * plane..(ch + 1) * plane];
            for y in 0..lh {
                for x in 0..lw {
                    out.push(
                        0.25 * ((p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1])
                            + (p[(2 * y + 1) * w + 2 * x] + p[(2 * y + 1) * w + 2 * x + 1])),
                    );
                }
            }
        }
        Ok(out)
    }

    /// Decodes one latent frame to a clamped pixel frame.
    pub fn decode_frame(&self, latent: &[f64], channels: usize, lh: usize, lw: usize) -> Frame {
        let mut data = vec![0.0; channels * lh * lw * SPATIAL_FACTOR * SPATIAL_FACTOR];
        upsample_into(latent, channels, lh, lw, &mut data);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Frame { channels, height: lh * SPATIAL_FACTOR, width: lw * SPATIAL_FACTOR, data }
    }
}

fn latent_hw(h: usize, w: usize) -> Result<(usize, usize)> {
    if !h.is_multiple_of(SPATIAL_FACTOR) || !w.is_multiple_of(SPATIAL_FACTOR) || h == 0 || w == 0 {
        return Err(Error::Dimension(format!("spatial size {h}×{w} must be non-zero and even")));
    }
    Ok((h / SPATIAL_FACTOR, w / SPATIAL_FACTOR))
}

fn upsample_into(src: &[f64], c: usize, lh: usize, lw: usize, dst: &mut [f64]) {
    let (h, w) = (lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                dst[ch * h * w + y * w + x] = src[ch * lh * lw + (y / 2) * lw + x / 2];
            }
        }
    }
}

/// Mean-squared error between a video and its codec round trip.
pub fn round_trip_mse(codec: &Codec, video: &VideoTensor) -> Result<f64> {
    let latent = codec.encode(video)?;
    let (pixels, _) = codec.decode_unclamped(&latent);
    Ok(mse(&pixels, video.data()))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
