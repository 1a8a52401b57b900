//! On-disk formats: the raw tensor file and binary PPM frames.
//!
//! Tensor file layout (all little-endian):
//!
//! ```text
//! b"CYCFLOW1" | rank: u32 | dims: rank × u32 | payload: Π dims × f32 (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Frame, LatentTensor, VideoTensor};

pub const TENSOR_MAGIC: &[u8; 8] = b"CYCFLOW1";

/// Serializes a tensor to the raw tensor byte layout.
pub fn encode_tensor(dims: &[usize], values: &[f64]) -> Vec<u8> {
    let count: usize = dims.iter().product();
    assert_eq!(count, values.len(), "tensor payload length");
    let mut out = Vec::with_capacity(8 + 4 + 4 * dims.len() + 4 * values.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses the raw tensor byte layout. `origin` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < 12 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("missing CYCFLOW1 magic"));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated dimension list"));
    }
    let dims: Vec<usize> =
        bytes[12..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + 4 * count {
        return Err(bad(&format!("payload holds {} bytes, dims {:?} need {}", bytes.len() - header, dims, 4 * count)));
    }
    let values = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((dims, values))
}

pub fn write_tensor(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    write_bytes(path, &encode_tensor(dims, values))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_video(path: &Path, video: &VideoTensor) -> Result<()> {
    write_tensor(path, &video.shape(), video.data())
}

pub fn read_video(path: &Path) -> Result<VideoTensor> {
    let (dims, values) = read_tensor(path)?;
    if dims.len() != 4 {
        return Err(Error::format(path, format!("expected rank 4, got {}", dims.len())));
    }
    VideoTensor::from_vec(dims[0], dims[1], dims[2], dims[3], values)
}

pub fn write_latent(path: &Path, latent: &LatentTensor) -> Result<()> {
    write_tensor(path, &latent.shape(), latent.data())
}

pub fn read_latent(path: &Path) -> Result<LatentTensor> {
    let (dims, values) = read_tensor(path)?;
    if dims.len() != 4 {
        return Err(Error::format(path, format!("expected rank 4, got {}", dims.len())));
    }
    LatentTensor::from_vec(dims[0], dims[1], dims[2], dims[3], values)
}

/// Stores a single frame as a rank-3 tensor file.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    write_tensor(path, &frame.shape(), &frame.data)
}

/// Reads a frame from either a tensor file (rank 3, or rank 4 with one frame)
/// or a binary PPM. `channels` selects how PPM pixels are interpreted.
pub fn read_frame_any(path: &Path, channels: usize) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let (dims, values) = decode_tensor(&bytes, path)?;
        return match dims.as_slice() {
            [c, h, w] | [1, c, h, w] => Frame::from_vec(*c, *h, *w, values),
            _ => Err(Error::format(path, format!("not a single frame: dims {dims:?}"))),
        };
    }
    decode_ppm(&bytes, channels, path)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255). Single-channel frames are written as gray RGB.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let (h, w) = (frame.height, frame.width);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for rgb in 0..3 {
            let c = if frame.channels == 3 { rgb } else { 0 };
            out.push(to_byte(frame.data[c * plane + p]));
        }
    }
    out
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    write_bytes(path, &encode_ppm(frame))
}

pub fn decode_ppm(bytes: &[u8], channels: usize, origin: &Path) -> Result<Frame> {
    let bad = |reason: &str| Error::format(origin, reason);
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidArgument(format!("PPM frames map to 1 or 3 channels, not {channels}")));
    }
    // Header: magic, width, height, maxval separated by whitespace/comments.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(bad("only binary P6 PPM is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PPM header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let plane = w * h;
    if bytes.len() < pos + 3 * plane {
        return Err(bad("truncated PPM pixel data"));
    }
    let pixels = &bytes[pos..pos + 3 * plane];
    let mut data = vec![0.0; channels * plane];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = pixels[3 * p + c] as f64 / 255.0;
        }
    }
    Frame::from_vec(channels, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_tensor(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(&bytes[..8], b"CYCFLOW1");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[40..44], &5.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 4 + 8 + 24);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("x");
        assert!(decode_tensor(b"CYCFLOW2\0\0\0\0", p).is_err());
        let mut bytes = encode_tensor(&[4], &[1.0, 2.0, 3.0, 4.0]);
        bytes.pop();
        assert!(decode_tensor(&bytes, p).is_err());
    }

    #[test]
    fn ppm_is_lossless_for_8bit_content() {
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let frame = Frame::from_vec(1, 3, 4, data).unwrap();
        let back = decode_ppm(&encode_ppm(&frame), 1, Path::new("f.ppm")).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0]);
        let f = decode_ppm(&bytes, 3, Path::new("c.ppm")).unwrap();
        assert_eq!(f.data, vec![1.0, 0.0, 0.0]);
    }
}
