//! Procedural sprite clips with asymmetric motion, rendered at two frame
//! rates that share their endpoint frames.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_video, write_bytes, write_video};
use crate::rng;
use crate::tensor::{Frame, VideoTensor};

/// Caption vocabulary: five trajectory classes followed by two sprite shapes.
pub const VOCAB_SIZE: usize = 7;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sprite {
    Disc,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryClass {
    Linear,
    Accelerate,
    Decelerate,
    Sine,
    Circular,
}

impl TrajectoryClass {
    pub const ALL: [TrajectoryClass; 5] = [
        TrajectoryClass::Linear,
        TrajectoryClass::Accelerate,
        TrajectoryClass::Decelerate,
        TrajectoryClass::Sine,
        TrajectoryClass::Circular,
    ];

    pub fn caption_id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryClass::Linear => "linear",
            TrajectoryClass::Accelerate => "accelerate",
            TrajectoryClass::Decelerate => "decelerate",
            TrajectoryClass::Sine => "sine",
            TrajectoryClass::Circular => "circular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trajectory class `{s}`")))
    }
}

impl Sprite {
    pub fn caption_id(self) -> usize {
        TrajectoryClass::ALL.len() + self as usize
    }
}

/// One moving sprite. Positions are normalized `(x, y)` in `[0, 1]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sprite: Sprite,
    pub trajectory_class: TrajectoryClass,
    pub start_pos: [f64; 2],
    pub end_pos: [f64; 2],
    /// Disc radius or square half-side, in pixels.
    pub sprite_radius: f64,
    pub intensity: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl SceneSpec {
    /// Peak perpendicular offset of the sine class, signed, as a fraction of
    /// the start→end distance.
    fn sine_amplitude(&self) -> f64 {
        let mut r = rng::stream(self.seed, rng::mix(&[0x51E]));
        let a = 0.15 + 0.15 * rng::uniform(&mut r);
        if rng::uniform(&mut r) < 0.5 {
            -a
        } else {
            a
        }
    }

    /// +1 or −1: which way the circular class bends.
    fn arc_sign(&self) -> f64 {
        let mut r = rng::stream(self.seed, rng::mix(&[0xA4C]));
        if rng::uniform(&mut r) < 0.5 {
            -1.0
        } else {
            1.0
        }
    }

    /// Sprite centre in pixel coordinates at progress `u`.
    pub fn position(&self, u: f64) -> Result<[f64; 2]> {
        crate::error::ensure_unit_interval("u", u)?;
        let s = self.pixel(self.start_pos);
        let e = self.pixel(self.end_pos);
        let lerp = |w: f64| [s[0] + w * (e[0] - s[0]), s[1] + w * (e[1] - s[1])];
        Ok(match self.trajectory_class {
            TrajectoryClass::Linear => lerp(u),
            TrajectoryClass::Accelerate => lerp(u * u),
            TrajectoryClass::Decelerate => lerp(1.0 - (1.0 - u) * (1.0 - u)),
            TrajectoryClass::Sine => {
                let base = lerp(u);
                let perp = [-(e[1] - s[1]), e[0] - s[0]];
                let off = self.sine_amplitude() * (2.0 * std::f64::consts::PI * u).sin();
                [base[0] + off * perp[0], base[1] + off * perp[1]]
            }
            TrajectoryClass::Circular => {
                let mid = [(s[0] + e[0]) / 2.0, (s[1] + e[1]) / 2.0];
                let rel = [s[0] - mid[0], s[1] - mid[1]];
                let angle = self.arc_sign() * std::f64::consts::PI * u;
                let (sin, cos) = angle.sin_cos();
                [mid[0] + cos * rel[0] - sin * rel[1], mid[1] + sin * rel[0] + cos * rel[1]]
            }
        })
    }

    fn pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.width as f64, p[1] * self.height as f64]
    }

    /// Checks a convex region enclosing the whole trajectory, so containment
    /// holds for every `u` and not just sampled ones.
    pub fn fits_in_frame(&self) -> bool {
        let s = self.pixel(self.start_pos);
        let e = self.pixel(self.end_pos);
        let r = self.sprite_radius;
        let inside = |p: [f64; 2]| {
            p[0] - r >= 0.0 && p[0] + r <= self.width as f64 && p[1] - r >= 0.0 && p[1] + r <= self.height as f64
        };
        match self.trajectory_class {
            TrajectoryClass::Linear | TrajectoryClass::Accelerate | TrajectoryClass::Decelerate => {
                inside(s) && inside(e)
            }
            TrajectoryClass::Sine => {
                let a = self.sine_amplitude().abs();
                let perp = [-(e[1] - s[1]) * a, (e[0] - s[0]) * a];
                [s, e]
                    .iter()
                    .all(|p| inside([p[0] + perp[0], p[1] + perp[1]]) && inside([p[0] - perp[0], p[1] - perp[1]]))
            }
            TrajectoryClass::Circular => {
                let mid = [(s[0] + e[0]) / 2.0, (s[1] + e[1]) / 2.0];
                let rad = ((s[0] - e[0]).powi(2) + (s[1] - e[1]).powi(2)).sqrt() / 2.0;
                mid[0] - rad - r >= 0.0
                    && mid[0] + rad + r <= self.width as f64
                    && mid[1] - rad - r >= 0.0
                    && mid[1] + rad + r <= self.height as f64
            }
        }
    }

    /// Draws a spec of the given class and sprite whose trajectory stays in
    /// frame and travels at least a third of the frame.
    pub fn random(
        trajectory_class: TrajectoryClass,
        sprite: Sprite,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::InvalidArgument(format!("frame {height}×{width} is smaller than 8×8")));
        }
        let mut r = rng::stream(seed, rng::mix(&[0x5CE]));
        for _ in 0..10_000 {
            let mut u = || rng::uniform(&mut r);
            let spec = SceneSpec {
                sprite,
                trajectory_class,
                start_pos: [u(), u()],
                end_pos: [u(), u()],
                sprite_radius: 1.5 + u(),
                intensity: 0.6 + 0.4 * u(),
                seed,
                height,
                width,
            };
            let d =
                ((spec.start_pos[0] - spec.end_pos[0]).powi(2) + (spec.start_pos[1] - spec.end_pos[1]).powi(2)).sqrt();
            if d >= 1.0 / 3.0 && spec.fits_in_frame() {
                return Ok(spec);
            }
        }
        Err(Error::InvalidArgument("could not place sprite inside the frame".into()))
    }

    pub fn caption_ids(&self) -> Vec<usize> {
        vec![self.trajectory_class.caption_id(), self.sprite.caption_id()]
    }
}

/// Length of the overlap of `[a0, a1]` and `[b0, b1]`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Renders the sprite at progress `u` with anti-aliased coverage on a black
/// single-channel background.
pub fn render_frame(spec: &SceneSpec, u: f64) -> Result<Frame> {
    let [cx, cy] = spec.position(u)?;
    let r = spec.sprite_radius;
    let mut frame = Frame::zeros(1, spec.height, spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let cover = match spec.sprite {
                Sprite::Disc => {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    (r + 0.5 - d).clamp(0.0, 1.0)
                }
                Sprite::Square => {
                    overlap(x as f64, x as f64 + 1.0, cx - r, cx + r)
                        * overlap(y as f64, y as f64 + 1.0, cy - r, cy + r)
                }
            };
            frame.data[y * spec.width + x] = spec.intensity * cover;
        }
    }
    Ok(frame)
}

/// Renders `frames` frames at `u = i / (frames − 1)`.
pub fn render_clip(spec: &SceneSpec, frames: usize) -> Result<VideoTensor> {
    if frames < 2 {
        return Err(Error::InvalidArgument(format!("clip length {frames} must be ≥ 2")));
    }
    let rendered =
        (0..frames).map(|i| render_frame(spec, i as f64 / (frames - 1) as f64)).collect::<Result<Vec<_>>>()?;
    VideoTensor::from_frames(&rendered)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair {
    pub short: VideoTensor,
    pub long: VideoTensor,
    pub caption_ids: Vec<usize>,
    pub spec: SceneSpec,
}

pub fn sample_multirate(spec: &SceneSpec, short: usize, long: usize) -> Result<ClipPair> {
    if short < 2 || long < 2 {
        return Err(Error::InvalidArgument(format!("clip lengths must be ≥ 2 (short {short}, long {long})")));
    }
    Ok(ClipPair {
        short: render_clip(spec, short)?,
        long: render_clip(spec, long)?,
        caption_ids: spec.caption_ids(),
        spec: spec.clone(),
    })
}

pub fn reverse(video: &VideoTensor) -> VideoTensor {
    video.reverse_time()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub short: usize,
    pub long: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 64, short: 9, long: 17, seed: 0, height: 16, width: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub spec: SceneSpec,
    pub caption_ids: Vec<usize>,
    /// Paths relative to the manifest's directory.
    pub short_path: String,
    pub long_path: String,
    pub short_len: usize,
    pub long_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub clips: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// Per-clip seed; independent of generation order.
pub fn clip_seed(dataset_seed: u64, index: usize) -> u64 {
    rng::mix(&[dataset_seed, index as u64])
}

/// Spec of clip `index`: classes cycle round-robin, shapes alternate every
/// full cycle.
pub fn clip_spec(config: &DatasetConfig, index: usize) -> Result<SceneSpec> {
    let n = TrajectoryClass::ALL.len();
    let class = TrajectoryClass::ALL[index % n];
    let sprite = if (index / n).is_multiple_of(2) { Sprite::Disc } else { Sprite::Square };
    SceneSpec::random(class, sprite, config.height, config.width, clip_seed(config.seed, index))
}

pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if config.short < 2 || config.long < 2 {
        return Err(Error::InvalidArgument(format!(
            "clip lengths must be ≥ 2 (short {}, long {})",
            config.short, config.long
        )));
    }
    if config.count == 0 {
        return Err(Error::InvalidArgument("count must be ≥ 1".into()));
    }
    let pairs = (0..config.count)
        .into_par_iter()
        .map(|i| sample_multirate(&clip_spec(config, i)?, config.short, config.long))
        .collect::<Result<Vec<_>>>()?;
    let mut clips = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.into_iter().enumerate() {
        let id = format!("clip_{i:05}");
        let short_path = format!("clips/{id}_short.cft");
        let long_path = format!("clips/{id}_long.cft");
        write_video(&out_dir.join(&short_path), &pair.short)?;
        write_video(&out_dir.join(&long_path), &pair.long)?;
        clips.push(ManifestEntry {
            id,
            spec: pair.spec,
            caption_ids: pair.caption_ids,
            short_path,
            long_path,
            short_len: config.short,
            long_len: config.long,
        });
    }
    let manifest = Manifest { config: config.clone(), clips, root: out_dir.to_path_buf() };
    manifest.write()?;
    Ok(manifest)
}

/// A clip held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedClip {
    pub id: String,
    pub spec: SceneSpec,
    pub caption_ids: Vec<usize>,
    pub video: VideoTensor,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<()> {
        let path = self.path();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json { path: path.clone(), source })?;
        write_bytes(&path, format!("{text}\n").as_bytes())
    }

    /// Accepts the manifest file or the directory holding it.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: file.clone(), source })?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn lengths(&self) -> (usize, usize) {
        (self.config.short, self.config.long)
    }

    /// Loads every clip of the requested length.
    pub fn load_clips(&self, length: usize) -> Result<Vec<LoadedClip>> {
        let (short, long) = self.lengths();
        self.clips
            .iter()
            .map(|e| {
                let rel = if length == short {
                    &e.short_path
                } else if length == long {
                    &e.long_path
                } else {
                    return Err(Error::InvalidArgument(format!(
                        "dataset has lengths {short} and {long}, not {length}"
                    )));
                };
                let video = read_video(&self.root.join(rel))?;
                if video.frames() != length {
                    return Err(Error::format(self.root.join(rel), format!("expected {length} frames")));
                }
                Ok(LoadedClip { id: e.id.clone(), spec: e.spec.clone(), caption_ids: e.caption_ids.clone(), video })
            })
            .collect()
    }
}
