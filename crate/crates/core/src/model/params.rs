use rand_distr::{Distribution, Normal};

use super::ops::sinusoidal;
use super::ModelConfig;
use crate::error::Result;
use crate::rng;

/// A named, shaped, flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name, shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Uniform access to every trainable buffer of a parameter container, in a
/// fixed order shared with [`Gradients`].
pub trait ParamSet {
    fn tensors(&self) -> Vec<&ParamTensor>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn census(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients { tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect() }
    }
}

/// Gradient buffers aligned with [`ParamSet::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinearIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormIds {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockIds {
    pub ln1: NormIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ln2: NormIds,
    pub cq: LinearIds,
    pub ck: LinearIds,
    pub cv: LinearIds,
    pub co: LinearIds,
    pub ln3: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub caption_embedding: usize,
    pub tau_fwd: usize,
    pub tau_bwd: usize,
    pub patch: LinearIds,
    pub spatial_pos: usize,
    pub temporal_pos: usize,
    pub time1: LinearIds,
    pub time2: LinearIds,
    pub blocks: Vec<BlockIds>,
    pub final_ln: NormIds,
    pub head: LinearIds,
}

struct Builder {
    tensors: Vec<ParamTensor>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.tensors.push(ParamTensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearIds {
        LinearIds { w: self.add(format!("{name}.w"), vec![d_in, d_out]), b: self.add(format!("{name}.b"), vec![d_out]) }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds { g: self.add(format!("{name}.g"), vec![d]), b: self.add(format!("{name}.b"), vec![d]) }
    }
}

/// Velocity-network weights, directional tokens and the caption table.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    tensors: Vec<ParamTensor>,
    pub(crate) layout: Layout,
}

impl Parameters {
    /// All-zero tensors with the layout implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_hidden;
        let mut b = Builder { tensors: Vec::new() };
        let caption_embedding = b.add("caption_embedding".into(), vec![config.vocab, d]);
        let tau_fwd = b.add("tau_fwd".into(), vec![d]);
        let tau_bwd = b.add("tau_bwd".into(), vec![d]);
        let patch = b.linear("patch_embed", config.patch_in(), d);
        let spatial_pos = b.add("pos.spatial".into(), vec![config.tokens_per_frame(), d]);
        let temporal_pos = b.add("pos.temporal".into(), vec![config.max_frames, d]);
        let time1 = b.linear("time_mlp.0", d, d);
        let time2 = b.linear("time_mlp.1", d, d);
        let blocks = (0..config.blocks)
            .map(|i| {
                let p = format!("blocks.{i}");
                BlockIds {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    q: b.linear(&format!("{p}.attn.q"), d, d),
                    k: b.linear(&format!("{p}.attn.k"), d, d),
                    v: b.linear(&format!("{p}.attn.v"), d, d),
                    o: b.linear(&format!("{p}.attn.o"), d, d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cq: b.linear(&format!("{p}.xattn.q"), d, d),
                    ck: b.linear(&format!("{p}.xattn.k"), d, d),
                    cv: b.linear(&format!("{p}.xattn.v"), d, d),
                    co: b.linear(&format!("{p}.xattn.o"), d, d),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    fc1: b.linear(&format!("{p}.mlp.fc1"), d, config.mlp_hidden),
                    fc2: b.linear(&format!("{p}.mlp.fc2"), config.mlp_hidden, d),
                }
            })
            .collect();
        let final_ln = b.norm("final_ln", d);
        let head = b.linear("head", d, config.patch_out());
        Ok(Self {
            config: config.clone(),
            tensors: b.tensors,
            layout: Layout {
                caption_embedding,
                tau_fwd,
                tau_bwd,
                patch,
                spatial_pos,
                temporal_pos,
                time1,
                time2,
                blocks,
                final_ln,
                head,
            },
        })
    }

    /// Seeded initialization. The output head starts at zero so the untrained
    /// network predicts zero velocity everywhere.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut r = rng::stream(seed, rng::mix(&[0x1417]));
        let d = config.d_hidden;
        let depth_scale = 1.0 / (2.0 * config.blocks as f64).sqrt();
        let layout = p.layout.clone();

        let mut fill = |p: &mut Self, id: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut p.tensors[id].data {
                *v = normal.sample(&mut r);
            }
        };
        fill(&mut p, layout.caption_embedding, 1.0);
        fill(&mut p, layout.tau_fwd, 1.0);
        fill(&mut p, layout.tau_bwd, 1.0);
        fill(&mut p, layout.patch.w, (1.0 / config.patch_in() as f64).sqrt());
        fill(&mut p, layout.time1.w, (1.0 / d as f64).sqrt());
        fill(&mut p, layout.time2.w, (1.0 / d as f64).sqrt());
        for blk in &layout.blocks {
            for lin in [blk.q, blk.k, blk.v, blk.cq, blk.ck, blk.cv] {
                fill(&mut p, lin.w, (1.0 / d as f64).sqrt());
            }
            for lin in [blk.o, blk.co] {
                fill(&mut p, lin.w, depth_scale * (1.0 / d as f64).sqrt());
            }
            fill(&mut p, blk.fc1.w, (1.0 / d as f64).sqrt());
            fill(&mut p, blk.fc2.w, depth_scale * (1.0 / config.mlp_hidden as f64).sqrt());
        }
        for blk in &layout.blocks {
            for norm in [blk.ln1, blk.ln2, blk.ln3] {
                p.tensors[norm.g].data.fill(1.0);
            }
        }
        p.tensors[layout.final_ln.g].data.fill(1.0);

        // Position tables start from sinusoids so neighbouring frames and
        // patches begin with similar codes.
        let spatial = &mut p.tensors[layout.spatial_pos].data;
        let gw = config.latent_width / config.patch;
        for tok in 0..config.tokens_per_frame() {
            let (y, x) = ((tok / gw) as f64, (tok % gw) as f64);
            let half = d / 2;
            let sy = sinusoidal(y, half);
            let sx = sinusoidal(x, d - half);
            for j in 0..half {
                spatial[tok * d + j] = 0.5 * sy[j];
            }
            for j in 0..d - half {
                spatial[tok * d + half + j] = 0.5 * sx[j];
            }
        }
        let temporal = &mut p.tensors[layout.temporal_pos].data;
        for f in 0..config.max_frames {
            let s = sinusoidal(f as f64, d);
            for j in 0..d {
                temporal[f * d + j] = 0.5 * s[j];
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn tau_fwd(&self) -> &[f64] {
        &self.tensors[self.layout.tau_fwd].data
    }

    pub fn tau_bwd(&self) -> &[f64] {
        &self.tensors[self.layout.tau_bwd].data
    }

    pub(crate) fn data(&self, id: usize) -> &[f64] {
        &self.tensors[id].data
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Indices of the two directional tokens.
    pub fn token_indices(&self) -> [usize; 2] {
        [self.layout.tau_fwd, self.layout.tau_bwd]
    }

    /// Fills the output head with small random values so that every path of
    /// the network carries gradient (used by gradient verification).
    pub fn randomize_head(&mut self, seed: u64, std: f64) {
        let mut r = rng::stream(seed, rng::mix(&[0x4EAD]));
        let normal = Normal::new(0.0, std).expect("positive std");
        for id in [self.layout.head.w, self.layout.head.b] {
            for v in &mut self.tensors[id].data {
                *v = normal.sample(&mut r);
            }
        }
    }

    /// Tensor shapes in layout order, used to validate checkpoints.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(Self::zeros(config)?.tensors.into_iter().map(|t| (t.name, t.shape)).collect())
    }

    pub(crate) fn from_tensors(config: &ModelConfig, tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for (slot, t) in p.tensors.iter_mut().zip(tensors) {
            debug_assert_eq!(slot.name, t.name);
            *slot = t;
        }
        Ok(p)
    }
}

impl ParamSet for Parameters {
    fn tensors(&self) -> Vec<&ParamTensor> {
        self.tensors.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.tensors.iter_mut().collect()
    }
}
