//! Forward and backward passes of the velocity transformer.
//!
//! Samples in a batch share the latent shape. Linear layers run on the
//! stacked token matrix of the whole batch; attention runs per sample.

use rayon::prelude::*;

use super::condition::ConditionSequence;
use super::lora::{AdaptedParameters, Adapter};
use super::ops::{
    add_column_sums, affine, gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, silu, silu_grad, sinusoidal,
    softmax_rows, softmax_rows_backward, Mat, MatMut, NormCache,
};
use super::params::{Gradients, LinearIds, NormIds, ParamSet, Parameters};
use crate::error::{ensure_unit_interval, Error, Result};
use crate::flowmatch::EndpointCondition;
use crate::tensor::LatentTensor;

/// Scale applied to the flow time before the sinusoidal embedding.
const TIME_SCALE: f64 = 1000.0;

/// Read-only view of a network: base weights plus optional adapters.
#[derive(Clone, Copy)]
pub struct ModelRef<'a> {
    pub params: &'a Parameters,
    pub adapters: &'a [Adapter],
}

impl<'a> From<&'a Parameters> for ModelRef<'a> {
    fn from(params: &'a Parameters) -> Self {
        Self { params, adapters: &[] }
    }
}

impl<'a> From<&'a AdaptedParameters> for ModelRef<'a> {
    fn from(p: &'a AdaptedParameters) -> Self {
        Self { params: &p.base, adapters: &p.adapters }
    }
}

impl<'a> ModelRef<'a> {
    fn w(&self, id: usize) -> &'a [f64] {
        self.params.data(id)
    }

    fn adapter(&self, weight_id: usize) -> Option<(usize, &'a Adapter)> {
        self.adapters.iter().enumerate().find(|(_, a)| a.weight_id == weight_id)
    }

    fn base_len(&self) -> usize {
        self.params.tensors().len()
    }

    /// Gradient buffers matching this view's parameter listing.
    pub fn zero_gradients(&self) -> Gradients {
        let mut g = self.params.zero_gradients();
        for a in self.adapters {
            g.tensors.push(vec![0.0; a.a.len()]);
            g.tensors.push(vec![0.0; a.b.len()]);
        }
        g
    }
}

/// One network evaluation request.
#[derive(Clone, Copy)]
pub struct VelocityInput<'a> {
    pub xt: &'a LatentTensor,
    pub t: f64,
    pub cond: &'a ConditionSequence,
    pub endpoints: &'a EndpointCondition,
}

struct BlockCache {
    ln1: NormCache,
    a1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: NormCache,
    a2: Vec<f64>,
    qc: Vec<f64>,
    kc: Vec<f64>,
    vc: Vec<f64>,
    probs_c: Vec<f64>,
    oc: Vec<f64>,
    ln3: NormCache,
    a3: Vec<f64>,
    z1: Vec<f64>,
    m: Vec<f64>,
}

/// Activations retained for [`backward_velocity_batch`].
pub struct ForwardCache {
    batch: usize,
    frames: usize,
    tokens: usize,
    x_in: Vec<f64>,
    time_sin: Vec<f64>,
    time_z: Vec<f64>,
    time_a: Vec<f64>,
    cond_rows: Vec<f64>,
    cond_offsets: Vec<usize>,
    cond_token_params: Vec<usize>,
    cond_captions: Vec<Vec<usize>>,
    blocks: Vec<BlockCache>,
    lnf: NormCache,
    af: Vec<f64>,
    latent_shape: [usize; 4],
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `v_θ(x_t, t, c_cond)` for a single input.
pub fn forward_velocity<'a>(
    model: impl Into<ModelRef<'a>>,
    xt: &LatentTensor,
    t: f64,
    cond: &ConditionSequence,
    endpoints: &EndpointCondition,
) -> Result<LatentTensor> {
    let input = VelocityInput { xt, t, cond, endpoints };
    let (mut out, _) = run_forward(model.into(), &[input], false)?;
    Ok(out.pop().expect("one output per input"))
}

/// Batched forward pass returning the cache needed for backpropagation.
pub fn forward_velocity_batch<'a>(
    model: impl Into<ModelRef<'a>>,
    inputs: &[VelocityInput],
) -> Result<(Vec<LatentTensor>, ForwardCache)> {
    let (out, cache) = run_forward(model.into(), inputs, true)?;
    Ok((out, cache.expect("cache requested")))
}

fn validate(model: &ModelRef, inputs: &[VelocityInput]) -> Result<[usize; 4]> {
    let cfg = model.params.config();
    let first = inputs.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let shape = first.xt.shape();
    let [f, c, h, w] = shape;
    if c != cfg.latent_channels || h != cfg.latent_height || w != cfg.latent_width {
        return Err(Error::Dimension(format!(
            "latent {c}×{h}×{w} does not match model {}×{}×{}",
            cfg.latent_channels, cfg.latent_height, cfg.latent_width
        )));
    }
    if h % cfg.patch != 0 || w % cfg.patch != 0 {
        return Err(Error::Dimension(format!("latent {h}×{w} not divisible by patch {}", cfg.patch)));
    }
    if f > cfg.max_frames {
        return Err(Error::Dimension(format!("{f} latent frames exceed the model's {} positions", cfg.max_frames)));
    }
    for inp in inputs {
        if inp.xt.shape() != shape {
            return Err(Error::ShapeMismatch { left: shape.to_vec(), right: inp.xt.shape().to_vec() });
        }
        ensure_unit_interval("t", inp.t)?;
        let plane = c * h * w;
        if inp.endpoints.frames() != f
            || inp.endpoints.start_latent.len() != plane
            || inp.endpoints.end_latent.len() != plane
        {
            return Err(Error::Dimension("endpoint condition does not match latent shape".into()));
        }
        if inp.cond.d_hidden() != cfg.d_hidden || inp.cond.is_empty() {
            return Err(Error::Dimension("condition width does not match d_hidden".into()));
        }
    }
    Ok(shape)
}

fn linear_forward(model: &ModelRef, ids: LinearIds, x: &[f64], n: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = affine(x, n, d_in, model.w(ids.w), model.w(ids.b), d_out);
    if let Some((_, ad)) = model.adapter(ids.w) {
        let r = ad.rank();
        let mut u = vec![0.0; n * r];
        gemm(1.0, Mat::new(x, n, d_in), false, Mat::new(&ad.a.data, r, d_in), true, 0.0, MatMut::new(&mut u, n, r));
        gemm(1.0, Mat::new(&u, n, r), false, Mat::new(&ad.b.data, d_out, r), true, 1.0, MatMut::new(&mut y, n, d_out));
    }
    y
}

/// Backward through `y = x·W + b (+ x·Aᵀ·Bᵀ)`; returns `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    model: &ModelRef,
    ids: LinearIds,
    x: &[f64],
    n: usize,
    d_in: usize,
    d_out: usize,
    dy: &[f64],
    grads: &mut Gradients,
    base_grads: bool,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d_in];
    gemm(
        1.0,
        Mat::new(dy, n, d_out),
        false,
        Mat::new(model.w(ids.w), d_in, d_out),
        true,
        0.0,
        MatMut::new(&mut dx, n, d_in),
    );
    if base_grads {
        gemm(
            1.0,
            Mat::new(x, n, d_in),
            true,
            Mat::new(dy, n, d_out),
            false,
            1.0,
            MatMut::new(&mut grads.tensors[ids.w], d_in, d_out),
        );
        add_column_sums(dy, d_out, &mut grads.tensors[ids.b]);
    }
    if let Some((idx, ad)) = model.adapter(ids.w) {
        let r = ad.rank();
        let ga = model.base_len() + 2 * idx;
        let mut u = vec![0.0; n * r];
        gemm(1.0, Mat::new(x, n, d_in), false, Mat::new(&ad.a.data, r, d_in), true, 0.0, MatMut::new(&mut u, n, r));
        let mut du = vec![0.0; n * r];
        gemm(
            1.0,
            Mat::new(dy, n, d_out),
            false,
            Mat::new(&ad.b.data, d_out, r),
            false,
            0.0,
            MatMut::new(&mut du, n, r),
        );
        gemm(
            1.0,
            Mat::new(dy, n, d_out),
            true,
            Mat::new(&u, n, r),
            false,
            1.0,
            MatMut::new(&mut grads.tensors[ga + 1], d_out, r),
        );
        gemm(
            1.0,
            Mat::new(&du, n, r),
            true,
            Mat::new(x, n, d_in),
            false,
            1.0,
            MatMut::new(&mut grads.tensors[ga], r, d_in),
        );
        gemm(1.0, Mat::new(&du, n, r), false, Mat::new(&ad.a.data, r, d_in), false, 1.0, MatMut::new(&mut dx, n, d_in));
    }
    dx
}

fn norm_forward(model: &ModelRef, ids: NormIds, x: &[f64], d: usize) -> (Vec<f64>, NormCache) {
    layer_norm(x, d, model.w(ids.g), model.w(ids.b))
}

fn norm_backward(
    model: &ModelRef,
    ids: NormIds,
    dy: &[f64],
    d: usize,
    cache: &NormCache,
    grads: &mut Gradients,
    base_grads: bool,
) -> Vec<f64> {
    if base_grads {
        let (lo, hi) = (ids.g.min(ids.b), ids.g.max(ids.b));
        let (left, right) = grads.tensors.split_at_mut(hi);
        let (g_slot, b_slot) =
            if ids.g < ids.b { (&mut left[lo], &mut right[0]) } else { (&mut right[0], &mut left[lo]) };
        layer_norm_backward(dy, d, model.w(ids.g), cache, Some((g_slot, b_slot)))
    } else {
        layer_norm_backward(dy, d, model.w(ids.g), cache, None)
    }
}

/// Multi-head attention for one sample: `q` is `tq × d`, `k`/`v` are `tk × d`.
/// Writes probabilities (`heads × tq × tk`) and the concatenated head outputs.
#[allow(clippy::too_many_arguments)]
fn attend(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    tq: usize,
    tk: usize,
    d: usize,
    heads: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for h in 0..heads {
        let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        gemm(
            scale,
            Mat::new(q, tq, d).block(0, h * dh, tq, dh),
            false,
            Mat::new(k, tk, d).block(0, h * dh, tk, dh),
            true,
            0.0,
            MatMut::new(p, tq, tk),
        );
        softmax_rows(p, tk);
        gemm(
            1.0,
            Mat::new(p, tq, tk),
            false,
            Mat::new(v, tk, d).block(0, h * dh, tk, dh),
            false,
            0.0,
            MatMut::new(out, tq, d).block(0, h * dh, tq, dh),
        );
    }
}

/// Backward of [`attend`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
fn attend_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    tq: usize,
    tk: usize,
    d: usize,
    heads: usize,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ds = vec![0.0; tq * tk];
    for h in 0..heads {
        let p = &probs[h * tq * tk..(h + 1) * tq * tk];
        let d_o = Mat::new(dout, tq, d).block(0, h * dh, tq, dh);
        // dV = Pᵀ dO
        gemm(1.0, Mat::new(p, tq, tk), true, d_o, false, 1.0, MatMut::new(dv, tk, d).block(0, h * dh, tk, dh));
        // dP = dO Vᵀ
        gemm(1.0, d_o, false, Mat::new(v, tk, d).block(0, h * dh, tk, dh), true, 0.0, MatMut::new(&mut ds, tq, tk));
        softmax_rows_backward(p, &mut ds, tk);
        // dQ = dS K · scale, dK = dSᵀ Q · scale
        gemm(
            scale,
            Mat::new(&ds, tq, tk),
            false,
            Mat::new(k, tk, d).block(0, h * dh, tk, dh),
            false,
            1.0,
            MatMut::new(dq, tq, d).block(0, h * dh, tq, dh),
        );
        gemm(
            scale,
            Mat::new(&ds, tq, tk),
            true,
            Mat::new(q, tq, d).block(0, h * dh, tq, dh),
            false,
            1.0,
            MatMut::new(dk, tk, d).block(0, h * dh, tk, dh),
        );
    }
}

fn check_finite(h: &[f64], block: usize) -> Result<()> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activations in block {block}")));
    }
    Ok(())
}

fn run_forward(
    model: ModelRef,
    inputs: &[VelocityInput],
    keep: bool,
) -> Result<(Vec<LatentTensor>, Option<ForwardCache>)> {
    let shape = validate(&model, inputs)?;
    let cfg = model.params.config();
    let lay = model.params.layout();
    let [frames, c, lh, lw] = shape;
    let p = cfg.patch;
    let (gh, gw) = (lh / p, lw / p);
    let per_frame = gh * gw;
    let tokens = frames * per_frame;
    let batch = inputs.len();
    let n = batch * tokens;
    let d = cfg.d_hidden;
    let heads = cfg.heads;
    let pin = cfg.patch_in();
    let pout = cfg.patch_out();

    // Patchify latent, start, end and mask planes.
    let mut x_in = vec![0.0; n * pin];
    for (b, inp) in inputs.iter().enumerate() {
        let ep = inp.endpoints;
        for f in 0..frames {
            let frame = inp.xt.frame_data(f);
            for py in 0..gh {
                for px in 0..gw {
                    let row = b * tokens + f * per_frame + py * gw + px;
                    let dst = &mut x_in[row * pin..(row + 1) * pin];
                    for dy in 0..p {
                        for dx in 0..p {
                            for ch in 0..c {
                                let src = ch * lh * lw + (py * p + dy) * lw + px * p + dx;
                                let o = dy * p + dx;
                                dst[ch * p * p + o] = frame[src];
                                dst[(c + ch) * p * p + o] = ep.start_latent[src];
                                dst[(2 * c + ch) * p * p + o] = ep.end_latent[src];
                            }
                            dst[3 * c * p * p + dy * p + dx] = ep.mask[f];
                        }
                    }
                }
            }
        }
    }

    // Time embedding per sample.
    let mut time_sin = Vec::with_capacity(batch * d);
    for inp in inputs {
        time_sin.extend(sinusoidal(TIME_SCALE * inp.t, d));
    }
    let time_z = affine(&time_sin, batch, d, model.w(lay.time1.w), model.w(lay.time1.b), d);
    let time_a: Vec<f64> = time_z.iter().map(|&z| silu(z)).collect();
    let temb = affine(&time_a, batch, d, model.w(lay.time2.w), model.w(lay.time2.b), d);

    let mut h = affine(&x_in, n, pin, model.w(lay.patch.w), model.w(lay.patch.b), d);
    let spos = model.w(lay.spatial_pos);
    let tpos = model.w(lay.temporal_pos);
    for b in 0..batch {
        for f in 0..frames {
            for s in 0..per_frame {
                let row = b * tokens + f * per_frame + s;
                let hr = &mut h[row * d..(row + 1) * d];
                for j in 0..d {
                    hr[j] += spos[s * d + j] + tpos[f * d + j] + temb[b * d + j];
                }
            }
        }
    }

    // Condition sequences stacked.
    let mut cond_rows = Vec::new();
    let mut cond_offsets = vec![0];
    for inp in inputs {
        cond_rows.extend_from_slice(inp.cond.rows());
        cond_offsets.push(cond_offsets.last().unwrap() + inp.cond.len());
    }
    let cond_total = *cond_offsets.last().unwrap();

    let mut block_caches = Vec::with_capacity(if keep { cfg.blocks } else { 0 });
    for (bi, blk) in lay.blocks.iter().enumerate() {
        // Self-attention over all spatiotemporal tokens of each sample.
        let (a1, ln1) = norm_forward(&model, blk.ln1, &h, d);
        let q = linear_forward(&model, blk.q, &a1, n, d, d);
        let k = linear_forward(&model, blk.k, &a1, n, d, d);
        let v = linear_forward(&model, blk.v, &a1, n, d, d);
        let mut probs = vec![0.0; batch * heads * tokens * tokens];
        let mut o = vec![0.0; n * d];
        o.par_chunks_mut(tokens * d).zip(probs.par_chunks_mut(heads * tokens * tokens)).enumerate().for_each(
            |(b, (ob, pb))| {
                let r = b * tokens * d..(b + 1) * tokens * d;
                attend(&q[r.clone()], &k[r.clone()], &v[r], tokens, tokens, d, heads, pb, ob);
            },
        );
        let attn_out = linear_forward(&model, blk.o, &o, n, d, d);
        for (hv, av) in h.iter_mut().zip(&attn_out) {
            *hv += av;
        }

        // Cross-attention to the condition sequence.
        let (a2, ln2) = norm_forward(&model, blk.ln2, &h, d);
        let qc = linear_forward(&model, blk.cq, &a2, n, d, d);
        let kc = linear_forward(&model, blk.ck, &cond_rows, cond_total, d, d);
        let vc = linear_forward(&model, blk.cv, &cond_rows, cond_total, d, d);
        let mut probs_c = vec![0.0; heads * tokens * cond_total];
        let mut oc = vec![0.0; n * d];
        {
            let mut pc_chunks: Vec<&mut [f64]> = Vec::with_capacity(batch);
            let mut rest = probs_c.as_mut_slice();
            for b in 0..batch {
                let lc = cond_offsets[b + 1] - cond_offsets[b];
                let (head, tail) = rest.split_at_mut(heads * tokens * lc);
                pc_chunks.push(head);
                rest = tail;
            }
            oc.par_chunks_mut(tokens * d).zip(pc_chunks.into_par_iter()).enumerate().for_each(|(b, (ob, pb))| {
                let (c0, c1) = (cond_offsets[b], cond_offsets[b + 1]);
                let r = b * tokens * d..(b + 1) * tokens * d;
                attend(&qc[r], &kc[c0 * d..c1 * d], &vc[c0 * d..c1 * d], tokens, c1 - c0, d, heads, pb, ob);
            });
        }
        let cross_out = linear_forward(&model, blk.co, &oc, n, d, d);
        for (hv, av) in h.iter_mut().zip(&cross_out) {
            *hv += av;
        }

        // MLP.
        let (a3, ln3) = norm_forward(&model, blk.ln3, &h, d);
        let z1 = linear_forward(&model, blk.fc1, &a3, n, d, cfg.mlp_hidden);
        let m: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        let mlp_out = linear_forward(&model, blk.fc2, &m, n, cfg.mlp_hidden, d);
        for (hv, av) in h.iter_mut().zip(&mlp_out) {
            *hv += av;
        }
        check_finite(&h, bi)?;

        if keep {
            block_caches.push(BlockCache {
                ln1,
                a1,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                a2,
                qc,
                kc,
                vc,
                probs_c,
                oc,
                ln3,
                a3,
                z1,
                m,
            });
        }
    }

    let (af, lnf) = norm_forward(&model, lay.final_ln, &h, d);
    let y = linear_forward(&model, lay.head, &af, n, d, pout);

    // Unpatchify.
    let mut outputs = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut data = vec![0.0; frames * c * lh * lw];
        for f in 0..frames {
            for py in 0..gh {
                for px in 0..gw {
                    let row = b * tokens + f * per_frame + py * gw + px;
                    let src = &y[row * pout..(row + 1) * pout];
                    for ch in 0..c {
                        for dy in 0..p {
                            for dx in 0..p {
                                data[f * c * lh * lw + ch * lh * lw + (py * p + dy) * lw + px * p + dx] =
                                    src[ch * p * p + dy * p + dx];
                            }
                        }
                    }
                }
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite velocity from output head".into()));
        }
        outputs.push(LatentTensor::from_vec(frames, c, lh, lw, data)?);
    }

    let cache = keep.then(|| ForwardCache {
        batch,
        frames,
        tokens,
        x_in,
        time_sin,
        time_z,
        time_a,
        cond_token_params: inputs.iter().map(|i| i.cond.token_param(model.params)).collect(),
        cond_captions: inputs.iter().map(|i| i.cond.caption_ids().to_vec()).collect(),
        cond_rows,
        cond_offsets,
        blocks: block_caches,
        lnf,
        af,
        latent_shape: shape,
    });
    Ok((outputs, cache))
}

/// Accumulates `∂L/∂θ` into `grads` given `∂L/∂v` for every batch output.
///
/// With `base_grads = false` the base-weight gradients are skipped (frozen
/// backbone); token, caption and adapter gradients are always produced.
pub fn backward_velocity_batch<'a>(
    model: impl Into<ModelRef<'a>>,
    cache: &ForwardCache,
    d_outputs: &[Vec<f64>],
    grads: &mut Gradients,
    base_grads: bool,
) -> Result<()> {
    let model = model.into();
    let cfg = model.params.config();
    let lay = model.params.layout();
    let [frames, c, lh, lw] = cache.latent_shape;
    if d_outputs.len() != cache.batch {
        return Err(Error::InvalidArgument("one output gradient per batch entry required".into()));
    }
    let p = cfg.patch;
    let (gh, gw) = (lh / p, lw / p);
    let per_frame = gh * gw;
    let tokens = cache.tokens;
    let batch = cache.batch;
    let n = batch * tokens;
    let d = cfg.d_hidden;
    let heads = cfg.heads;
    let pout = cfg.patch_out();
    let cond_total = *cache.cond_offsets.last().unwrap();
    debug_assert_eq!(frames, cache.frames);

    // Patchify the output gradient.
    let mut dy = vec![0.0; n * pout];
    for (b, g) in d_outputs.iter().enumerate() {
        if g.len() != frames * c * lh * lw {
            return Err(Error::Dimension("output gradient has the wrong length".into()));
        }
        for f in 0..frames {
            for py in 0..gh {
                for px in 0..gw {
                    let row = b * tokens + f * per_frame + py * gw + px;
                    for ch in 0..c {
                        for ddy in 0..p {
                            for ddx in 0..p {
                                dy[row * pout + ch * p * p + ddy * p + ddx] =
                                    g[f * c * lh * lw + ch * lh * lw + (py * p + ddy) * lw + px * p + ddx];
                            }
                        }
                    }
                }
            }
        }
    }

    let daf = linear_backward(&model, lay.head, &cache.af, n, d, pout, &dy, grads, base_grads);
    let mut dh = norm_backward(&model, lay.final_ln, &daf, d, &cache.lnf, grads, base_grads);
    let mut dcond = vec![0.0; cond_total * d];

    for (blk, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        // MLP.
        let dm = linear_backward(&model, blk.fc2, &bc.m, n, cfg.mlp_hidden, d, &dh, grads, base_grads);
        let dz1: Vec<f64> = dm.iter().zip(&bc.z1).map(|(g, &z)| g * gelu_grad(z)).collect();
        let da3 = linear_backward(&model, blk.fc1, &bc.a3, n, d, cfg.mlp_hidden, &dz1, grads, base_grads);
        let dx3 = norm_backward(&model, blk.ln3, &da3, d, &bc.ln3, grads, base_grads);
        for (a, b) in dh.iter_mut().zip(&dx3) {
            *a += b;
        }

        // Cross-attention.
        let doc = linear_backward(&model, blk.co, &bc.oc, n, d, d, &dh, grads, base_grads);
        let mut dqc = vec![0.0; n * d];
        let mut dkc = vec![0.0; cond_total * d];
        let mut dvc = vec![0.0; cond_total * d];
        for b in 0..batch {
            let (c0, c1) = (cache.cond_offsets[b], cache.cond_offsets[b + 1]);
            let lc = c1 - c0;
            let r = b * tokens * d..(b + 1) * tokens * d;
            let pstart = heads * tokens * c0;
            attend_backward(
                &bc.qc[r.clone()],
                &bc.kc[c0 * d..c1 * d],
                &bc.vc[c0 * d..c1 * d],
                &bc.probs_c[pstart..pstart + heads * tokens * lc],
                &doc[r.clone()],
                tokens,
                lc,
                d,
                heads,
                &mut dqc[r],
                &mut dkc[c0 * d..c1 * d],
                &mut dvc[c0 * d..c1 * d],
            );
        }
        let da2 = linear_backward(&model, blk.cq, &bc.a2, n, d, d, &dqc, grads, base_grads);
        let dck = linear_backward(&model, blk.ck, &cache.cond_rows, cond_total, d, d, &dkc, grads, base_grads);
        let dcv = linear_backward(&model, blk.cv, &cache.cond_rows, cond_total, d, d, &dvc, grads, base_grads);
        for ((a, b), c2) in dcond.iter_mut().zip(&dck).zip(&dcv) {
            *a += b + c2;
        }
        let dx2 = norm_backward(&model, blk.ln2, &da2, d, &bc.ln2, grads, base_grads);
        for (a, b) in dh.iter_mut().zip(&dx2) {
            *a += b;
        }

        // Self-attention.
        let d_o = linear_backward(&model, blk.o, &bc.o, n, d, d, &dh, grads, base_grads);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        dq.par_chunks_mut(tokens * d)
            .zip(dk.par_chunks_mut(tokens * d))
            .zip(dv.par_chunks_mut(tokens * d))
            .enumerate()
            .for_each(|(b, ((dqb, dkb), dvb))| {
                let r = b * tokens * d..(b + 1) * tokens * d;
                let pr = b * heads * tokens * tokens..(b + 1) * heads * tokens * tokens;
                attend_backward(
                    &bc.q[r.clone()],
                    &bc.k[r.clone()],
                    &bc.v[r.clone()],
                    &bc.probs[pr],
                    &d_o[r],
                    tokens,
                    tokens,
                    d,
                    heads,
                    dqb,
                    dkb,
                    dvb,
                );
            });
        let mut da1 = linear_backward(&model, blk.q, &bc.a1, n, d, d, &dq, grads, base_grads);
        let da1k = linear_backward(&model, blk.k, &bc.a1, n, d, d, &dk, grads, base_grads);
        let da1v = linear_backward(&model, blk.v, &bc.a1, n, d, d, &dv, grads, base_grads);
        for ((a, b), c2) in da1.iter_mut().zip(&da1k).zip(&da1v) {
            *a += b + c2;
        }
        let dx1 = norm_backward(&model, blk.ln1, &da1, d, &bc.ln1, grads, base_grads);
        for (a, b) in dh.iter_mut().zip(&dx1) {
            *a += b;
        }
    }

    // Condition rows → directional tokens and caption table.
    let table = lay.caption_embedding;
    for b in 0..batch {
        let c0 = cache.cond_offsets[b];
        let tok = cache.cond_token_params[b];
        for j in 0..d {
            grads.tensors[tok][j] += dcond[c0 * d + j];
        }
        for (i, &id) in cache.cond_captions[b].iter().enumerate() {
            let row = &dcond[(c0 + 1 + i) * d..(c0 + 2 + i) * d];
            for (g, v) in grads.tensors[table][id * d..(id + 1) * d].iter_mut().zip(row) {
                *g += v;
            }
        }
    }

    if base_grads {
        // Stem: patch embedding, positions, time embedding.
        let pin = cfg.patch_in();
        gemm(
            1.0,
            Mat::new(&cache.x_in, n, pin),
            true,
            Mat::new(&dh, n, d),
            false,
            1.0,
            MatMut::new(&mut grads.tensors[lay.patch.w], pin, d),
        );
        add_column_sums(&dh, d, &mut grads.tensors[lay.patch.b]);
        let mut dtemb = vec![0.0; batch * d];
        for b in 0..batch {
            for f in 0..frames {
                for s in 0..per_frame {
                    let row = b * tokens + f * per_frame + s;
                    let g = &dh[row * d..(row + 1) * d];
                    for j in 0..d {
                        grads.tensors[lay.spatial_pos][s * d + j] += g[j];
                        grads.tensors[lay.temporal_pos][f * d + j] += g[j];
                        dtemb[b * d + j] += g[j];
                    }
                }
            }
        }
        let da = linear_backward(&model, lay.time2, &cache.time_a, batch, d, d, &dtemb, grads, true);
        let dz: Vec<f64> = da.iter().zip(&cache.time_z).map(|(g, &z)| g * silu_grad(z)).collect();
        linear_backward(&model, lay.time1, &cache.time_sin, batch, d, d, &dz, grads, true);
    }
    Ok(())
}
