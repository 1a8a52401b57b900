//! Checkpoint file: `b"CYCFCKPT"`, `u32` record count, then per record
//! `u16` name length, UTF-8 name, `u32` rank, `rank × u32` dims and an `f32`
//! payload. All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::lora::{AdaptedParameters, Adapter};
use super::params::{ParamSet, ParamTensor, Parameters};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::format::write_bytes;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CYCFCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// What a checkpoint file holds.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Base(Parameters),
    Adapted(AdaptedParameters),
}

impl Checkpoint {
    pub fn base(&self) -> &Parameters {
        match self {
            Checkpoint::Base(p) => p,
            Checkpoint::Adapted(a) => &a.base,
        }
    }
}

pub fn encode_checkpoint<P: ParamSet + ?Sized>(params: &P) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint<P: ParamSet + ?Sized>(path: &Path, params: &P) -> Result<()> {
    write_bytes(path, &encode_checkpoint(params))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<CheckpointRecord>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing CYCFCKPT magic"));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "record name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        records.push(CheckpointRecord { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok(records)
}

pub fn read_checkpoint_records(path: &Path) -> Result<Vec<CheckpointRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint, validating every base tensor against `config`.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<Checkpoint> {
    let records = read_checkpoint_records(path)?;
    let mut by_name: HashMap<String, CheckpointRecord> = HashMap::new();
    let mut adapter_names = Vec::new();
    for rec in records {
        if rec.name.starts_with("adapter.") {
            adapter_names.push(rec.name.clone());
        }
        if by_name.insert(rec.name.clone(), rec).is_some() {
            return Err(Error::format(path, "duplicate record name"));
        }
    }
    let mut tensors = Vec::new();
    for (name, shape) in Parameters::expected_shapes(config)? {
        let rec = by_name.remove(&name).ok_or_else(|| Error::format(path, format!("missing record `{name}`")))?;
        if rec.dims != shape {
            return Err(Error::format(
                path,
                format!("record `{name}` has dims {:?}, config needs {:?}", rec.dims, shape),
            ));
        }
        tensors.push(ParamTensor { name, shape, data: rec.values });
    }
    let base = Parameters::from_tensors(config, tensors)?;
    if adapter_names.is_empty() {
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::format(path, format!("unexpected record `{extra}`")));
        }
        return Ok(Checkpoint::Base(base));
    }

    let mut adapters = Vec::new();
    let mut rank = 0;
    for name in adapter_names.iter().filter(|n| n.ends_with(".A")) {
        let target = name["adapter.".len()..name.len() - 2].to_string();
        let a = by_name.remove(name).expect("listed above");
        let b = by_name
            .remove(&format!("adapter.{target}.B"))
            .ok_or_else(|| Error::format(path, format!("adapter `{target}` lacks B")))?;
        let weight_id = base
            .index_of(&format!("{target}.w"))
            .ok_or_else(|| Error::format(path, format!("adapter on unknown matrix `{target}`")))?;
        let w_shape = &base.tensors()[weight_id].shape;
        let (d_in, d_out) = (w_shape[0], w_shape[1]);
        let r = a.dims.first().copied().unwrap_or(0);
        if a.dims != [r, d_in] || b.dims != [d_out, r] || r == 0 || (rank != 0 && r != rank) {
            return Err(Error::format(path, format!("adapter `{target}` has inconsistent shapes")));
        }
        rank = r;
        adapters.push(Adapter {
            target,
            weight_id,
            a: ParamTensor { name: a.name, shape: a.dims, data: a.values },
            b: ParamTensor { name: b.name, shape: b.dims, data: b.values },
        });
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::format(path, format!("unexpected record `{extra}`")));
    }
    // Keep the layer order of the base so listings are stable.
    adapters.sort_by_key(|a| a.weight_id);
    Ok(Checkpoint::Adapted(AdaptedParameters { base, adapters, rank }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::inject_adapters;

    fn cfg() -> ModelConfig {
        ModelConfig { d_hidden: 16, blocks: 1, heads: 2, mlp_hidden: 16, max_frames: 5, ..ModelConfig::default() }
    }

    fn round_f32(p: &mut impl ParamSet) {
        for t in p.tensors_mut() {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    #[test]
    fn base_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = Parameters::init(&cfg(), 3).unwrap();
        round_f32(&mut p);
        save_checkpoint(&path, &p).unwrap();
        assert_eq!(load_checkpoint(&path, &cfg()).unwrap(), Checkpoint::Base(p));
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"CYCFCKPT");
    }

    #[test]
    fn tokens_are_named_records() {
        let p = Parameters::init(&cfg(), 3).unwrap();
        let recs = decode_checkpoint(&encode_checkpoint(&p), Path::new("x")).unwrap();
        assert!(recs.iter().any(|r| r.name == "tau_fwd" && r.dims == vec![16]));
        assert!(recs.iter().any(|r| r.name == "tau_bwd"));
    }

    #[test]
    fn adapted_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = Parameters::init(&cfg(), 3).unwrap();
        let mut a = inject_adapters(p, 2, &["blocks.0.attn.v".into(), "blocks.0.xattn.q".into()], 1).unwrap();
        round_f32(&mut a);
        save_checkpoint(&path, &a).unwrap();
        assert_eq!(load_checkpoint(&path, &cfg()).unwrap(), Checkpoint::Adapted(a));
    }

    #[test]
    fn census_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &Parameters::init(&cfg(), 3).unwrap()).unwrap();
        let other = ModelConfig { d_hidden: 32, ..cfg() };
        assert!(matches!(load_checkpoint(&path, &other), Err(Error::Format { .. })));
        let more_blocks = ModelConfig { blocks: 2, ..cfg() };
        assert!(load_checkpoint(&path, &more_blocks).is_err());
    }
}
