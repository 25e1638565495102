//! Binary checkpoint format.
//!
//! Layout (little endian):
//!
//! ```text
//! "VNSG" | u32 version=1 | u32 tensor count
//! per tensor: u32 name length | name (utf-8) | u32 rank | u32 dims[rank] | f32 data
//! ```
//!
//! A decoder checkpoint also stores three one-element `meta.*` tensors so the
//! full [`ModelConfig`] can be rebuilt from the file alone.

use std::path::Path;

use crate::cells::Cell;
use crate::data::write_atomic;
use crate::decoder::{DecoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"VNSG";
pub const VERSION: u32 = 1;

/// A named tensor as stored on disk.
pub type Named = (String, Tensor<f32>);

pub fn encode_tensors(tensors: &[Named]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl Reader<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            context: self.context.clone(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8], context: &str) -> Result<Vec<Named>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        context: context.to_string(),
    };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let start = r.pos;
        let name = match std::str::from_utf8(r.take(len, "name")?) {
            Ok(n) => n.to_string(),
            Err(_) => {
                r.pos = start;
                return Err(r.fail(format!("tensor {i} name is not utf-8")));
            }
        };
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            r.pos -= 4;
            return Err(r.fail(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_needed = n.and_then(|n| n.checked_mul(4)).ok_or_else(|| r.fail("tensor size overflows"))?;
        let raw = r.take(bytes_needed, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[Named]) -> Result<()> {
    write_atomic(path, &encode_tensors(tensors))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Named>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes, &path.display().to_string())
}

fn meta(value: f64) -> Tensor<f32> {
    Tensor::vector(vec![value as f32]).expect("one element")
}

/// Named f32 tensors of a decoder, including the `meta.*` entries.
pub fn decoder_tensors<T: Real>(params: &DecoderParams<T>) -> Vec<Named> {
    let c = params.config;
    let mut out = vec![
        ("meta.layer_norm".to_string(), meta(c.layer_norm as u8 as f64)),
        ("meta.ln_eps".to_string(), meta(c.ln_eps)),
        ("meta.visual_to_all_layers".to_string(), meta(c.visual_to_all_layers as u8 as f64)),
    ];
    for (name, t) in DecoderParams::<T>::names().into_iter().zip(params.tensors()) {
        out.push((name, t.cast()));
    }
    out
}

pub fn save_decoder<T: Real>(path: &Path, params: &DecoderParams<T>) -> Result<()> {
    save_tensors(path, &decoder_tensors(params))
}

/// Rebuilds a decoder from named tensors; every expected tensor must be
/// present with a consistent shape.
pub fn decoder_from_tensors(tensors: Vec<Named>, context: &str) -> Result<DecoderParams<f32>> {
    let fail = |message: String| Error::Format {
        context: context.to_string(),
        offset: 0,
        message,
    };
    let mut map: std::collections::BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut take = |name: &str| map.remove(name).ok_or_else(|| fail(format!("missing tensor {name}")));
    let flag = |t: Tensor<f32>| t.data().first().copied().unwrap_or(0.0) != 0.0;
    let layer_norm = flag(take("meta.layer_norm")?);
    // shortest decimal form of the stored f32, so 1e-5 comes back as 1e-5
    let eps32 = take("meta.ln_eps")?.data().first().copied().unwrap_or(0.0);
    let ln_eps = eps32.to_string().parse::<f64>().unwrap_or(eps32 as f64);
    let visual_to_all_layers = flag(take("meta.visual_to_all_layers")?);
    let embedding = take("embedding")?;
    let out_weight = take("output.weight")?;
    let w_s = take("layer1.z.w_s")?;
    let v_v = take("layer1.z.v_v")?;
    if embedding.rank() != 2 || out_weight.rank() != 2 || w_s.rank() != 2 || v_v.rank() != 2 {
        return Err(fail("parameter matrices must have rank 2".into()));
    }
    let config = ModelConfig {
        vocab_size: embedding.rows(),
        n_x: embedding.cols(),
        n_h: out_weight.cols(),
        n_f: w_s.rows(),
        n_s: w_s.cols(),
        n_v: v_v.cols(),
        layer_norm,
        ln_eps,
        visual_to_all_layers,
    };
    config.validate().map_err(|e| fail(e.to_string()))?;
    let mut params = DecoderParams::<f32>::init(config, 0)?;
    map.insert("layer1.z.w_s".into(), w_s);
    map.insert("layer1.z.v_v".into(), v_v);
    map.insert("embedding".into(), embedding);
    map.insert("output.weight".into(), out_weight);
    for (name, slot) in DecoderParams::<f32>::names().into_iter().zip(params.tensors_mut()) {
        let t = map.remove(&name).ok_or_else(|| fail(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(fail(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    if let Some(extra) = map.keys().next() {
        return Err(fail(format!("unexpected tensor {extra}")));
    }
    debug_assert_eq!(Cell::<()>::slot_names().len(), 33);
    params.validate()?;
    Ok(params)
}

pub fn load_decoder(path: &Path) -> Result<DecoderParams<f32>> {
    let tensors = load_tensors(path)?;
    decoder_from_tensors(tensors, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DecoderParams<f32> {
        let config = ModelConfig {
            vocab_size: 9,
            n_x: 4,
            n_h: 5,
            n_f: 3,
            n_s: 6,
            n_v: 7,
            layer_norm: true,
            ln_eps: 1e-5,
            visual_to_all_layers: false,
        };
        DecoderParams::init(config, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = small();
        let bytes = encode_tensors(&decoder_tensors(&p));
        let back = decoder_from_tensors(decode_tensors(&bytes, "mem").unwrap(), "mem").unwrap();
        assert_eq!(back.config.vocab_size, 9);
        assert!(!back.config.visual_to_all_layers);
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            let a: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_tensors(&decoder_tensors(&small()));
        let cut = &bytes[..bytes.len() - 3];
        match decode_tensors(cut, "mem") {
            Err(Error::Format { offset, .. }) => assert!(offset > 12 && (offset as usize) < bytes.len()),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_tensors(&decoder_tensors(&small()));
        bytes[0] = b'X';
        assert!(matches!(decode_tensors(&bytes, "mem"), Err(Error::Format { offset: 0, .. })));
    }
}
