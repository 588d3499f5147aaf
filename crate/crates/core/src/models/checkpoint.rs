//! VFR1 checkpoint container.
//!
//! `"VFR1"` | u32 config length | config as `key=value` lines | u32 parameter
//! count | per parameter: u32 name length, name, u32 rank, rank × u32 dims,
//! f64 values. Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

pub const VFR1_MAGIC: &[u8; 4] = b"VFR1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(VFR1_MAGIC);
    let cfg = model.config().to_kv();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.params().len());
    for (name, t) in model.names().iter().zip(model.params()) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            )
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let at = self.pos;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != VFR1_MAGIC {
        return Err(Error::format(0, "bad magic, expected VFR1"));
    }
    let n = c.u32("config length")?;
    let cfg_at = c.pos;
    let config = ModelConfig::from_kv(c.text(n, "config")?).map_err(|e| Error::format(cfg_at, e.to_string()))?;
    let count = c.u32("parameter count")?;
    let mut names = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32("name length")?;
        names.push(c.text(len, "name")?.to_string());
        let rank = c.u32("rank")?;
        let dims = (0..rank).map(|_| c.u32("dims")).collect::<Result<Vec<_>>>()?;
        let at = c.pos;
        let n: usize = dims.iter().product();
        let raw = c.take(n * 8, "values")?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Tensor::new(&dims, data).map_err(|e| Error::format(at, e.to_string()))?);
    }
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let fresh = Model::new(config.clone(), 0)?;
    for (i, (name, t)) in names.iter().zip(&params).enumerate() {
        match fresh.names().get(i) {
            Some(expected) if expected == name && fresh.params()[i].shape() == t.shape() => {}
            _ => return Err(Error::config(format!("checkpoint parameter `{name}` does not fit the stored config"))),
        }
    }
    if names.len() != fresh.names().len() {
        return Err(Error::config("checkpoint is missing parameters"));
    }
    Model::from_parts(config, names, params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;

    #[test]
    fn round_trip_is_byte_exact() {
        for arch in Arch::ALL {
            let mut cfg = ModelConfig::with_arch(arch);
            cfg.layers = 1;
            cfg.embed_dim = 16;
            let m = Model::new(cfg, 3).unwrap();
            let bytes = encode_checkpoint(&m);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(encode_checkpoint(&back), bytes);
            assert_eq!(back.params(), m.params());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut cfg = ModelConfig::with_arch(Arch::MlpRelu);
        cfg.baseline_width = Some(4);
        let bytes = encode_checkpoint(&Model::new(cfg, 1).unwrap());
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'W';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }
}
