//! ESMG binary grid container and 16-bit PGM export.
//!
//! ESMG layout (all integers little-endian):
//! `"ESMG"` | version u8 | height u32 | width u32 | tag u8 | norm_min f64 |
//! norm_max f64 | height·width f64 values.

use std::fs;
use std::path::Path;

use super::{GridField, VariableTag};
use crate::error::{Error, Result};

pub const ESMG_MAGIC: &[u8; 4] = b"ESMG";
pub const ESMG_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1 + 8 + 8;

pub fn encode_grid(field: &GridField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.values.len());
    out.extend_from_slice(ESMG_MAGIC);
    out.push(ESMG_VERSION);
    out.extend_from_slice(&(field.height as u32).to_le_bytes());
    out.extend_from_slice(&(field.width as u32).to_le_bytes());
    out.push(field.tag.code());
    out.extend_from_slice(&field.norm_min.to_le_bytes());
    out.extend_from_slice(&field.norm_max.to_le_bytes());
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < self.pos + n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: expected {} bytes, got {}", self.pos + n, self.buf.len()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridField> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != ESMG_MAGIC {
        return Err(Error::format(0, "bad magic, expected ESMG"));
    }
    let version = r.take(1, "version")?[0];
    if version != ESMG_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let tag_pos = r.pos;
    let code = r.take(1, "tag")?[0];
    let tag = VariableTag::from_code(code)
        .ok_or_else(|| Error::format(tag_pos, format!("unknown variable tag {code}")))?;
    let norm_min = r.f64("norm_min")?;
    let norm_max = r.f64("norm_max")?;
    let expected = HEADER_LEN + 8 * height * width;
    if bytes.len() != expected {
        return Err(Error::format(
            r.pos,
            format!("payload length mismatch: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridField::with_range(height, width, values, tag, norm_min, norm_max)
        .map_err(|e| Error::format(HEADER_LEN, e.to_string()))
}

pub fn save_grid(field: &GridField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_grid(field))?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridField> {
    decode_grid(&fs::read(path)?)
}

/// Writes a binary 16-bit PGM, mapping `[lo, hi]` onto the full gray range.
/// Values are clamped, so model outputs slightly outside `[0, 1]` are safe.
pub fn write_pgm(field: &GridField, path: impl AsRef<Path>, lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::config(format!("PGM range [{lo}, {hi}] is empty")));
    }
    let mut out = format!("P5\n{} {}\n65535\n", field.width, field.height).into_bytes();
    for v in &field.values {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        out.extend_from_slice(&((t * 65535.0).round() as u16).to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
