//! Binary embedding dumps.
//!
//! Layout, little-endian: magic `OVLE`, `u32` node count, `u32` dimension,
//! `u32` signature length and the signature text (canonical form, manifold
//! convention), then the `n x d` embedding as row-major `f64`, then the
//! model's raw scalars as `f64` (their count follows from the signature).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spaces::{parse_signature, Model, ParamLayout, Params};

pub const MAGIC: &[u8; 4] = b"OVLE";

pub fn encode(model: &Model, params: &Params) -> Vec<u8> {
    let layout = params.layout();
    let sig = model.signature().to_string();
    let mut out = Vec::with_capacity(16 + sig.len() + 8 * layout.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layout.nodes as u32).to_le_bytes());
    out.extend_from_slice(&(layout.dim as u32).to_le_bytes());
    out.extend_from_slice(&(sig.len() as u32).to_le_bytes());
    out.extend_from_slice(sig.as_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Params)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header")? != MAGIC {
        return Err(Error::Format("not an embedding dump (bad magic)".into()));
    }
    let n = r.u32("header")?;
    let d = r.u32("header")?;
    let sig_len = r.u32("header")?;
    let text = std::str::from_utf8(r.take(sig_len, "signature")?)
        .map_err(|_| Error::Format("signature is not UTF-8".into()))?;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty embedding ({n} x {d})")));
    }
    let model = Model::new(parse_signature(text, d)?);
    let layout = ParamLayout::for_model(&model, n);
    let expected = layout
        .nodes
        .checked_mul(layout.dim)
        .and_then(|e| e.checked_add(layout.scalars))
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let body = r.take(expected, "parameter block")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameter block",
            bytes.len() - r.pos
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = Params::from_flat(layout, values)?;
    Ok((model, params))
}

pub fn write_dump(path: &Path, model: &Model, params: &Params) -> Result<()> {
    fs::write(path, encode(model, params)).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<(Model, Params)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
