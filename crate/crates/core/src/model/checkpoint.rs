//! Binary checkpoint: `"ALWN"`, u32 version, u32 config length, JSON
//! config, then per tensor: u16 name length, name, u8 rank, u32 dims,
//! f32 data. All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::net::Model;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ALWN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXT: &str = "alwn";

pub fn encode_checkpoint<T: Element>(model: &Model<T>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&model.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let json_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut named = Vec::new();
    while !r.done() {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = r
            .take(len * 4)?
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        named.push((name, t));
    }
    let params = ModelParams::from_named(&config, named)?;
    Ok(Model { config, params })
}

impl<T: Element> Model<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, encode_checkpoint(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        decode_checkpoint(&fs::read(path)?)
    }
}
