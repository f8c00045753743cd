use std::path::Path;

use super::{Model, ModelConfig, ModelParams};
use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"S4CK";
const VERSION: u32 = 1;
const STYLE_TENSOR: &str = "style";

fn write_tensor(w: &mut Writer, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::config(format!("tensor name too long: {name}")))?;
    let rank = u8::try_from(t.dims().len()).map_err(|_| Error::config("tensor rank above 255"))?;
    w.u16(len);
    w.bytes(name.as_bytes());
    w.u8(rank);
    for &d in t.dims() {
        w.u32(len_u32(d, "tensor dim")?);
    }
    let vals: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
    w.f32s(&vals);
    Ok(())
}

fn read_tensor(r: &mut Reader<'_>) -> Result<(String, Tensor)> {
    let at = r.offset();
    let len = r.u16("tensor name length")? as usize;
    let name = std::str::from_utf8(r.bytes(len, "tensor name")?)
        .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
        .to_string();
    let rank = r.u8("tensor rank")? as usize;
    if rank == 0 {
        return Err(Error::format(at, format!("tensor {name} has rank 0")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let d = r.u32("tensor dim")? as usize;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::format(at, format!("tensor {name} is too large")))?;
        dims.push(d);
    }
    let data = r.f32s(numel, "tensor values")?;
    let t = Tensor::new(dims, data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(at, format!("tensor {name}: {e}")))?;
    Ok((name, t))
}

impl Model {
    /// Magic, version, a length-prefixed `key=value` config block, then named
    /// tensors (u16 name length, name, u8 rank, u32 dims, f32 values) to the
    /// end of the file. Values are stored as f32; parameters already rounded
    /// to f32 survive the round trip exactly.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let kv = self.config.to_kv();
        w.u32(len_u32(kv.len(), "config block")?);
        w.bytes(kv.as_bytes());
        for (name, t) in self.params.named() {
            write_tensor(&mut w, &name, t)?;
        }
        if let Some(style) = &self.style {
            write_tensor(&mut w, STYLE_TENSOR, style)?;
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let len = r.u32("config block length")? as usize;
        let at = r.offset();
        let text = std::str::from_utf8(r.bytes(len, "config block")?)
            .map_err(|_| Error::format(at, "config block is not UTF-8"))?;
        let config = ModelConfig::from_kv(text).map_err(|e| Error::format(at, e.to_string()))?;
        let mut tensors = Vec::new();
        let mut style = None;
        while !r.at_end() {
            let (name, t) = read_tensor(&mut r)?;
            if name == STYLE_TENSOR {
                style = Some(t);
            } else {
                tensors.push((name, t));
            }
        }
        let params = ModelParams::from_named(&config, tensors)?;
        Model::new(config, params, style)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
