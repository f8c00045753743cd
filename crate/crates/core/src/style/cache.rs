use std::collections::BTreeMap;
use std::path::Path;

use super::STYLE_DIM;
use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"S4SE";
const VERSION: u32 = 1;

/// Style vectors keyed by product id.
///
/// Products without an image hold the zero vector; [`StyleCache::has_image`]
/// reports them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StyleCache {
    entries: BTreeMap<u32, Vec<f32>>,
}

impl StyleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u32, values: &[f64]) -> Result<()> {
        if values.len() != STYLE_DIM {
            return Err(Error::shape(
                "style cache",
                format!(
                    "style vectors have {STYLE_DIM} values, got {}",
                    values.len()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "style cache" });
        }
        self.entries
            .insert(id, values.iter().map(|&v| v as f32).collect());
        Ok(())
    }

    pub fn insert_missing(&mut self, id: u32) {
        self.entries.insert(id, vec![0.0; STYLE_DIM]);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&[f32]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn has_image(&self, id: u32) -> bool {
        self.get(id).is_some_and(|v| v.iter().any(|&x| x != 0.0))
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    /// Shifts and scales every dimension to zero mean and unit variance over
    /// the products that have images. Constant dimensions become 0.
    pub fn standardize(&mut self) {
        let with_image: Vec<u32> = self.ids().filter(|&id| self.has_image(id)).collect();
        if with_image.is_empty() {
            return;
        }
        let n = with_image.len() as f64;
        for d in 0..STYLE_DIM {
            let vals: Vec<f64> = with_image
                .iter()
                .map(|id| f64::from(self.entries[id][d]))
                .collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            for (id, v) in with_image.iter().zip(vals) {
                let z = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
                self.entries.get_mut(id).expect("present")[d] = z as f32;
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(len_u32(self.entries.len(), "product count")?);
        for (id, v) in &self.entries {
            w.u32(*id);
            w.f32s(v);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32("product count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let at = r.offset();
            let id = r.u32("product id")?;
            let v = r.f32s(STYLE_DIM, "style vector")?;
            if entries.insert(id, v).is_some() {
                return Err(Error::format(at, format!("duplicate product id {id}")));
            }
        }
        r.finish()?;
        Ok(StyleCache { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
