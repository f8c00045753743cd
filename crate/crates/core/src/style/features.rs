use std::path::Path;

use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"S4RF";
const VERSION: u32 = 1;

/// The `N` feature maps of one convolutional layer, each `H × W`, stored
/// map-major and row-major within a map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayer {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl FeatureLayer {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "feature layer",
                format!("empty layer {n}x{h}x{w}"),
            ));
        }
        if data.len() != n * h * w {
            return Err(Error::shape(
                "feature layer",
                format!("{n}x{h}x{w} needs {} values, got {}", n * h * w, data.len()),
            ));
        }
        Ok(FeatureLayer { n, h, w, data })
    }

    /// Builds a layer from separate `(H, W, values)` maps, which must agree in shape.
    pub fn from_maps(maps: Vec<(usize, usize, Vec<f32>)>) -> Result<Self> {
        let Some(&(h, w, _)) = maps.first() else {
            return Err(Error::shape("feature layer", "no feature maps"));
        };
        let n = maps.len();
        let mut data = Vec::with_capacity(n * h * w);
        for (i, (mh, mw, vals)) in maps.into_iter().enumerate() {
            if (mh, mw) != (h, w) || vals.len() != h * w {
                return Err(Error::shape(
                    "feature layer",
                    format!(
                        "map {i} is {mh}x{mw} with {} values, expected {h}x{w}",
                        vals.len()
                    ),
                ));
            }
            data.extend(vals);
        }
        Self::new(n, h, w, data)
    }

    /// Number of feature maps, `N_k`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Flattened map size, `M_k = H·W`.
    pub fn m(&self) -> usize {
        self.h * self.w
    }

    pub fn map(&self, i: usize) -> &[f32] {
        let m = self.m();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn scaled(&self, c: f32) -> Self {
        FeatureLayer {
            data: self.data.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Feature maps for a sequence of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    pub layers: Vec<FeatureLayer>,
}

impl FeatureMapStack {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(len_u32(self.layers.len(), "layer count")?);
        for l in &self.layers {
            w.u32(len_u32(l.n, "N")?);
            w.u32(len_u32(l.h, "H")?);
            w.u32(len_u32(l.w, "W")?);
            w.f32s(&l.data);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for k in 0..count {
            let at = r.offset();
            let n = r.u32("N")? as usize;
            let h = r.u32("H")? as usize;
            let w = r.u32("W")? as usize;
            if n == 0 || h == 0 || w == 0 {
                return Err(Error::format(
                    at,
                    format!("layer {k} has an empty dimension"),
                ));
            }
            let numel = n
                .checked_mul(h)
                .and_then(|x| x.checked_mul(w))
                .ok_or_else(|| Error::format(at, format!("layer {k} is too large")))?;
            let data = r.f32s(numel, "feature values")?;
            layers.push(FeatureLayer { n, h, w, data });
        }
        r.finish()?;
        Ok(FeatureMapStack { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Reads an S4RF feature-map file.
pub fn load_feature_maps(path: impl AsRef<Path>) -> Result<FeatureMapStack> {
    FeatureMapStack::from_bytes(&std::fs::read(path)?)
}
