//! A fixed, seeded two-layer convolutional feature extractor.
//!
//! Stands in for a pretrained image network: 64 filters of 3×3 per layer,
//! stride 1, zero "same" padding, no bias, ReLU after each layer. Weights are
//! drawn once from the seed and never change.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::features::{FeatureLayer, FeatureMapStack};
use super::STYLE_MAPS;
use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::rng;

const IMAGE_MAGIC: &[u8; 4] = b"S4IM";
pub const MIN_IMAGE_SIDE: usize = 8;

/// Planar RGB image: three `H × W` channel planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::config(format!(
                "images must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {h}x{w}"
            )));
        }
        if data.len() != 3 * h * w {
            return Err(Error::shape(
                "image",
                format!("3x{h}x{w} needs {} values", 3 * h * w),
            ));
        }
        Ok(Image { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![0.0; 3 * h * w])
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Raw image file: magic `S4IM`, `H` u32, `W` u32, then three planes of
    /// little-endian f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(IMAGE_MAGIC);
        w.u32(len_u32(self.h, "height")?);
        w.u32(len_u32(self.w, "width")?);
        w.f32s(&self.data);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(IMAGE_MAGIC)?;
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let data = r.f32s(3 * h * w, "pixels")?;
        r.finish()?;
        Self::new(h, w, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// `[out][in][3][3]`
    weights: Vec<f64>,
}

impl ConvLayer {
    fn seeded(in_ch: usize, out_ch: usize, g: &mut rng::Rng) -> Self {
        let std = (2.0 / (in_ch * 9) as f64).sqrt();
        let weights = (0..out_ch * in_ch * 9)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, g))
            .collect::<Vec<f64>>();
        ConvLayer {
            in_ch,
            out_ch,
            weights,
        }
    }

    /// Same-padded 3×3 convolution followed by ReLU, on planar input.
    fn apply(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let mut out = vec![0.0; self.out_ch * plane];
        for f in 0..self.out_ch {
            let dst = &mut out[f * plane..(f + 1) * plane];
            for c in 0..self.in_ch {
                let src = &input[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = self.weights[((f * self.in_ch + c) * 3 + ky) * 3 + kx];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let x0 = usize::from(kx == 0);
                            let x1 = if kx == 2 { w - 1 } else { w };
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (o, v) in d.iter_mut().zip(s) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }
}

pub struct PseudoFeatureProvider {
    layers: [ConvLayer; 2],
}

impl PseudoFeatureProvider {
    pub fn new(seed: u64) -> Self {
        let mut g = rng::stream(seed, "pseudo-vgg", 0);
        let first = ConvLayer::seeded(3, STYLE_MAPS, &mut g);
        let second = ConvLayer::seeded(STYLE_MAPS, STYLE_MAPS, &mut g);
        PseudoFeatureProvider {
            layers: [first, second],
        }
    }

    /// Post-ReLU activations of both layers.
    pub fn features(&self, image: &Image) -> Result<FeatureMapStack> {
        let (h, w) = (image.h, image.w);
        let input: Vec<f64> = image.data.iter().map(|&v| f64::from(v)).collect();
        let first = self.layers[0].apply(&input, h, w);
        let second = self.layers[1].apply(&first, h, w);
        let to_layer = |v: Vec<f64>| {
            FeatureLayer::new(STYLE_MAPS, h, w, v.into_iter().map(|x| x as f32).collect())
        };
        Ok(FeatureMapStack {
            layers: vec![to_layer(first)?, to_layer(second)?],
        })
    }
}

/// Textured image whose pattern is set by `cluster`; `variant` adds a small
/// product-specific perturbation.
pub fn pattern_image(cluster: usize, variant: u64, side: usize, seed: u64) -> Result<Image> {
    let mut g = rng::stream(seed, "style-cluster", cluster as u64);
    let fx: f64 = g.gen_range(0.2..1.5);
    let fy: f64 = g.gen_range(0.2..1.5);
    let phase: f64 = g.gen_range(0.0..std::f64::consts::TAU);
    let colors: [f64; 3] = [
        g.gen_range(-1.0..1.0),
        g.gen_range(-1.0..1.0),
        g.gen_range(-1.0..1.0),
    ];
    let mut noise = rng::stream(seed, "style-variant", variant);
    let mut data = Vec::with_capacity(3 * side * side);
    for color in colors {
        for y in 0..side {
            for x in 0..side {
                let base = (fx * x as f64 + fy * y as f64 + phase).sin();
                let jitter: f64 = noise.gen_range(-0.1..0.1);
                data.push((color * base + jitter) as f32);
            }
        }
    }
    Image::new(side, side, data)
}
