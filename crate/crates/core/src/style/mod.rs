//! Gram-matrix style features.
//!
//! Products are described by the correlations between the feature maps of
//! the first two convolutional layers of an image network. Each layer's
//! 64×64 gram matrix is max-pooled to 16×16 and the two pooled grids are
//! concatenated into a 512-value style vector.

mod cache;
mod features;
pub mod provider;

pub use cache::StyleCache;
pub use features::{load_feature_maps, FeatureLayer, FeatureMapStack};
pub use provider::{pattern_image, Image, PseudoFeatureProvider};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Feature maps per layer expected by [`extract_style_embedding`].
pub const STYLE_MAPS: usize = 64;
/// Side of the pooled gram grid.
pub const POOLED_SIDE: usize = 16;
pub const POOL_WINDOW: usize = STYLE_MAPS / POOLED_SIDE;
/// Layers consumed by [`extract_style_embedding`].
pub const STYLE_LAYERS: usize = 2;
pub const STYLE_DIM: usize = STYLE_LAYERS * POOLED_SIDE * POOLED_SIDE;

/// Pairwise dot products of one layer's feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    /// Flattened map size of the layer the gram came from.
    pub m: usize,
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// `G[i][j] = ⟨F_i, F_j⟩`. Only the upper triangle is summed; the lower one
/// is mirrored so the matrix is exactly symmetric.
pub fn gram(layer: &FeatureLayer) -> GramMatrix {
    let n = layer.n();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let fi = layer.map(i);
        for j in i..n {
            let fj = layer.map(j);
            let mut s = 0.0f64;
            for (a, b) in fi.iter().zip(fj) {
                s += f64::from(*a) * f64::from(*b);
            }
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    GramMatrix {
        n,
        m: layer.m(),
        values,
    }
}

/// Per-layer style loss `Σ (G_in − G_style)² / (4 N² M²)`.
pub fn layer_style_loss(input: &GramMatrix, style: &GramMatrix) -> Result<f64> {
    if input.n != style.n || input.m != style.m {
        return Err(Error::shape(
            "style_loss",
            format!(
                "gram {}x{} (M={}) vs {}x{} (M={})",
                input.n, input.n, input.m, style.n, style.n, style.m
            ),
        ));
    }
    let sq: f64 = input
        .values
        .iter()
        .zip(&style.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let (n, m) = (input.n as f64, input.m as f64);
    Ok(sq / (4.0 * n * n * m * m))
}

/// Weighted sum of per-layer style losses.
pub fn style_loss(input: &[GramMatrix], style: &[GramMatrix], weights: &[f64]) -> Result<f64> {
    if input.len() != style.len() || input.len() != weights.len() {
        return Err(Error::shape(
            "style_loss",
            format!(
                "{} input layers, {} style layers, {} weights",
                input.len(),
                style.len(),
                weights.len()
            ),
        ));
    }
    let mut total = 0.0;
    for ((a, b), w) in input.iter().zip(style).zip(weights) {
        total += w * layer_style_loss(a, b)?;
    }
    Ok(total)
}

/// Half the summed squared difference of two feature stacks.
pub fn content_loss(a: &FeatureMapStack, b: &FeatureMapStack) -> Result<f64> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::shape("content_loss", "layer counts differ"));
    }
    let mut total = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        if (la.n(), la.height(), la.width()) != (lb.n(), lb.height(), lb.width()) {
            return Err(Error::shape("content_loss", "layer shapes differ"));
        }
        total += la
            .data()
            .iter()
            .zip(lb.data())
            .map(|(x, y)| {
                let d = f64::from(*x) - f64::from(*y);
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / 2.0)
}

/// Non-overlapping `POOL_WINDOW × POOL_WINDOW` max-pool of a 64×64 gram.
pub fn max_pool_gram(g: &GramMatrix) -> Result<Vec<f64>> {
    if g.n != STYLE_MAPS {
        return Err(Error::config(format!(
            "style pooling needs {STYLE_MAPS} feature maps per layer, got {}",
            g.n
        )));
    }
    let mut out = vec![f64::NEG_INFINITY; POOLED_SIDE * POOLED_SIDE];
    for i in 0..g.n {
        for j in 0..g.n {
            let cell = &mut out[(i / POOL_WINDOW) * POOLED_SIDE + j / POOL_WINDOW];
            *cell = cell.max(g.get(i, j));
        }
    }
    Ok(out)
}

/// How gram values are scaled before pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramScale {
    Raw,
    /// Divide each layer's gram by `N·M`.
    PerElement,
}

/// 512-value style vector for one product from its first two feature layers.
///
/// Catalog-level standardization is applied separately by
/// [`StyleCache::standardize`].
pub fn extract_style_embedding(stack: &FeatureMapStack, scale: GramScale) -> Result<Vec<f64>> {
    if stack.layers.len() < STYLE_LAYERS {
        return Err(Error::config(format!(
            "style extraction needs {STYLE_LAYERS} layers, got {}",
            stack.layers.len()
        )));
    }
    let mut out = Vec::with_capacity(STYLE_DIM);
    for layer in &stack.layers[..STYLE_LAYERS] {
        if layer.n() != STYLE_MAPS {
            return Err(Error::config(format!(
                "style extraction needs {STYLE_MAPS} feature maps per layer, got {}",
                layer.n()
            )));
        }
        let mut g = gram(layer);
        if scale == GramScale::PerElement {
            let d = (g.n * g.m) as f64;
            g.values.iter_mut().for_each(|v| *v /= d);
        }
        out.extend(max_pool_gram(&g)?);
    }
    Ok(out)
}

/// Standardized cache for `ids`, extracting products in parallel under
/// `exec`. `features` returns `None` for a product without an image; those
/// get the zero vector and are counted in the second return value.
pub fn build_cache<F>(ids: &[u32], features: F, exec: Exec) -> Result<(StyleCache, usize)>
where
    F: Fn(u32) -> Result<Option<FeatureMapStack>> + Sync + Send,
{
    let vectors = exec.try_map(ids, |_, &id| -> Result<Option<Vec<f64>>> {
        features(id)?
            .map(|stack| extract_style_embedding(&stack, GramScale::PerElement))
            .transpose()
    })?;
    let mut cache = StyleCache::new();
    let mut missing = 0;
    for (&id, v) in ids.iter().zip(vectors) {
        match v {
            Some(v) => cache.insert(id, &v)?,
            None => {
                missing += 1;
                cache.insert_missing(id);
            }
        }
    }
    cache.standardize();
    Ok((cache, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_layer(n: usize, h: usize, w: usize, seed: u64) -> FeatureLayer {
        let mut g = rng::stream(seed, "test-layer", 0);
        FeatureLayer::new(
            n,
            h,
            w,
            (0..n * h * w).map(|_| g.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gram_examples() {
        let ones = FeatureLayer::new(1, 4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(gram(&ones).values, vec![16.0]);

        let mut a = vec![0.0; 9];
        let mut b = vec![0.0; 9];
        a[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        b[5..].copy_from_slice(&[5.0, 6.0, 7.0, 8.0]);
        let layer = FeatureLayer::from_maps(vec![(3, 3, a), (3, 3, b)]).unwrap();
        let g = gram(&layer);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.get(0, 0), 30.0);
    }

    #[test]
    fn gram_matches_pixel_double_loop() {
        let layer = random_layer(3, 5, 4, 1);
        let g = gram(&layer);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0f64;
                for p in 0..20 {
                    s += f64::from(layer.map(i)[p]) * f64::from(layer.map(j)[p]);
                }
                assert_eq!(g.get(i, j), s);
            }
        }
    }

    #[test]
    fn gram_dims_ignore_map_size() {
        for (h, w) in [(1, 1), (3, 7), (16, 16), (31, 2)] {
            let g = gram(&random_layer(5, h, w, 4));
            assert_eq!(g.values.len(), 25);
        }
    }

    #[test]
    fn style_loss_examples() {
        let g = |v: f64| GramMatrix {
            n: 1,
            m: 2,
            values: vec![v],
        };
        assert_eq!(style_loss(&[g(4.0)], &[g(2.0)], &[1.0]).unwrap(), 0.25);
        assert_eq!(style_loss(&[g(4.0)], &[g(4.0)], &[1.0]).unwrap(), 0.0);
        assert_eq!(
            style_loss(&[g(4.0), g(1.0)], &[g(2.0), g(9.0)], &[0.0, 0.0]).unwrap(),
            0.0
        );
        assert_eq!(
            style_loss(&[g(4.0), g(1.0)], &[g(2.0), g(3.0)], &[2.0, 1.0]).unwrap(),
            0.75
        );
        assert!(style_loss(&[g(4.0)], &[g(2.0)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn content_loss_examples() {
        let a = FeatureMapStack {
            layers: vec![FeatureLayer::new(1, 2, 2, vec![1.0; 4]).unwrap()],
        };
        let b = FeatureMapStack {
            layers: vec![FeatureLayer::new(1, 2, 2, vec![0.0; 4]).unwrap()],
        };
        assert_eq!(content_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(content_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(content_loss(&b, &a).unwrap(), 2.0);
        let c = FeatureMapStack {
            layers: vec![FeatureLayer::new(1, 1, 4, vec![0.0; 4]).unwrap()],
        };
        assert!(matches!(content_loss(&a, &c), Err(Error::Shape { .. })));
    }

    #[test]
    fn pooling_examples() {
        let flat = GramMatrix {
            n: 64,
            m: 1,
            values: vec![2.5; 64 * 64],
        };
        assert_eq!(max_pool_gram(&flat).unwrap(), vec![2.5; 256]);

        let mut spike = GramMatrix {
            n: 64,
            m: 1,
            values: vec![0.0; 64 * 64],
        };
        spike.values[0] = 9.0;
        let pooled = max_pool_gram(&spike).unwrap();
        assert_eq!(pooled[0], 9.0);
        assert!(pooled[1..].iter().all(|&v| v == 0.0));

        let mut corner = GramMatrix {
            n: 64,
            m: 1,
            values: vec![-1.0; 64 * 64],
        };
        corner.values[63 * 64 + 60] = 5.0;
        assert_eq!(max_pool_gram(&corner).unwrap()[15 * 16 + 15], 5.0);
    }

    #[test]
    fn embedding_shape_and_errors() {
        let stack = FeatureMapStack {
            layers: vec![random_layer(64, 4, 4, 1), random_layer(64, 3, 5, 2)],
        };
        let e = extract_style_embedding(&stack, GramScale::PerElement).unwrap();
        assert_eq!(e.len(), 512);
        let small = FeatureMapStack {
            layers: vec![random_layer(32, 4, 4, 1), random_layer(64, 4, 4, 2)],
        };
        assert!(matches!(
            extract_style_embedding(&small, GramScale::Raw),
            Err(Error::Config(_))
        ));
        let one = FeatureMapStack {
            layers: vec![random_layer(64, 4, 4, 1)],
        };
        assert!(matches!(
            extract_style_embedding(&one, GramScale::Raw),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn embedding_is_scale_covariant() {
        let stack = FeatureMapStack {
            layers: vec![random_layer(64, 3, 3, 5), random_layer(64, 2, 4, 6)],
        };
        let c = 2.0f32;
        let scaled = FeatureMapStack {
            layers: stack.layers.iter().map(|l| l.scaled(c)).collect(),
        };
        let a = extract_style_embedding(&stack, GramScale::Raw).unwrap();
        let b = extract_style_embedding(&scaled, GramScale::Raw).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 4.0 * x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn cache_from_stacks() {
        let stacks: Vec<FeatureMapStack> = (0..4)
            .map(|i| FeatureMapStack {
                layers: vec![
                    random_layer(64, 3, 3, 10 + i),
                    random_layer(64, 3, 3, 20 + i),
                ],
            })
            .collect();
        let features = |id: u32| Ok((id != 3).then(|| stacks[id as usize - 1].clone()));
        let (cache, missing) = build_cache(&[1, 2, 3, 4], features, Exec::Parallel).unwrap();
        assert_eq!((cache.len(), missing), (4, 1));
        assert!(!cache.has_image(3) && cache.has_image(1));
        let (seq, _) = build_cache(&[1, 2, 3, 4], features, Exec::Sequential).unwrap();
        assert_eq!(seq, cache);
    }
}
