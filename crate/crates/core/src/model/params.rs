use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Weights of one encoder block. Per-head projections are column slices of
/// `wq`, `wk` and `wv`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

const BLOCK_FIELDS: [&str; 12] = [
    "wq",
    "wk",
    "wv",
    "wo",
    "w1",
    "b1",
    "w2",
    "b2",
    "ln1_gamma",
    "ln1_beta",
    "ln2_gamma",
    "ln2_beta",
];

impl BlockParams {
    fn fields(&self) -> [&Tensor; 12] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

/// All trainable weights. Row 0 of the product table is the padding row; it
/// stays zero and is never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embeddings: Tensor,
    pub blocks: Vec<BlockParams>,
    pub w_out: Tensor,
}

/// Rows `1..=products` drawn i.i.d. from N(0, 1); row 0 zeros.
pub fn init_product_embeddings(products: u32, d_product: usize, seed: u64) -> Result<Tensor> {
    if products == 0 || d_product == 0 {
        return Err(Error::config(
            "embedding table needs at least one product and one column",
        ));
    }
    let mut g = rng::stream(seed, "init.embeddings", 0);
    let rows = products as usize + 1;
    let mut data = vec![0.0; rows * d_product];
    for v in &mut data[d_product..] {
        *v = Distribution::<f64>::sample(&StandardNormal, &mut g);
    }
    Tensor::matrix(rows, d_product, data)
}

fn xavier(rows: usize, cols: usize, seed: u64, label: &str) -> Tensor {
    let mut g = rng::stream(seed, label, 0);
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| g.gen_range(-a..a)).collect();
    Tensor::from_parts(rows, cols, data)
}

fn filled(cols: usize, v: f64) -> Tensor {
    Tensor::from_parts(1, cols, vec![v; cols])
}

impl ModelParams {
    pub fn init(config: &ModelConfig, products: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim();
        let f = config.ffn_dim();
        let blocks = (0..config.n_blocks)
            .map(|b| {
                let label = |name: &str| format!("init.block{b}.{name}");
                BlockParams {
                    wq: xavier(d, d, seed, &label("wq")),
                    wk: xavier(d, d, seed, &label("wk")),
                    wv: xavier(d, d, seed, &label("wv")),
                    wo: xavier(d, d, seed, &label("wo")),
                    w1: xavier(d, f, seed, &label("w1")),
                    b1: filled(f, 0.0),
                    w2: xavier(f, d, seed, &label("w2")),
                    b2: filled(d, 0.0),
                    ln1_gamma: filled(d, 1.0),
                    ln1_beta: filled(d, 0.0),
                    ln2_gamma: filled(d, 1.0),
                    ln2_beta: filled(d, 0.0),
                }
            })
            .collect();
        Ok(ModelParams {
            embeddings: init_product_embeddings(products, config.d_product, seed)?,
            blocks,
            w_out: xavier(d, config.d_product, seed, "init.w_out"),
        })
    }

    pub fn products(&self) -> u32 {
        (self.embeddings.shape2().0 - 1) as u32
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (b, block) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_FIELDS.iter().zip(block.fields()) {
                out.push((format!("block{b}.{name}"), t));
            }
        }
        out.push(("w_out".to_string(), &self.w_out));
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embeddings];
        for block in &mut self.blocks {
            out.extend(block.fields_mut());
        }
        out.push(&mut self.w_out);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.round_to_f32();
        }
    }

    /// Rebuilds parameters from named tensors, checking every shape against `config`.
    pub fn from_named(config: &ModelConfig, mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let Some(pos) = tensors.iter().position(|(n, _)| n == "embeddings") else {
            return Err(Error::input(None, "checkpoint has no embeddings tensor"));
        };
        let rows = tensors[pos].1.shape2().0;
        if rows < 2 {
            return Err(Error::input(None, "embedding table has no product rows"));
        }
        let mut params = ModelParams::init(config, (rows - 1) as u32, 0)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.dims().to_vec()))
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::input(
                None,
                format!(
                    "expected {} tensors, found {}",
                    expected.len(),
                    tensors.len()
                ),
            ));
        }
        for ((name, dims), slot) in expected.iter().zip(params.tensors_mut()) {
            let i = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::input(None, format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(i);
            if t.dims() != dims.as_slice() {
                return Err(Error::input(
                    None,
                    format!("tensor {name} has dims {:?}, expected {dims:?}", t.dims()),
                ));
            }
            *slot = t;
        }
        if params.embeddings.row_slice(0).iter().any(|&v| v != 0.0) {
            return Err(Error::input(
                None,
                "padding row of the embedding table is not zero",
            ));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_table_statistics() {
        let t = init_product_embeddings(1000, 128, 11).unwrap();
        assert!(t.row_slice(0).iter().all(|&v| v == 0.0));
        let body = &t.data()[128..];
        let n = body.len() as f64;
        assert!(n >= 1e5);
        let mean = body.iter().sum::<f64>() / n;
        let var = body.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_eq!(init_product_embeddings(1000, 128, 11).unwrap(), t);
        assert_ne!(init_product_embeddings(1000, 128, 12).unwrap(), t);
    }

    #[test]
    fn names_and_shapes() {
        let c = ModelConfig {
            d_product: 4,
            d_model: 4,
            d_ffn: Some(3),
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&c, 5, 1).unwrap();
        let named = p.named();
        assert_eq!(named.len(), 1 + 2 * 12 + 1);
        assert_eq!(named[0].1.dims(), &[6, 4]);
        assert_eq!(named[1].0, "block0.wq");
        assert_eq!(named[5].1.dims(), &[8, 3]);
        assert_eq!(named.last().unwrap().1.dims(), &[8, 4]);
        assert_eq!(p.products(), 5);
        let owned = named.into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(ModelParams::from_named(&c, owned).unwrap(), p);
    }
}
