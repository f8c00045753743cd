//! Sequence encoder and cosine scoring.

mod checkpoint;
mod config;
pub mod encoder;
mod params;

pub use config::ModelConfig;
pub use encoder::{
    build_input, encode, hidden_states, history_vector, multi_head_attention, positional_encoding,
    transformer_block, Attention, BlockVars, ParamVars, Pass, LN_EPS,
};
pub use params::{init_product_embeddings, BlockParams, ModelParams};

use crate::data::Padded;
use crate::error::{Error, Result};
use crate::style::{StyleCache, STYLE_DIM};
use crate::tensor::{cosine, Graph, Tensor};

/// Configuration, weights and (when enabled) the fixed style table.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// `(P+1) × 512`; row `i` is product `i`'s style vector.
    pub style: Option<Tensor>,
}

/// Dense style table for products `0..=products`, each cached vector
/// multiplied by `scale`. Products missing from the cache, and the padding
/// row, are zero.
pub fn style_table(cache: &StyleCache, products: u32, scale: f64) -> Tensor {
    let rows = products as usize + 1;
    let mut data = vec![0.0; rows * STYLE_DIM];
    for id in cache.ids().filter(|&id| id >= 1 && id <= products) {
        let v = cache.get(id).expect("listed id");
        let at = id as usize * STYLE_DIM;
        for (d, s) in data[at..at + STYLE_DIM].iter_mut().zip(v) {
            // kept f32-representable so checkpoints reload it exactly
            *d = f64::from((f64::from(*s) * scale) as f32);
        }
    }
    Tensor::matrix(rows, STYLE_DIM, data).expect("finite cache values")
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams, style: Option<Tensor>) -> Result<Self> {
        config.validate()?;
        match (&style, config.use_style) {
            (None, true) => {
                return Err(Error::config(
                    "use_style is set but no style table was given",
                ))
            }
            (Some(_), false) => {
                return Err(Error::config(
                    "a style table was given but use_style is off",
                ))
            }
            (Some(t), true) if t.dims() != [params.products() as usize + 1, STYLE_DIM] => {
                return Err(Error::shape(
                    "model",
                    format!("style table dims {:?}", t.dims()),
                ));
            }
            _ => {}
        }
        Ok(Model {
            config,
            params,
            style,
        })
    }

    pub fn init(
        config: ModelConfig,
        products: u32,
        style: Option<&StyleCache>,
        seed: u64,
    ) -> Result<Self> {
        let params = ModelParams::init(&config, products, seed)?;
        let style = style.map(|c| style_table(c, products, config.style_factor()));
        Self::new(config, params, style)
    }

    pub fn products(&self) -> u32 {
        self.params.products()
    }

    /// History vectors in eval mode, one per sequence.
    pub fn history_vectors(&self, seqs: &[Padded]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars = ParamVars::bind(&mut g, self, false);
        let out = encode(&mut g, &vars, self, seqs, Pass::EVAL)?;
        let t = g.value(out);
        Ok((0..seqs.len()).map(|i| t.row_slice(i).to_vec()).collect())
    }

    /// Cosine similarity between `history` and each candidate's embedding.
    pub fn score(&self, history: &[f64], candidates: &[u32]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Contract("no candidates to score".into()));
        }
        let products = self.products();
        candidates
            .iter()
            .map(|&id| {
                if id == 0 || id > products {
                    return Err(Error::UnknownProduct(id));
                }
                cosine(history, self.params.embeddings.row_slice(id as usize))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
