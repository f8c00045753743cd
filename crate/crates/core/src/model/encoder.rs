//! Transformer encoder over product sequences.
//!
//! A batch of sequences is stacked row-wise so the position-wise projections
//! run as one matrix product; attention itself is evaluated per sequence so
//! sequences never attend to each other. In the last block only the final
//! valid position of each sequence is needed, so queries and the
//! feed-forward layer are computed for that row alone.

use super::{Model, ModelParams};
use crate::data::Padded;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{DropoutMode, Graph, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// `PE[pos][2i] = sin(pos / 10000^(2i/d))`, `PE[pos][2i+1] = cos(·)`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 == 1 {
        return Err(Error::config(format!(
            "positional encoding needs a positive even width, got {d_model}"
        )));
    }
    if max_len == 0 {
        return Err(Error::config(
            "positional encoding needs at least one position",
        ));
    }
    let mut data = vec![0.0; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(max_len, d_model, data)
}

/// Dropout mode plus the seed its masks are drawn from.
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub mode: DropoutMode,
    pub seed: u64,
}

impl Pass {
    pub const EVAL: Pass = Pass {
        mode: DropoutMode::Eval,
        seed: 0,
    };

    pub fn train(seed: u64) -> Self {
        Pass {
            mode: DropoutMode::Train,
            seed,
        }
    }
}

pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

/// Model parameters placed on a graph.
pub struct ParamVars {
    pub embeddings: Var,
    pub blocks: Vec<BlockVars>,
    pub w_out: Var,
    pub style: Option<Var>,
    order: Vec<Var>,
}

impl ParamVars {
    /// Leaves borrow the model's tensors. With `trainable` they receive gradients.
    pub fn bind<'a>(g: &mut Graph<'a>, model: &'a Model, trainable: bool) -> Self {
        let mut order = Vec::new();
        let mut leaf = |g: &mut Graph<'a>, t: &'a Tensor| {
            let v = if trainable {
                g.param_ref(t)
            } else {
                g.constant_ref(t)
            };
            order.push(v);
            v
        };
        let p: &'a ModelParams = &model.params;
        let embeddings = leaf(g, &p.embeddings);
        let blocks = p
            .blocks
            .iter()
            .map(|b| BlockVars {
                wq: leaf(g, &b.wq),
                wk: leaf(g, &b.wk),
                wv: leaf(g, &b.wv),
                wo: leaf(g, &b.wo),
                w1: leaf(g, &b.w1),
                b1: leaf(g, &b.b1),
                w2: leaf(g, &b.w2),
                b2: leaf(g, &b.b2),
                ln1_gamma: leaf(g, &b.ln1_gamma),
                ln1_beta: leaf(g, &b.ln1_beta),
                ln2_gamma: leaf(g, &b.ln2_gamma),
                ln2_beta: leaf(g, &b.ln2_beta),
            })
            .collect();
        let w_out = leaf(g, &p.w_out);
        let style = model.style.as_ref().map(|t| g.constant_ref(t));
        ParamVars {
            embeddings,
            blocks,
            w_out,
            style,
            order,
        }
    }

    /// Wraps existing leaves given in [`ModelParams::named`] order.
    pub fn from_vars(vars: &[Var], n_blocks: usize, style: Option<Var>) -> Result<Self> {
        if vars.len() != 2 + 12 * n_blocks {
            return Err(Error::shape(
                "bind",
                format!("{} leaves for {n_blocks} blocks", vars.len()),
            ));
        }
        let blocks = vars[1..vars.len() - 1]
            .chunks(12)
            .map(|c| BlockVars {
                wq: c[0],
                wk: c[1],
                wv: c[2],
                wo: c[3],
                w1: c[4],
                b1: c[5],
                w2: c[6],
                b2: c[7],
                ln1_gamma: c[8],
                ln1_beta: c[9],
                ln2_gamma: c[10],
                ln2_beta: c[11],
            })
            .collect();
        Ok(ParamVars {
            embeddings: vars[0],
            blocks,
            w_out: vars[vars.len() - 1],
            style,
            order: vars.to_vec(),
        })
    }

    /// Parameter leaves in [`ModelParams::named`] order.
    pub fn params(&self) -> &[Var] {
        &self.order
    }
}

/// Output of [`multi_head_attention`] with the per-head weight matrices.
pub struct Attention {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention per head on already projected `q`, `k`, `v`.
/// Returns the concatenated heads, before the output projection.
fn attend(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    key_mask: &[bool],
) -> Result<(Var, Vec<Var>)> {
    let d = g.value(q).shape2().1;
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::config(format!(
            "width {d} is not divisible by {n_heads} heads"
        )));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale)?;
        let w = g.softmax(logits, Some(key_mask))?;
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let out = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    Ok((out, weights))
}

/// Multi-head self-attention over one sequence `h` whose padding rows are
/// flagged `false` in `mask`.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    h: Var,
    block: &BlockVars,
    n_heads: usize,
    mask: &[bool],
) -> Result<Attention> {
    let rows = g.value(h).shape2().0;
    if mask.len() != rows {
        return Err(Error::shape(
            "attention",
            format!("mask len {} for {rows} rows", mask.len()),
        ));
    }
    let q = g.matmul(h, block.wq)?;
    let k = g.matmul(h, block.wk)?;
    let v = g.matmul(h, block.wv)?;
    let (heads, weights) = attend(g, q, k, v, n_heads, mask)?;
    let output = g.matmul(heads, block.wo)?;
    Ok(Attention { output, weights })
}

/// Hidden state at the last valid position, projected by `w_out`.
pub fn history_vector(g: &mut Graph<'_>, hidden: Var, mask: &[bool], w_out: Var) -> Result<Var> {
    let last = last_valid(mask)?;
    let row = g.select_row(hidden, last)?;
    g.matmul(row, w_out)
}

fn last_valid(mask: &[bool]) -> Result<usize> {
    mask.iter()
        .rposition(|&m| m)
        .ok_or_else(|| Error::Contract("session has no valid positions".into()))
}

struct Layout {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    last: Vec<usize>,
}

impl Layout {
    fn new(seqs: &[Padded]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Contract("no sequences to encode".into()));
        }
        let mut offsets = Vec::with_capacity(seqs.len());
        let mut lens = Vec::with_capacity(seqs.len());
        let mut last = Vec::with_capacity(seqs.len());
        let mut at = 0;
        for s in seqs {
            if s.ids.len() != s.mask.len() {
                return Err(Error::shape("encode", "ids and mask lengths differ"));
            }
            last.push(last_valid(&s.mask)?);
            offsets.push(at);
            lens.push(s.ids.len());
            at += s.ids.len();
        }
        Ok(Layout {
            offsets,
            lens,
            last,
        })
    }
}

/// Forward-pass state shared by the blocks of one encoding.
struct Encoder<'m> {
    model: &'m Model,
    pass: Pass,
    dropouts: u64,
}

impl Encoder<'_> {
    fn dropout(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let seed = rng::derive(self.pass.seed, "dropout", self.dropouts);
        self.dropouts += 1;
        g.dropout(x, self.model.config.dropout, seed, self.pass.mode)
    }

    /// `H⁰` rows for every sequence, stacked.
    fn input(
        &self,
        g: &mut Graph<'_>,
        vars: &ParamVars,
        seqs: &[Padded],
        layout: &Layout,
    ) -> Result<Var> {
        let products = self.model.params.products();
        let longest = layout.lens.iter().copied().max().unwrap_or(1);
        let pe = g.constant(positional_encoding(longest, self.model.config.d_model)?);
        let mut rows = Vec::with_capacity(seqs.len());
        for s in seqs {
            rows.push(build_input(g, vars, products, s, pe)?);
        }
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat_rows(&rows)
        }
    }

    fn feed_forward(&mut self, g: &mut Graph<'_>, b: &BlockVars, h1: Var) -> Result<Var> {
        let f = g.matmul(h1, b.w1)?;
        let f = g.add_row(f, b.b1)?;
        let f = g.relu(f)?;
        let f = g.matmul(f, b.w2)?;
        let f = g.add_row(f, b.b2)?;
        let f = self.dropout(g, f)?;
        let r = g.add(h1, f)?;
        g.layer_norm(r, b.ln2_gamma, b.ln2_beta, LN_EPS)
    }

    /// One block over every row of the stacked sequences.
    fn block(
        &mut self,
        g: &mut Graph<'_>,
        b: &BlockVars,
        h: Var,
        seqs: &[Padded],
        layout: &Layout,
    ) -> Result<Var> {
        let q = g.matmul(h, b.wq)?;
        let k = g.matmul(h, b.wk)?;
        let v = g.matmul(h, b.wv)?;
        let mut parts = Vec::with_capacity(seqs.len());
        for (i, s) in seqs.iter().enumerate() {
            let (o, l) = (layout.offsets[i], layout.lens[i]);
            let qs = g.slice_rows(q, o, l)?;
            let ks = g.slice_rows(k, o, l)?;
            let vs = g.slice_rows(v, o, l)?;
            parts.push(attend(g, qs, ks, vs, self.model.config.n_heads, &s.mask)?.0);
        }
        let heads = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        self.finish_block(g, b, h, heads)
    }

    /// The last block, evaluated only at each sequence's final valid row.
    fn last_block(
        &mut self,
        g: &mut Graph<'_>,
        b: &BlockVars,
        h: Var,
        seqs: &[Padded],
        layout: &Layout,
    ) -> Result<Var> {
        let mut query_rows = Vec::with_capacity(seqs.len());
        for i in 0..seqs.len() {
            query_rows.push(g.slice_rows(h, layout.offsets[i] + layout.last[i], 1)?);
        }
        let hq = if query_rows.len() == 1 {
            query_rows[0]
        } else {
            g.concat_rows(&query_rows)?
        };
        let q = g.matmul(hq, b.wq)?;
        let k = g.matmul(h, b.wk)?;
        let v = g.matmul(h, b.wv)?;
        let mut parts = Vec::with_capacity(seqs.len());
        for (i, s) in seqs.iter().enumerate() {
            let (o, l) = (layout.offsets[i], layout.lens[i]);
            let qs = g.slice_rows(q, i, 1)?;
            let ks = g.slice_rows(k, o, l)?;
            let vs = g.slice_rows(v, o, l)?;
            parts.push(attend(g, qs, ks, vs, self.model.config.n_heads, &s.mask)?.0);
        }
        let heads = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        self.finish_block(g, b, hq, heads)
    }

    fn finish_block(
        &mut self,
        g: &mut Graph<'_>,
        b: &BlockVars,
        residual: Var,
        heads: Var,
    ) -> Result<Var> {
        let att = g.matmul(heads, b.wo)?;
        let att = self.dropout(g, att)?;
        let r = g.add(residual, att)?;
        let h1 = g.layer_norm(r, b.ln1_gamma, b.ln1_beta, LN_EPS)?;
        self.feed_forward(g, b, h1)
    }
}

/// Input rows of one sequence: product embedding, position code and, when
/// enabled, the style vector, concatenated per position. Padding rows get
/// zero product and style parts.
pub fn build_input(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    products: u32,
    seq: &Padded,
    pe: Var,
) -> Result<Var> {
    if seq.ids.len() != seq.mask.len() {
        return Err(Error::shape("build_input", "ids and mask lengths differ"));
    }
    let mut ids = Vec::with_capacity(seq.ids.len());
    for (&id, &valid) in seq.ids.iter().zip(&seq.mask) {
        if id > products {
            return Err(Error::UnknownProduct(id));
        }
        ids.push(if valid { id as usize } else { 0 });
    }
    let pe_rows = g.value(pe).shape2().0;
    if ids.len() > pe_rows {
        return Err(Error::shape(
            "build_input",
            format!("{} positions, {pe_rows} codes", ids.len()),
        ));
    }
    let emb = g.embedding_lookup(vars.embeddings, &ids)?;
    let pos = g.slice_rows(pe, 0, ids.len())?;
    match vars.style {
        Some(style) => {
            let st = g.embedding_lookup(style, &ids)?;
            g.concat_cols(&[emb, pos, st])
        }
        None => g.concat_cols(&[emb, pos]),
    }
}

/// History vectors for a batch of sequences as rows of an `S × d_product` node.
pub fn encode(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    model: &Model,
    seqs: &[Padded],
    pass: Pass,
) -> Result<Var> {
    let layout = Layout::new(seqs)?;
    let mut enc = Encoder {
        model,
        pass,
        dropouts: 0,
    };
    let mut h = enc.input(g, vars, seqs, &layout)?;
    let (last, rest) = vars
        .blocks
        .split_last()
        .expect("validated config has blocks");
    for b in rest {
        h = enc.block(g, b, h, seqs, &layout)?;
    }
    let h = enc.last_block(g, last, h, seqs, &layout)?;
    g.matmul(h, vars.w_out)
}

/// Final hidden states at every position, stacked in input order.
pub fn hidden_states(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    model: &Model,
    seqs: &[Padded],
    pass: Pass,
) -> Result<Var> {
    let layout = Layout::new(seqs)?;
    let mut enc = Encoder {
        model,
        pass,
        dropouts: 0,
    };
    let mut h = enc.input(g, vars, seqs, &layout)?;
    for b in &vars.blocks {
        h = enc.block(g, b, h, seqs, &layout)?;
    }
    Ok(h)
}

/// One encoder block applied to a single sequence.
pub fn transformer_block(
    g: &mut Graph<'_>,
    model: &Model,
    block: &BlockVars,
    h: Var,
    mask: &[bool],
    pass: Pass,
) -> Result<Var> {
    let seq = Padded {
        ids: vec![0; mask.len()],
        mask: mask.to_vec(),
    };
    let seqs = std::slice::from_ref(&seq);
    let layout = Layout::new(seqs)?;
    let mut enc = Encoder {
        model,
        pass,
        dropouts: 0,
    };
    enc.block(g, block, h, seqs, &layout)
}
