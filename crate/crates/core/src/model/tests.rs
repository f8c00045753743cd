use rand::{Rng, SeedableRng};

use super::*;
use crate::data::truncate_pad;
use crate::rng::Rng as ChaCha;
use crate::style::StyleCache;
use crate::tensor::gradcheck::{max_relative_error, sampled_max_relative_error};
use crate::tensor::{DropoutMode, Var};

fn tiny(use_style: bool) -> ModelConfig {
    ModelConfig {
        d_product: 4,
        d_model: 4,
        n_blocks: 2,
        n_heads: 2,
        d_ffn: Some(6),
        dropout: 0.0,
        use_style,
        style_scale: None,
        max_len: 20,
    }
}

fn random_tensor(g: &mut ChaCha, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| scale * g.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(5, 8).unwrap();
    for c in 0..8 {
        assert_eq!(pe.get(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
    }
    assert!((pe.get(1, 0) - 0.841471).abs() < 1e-6);
    assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    // Same angle through exp/ln instead of powf.
    for pos in 0..5 {
        for i in 0..4 {
            let angle = pos as f64 * (-(2.0 * i as f64 / 8.0) * 10000f64.ln()).exp();
            assert!((pe.get(pos, 2 * i) - angle.sin()).abs() <= 1e-12);
            assert!((pe.get(pos, 2 * i + 1) - angle.cos()).abs() <= 1e-12);
        }
    }
    assert!(matches!(positional_encoding(5, 7), Err(Error::Config(_))));
}

#[test]
fn input_widths_and_padding_rows() {
    let mut cache = StyleCache::new();
    cache.insert(1, &vec![1.0; STYLE_DIM]).unwrap();
    for (style, width) in [(false, 256), (true, 768)] {
        let config = ModelConfig {
            use_style: style,
            ..ModelConfig::default()
        };
        let model = Model::init(config, 3, style.then_some(&cache), 1).unwrap();
        let mut g = Graph::new();
        let vars = ParamVars::bind(&mut g, &model, false);
        let pe = g.constant(positional_encoding(4, 128).unwrap());
        let seq = truncate_pad(&[1, 2], 4);
        let h = build_input(&mut g, &vars, 3, &seq, pe).unwrap();
        let t = g.value(h);
        assert_eq!(t.dims(), &[4, width]);
        if style {
            // default scale sqrt(128/512) on a cached vector of ones
            assert!(t.row_slice(0)[256..].iter().all(|&v| v == 0.5));
            assert!(t.row_slice(1)[256..].iter().all(|&v| v == 0.0));
        }
        for r in 2..4 {
            assert!(t.row_slice(r)[..128].iter().all(|&v| v == 0.0));
            assert!(t.row_slice(r)[256..].iter().all(|&v| v == 0.0));
            assert_eq!(
                &t.row_slice(r)[128..256],
                positional_encoding(4, 128).unwrap().row_slice(r)
            );
        }
        let bad = truncate_pad(&[1, 4], 4);
        assert!(matches!(
            build_input(&mut g, &vars, 3, &bad, pe),
            Err(Error::UnknownProduct(4))
        ));
    }
}

/// Straight-line evaluation of per-head softmax(QKᵀ/√dh)·V followed by W_O.
fn attention_oracle(h: &Tensor, p: &BlockParams, heads: usize, mask: &[bool]) -> Vec<f64> {
    let (n, d) = h.shape2();
    let dh = d / heads;
    let proj = |w: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|t| h.get(i, t) * w.get(t, j)).sum())
                    .collect()
            })
            .collect()
    };
    let (q, k, v) = (proj(&p.wq), proj(&p.wk), proj(&p.wv));
    let mut cat = vec![vec![0.0; d]; n];
    for hd in 0..heads {
        let cols = hd * dh..(hd + 1) * dh;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = (0..n)
                .filter(|&j| mask[j])
                .map(|j| logits[j])
                .fold(f64::MIN, f64::max);
            let e: Vec<f64> = (0..n)
                .map(|j| {
                    if mask[j] {
                        (logits[j] - max).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(n * d);
    for row in &cat {
        for j in 0..d {
            out.push((0..d).map(|t| row[t] * p.wo.get(t, j)).sum());
        }
    }
    out
}

fn block_params(seed: u64, d: usize, f: usize) -> BlockParams {
    let mut g = ChaCha::seed_from_u64(seed);
    BlockParams {
        wq: random_tensor(&mut g, d, d, 1.0),
        wk: random_tensor(&mut g, d, d, 1.0),
        wv: random_tensor(&mut g, d, d, 1.0),
        wo: random_tensor(&mut g, d, d, 1.0),
        w1: random_tensor(&mut g, d, f, 1.0),
        b1: random_tensor(&mut g, 1, f, 1.0),
        w2: random_tensor(&mut g, f, d, 1.0),
        b2: random_tensor(&mut g, 1, d, 1.0),
        ln1_gamma: random_tensor(&mut g, 1, d, 1.0),
        ln1_beta: random_tensor(&mut g, 1, d, 1.0),
        ln2_gamma: random_tensor(&mut g, 1, d, 1.0),
        ln2_beta: random_tensor(&mut g, 1, d, 1.0),
    }
}

fn bind_block<'a>(g: &mut Graph<'a>, p: &'a BlockParams) -> BlockVars {
    BlockVars {
        wq: g.constant_ref(&p.wq),
        wk: g.constant_ref(&p.wk),
        wv: g.constant_ref(&p.wv),
        wo: g.constant_ref(&p.wo),
        w1: g.constant_ref(&p.w1),
        b1: g.constant_ref(&p.b1),
        w2: g.constant_ref(&p.w2),
        b2: g.constant_ref(&p.b2),
        ln1_gamma: g.constant_ref(&p.ln1_gamma),
        ln1_beta: g.constant_ref(&p.ln1_beta),
        ln2_gamma: g.constant_ref(&p.ln2_gamma),
        ln2_beta: g.constant_ref(&p.ln2_beta),
    }
}

fn identity(d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d, d]);
    for i in 0..d {
        t.data_mut()[i * d + i] = 1.0;
    }
    t
}

#[test]
fn attention_matches_direct_evaluation() {
    let mut rng = ChaCha::seed_from_u64(3);
    for (heads, mask) in [
        (2, vec![true, true, true]),
        (1, vec![true, false, true]),
        (4, vec![true; 3]),
    ] {
        let p = block_params(rng.gen(), 8, 4);
        let h = random_tensor(&mut rng, 3, 8, 1.0);
        let mut g = Graph::new();
        let vars = bind_block(&mut g, &p);
        let hv = g.constant(h.clone());
        let att = multi_head_attention(&mut g, hv, &vars, heads, &mask).unwrap();
        let oracle = attention_oracle(&h, &p, heads, &mask);
        assert!(close(g.value(att.output).data(), &oracle, 1e-10));
        for w in &att.weights {
            for r in 0..3 {
                let row = g.value(*w).row_slice(r);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                for (j, &m) in mask.iter().enumerate() {
                    if !m {
                        assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn attention_special_cases() {
    let d = 4;
    let mut p = block_params(1, d, 2);
    p.wo = identity(d);
    // single valid position
    let h = Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 0.25]]).unwrap();
    let mut g = Graph::new();
    let vars = bind_block(&mut g, &p);
    let hv = g.constant(h.clone());
    let att = multi_head_attention(&mut g, hv, &vars, 2, &[true]).unwrap();
    for w in &att.weights {
        assert_eq!(g.value(*w).data(), &[1.0]);
    }
    let value = g.matmul(hv, vars.wv).unwrap();
    assert!(close(
        g.value(att.output).data(),
        g.value(value).data(),
        1e-12
    ));

    // identical keys from identical rows
    let h2 = Tensor::from_rows(&[h.data().to_vec(), h.data().to_vec()]).unwrap();
    let hv = g.constant(h2);
    let att = multi_head_attention(&mut g, hv, &vars, 2, &[true, true]).unwrap();
    for w in &att.weights {
        assert!(close(g.value(*w).data(), &[0.5; 4], 1e-15));
    }

    // fully masked
    let hv = g.constant(h);
    assert!(matches!(
        multi_head_attention(&mut g, hv, &vars, 2, &[false]),
        Err(Error::DegenerateMask { .. })
    ));
}

#[test]
fn one_head_with_identity_projection_is_plain_attention() {
    let d = 6;
    let mut rng = ChaCha::seed_from_u64(9);
    let mut p = block_params(2, d, 2);
    p.wo = identity(d);
    let h = random_tensor(&mut rng, 4, d, 1.0);
    let mut g = Graph::new();
    let vars = bind_block(&mut g, &p);
    let hv = g.constant(h);
    let att = multi_head_attention(&mut g, hv, &vars, 1, &[true; 4]).unwrap();
    let q = g.matmul(hv, vars.wq).unwrap();
    let k = g.matmul(hv, vars.wk).unwrap();
    let v = g.matmul(hv, vars.wv).unwrap();
    let kt = g.transpose(k).unwrap();
    let s = g.matmul(q, kt).unwrap();
    let s = g.scale(s, 1.0 / (d as f64).sqrt()).unwrap();
    let a = g.softmax(s, None).unwrap();
    let plain = g.matmul(a, v).unwrap();
    assert!(close(
        g.value(att.output).data(),
        g.value(plain).data(),
        1e-12
    ));
}

#[test]
fn residual_only_block_is_double_layer_norm() {
    let config = tiny(false);
    let mut model = Model::init(config, 5, None, 4).unwrap();
    for b in &mut model.params.blocks {
        b.wo = Tensor::zeros(b.wo.dims());
        b.w2 = Tensor::zeros(b.w2.dims());
    }
    let mut rng = ChaCha::seed_from_u64(1);
    let h = random_tensor(&mut rng, 3, 8, 2.0);
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, &model, false);
    let hv = g.constant(h.clone());
    let out =
        transformer_block(&mut g, &model, &vars.blocks[0], hv, &[true; 3], Pass::EVAL).unwrap();
    assert_eq!(g.value(out).dims(), h.dims());
    let ln = |x: &[f64]| -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        x.iter()
            .map(|v| (v - mean) / (var + encoder::LN_EPS).sqrt())
            .collect()
    };
    for r in 0..3 {
        assert!(close(
            g.value(out).row_slice(r),
            &ln(&ln(h.row_slice(r))),
            1e-12
        ));
    }
}

#[test]
fn optimized_last_block_matches_full_forward() {
    let model = Model::init(tiny(false), 9, None, 2).unwrap();
    let seqs = vec![
        truncate_pad(&[3, 1, 4], 5),
        Padded::compact(&[1, 5, 9, 2, 6]),
        Padded::compact(&[7]),
    ];
    let fast = model.history_vectors(&seqs).unwrap();
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, &model, false);
    let h = hidden_states(&mut g, &vars, &model, &seqs, Pass::EVAL).unwrap();
    let mut offset = 0;
    for (s, f) in seqs.iter().zip(&fast) {
        let rows = g.slice_rows(h, offset, s.ids.len()).unwrap();
        let hv = history_vector(&mut g, rows, &s.mask, vars.w_out).unwrap();
        assert!(close(g.value(hv).data(), f, 1e-12));
        offset += s.ids.len();
    }
    // batching never mixes sequences
    for (s, f) in seqs.iter().zip(&fast) {
        let alone = model.history_vectors(std::slice::from_ref(s)).unwrap();
        assert!(close(&alone[0], f, 1e-12));
    }
}

#[test]
fn padding_does_not_change_history() {
    let mut cache = StyleCache::new();
    for id in 1..=6 {
        cache.insert(id, &vec![id as f64 * 0.1; STYLE_DIM]).unwrap();
    }
    for style in [false, true] {
        let config = ModelConfig {
            d_product: 8,
            d_model: 8,
            d_ffn: Some(16),
            use_style: style,
            ..ModelConfig::default()
        };
        let model = Model::init(config, 6, style.then_some(&cache), 5).unwrap();
        let items = [2, 6, 1];
        let base = model.history_vectors(&[Padded::compact(&items)]).unwrap();
        for pad in [4, 8, 20] {
            let padded = model.history_vectors(&[truncate_pad(&items, pad)]).unwrap();
            for (a, b) in base[0].iter().zip(&padded[0]) {
                assert!((*a as f32 - *b as f32).abs() <= 1e-6);
            }
            let cands = [1, 3, 5, 6];
            let s1 = model.score(&base[0], &cands).unwrap();
            let s2 = model.score(&padded[0], &cands).unwrap();
            assert!(close(&s1, &s2, 1e-6));
        }
    }
}

#[test]
fn single_item_history_is_projection_of_position_zero() {
    let model = Model::init(tiny(false), 4, None, 6).unwrap();
    let fast = model.history_vectors(&[Padded::compact(&[3])]).unwrap();
    assert_eq!(fast[0].len(), 4);
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, &model, false);
    let h = hidden_states(&mut g, &vars, &model, &[Padded::compact(&[3])], Pass::EVAL).unwrap();
    let row = g.select_row(h, 0).unwrap();
    let p = g.matmul(row, vars.w_out).unwrap();
    assert!(close(g.value(p).data(), &fast[0], 1e-12));
    let empty = Padded {
        ids: vec![0, 0],
        mask: vec![false, false],
    };
    assert!(matches!(
        model.history_vectors(&[empty]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn scoring_properties() {
    let model = Model::init(tiny(false), 6, None, 7).unwrap();
    let e3 = model.params.embeddings.row_slice(3).to_vec();
    let s = model.score(&e3, &[1, 2, 3, 4, 5, 6]).unwrap();
    assert!((s[2] - 1.0).abs() < 1e-12);
    assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
    let h = model
        .history_vectors(&[Padded::compact(&[1, 2])])
        .unwrap()
        .remove(0);
    let scaled: Vec<f64> = h.iter().map(|v| v * 7.5).collect();
    let a = model.score(&h, &[1, 2, 3, 4, 5, 6]).unwrap();
    let b = model.score(&scaled, &[1, 2, 3, 4, 5, 6]).unwrap();
    assert!(close(&a, &b, 1e-12));
    assert!(matches!(
        model.score(&h, &[7]),
        Err(Error::UnknownProduct(7))
    ));
    assert!(matches!(
        model.score(&h, &[0]),
        Err(Error::UnknownProduct(0))
    ));
    assert!(matches!(
        model.score(&[0.0; 4], &[1]),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn pairwise_loss_is_monotone() {
    let mut prev = f64::INFINITY;
    for i in -20..=20 {
        let mut g = Graph::new();
        let pos = g.constant(Tensor::scalar(i as f64 * 0.5));
        let neg = g.constant(Tensor::scalar(0.0));
        let l = g.pairwise_bce(pos, neg).unwrap();
        let v = g.value(l).item();
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-4);
}

/// Loss of a toy model on one session as a function of every parameter.
fn toy_objective(model: &Model) -> impl Fn(&mut Graph, &[Var]) -> crate::Result<Var> + '_ {
    move |g, leaves| {
        let style = model.style.as_ref().map(|t| g.constant(t.clone()));
        let vars = ParamVars::from_vars(leaves, model.config.n_blocks, style)?;
        let seqs = [truncate_pad(&[1, 2], 3), Padded::compact(&[3, 1])];
        let hist = encode(
            g,
            &vars,
            model,
            &seqs,
            Pass {
                mode: DropoutMode::Train,
                seed: 4,
            },
        )?;
        let mut losses = Vec::new();
        for (row, (pos, neg)) in [(3usize, 2usize), (2, 1)].into_iter().enumerate() {
            let h = g.select_row(hist, row)?;
            let e = g.embedding_lookup(vars.embeddings, &[pos, neg])?;
            let ep = g.select_row(e, 0)?;
            let en = g.select_row(e, 1)?;
            let sp = g.cosine_similarity(h, ep)?;
            let sn = g.cosine_similarity(h, en)?;
            losses.push(g.pairwise_bce(sp, sn)?);
        }
        let both = g.concat_cols(&losses)?;
        g.sum(both)
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut cache = StyleCache::new();
    for id in 1..=3 {
        cache
            .insert(
                id,
                &(0..STYLE_DIM)
                    .map(|d| ((d * id as usize) % 7) as f64 * 0.1)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
    }
    for style in [false, true] {
        let config = ModelConfig {
            n_blocks: 2,
            d_ffn: Some(3),
            dropout: 0.2,
            use_style: style,
            ..tiny(style)
        };
        let model = Model::init(config, 3, style.then_some(&cache), 8).unwrap();
        let inputs: Vec<Tensor> = model.params.tensors().into_iter().cloned().collect();
        let err = if style {
            sampled_max_relative_error(&inputs, toy_objective(&model), 1e-5, 12, 1).unwrap()
        } else {
            max_relative_error(&inputs, toy_objective(&model), 1e-5).unwrap()
        };
        assert!(err <= 1e-4, "style={style} err={err}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut cache = StyleCache::new();
    cache.insert(2, &vec![0.5; STYLE_DIM]).unwrap();
    for style in [false, true] {
        let mut model = Model::init(tiny(style), 4, style.then_some(&cache), 3).unwrap();
        model.params.round_to_f32();
        let bytes = model.to_bytes().unwrap();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let seqs = [Padded::compact(&[1, 2, 3])];
        assert_eq!(
            back.history_vectors(&seqs).unwrap(),
            model.history_vectors(&seqs).unwrap()
        );

        assert!(matches!(
            Model::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Model::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
