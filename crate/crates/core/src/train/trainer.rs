use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::eval::{evaluate, sample_negatives, EvalOptions};
use super::metrics::{EvalMode, Metrics};
use crate::data::{Padded, PreparedDataset, Session, SessionKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{encode, Model, ModelConfig, ParamVars, Pass};
use crate::rng;
use crate::style::StyleCache;
use crate::tensor::{Graph, Tensor};

/// Sessions per gradient chunk. Chunks are the unit of parallel work and
/// are reduced in a fixed order, so results do not depend on thread count.
pub const GRAD_CHUNK: usize = 8;

/// One training triple.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub prefix: &'a [u32],
    pub target: u32,
    pub negative: u32,
}

/// Batch objective and its gradient in [`crate::model::ModelParams::named`] order.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    /// Mean pairwise loss over the batch.
    pub data_loss: f64,
    /// `data_loss + λ‖θ‖²`.
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

fn chunk_loss(model: &Model, chunk: &[Example<'_>], pass: Pass) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, model, true);
    let seqs: Vec<Padded> = chunk.iter().map(|e| Padded::compact(e.prefix)).collect();
    let hist = encode(&mut g, &vars, model, &seqs, pass)?;
    let ids: Vec<usize> = chunk
        .iter()
        .flat_map(|e| [e.target as usize, e.negative as usize])
        .collect();
    if let Some(&bad) = ids
        .iter()
        .find(|&&id| id == 0 || id > model.products() as usize)
    {
        return Err(Error::UnknownProduct(bad as u32));
    }
    let emb = g.embedding_lookup(vars.embeddings, &ids)?;
    let mut total = None;
    for i in 0..chunk.len() {
        let h = g.select_row(hist, i)?;
        let pos = g.select_row(emb, 2 * i)?;
        let neg = g.select_row(emb, 2 * i + 1)?;
        let sp = g.cosine_similarity(h, pos)?;
        let sn = g.cosine_similarity(h, neg)?;
        let l = g.pairwise_bce(sp, sn)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty gradient chunk".into()))?;
    let mut grads = g.backward(total)?;
    let out = vars
        .params()
        .iter()
        .map(|&v| grads.take(v).expect("trainable leaf"))
        .collect();
    Ok((g.value(total).item(), out))
}

/// Loss and gradient of one batch. Dropout masks for chunk `c` come from
/// `derive(pass.seed, "chunk", c)`. The padding embedding row gets no gradient.
pub fn batch_loss(
    model: &Model,
    batch: &[Example<'_>],
    l2: f64,
    pass: Pass,
    exec: Exec,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let chunks: Vec<&[Example<'_>]> = batch.chunks(GRAD_CHUNK).collect();
    let parts = exec.try_map(&chunks, |c, chunk| {
        let p = Pass {
            seed: rng::derive(pass.seed, "chunk", c as u64),
            ..pass
        };
        chunk_loss(model, chunk, p)
    })?;
    let n = batch.len() as f64;
    let mut parts = parts.into_iter();
    let (mut sum, mut grads) = parts.next().expect("nonempty batch");
    for (l, gs) in parts {
        sum += l;
        for (acc, g) in grads.iter_mut().zip(gs) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    let data_loss = sum / n;
    let mut loss = data_loss;
    for (g, p) in grads.iter_mut().zip(model.params.tensors()) {
        for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
            *gv = *gv / n + if l2 > 0.0 { 2.0 * l2 * pv } else { 0.0 };
        }
    }
    if l2 > 0.0 {
        loss += l2 * model.params.sum_squares();
    }
    let d = model.config.d_product;
    grads[0].data_mut()[..d].fill(0.0);
    Ok(BatchLoss {
        data_loss,
        loss,
        grads,
    })
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let tensors = model.params.tensors_mut();
        for (((p, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Validation metrics at k = 5.
    pub val: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch, rounded to f32.
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_ndcg5: f64,
    /// Cart sessions read while training or validating.
    pub cart_sessions_used: usize,
    pub fingerprint: String,
    pub log: Vec<String>,
}

/// Hex digest of the full model and training configuration.
pub fn fingerprint(model: &ModelConfig, train: &TrainConfig) -> String {
    format!(
        "{:016x}",
        rng::fnv1a(&format!("{}{}", model.to_kv(), train.to_kv()))
    )
}

/// The sessions of one split that a configuration may read.
struct Gate<'a> {
    sessions: Vec<&'a Session>,
}

impl<'a> Gate<'a> {
    fn new(split: &'a [Session], carts: bool) -> Self {
        Gate {
            sessions: split
                .iter()
                .filter(|s| carts || s.kind == SessionKind::Purchase)
                .collect(),
        }
    }

    fn carts(&self) -> usize {
        self.sessions
            .iter()
            .filter(|s| s.kind == SessionKind::Cart)
            .count()
    }
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains one configuration. The model's style flag and maximum length are
/// taken from the training configuration and the dataset.
pub fn train(
    dataset: &PreparedDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    style: Option<&StyleCache>,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let uses_style = config.configuration.uses_style();
    let model_config = ModelConfig {
        use_style: uses_style,
        max_len: dataset.max_len,
        ..model_config.clone()
    };
    model_config.validate()?;
    let style = match (uses_style, style) {
        (true, None) => {
            return Err(Error::config(format!(
                "configuration {} needs a style cache",
                config.configuration
            )))
        }
        (true, s) => s,
        (false, _) => None,
    };
    let carts = config.configuration.uses_cart();
    let train_set = Gate::new(&dataset.train, carts);
    let val_set = Gate::new(&dataset.val, carts);
    if train_set.sessions.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if val_set.sessions.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    let val: Vec<Session> = val_set.sessions.iter().map(|s| (*s).clone()).collect();
    let products = dataset.catalog_size;
    let seed = config.seed;
    let fp = fingerprint(&model_config, config);
    let mut log = vec![format!(
        "run fingerprint={fp} seed={seed} configuration={} train_sessions={} val_sessions={}",
        config.configuration,
        train_set.sessions.len(),
        val.len()
    )];

    let mut model = Model::init(model_config, products, style, rng::derive(seed, "init", 0))?;
    let mut adam = Adam::new(&model, config.lr);
    let val_opts = EvalOptions {
        mode: EvalMode::NegSample,
        negatives: config.eval_negatives,
        seed: rng::derive(seed, "val", 0),
        exec,
    };
    let mut cart_sessions_used = 0;
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, crate::model::ModelParams)> = None;
    let mut step = 0usize;
    let mut drawn = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.sessions.len()).collect();
        order.shuffle(&mut rng::stream(seed, "epoch-order", epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(idx.len());
            for &i in idx {
                let s = train_set.sessions[i];
                let neg_seed = rng::derive(seed, "train-negative", drawn);
                drawn += 1;
                let negative = sample_negatives(&[], s.target(), products, 1, neg_seed)?[0];
                batch.push(Example {
                    prefix: s.prefix(),
                    target: s.target(),
                    negative,
                });
            }
            cart_sessions_used += idx
                .iter()
                .filter(|&&i| train_set.sessions[i].kind == SessionKind::Cart)
                .count();
            let pass = Pass::train(rng::derive(seed, "dropout", step as u64));
            let b = batch_loss(&model, &batch, config.l2, pass, exec)
                .map_err(|e| diverged(epoch, step, e))?;
            if !b.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("loss is {}", b.loss),
                });
            }
            adam.step(&mut model, &b.grads);
            step_losses.push(b.loss);
            loss_sum += b.loss;
            batches += 1;
            step += 1;
        }
        cart_sessions_used += val_set.carts();
        let report = evaluate(&model, &val, products, "val", &val_opts)
            .map_err(|e| diverged(epoch, step, e))?;
        let m = report.get(5);
        let mean_loss = loss_sum / batches as f64;
        log.push(format!(
            "epoch={epoch} loss={mean_loss:.6} val_hr5={:.4} val_ndcg5={:.4} val_mrr5={:.4}",
            m.hr, m.ndcg, m.mrr
        ));
        if best.as_ref().is_none_or(|(b, _, _)| m.ndcg > *b) {
            best = Some((m.ndcg, epoch, model.params.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            mean_loss,
            val: m,
        });
    }
    let (best_val_ndcg5, best_epoch, mut params) = best.expect("at least one epoch");
    params.round_to_f32();
    model.params = params;
    log.push(format!(
        "best epoch={best_epoch} val_ndcg5={best_val_ndcg5:.4}"
    ));
    Ok(TrainOutcome {
        model,
        epochs,
        step_losses,
        best_epoch,
        best_val_ndcg5,
        cart_sessions_used,
        fingerprint: fp,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, MarkovOrder, SyntheticConfig};
    use crate::train::config::Configuration;

    fn small() -> ModelConfig {
        ModelConfig {
            d_product: 8,
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            d_ffn: Some(16),
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_penalty_matches_plain_loss() {
        let model = Model::init(small(), 12, None, 3).unwrap();
        let prefixes = [vec![1, 2, 3], vec![4], vec![5, 6, 7, 8, 9], vec![2, 2]];
        let batch: Vec<Example<'_>> = prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| Example {
                prefix: p,
                target: 10 + (i as u32 % 2),
                negative: 12 - (i as u32 % 3),
            })
            .collect();
        let b = batch_loss(&model, &batch, 0.0, Pass::EVAL, Exec::Sequential).unwrap();
        assert_eq!(b.loss, b.data_loss);
        // independent evaluation through the inference path
        let seqs: Vec<Padded> = prefixes.iter().map(|p| Padded::compact(p)).collect();
        let hist = model.history_vectors(&seqs).unwrap();
        let expected: f64 = batch
            .iter()
            .zip(&hist)
            .map(|(e, h)| {
                let s = model.score(h, &[e.target, e.negative]).unwrap();
                (1.0 + (s[1] - s[0]).exp()).ln()
            })
            .sum::<f64>()
            / 4.0;
        assert!(
            (b.data_loss - expected).abs() < 1e-12,
            "{} vs {expected}",
            b.data_loss
        );
        let reg = batch_loss(&model, &batch, 0.01, Pass::EVAL, Exec::Sequential).unwrap();
        assert!((reg.loss - b.loss - 0.01 * model.params.sum_squares()).abs() < 1e-12);
        assert!(b.grads[0].row_slice(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_scores_give_ln2() {
        let mut model = Model::init(small(), 6, None, 1).unwrap();
        let d = model.config.d_product;
        let row: Vec<f64> = model.params.embeddings.row_slice(1).to_vec();
        for id in 2..=6 {
            model.params.embeddings.data_mut()[id * d..(id + 1) * d].copy_from_slice(&row);
        }
        let batch = [Example {
            prefix: &[1, 2],
            target: 3,
            negative: 4,
        }];
        let lambda = 1e-3;
        let b = batch_loss(&model, &batch, lambda, Pass::EVAL, Exec::Sequential).unwrap();
        let expected = std::f64::consts::LN_2 + lambda * model.params.sum_squares();
        assert!((b.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn chunked_gradients_match_single_graph() {
        let model = Model::init(small(), 9, None, 5).unwrap();
        let prefixes: Vec<Vec<u32>> = (0..19)
            .map(|i| (0..1 + i % 5).map(|j| 1 + (i + j) % 9).collect())
            .collect();
        let batch: Vec<Example<'_>> = prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| Example {
                prefix: p,
                target: 1 + (i as u32 * 4) % 9,
                negative: 1 + (i as u32 * 7 + 3) % 9,
            })
            .filter(|e| e.target != e.negative)
            .collect();
        let a = batch_loss(&model, &batch, 1e-4, Pass::EVAL, Exec::Sequential).unwrap();
        let (sum, whole) = chunk_loss(&model, &batch, Pass::EVAL).unwrap();
        let n = batch.len() as f64;
        assert!((a.data_loss - sum / n).abs() < 1e-12);
        for ((ga, gw), p) in a
            .grads
            .iter()
            .zip(&whole)
            .zip(model.params.tensors())
            .skip(1)
        {
            for ((x, y), t) in ga.data().iter().zip(gw.data()).zip(p.data()) {
                assert!((x - (y / n + 2e-4 * t)).abs() < 1e-12);
            }
        }
        let par = batch_loss(&model, &batch, 1e-4, Pass::train(3), Exec::Parallel).unwrap();
        let seq = batch_loss(&model, &batch, 1e-4, Pass::train(3), Exec::Sequential).unwrap();
        assert_eq!(par.loss, seq.loss);
        assert!(par.grads.iter().zip(&seq.grads).all(|(x, y)| x == y));
    }

    /// Deterministic successor cycle over ten products.
    fn cycle() -> PreparedDataset {
        let cfg = SyntheticConfig {
            products: 10,
            sessions: 300,
            dominant_mass: 1.0,
            order: MarkovOrder::First,
            min_len: 2,
            max_len: 4,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let (sessions, _) = generate_synthetic(&cfg).unwrap();
        PreparedDataset::build(&sessions, Some(10), 20).unwrap()
    }

    #[test]
    fn learns_a_deterministic_chain() {
        let data = cycle();
        let cfg = TrainConfig {
            epochs: 20,
            eval_negatives: 5,
            lr: 1e-2,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&data, &small(), &cfg, None, Exec::default()).unwrap();
        assert_eq!(out.epochs.len(), 20);
        // MRR@5 of 1 means the successor ranks first for every session
        let best = out.epochs.iter().map(|e| e.val.mrr).fold(0.0, f64::max);
        assert_eq!(best, 1.0);
        let again = train(&data, &small(), &cfg, None, Exec::Sequential).unwrap();
        assert_eq!(again.step_losses, out.step_losses);
        assert_eq!(again.model, out.model);
        assert_eq!(out.cart_sessions_used, 0);
        assert!(out.log[0].contains(&out.fingerprint));
    }

    #[test]
    fn cart_gating() {
        let mut data = cycle();
        for s in data.train.iter_mut().step_by(3) {
            s.kind = SessionKind::Cart;
        }
        for s in data.val.iter_mut().step_by(2) {
            s.kind = SessionKind::Cart;
        }
        let base = TrainConfig {
            epochs: 1,
            eval_negatives: 1,
            ..TrainConfig::default()
        };
        let p = train(&data, &small(), &base, None, Exec::default()).unwrap();
        assert_eq!(p.cart_sessions_used, 0);
        let cart = TrainConfig {
            configuration: Configuration::PCart,
            ..base
        };
        let c = train(&data, &small(), &cart, None, Exec::default()).unwrap();
        let expected = data
            .train
            .iter()
            .chain(&data.val)
            .filter(|s| s.kind == SessionKind::Cart)
            .count();
        assert_eq!(c.cart_sessions_used, expected);
        let style = TrainConfig {
            configuration: Configuration::PStyle,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&data, &small(), &style, None, Exec::default()),
            Err(Error::Config(_))
        ));
    }
}
