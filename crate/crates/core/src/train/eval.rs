use std::collections::HashSet;

use rand::Rng as _;

use super::metrics::{rank_of_truth, EvalMode, MetricsReport};
use crate::data::{Padded, Session, SyntheticOracle};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Model;
use crate::rng;

/// Negatives drawn per session in the standard protocol.
pub const DEFAULT_NEGATIVES: usize = 100;
const EVAL_BATCH: usize = 32;

/// `n` distinct products drawn uniformly from `1..=products`, excluding the
/// truth and everything in the session.
pub fn sample_negatives(
    session_items: &[u32],
    truth: u32,
    products: u32,
    n: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let excluded: HashSet<u32> = session_items.iter().copied().chain([truth]).collect();
    let pool: Vec<u32> = (1..=products).filter(|id| !excluded.contains(id)).collect();
    if pool.len() < n {
        return Err(Error::config(format!(
            "catalog of {products} leaves {} eligible negatives, {n} requested",
            pool.len()
        )));
    }
    let mut g = rng::stream(seed, "negatives", 0);
    if n == 1 {
        return Ok(vec![pool[g.gen_range(0..pool.len())]]);
    }
    Ok(rand::seq::index::sample(&mut g, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// One session's scoring request.
pub struct ScoreRequest<'a> {
    /// Position of the session in the evaluated split.
    pub index: usize,
    pub prefix: &'a [u32],
    pub candidates: &'a [u32],
}

/// Anything that can score candidate products for session prefixes.
pub trait Scorer: Sync {
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<Vec<f64>>>;
}

impl Scorer for Model {
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<Vec<f64>>> {
        let seqs: Vec<Padded> = requests.iter().map(|r| Padded::compact(r.prefix)).collect();
        let hist = self.history_vectors(&seqs)?;
        requests
            .iter()
            .zip(&hist)
            .map(|(r, h)| self.score(h, r.candidates))
            .collect()
    }
}

/// Scores products by how often they occur in a reference set of sessions.
pub struct PopularityScorer {
    counts: Vec<f64>,
}

impl PopularityScorer {
    pub fn new<'a>(sessions: impl IntoIterator<Item = &'a Session>, products: u32) -> Self {
        let mut counts = vec![0.0; products as usize + 1];
        for s in sessions {
            for &id in &s.items {
                if let Some(c) = counts.get_mut(id as usize) {
                    *c += 1.0;
                }
            }
        }
        PopularityScorer { counts }
    }
}

impl Scorer for PopularityScorer {
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<Vec<f64>>> {
        Ok(requests
            .iter()
            .map(|r| {
                r.candidates
                    .iter()
                    .map(|&c| self.counts.get(c as usize).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect())
    }
}

/// Uniform scores keyed by session and candidate, so a product scores the
/// same whichever candidate set it appears in.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<Vec<f64>>> {
        Ok(requests
            .iter()
            .map(|r| {
                let session = rng::derive(self.seed, "random-scorer", r.index as u64);
                r.candidates
                    .iter()
                    .map(|&c| {
                        (rng::derive(session, "candidate", u64::from(c)) >> 11) as f64
                            / (1u64 << 53) as f64
                    })
                    .collect()
            })
            .collect())
    }
}

/// Scores by the true next-item probability of a synthetic chain, which
/// maximizes expected hit ratio. Prefixes shorter than the chain's order get
/// equal scores, matching the uniform draw the generator uses there.
pub struct OracleScorer<'a> {
    pub oracle: &'a SyntheticOracle,
}

impl Scorer for OracleScorer<'_> {
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<Vec<f64>>> {
        Ok(requests
            .iter()
            .map(|r| match self.oracle.next_distribution(r.prefix) {
                Some(dist) => r.candidates.iter().map(|&c| dist[c as usize - 1]).collect(),
                None => vec![0.0; r.candidates.len()],
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub negatives: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl EvalOptions {
    pub fn negsample(seed: u64) -> Self {
        EvalOptions {
            mode: EvalMode::NegSample,
            negatives: DEFAULT_NEGATIVES,
            seed,
            exec: Exec::default(),
        }
    }

    pub fn full_catalog(seed: u64) -> Self {
        EvalOptions {
            mode: EvalMode::FullCatalog,
            ..Self::negsample(seed)
        }
    }
}

/// Candidate set for session `index`: the truth first, then its negatives.
pub fn candidates(
    session: &Session,
    index: usize,
    products: u32,
    opts: &EvalOptions,
) -> Result<Vec<u32>> {
    let truth = session.target();
    let prefix = session.prefix();
    let mut out = vec![truth];
    match opts.mode {
        EvalMode::NegSample => {
            let seed = rng::derive(opts.seed, "eval-negatives", index as u64);
            out.extend(sample_negatives(
                prefix,
                truth,
                products,
                opts.negatives,
                seed,
            )?);
        }
        EvalMode::FullCatalog => {
            let seen: HashSet<u32> = prefix.iter().copied().collect();
            out.extend((1..=products).filter(|&id| id != truth && !seen.contains(&id)));
        }
    }
    Ok(out)
}

/// Ranks of the truth for every session, one candidate set per session.
pub fn evaluate(
    scorer: &impl Scorer,
    sessions: &[Session],
    products: u32,
    label: &str,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let indexed: Vec<(usize, &Session)> = sessions.iter().enumerate().collect();
    let batches: Vec<&[(usize, &Session)]> = indexed.chunks(EVAL_BATCH).collect();
    let ranks = opts
        .exec
        .try_map(&batches, |_, batch| -> Result<Vec<usize>> {
            let cands: Vec<Vec<u32>> = batch
                .iter()
                .map(|(i, s)| candidates(s, *i, products, opts))
                .collect::<Result<_>>()?;
            let requests: Vec<ScoreRequest<'_>> = batch
                .iter()
                .zip(&cands)
                .map(|((i, s), c)| ScoreRequest {
                    index: *i,
                    prefix: s.prefix(),
                    candidates: c,
                })
                .collect();
            let scores = scorer.score_batch(&requests)?;
            requests
                .iter()
                .zip(&scores)
                .map(|(r, sc)| rank_of_truth(sc, r.candidates, r.candidates[0]))
                .collect()
        })?;
    Ok(MetricsReport::from_ranks(label, opts.mode, ranks.concat()))
}
