//! Seeded Markov-chain session generator with a known transition oracle.
//!
//! Each conditioning context (the last item for a first-order chain, the last
//! two items for a second-order chain) has one dominant next item carrying
//! `dominant_mass` of the probability; the rest is spread uniformly over the
//! remaining items other than the most recent one, so consecutive repeats
//! never occur. First-order dominants form a single random cycle over the
//! catalog, which keeps item popularity flat.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::session::{Session, SessionKind};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkovOrder {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub products: u32,
    pub sessions: usize,
    /// Session lengths are uniform over `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
    pub dominant_mass: f64,
    /// Probability that a session is a cart session.
    pub cart_ratio: f64,
    pub order: MarkovOrder,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            products: 50,
            sessions: 2000,
            min_len: 3,
            max_len: 12,
            dominant_mass: 0.8,
            cart_ratio: 0.0,
            order: MarkovOrder::First,
            seed: 0,
        }
    }
}

/// The generating process, kept so evaluations can compare against the
/// Bayes-optimal predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub order: MarkovOrder,
    pub products: u32,
    /// Row-major transition table. First order: `P` rows indexed by the last
    /// item; second order: `P²` rows indexed by `(second-to-last, last)`.
    /// Column `j` holds the probability of product `j + 1`.
    pub transition: Vec<f64>,
    /// Distribution of the first item.
    pub initial: Vec<f64>,
    /// Dominant next item per row.
    pub dominant: Vec<u32>,
    pub seed: u64,
}

impl SyntheticOracle {
    fn row_index(&self, history: &[u32]) -> Option<usize> {
        let p = self.products as usize;
        match (self.order, history) {
            (MarkovOrder::First, [.., last]) => Some(*last as usize - 1),
            (MarkovOrder::Second, [.., prev, last]) => {
                Some((*prev as usize - 1) * p + *last as usize - 1)
            }
            _ => None,
        }
    }

    /// Next-item distribution given the history, or `None` when the history
    /// is too short for the chain's order.
    pub fn next_distribution(&self, history: &[u32]) -> Option<&[f64]> {
        let p = self.products as usize;
        self.row_index(history)
            .map(|r| &self.transition[r * p..(r + 1) * p])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.transition.chunks(self.products as usize)
    }
}

fn context_row(p: usize, dominant: usize, last: usize, mass: f64) -> Vec<f64> {
    let mut row = vec![0.0; p];
    let others = p.saturating_sub(2);
    if others == 0 {
        row[dominant] = 1.0;
        return row;
    }
    let rest = (1.0 - mass) / others as f64;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if j == dominant {
            mass
        } else if j == last {
            0.0
        } else {
            rest
        };
    }
    row
}

fn sample(row: &[f64], g: &mut rng::Rng) -> u32 {
    let u: f64 = g.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j as u32 + 1;
        }
    }
    // Rounding left u past the cumulative sum; take the last positive entry.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32 + 1
}

/// Builds the transition oracle for `config`.
pub fn build_oracle(config: &SyntheticConfig) -> Result<SyntheticOracle> {
    if config.products < 2 {
        return Err(Error::config("synthetic catalog needs at least 2 products"));
    }
    if !(config.dominant_mass > 0.0 && config.dominant_mass <= 1.0) {
        return Err(Error::config("dominant_mass must lie in (0, 1]"));
    }
    let p = config.products as usize;
    let mut g = rng::stream(config.seed, "synthetic-oracle", 0);

    // Sattolo's shuffle: a uniformly random single cycle, so no fixed points.
    let mut succ: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        let j = g.gen_range(0..i);
        succ.swap(i, j);
    }

    let (transition, dominant) = match config.order {
        MarkovOrder::First => {
            let mut t = Vec::with_capacity(p * p);
            for (last, &dom) in succ.iter().enumerate() {
                t.extend(context_row(p, dom, last, config.dominant_mass));
            }
            (t, succ.iter().map(|&d| d as u32 + 1).collect())
        }
        MarkovOrder::Second => {
            let mut t = Vec::with_capacity(p * p * p);
            let mut doms = Vec::with_capacity(p * p);
            for _prev in 0..p {
                for last in 0..p {
                    let mut dom = g.gen_range(0..p - 1);
                    if dom >= last {
                        dom += 1;
                    }
                    t.extend(context_row(p, dom, last, config.dominant_mass));
                    doms.push(dom as u32 + 1);
                }
            }
            (t, doms)
        }
    };

    Ok(SyntheticOracle {
        order: config.order,
        products: config.products,
        transition,
        initial: vec![1.0 / p as f64; p],
        dominant,
        seed: config.seed,
    })
}

/// Samples sessions from a seeded random chain. Timestamps increase with the
/// session index.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Vec<Session>, SyntheticOracle)> {
    if config.sessions == 0 {
        return Err(Error::config(
            "synthetic dataset needs at least one session",
        ));
    }
    if config.min_len < 1 || config.min_len > config.max_len {
        return Err(Error::config(
            "synthetic lengths need 1 <= min_len <= max_len",
        ));
    }
    let oracle = build_oracle(config)?;
    let p = config.products as usize;
    let mut g = rng::stream(config.seed, "synthetic-sessions", 0);
    let mut sessions = Vec::with_capacity(config.sessions);
    for i in 0..config.sessions {
        let len = g.gen_range(config.min_len..=config.max_len);
        let mut items = vec![sample(&oracle.initial, &mut g)];
        while items.len() < len {
            let next = match oracle.next_distribution(&items) {
                Some(row) => sample(row, &mut g),
                None => {
                    // Second-order chain: the second item is uniform over the others.
                    let mut j = g.gen_range(1..p as u32);
                    if j >= items[0] {
                        j += 1;
                    }
                    j
                }
            };
            items.push(next);
        }
        let kind = if g.gen::<f64>() < config.cart_ratio {
            SessionKind::Cart
        } else {
            SessionKind::Purchase
        };
        sessions.push(Session::new(format!("syn{i:07}"), kind, i as i64, items));
    }
    Ok((sessions, oracle))
}

/// Groups products into `clusters` style clusters along the first-order
/// successor cycle, so an item and its dominant successor usually share a
/// cluster.
pub fn successor_clusters(oracle: &SyntheticOracle, clusters: usize) -> Result<Vec<usize>> {
    if oracle.order != MarkovOrder::First {
        return Err(Error::config(
            "style clusters follow a first-order successor cycle",
        ));
    }
    let p = oracle.products as usize;
    if clusters == 0 || clusters > p {
        return Err(Error::config(format!(
            "cannot form {clusters} clusters over {p} products"
        )));
    }
    let mut out = vec![0; p];
    let mut item = 0usize;
    for step in 0..p {
        out[item] = step * clusters / p;
        item = oracle.dominant[item] as usize - 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions_with_a_dominant_entry() {
        for order in [MarkovOrder::First, MarkovOrder::Second] {
            let cfg = SyntheticConfig {
                products: 12,
                order,
                seed: 5,
                ..Default::default()
            };
            let o = build_oracle(&cfg).unwrap();
            for (r, row) in o.rows().enumerate() {
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-9, "row {r} sums to {total}");
                let (argmax, &max) = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                assert_eq!(max, 0.8);
                assert_eq!(argmax as u32 + 1, o.dominant[r]);
            }
        }
    }

    #[test]
    fn first_order_dominants_form_one_cycle() {
        let cfg = SyntheticConfig {
            products: 30,
            seed: 9,
            ..Default::default()
        };
        let o = build_oracle(&cfg).unwrap();
        let mut seen = [false; 30];
        let mut item = 1u32;
        for _ in 0..30 {
            assert!(!seen[item as usize - 1]);
            seen[item as usize - 1] = true;
            item = o.dominant[item as usize - 1];
        }
        assert_eq!(item, 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            sessions: 200,
            cart_ratio: 0.4,
            seed: 17,
            ..Default::default()
        };
        let (a, oa) = generate_synthetic(&cfg).unwrap();
        let (b, ob) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert!(a.iter().any(|s| s.kind == SessionKind::Cart));
        assert!(a.windows(2).all(|w| w[0].t < w[1].t));
        for s in &a {
            assert!(s.items.len() >= 3 && s.items.len() <= 12);
            assert!(s.items.windows(2).all(|w| w[0] != w[1]));
            assert!(s.items.iter().all(|&i| (1..=50).contains(&i)));
        }
    }

    #[test]
    fn two_product_chain_alternates() {
        let cfg = SyntheticConfig {
            products: 2,
            sessions: 20,
            seed: 1,
            ..Default::default()
        };
        let (sessions, o) = generate_synthetic(&cfg).unwrap();
        assert_eq!(o.transition, vec![0.0, 1.0, 1.0, 0.0]);
        for s in sessions {
            assert!(s.items.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn dominant_frequency_matches_configured_mass() {
        let cfg = SyntheticConfig {
            products: 50,
            seed: 3,
            ..Default::default()
        };
        let o = build_oracle(&cfg).unwrap();
        let mut g = rng::stream(99, "mc", 0);
        let row = o.next_distribution(&[7]).unwrap();
        let hits = (0..10_000)
            .filter(|_| sample(row, &mut g) == o.dominant[6])
            .count();
        let freq = hits as f64 / 1e4;
        assert!((freq - 0.8).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn clusters_follow_successors() {
        let cfg = SyntheticConfig {
            products: 40,
            seed: 2,
            ..Default::default()
        };
        let o = build_oracle(&cfg).unwrap();
        let c = successor_clusters(&o, 8).unwrap();
        let same = (0..40)
            .filter(|&i| c[i] == c[o.dominant[i] as usize - 1])
            .count();
        assert_eq!(same, 40 - 8);
        assert!(successor_clusters(&o, 0).is_err());
    }

    #[test]
    fn bad_configs() {
        assert!(build_oracle(&SyntheticConfig {
            products: 1,
            ..Default::default()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticConfig {
            sessions: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticConfig {
            min_len: 5,
            max_len: 4,
            ..Default::default()
        })
        .is_err());
    }
}
