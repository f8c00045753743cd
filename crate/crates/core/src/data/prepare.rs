use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::session::{Session, SessionKind, PAD};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 20;
pub const DEFAULT_TRAIN_FRAC: f64 = 14.0 / 18.0;
pub const DEFAULT_VAL_FRAC: f64 = 2.0 / 18.0;

/// Collapses a run of repeated final products to a single occurrence.
pub fn dedupe_trailing(items: &[u32]) -> Vec<u32> {
    let Some(&last) = items.last() else {
        return Vec::new();
    };
    let run = items.iter().rev().take_while(|&&v| v == last).count();
    items[..items.len() - run + 1].to_vec()
}

/// Keeps the last `max_len` items.
pub fn truncate(items: &[u32], max_len: usize) -> &[u32] {
    &items[items.len().saturating_sub(max_len)..]
}

/// A fixed-length sequence with suffix padding and its validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Padded {
    /// An unpadded sequence: every position is valid.
    pub fn compact(items: &[u32]) -> Self {
        Padded {
            ids: items.to_vec(),
            mask: vec![true; items.len()],
        }
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Truncates to the last `max_len` items, then pads with [`PAD`] at the end.
pub fn truncate_pad(items: &[u32], max_len: usize) -> Padded {
    let kept = truncate(items, max_len);
    let mut ids = kept.to_vec();
    let mut mask = vec![true; kept.len()];
    ids.resize(max_len, PAD);
    mask.resize(max_len, false);
    Padded { ids, mask }
}

/// Drops every session whose id appears as both a purchase and a cart session.
pub fn remove_overlap(purchase: &[Session], cart: &[Session]) -> (Vec<Session>, Vec<Session>) {
    let p_ids: HashSet<&str> = purchase.iter().map(|s| s.session_id.as_str()).collect();
    let c_ids: HashSet<&str> = cart.iter().map(|s| s.session_id.as_str()).collect();
    let shared: HashSet<&str> = p_ids.intersection(&c_ids).copied().collect();
    let keep = |set: &[Session]| {
        set.iter()
            .filter(|s| !shared.contains(s.session_id.as_str()))
            .cloned()
            .collect::<Vec<_>>()
    };
    (keep(purchase), keep(cart))
}

/// Full cleaning pass: separate kinds, remove overlapping ids, collapse
/// trailing repeats, drop sessions too short to give an input/target pair,
/// and keep the last `max_len` items.
pub fn preprocess(sessions: &[Session], max_len: usize) -> Result<Vec<Session>> {
    if max_len < 2 {
        return Err(Error::config(format!(
            "max_len must be at least 2 to form an input/target pair, got {max_len}"
        )));
    }
    let (purchase, cart): (Vec<Session>, Vec<Session>) = sessions
        .iter()
        .cloned()
        .partition(|s| s.kind == SessionKind::Purchase);
    let (purchase, cart) = remove_overlap(&purchase, &cart);
    let overlap_free: HashSet<(String, SessionKind)> = purchase
        .iter()
        .chain(&cart)
        .map(|s| (s.session_id.clone(), s.kind))
        .collect();

    // Preserve input order.
    Ok(sessions
        .iter()
        .filter(|s| overlap_free.contains(&(s.session_id.clone(), s.kind)))
        .filter_map(|s| {
            let items = dedupe_trailing(&s.items);
            let items = truncate(&items, max_len).to_vec();
            (items.len() >= 2).then(|| Session { items, ..s.clone() })
        })
        .collect())
}

/// Chronological train/validation/test split with purchase/cart semantics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub catalog_size: u32,
    pub max_len: usize,
    pub train: Vec<Session>,
    pub val: Vec<Session>,
    /// Purchase sessions only.
    pub test: Vec<Session>,
}

/// Sorts by `(t, session_id, kind)` and cuts the list by fraction. Cart
/// sessions that land in the test range are dropped.
pub fn temporal_split(
    sessions: &[Session],
    train_frac: f64,
    val_frac: f64,
    catalog_size: u32,
    max_len: usize,
) -> Result<PreparedDataset> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::config(format!(
            "split fractions must be positive with sum below 1, got {train_frac} and {val_frac}"
        )));
    }
    let mut sorted = sessions.to_vec();
    sorted.sort_by(|a, b| (a.t, &a.session_id, a.kind).cmp(&(b.t, &b.session_id, b.kind)));
    let n = sorted.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_val = (n as f64 * val_frac).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::config(format!(
            "{n} sessions cannot fill all three splits at fractions {train_frac:.4}/{val_frac:.4}"
        )));
    }
    let test: Vec<Session> = sorted[n_train + n_val..]
        .iter()
        .filter(|s| s.kind == SessionKind::Purchase)
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(Error::config("test split has no purchase sessions"));
    }
    let val = sorted[n_train..n_train + n_val].to_vec();
    sorted.truncate(n_train);
    Ok(PreparedDataset {
        catalog_size,
        max_len,
        train: sorted,
        val,
        test,
    })
}

impl PreparedDataset {
    /// Preprocesses and splits with the default fractions.
    pub fn build(sessions: &[Session], catalog_size: Option<u32>, max_len: usize) -> Result<Self> {
        let cleaned = preprocess(sessions, max_len)?;
        let observed = cleaned
            .iter()
            .flat_map(|s| s.items.iter().copied())
            .max()
            .unwrap_or(0);
        let catalog_size = catalog_size.unwrap_or(observed);
        if observed > catalog_size {
            return Err(Error::config(format!(
                "catalog size {catalog_size} is smaller than the largest product id {observed}"
            )));
        }
        temporal_split(
            &cleaned,
            DEFAULT_TRAIN_FRAC,
            DEFAULT_VAL_FRAC,
            catalog_size,
            max_len,
        )
    }

    /// Re-truncates every split to a shorter maximum length.
    pub fn with_max_len(&self, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::config("max_len must be at least 2"));
        }
        let cut = |v: &[Session]| {
            v.iter()
                .map(|s| Session {
                    items: truncate(&s.items, max_len).to_vec(),
                    ..s.clone()
                })
                .collect()
        };
        Ok(PreparedDataset {
            catalog_size: self.catalog_size,
            max_len,
            train: cut(&self.train),
            val: cut(&self.val),
            test: cut(&self.test),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::input(None, e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::input(None, format!("prepared dataset: {e}")))
    }

    pub fn all_sessions(&self) -> impl Iterator<Item = &Session> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// One row of the dataset statistics table.
#[derive(Clone, Debug, PartialEq)]
pub struct KindStats {
    pub sessions: usize,
    pub products: usize,
    pub avg_length: f64,
    pub actions: usize,
}

pub fn kind_stats<'a>(
    sessions: impl IntoIterator<Item = &'a Session>,
    kind: SessionKind,
) -> KindStats {
    let mut products = BTreeSet::new();
    let mut n = 0;
    let mut actions = 0;
    for s in sessions.into_iter().filter(|s| s.kind == kind) {
        n += 1;
        actions += s.items.len();
        products.extend(s.items.iter().copied());
    }
    KindStats {
        sessions: n,
        products: products.len(),
        avg_length: if n == 0 {
            0.0
        } else {
            actions as f64 / n as f64
        },
        actions,
    }
}

/// Plain-text statistics table with one row per session kind.
pub fn stats_table(sessions: &[Session]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>11} {:>10}",
        "Datasets", "#Sessions", "#Products", "Avg.Length", "#Actions"
    );
    for (label, kind) in [
        ("Purchase", SessionKind::Purchase),
        ("S.Cart", SessionKind::Cart),
    ] {
        let st = kind_stats(sessions, kind);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>11.2} {:>10}",
            label, st.sessions, st.products, st.avg_length, st.actions
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sess(id: &str, kind: SessionKind, t: i64, items: &[u32]) -> Session {
        Session::new(id, kind, t, items.to_vec())
    }

    #[test]
    fn trailing_repeats_collapse() {
        assert_eq!(dedupe_trailing(&[1, 2, 3, 3, 3]), vec![1, 2, 3]);
        assert_eq!(dedupe_trailing(&[1, 2, 3]), vec![1, 2, 3]);
        assert_eq!(dedupe_trailing(&[7, 7]), vec![7]);
        assert_eq!(dedupe_trailing(&[4, 4, 5, 4, 4]), vec![4, 4, 5, 4]);
    }

    #[test]
    fn truncation_and_padding() {
        let long: Vec<u32> = (1..=25).collect();
        let p = truncate_pad(&long, 20);
        assert_eq!(p.ids, (6..=25).collect::<Vec<_>>());
        assert!(p.mask.iter().all(|&m| m));

        let p = truncate_pad(&[3, 1, 4, 1, 5], 20);
        assert_eq!(p.ids.iter().filter(|&&i| i == PAD).count(), 15);
        assert_eq!(p.valid_len(), 5);
        assert_eq!(&p.ids[..5], &[3, 1, 4, 1, 5]);
        assert!(p.mask[..5].iter().all(|&m| m) && p.mask[5..].iter().all(|&m| !m));

        let exact: Vec<u32> = (1..=20).collect();
        let p = truncate_pad(&exact, 20);
        assert_eq!(p.ids, exact);
        assert_eq!(p.valid_len(), 20);
    }

    #[test]
    fn overlap_removal() {
        let p = vec![
            sess("a", SessionKind::Purchase, 0, &[1]),
            sess("b", SessionKind::Purchase, 0, &[2]),
        ];
        let c = vec![sess("c", SessionKind::Cart, 0, &[3])];
        assert_eq!(remove_overlap(&p, &c), (p.clone(), c.clone()));

        let c2 = vec![
            sess("b", SessionKind::Cart, 0, &[3]),
            sess("d", SessionKind::Cart, 0, &[4]),
        ];
        let (pp, cc) = remove_overlap(&p, &c2);
        let ids = |v: &[Session]| v.iter().map(|s| s.session_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&pp), vec!["a"]);
        assert_eq!(ids(&cc), vec!["d"]);

        let c3 = vec![
            sess("a", SessionKind::Cart, 0, &[1]),
            sess("b", SessionKind::Cart, 0, &[1]),
        ];
        let (pp, cc) = remove_overlap(&p, &c3);
        assert!(pp.is_empty() && cc.is_empty());
    }

    #[test]
    fn split_default_fractions() {
        let sessions: Vec<Session> = (0..18)
            .map(|i| sess(&format!("s{i:02}"), SessionKind::Purchase, i, &[1, 2]))
            .collect();
        let d = temporal_split(&sessions, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC, 2, 20).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (14, 2, 2));
        assert!(d.train.iter().map(|s| s.t).max() <= d.val.iter().map(|s| s.t).min());
        assert!(d.val.iter().map(|s| s.t).max() <= d.test.iter().map(|s| s.t).min());
    }

    #[test]
    fn split_ties_break_by_id() {
        let mut sessions: Vec<Session> = (0..18)
            .map(|i| sess(&format!("s{i:02}"), SessionKind::Purchase, 5, &[1, 2]))
            .collect();
        sessions.reverse();
        let d = temporal_split(&sessions, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC, 2, 20).unwrap();
        let ids: Vec<&str> = d.all_sessions().map(|s| s.session_id.as_str()).collect();
        let expect: Vec<String> = (0..18).map(|i| format!("s{i:02}")).collect();
        assert_eq!(ids, expect.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn test_split_is_purchase_only() {
        let sessions: Vec<Session> = (0..36)
            .map(|i| {
                let kind = if i % 2 == 0 {
                    SessionKind::Cart
                } else {
                    SessionKind::Purchase
                };
                sess(&format!("s{i:02}"), kind, i, &[1, 2])
            })
            .collect();
        let d = temporal_split(&sessions, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC, 2, 20).unwrap();
        assert!(d.test.iter().all(|s| s.kind == SessionKind::Purchase));
        assert!(!d.test.is_empty());
        assert!(d.train.iter().any(|s| s.kind == SessionKind::Cart));
    }

    #[test]
    fn split_errors() {
        let few: Vec<Session> = (0..3)
            .map(|i| sess(&i.to_string(), SessionKind::Purchase, i, &[1, 2]))
            .collect();
        assert!(matches!(
            temporal_split(&few, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC, 2, 20),
            Err(Error::Config(_))
        ));
        assert!(temporal_split(&few, 0.7, 0.3, 2, 20).is_err());
        let carts: Vec<Session> = (0..18)
            .map(|i| sess(&i.to_string(), SessionKind::Cart, i, &[1, 2]))
            .collect();
        assert!(temporal_split(&carts, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC, 2, 20).is_err());
    }

    #[test]
    fn preprocess_rules() {
        let sessions = vec![
            sess("a", SessionKind::Purchase, 0, &[1, 2, 3, 3, 3]),
            sess("b", SessionKind::Purchase, 1, &[4, 4]),
            sess("c", SessionKind::Cart, 2, &[5, 6]),
            sess("c", SessionKind::Purchase, 3, &[5, 6]),
        ];
        let out = preprocess(&sessions, 20).unwrap();
        assert_eq!(out, vec![sess("a", SessionKind::Purchase, 0, &[1, 2, 3])]);
        assert!(matches!(preprocess(&sessions, 1), Err(Error::Config(_))));
    }

    #[test]
    fn stats_table_columns() {
        let sessions = vec![
            sess("a", SessionKind::Purchase, 0, &[1, 2, 3]),
            sess("b", SessionKind::Purchase, 1, &[2, 4]),
            sess("c", SessionKind::Cart, 2, &[5, 6, 7, 8]),
        ];
        let st = kind_stats(&sessions, SessionKind::Purchase);
        assert_eq!(
            st,
            KindStats {
                sessions: 2,
                products: 4,
                avg_length: 2.5,
                actions: 5
            }
        );
        let table = stats_table(&sessions);
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(
            header,
            [
                "Datasets",
                "#Sessions",
                "#Products",
                "Avg.Length",
                "#Actions"
            ]
        );
        assert!(table.contains("2.50"));
    }

    proptest! {
        #[test]
        fn preprocessed_sessions_obey_limits(
            raw in proptest::collection::vec(proptest::collection::vec(1u32..6, 1..40), 1..30),
            max_len in 2usize..25,
        ) {
            let sessions: Vec<Session> = raw
                .into_iter()
                .enumerate()
                .map(|(i, items)| sess(&i.to_string(), SessionKind::Purchase, i as i64, &items))
                .collect();
            for s in preprocess(&sessions, max_len).unwrap() {
                prop_assert!(s.items.len() >= 2 && s.items.len() <= max_len);
                prop_assert!(!s.items.contains(&PAD));
                let n = s.items.len();
                prop_assert_ne!(s.items[n - 1], s.items[n - 2]);
            }
        }
    }
}
