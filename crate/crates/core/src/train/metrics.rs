use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Cut-offs reported for every metric.
pub const K_VALUES: [usize; 3] = [5, 10, 20];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

/// 1-based rank of `truth` after sorting by descending score, equal scores
/// ordered by ascending product id.
pub fn rank_of_truth(scores: &[f64], candidates: &[u32], truth: u32) -> Result<usize> {
    if scores.len() != candidates.len() {
        return Err(Error::shape(
            "rank",
            format!(
                "{} scores for {} candidates",
                scores.len(),
                candidates.len()
            ),
        ));
    }
    let Some(t) = candidates.iter().position(|&c| c == truth) else {
        return Err(Error::Contract(format!(
            "truth {truth} is not among the candidates"
        )));
    };
    let st = scores[t];
    let ahead = scores
        .iter()
        .zip(candidates)
        .filter(|&(&s, &c)| s > st || (s == st && c < truth))
        .count();
    Ok(ahead + 1)
}

/// Means of hit ratio, NDCG and truncated reciprocal rank over sessions.
/// An empty rank list gives all zeros.
pub fn metrics_at_k(ranks: &[usize], k: usize) -> Metrics {
    if ranks.is_empty() {
        return Metrics::default();
    }
    let mut sum = Metrics::default();
    for &r in ranks {
        if r <= k {
            sum.hr += 1.0;
            sum.ndcg += 1.0 / ((r + 1) as f64).log2();
            sum.mrr += 1.0 / r as f64;
        }
    }
    let n = ranks.len() as f64;
    Metrics {
        hr: sum.hr / n,
        ndcg: sum.ndcg / n,
        mrr: sum.mrr / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    NegSample,
    FullCatalog,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::NegSample => "negsample",
            EvalMode::FullCatalog => "full-catalog",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negsample" => Ok(EvalMode::NegSample),
            "full-catalog" => Ok(EvalMode::FullCatalog),
            _ => Err(Error::config(format!("unknown eval mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Hr,
    Ndcg,
    Mrr,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Hr => "HR",
            MetricKind::Ndcg => "NDCG",
            MetricKind::Mrr => "MRR",
        }
    }

    fn pick(self, m: &Metrics) -> f64 {
        match self {
            MetricKind::Hr => m.hr,
            MetricKind::Ndcg => m.ndcg,
            MetricKind::Mrr => m.mrr,
        }
    }
}

/// Column order of comparison tables: every cut-off of HR, then NDCG, then MRR.
pub fn table_columns() -> Vec<(MetricKind, usize)> {
    [MetricKind::Hr, MetricKind::Ndcg, MetricKind::Mrr]
        .into_iter()
        .flat_map(|m| K_VALUES.into_iter().map(move |k| (m, k)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub mode: EvalMode,
    /// Rank of the truth for each evaluated session, in split order.
    pub ranks: Vec<usize>,
    pub at: Vec<(usize, Metrics)>,
}

impl MetricsReport {
    pub fn from_ranks(label: impl Into<String>, mode: EvalMode, ranks: Vec<usize>) -> Self {
        let at = K_VALUES
            .iter()
            .map(|&k| (k, metrics_at_k(&ranks, k)))
            .collect();
        MetricsReport {
            label: label.into(),
            mode,
            ranks,
            at,
        }
    }

    pub fn get(&self, k: usize) -> Metrics {
        self.at
            .iter()
            .find(|(kk, _)| *kk == k)
            .map_or_else(|| metrics_at_k(&self.ranks, k), |(_, m)| *m)
    }

    pub fn value(&self, kind: MetricKind, k: usize) -> f64 {
        kind.pick(&self.get(k))
    }

    /// HR@k ≤ HR@k' for k ≤ k', and likewise for NDCG and MRR.
    pub fn is_monotone(&self) -> bool {
        self.at.windows(2).all(|w| {
            let (a, b) = (w[0].1, w[1].1);
            a.hr <= b.hr && a.ndcg <= b.ndcg && a.mrr <= b.mrr
        })
    }

    /// One tab-separated record per metric: label, mode, metric, k, value.
    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (kind, k) in table_columns() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{k}\t{}",
                self.label,
                self.mode,
                kind.name(),
                self.value(kind, k)
            );
        }
        s
    }
}

/// Aligned plain-text table with one row per report.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let cols = table_columns();
    let headers: Vec<String> = cols
        .iter()
        .map(|(m, k)| format!("{}@{k}", m.name()))
        .collect();
    let label_w = reports
        .iter()
        .map(|r| r.label.len())
        .chain(["Configuration".len()])
        .max()
        .unwrap_or(0);
    let mut s = format!("{:<label_w$}  {:<12}", "Configuration", "Mode");
    for h in &headers {
        let _ = write!(s, "  {h:>7}");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<label_w$}  {:<12}", r.label, r.mode.to_string());
        for (h, (m, k)) in headers.iter().zip(&cols) {
            let w = h.len().max(7);
            let _ = write!(s, "  {:>w$.4}", r.value(*m, *k));
        }
        s.push('\n');
    }
    s
}
