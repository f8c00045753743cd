use std::fmt::Write as _;

use super::config::{Configuration, TrainConfig};
use super::eval::{evaluate, EvalOptions};
use super::metrics::{EvalMode, MetricKind, MetricsReport};
use super::trainer::{fingerprint, train, TrainOutcome};
use crate::data::PreparedDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Model, ModelConfig};
use crate::rng;
use crate::style::StyleCache;

/// Test-split protocol for a run. The seed depends only on the run seed, so
/// every configuration sharing it sees identical candidate sets.
pub fn test_options(config: &TrainConfig, mode: EvalMode, exec: Exec) -> EvalOptions {
    EvalOptions {
        mode,
        negatives: config.eval_negatives,
        seed: rng::derive(config.seed, "test", 0),
        exec,
    }
}

pub struct SuiteRun {
    pub configuration: Configuration,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

/// Trains and tests each configuration with the same seed and test split.
pub fn run_configuration_suite(
    dataset: &PreparedDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    style: Option<&StyleCache>,
    configurations: &[Configuration],
    exec: Exec,
) -> Result<Vec<SuiteRun>> {
    if style.is_none() && configurations.iter().any(|c| c.uses_style()) {
        return Err(Error::config("style configurations need a style cache"));
    }
    let opts = test_options(config, EvalMode::NegSample, exec);
    configurations
        .iter()
        .map(|&configuration| {
            let cfg = TrainConfig {
                configuration,
                ..config.clone()
            };
            let outcome = train(dataset, model_config, &cfg, style, exec)?;
            let report = evaluate(
                &outcome.model,
                &dataset.test,
                dataset.catalog_size,
                configuration.label(),
                &opts,
            )?;
            Ok(SuiteRun {
                configuration,
                outcome,
                report,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub max_len: usize,
    pub report: MetricsReport,
}

/// Retrains and tests once per maximum session length.
pub fn dynamic_experiment(
    dataset: &PreparedDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    style: Option<&StyleCache>,
    max_lens: &[usize],
    exec: Exec,
) -> Result<Vec<CurvePoint>> {
    if let Some(&bad) = max_lens.iter().find(|&&m| m < 2 || m > dataset.max_len) {
        return Err(Error::config(format!(
            "max_len {bad} is outside 2..={} for this dataset",
            dataset.max_len
        )));
    }
    let opts = test_options(config, EvalMode::NegSample, exec);
    max_lens
        .iter()
        .map(|&max_len| {
            let data = dataset.with_max_len(max_len)?;
            let out = train(&data, model_config, config, style, exec)?;
            let label = format!("max_len={max_len}");
            let report = evaluate(&out.model, &data.test, data.catalog_size, &label, &opts)?;
            Ok(CurvePoint { max_len, report })
        })
        .collect()
}

/// Two-column series of one metric against maximum length.
pub fn curve_series(points: &[CurvePoint], kind: MetricKind, k: usize) -> String {
    let mut s = format!("# max_len\t{}@{k}\n", kind.name());
    for p in points {
        let _ = writeln!(s, "{}\t{}", p.max_len, p.report.value(kind, k));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub d_ffn: usize,
    pub l2: f64,
    pub val_ndcg5: f64,
    pub best_epoch: usize,
    pub fingerprint: String,
}

pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    /// Index into `runs`.
    pub best: usize,
    pub model: Model,
    pub log: Vec<String>,
}

/// Grid points ordered by hidden width, then penalty, both ascending.
fn grid(config: &TrainConfig) -> Vec<(usize, f64)> {
    let mut hidden = config.hidden_grid.clone();
    hidden.sort_unstable();
    hidden.dedup();
    let mut l2 = config.l2_grid.clone();
    l2.sort_by(f64::total_cmp);
    l2.dedup();
    hidden
        .iter()
        .flat_map(|&h| l2.iter().map(move |&l| (h, l)))
        .collect()
}

/// Highest validation NDCG@5. Runs are in grid order, so keeping the first
/// maximum prefers the smaller width, then the smaller penalty.
fn select_best(runs: &[SweepRun]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if best.is_none_or(|b| r.val_ndcg5 > runs[b].val_ndcg5) {
            best = Some(i);
        }
    }
    best
}

/// Grid search over feed-forward width and L2 penalty. `budget` keeps the
/// first runs in grid order.
pub fn sweep(
    dataset: &PreparedDataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    style: Option<&StyleCache>,
    budget: Option<usize>,
    exec: Exec,
) -> Result<SweepOutcome> {
    config.validate()?;
    if budget == Some(0) {
        return Err(Error::config("sweep budget must be positive"));
    }
    let mut points = grid(config);
    points.truncate(budget.unwrap_or(usize::MAX));
    let mut runs = Vec::with_capacity(points.len());
    let mut log = Vec::new();
    let mut best_model: Option<Model> = None;
    for (d_ffn, l2) in points {
        let mc = ModelConfig {
            d_ffn: Some(d_ffn),
            ..model_config.clone()
        };
        let tc = TrainConfig {
            l2,
            ..config.clone()
        };
        let out = train(dataset, &mc, &tc, style, exec)?;
        log.extend(out.log.iter().cloned());
        log.push(format!(
            "sweep d_ffn={d_ffn} l2={l2} fingerprint={} val_ndcg5={:.6}",
            out.fingerprint, out.best_val_ndcg5
        ));
        runs.push(SweepRun {
            d_ffn,
            l2,
            val_ndcg5: out.best_val_ndcg5,
            best_epoch: out.best_epoch,
            fingerprint: out.fingerprint.clone(),
        });
        if select_best(&runs) == Some(runs.len() - 1) {
            best_model = Some(out.model);
        }
    }
    let best = select_best(&runs).expect("nonempty grid");
    let b = &runs[best];
    log.push(format!(
        "sweep best d_ffn={} l2={} fingerprint={}",
        b.d_ffn, b.l2, b.fingerprint
    ));
    debug_assert_eq!(
        b.fingerprint,
        fingerprint(
            &ModelConfig {
                d_ffn: Some(b.d_ffn),
                use_style: config.configuration.uses_style(),
                max_len: dataset.max_len,
                ..model_config.clone()
            },
            &TrainConfig {
                l2: b.l2,
                ..config.clone()
            }
        )
    );
    Ok(SweepOutcome {
        runs,
        best,
        model: best_model.expect("best run kept"),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, MarkovOrder, SyntheticConfig};

    fn run(d_ffn: usize, l2: f64, v: f64) -> SweepRun {
        SweepRun {
            d_ffn,
            l2,
            val_ndcg5: v,
            best_epoch: 1,
            fingerprint: String::new(),
        }
    }

    #[test]
    fn grid_order_and_ties() {
        let cfg = TrainConfig {
            hidden_grid: vec![32, 8, 16],
            l2_grid: vec![0.1, 0.0001],
            ..TrainConfig::default()
        };
        assert_eq!(
            grid(&cfg),
            [
                (8, 0.0001),
                (8, 0.1),
                (16, 0.0001),
                (16, 0.1),
                (32, 0.0001),
                (32, 0.1)
            ]
        );
        let runs = [
            run(8, 0.0001, 0.4),
            run(8, 0.1, 0.5),
            run(16, 0.0001, 0.5),
            run(16, 0.1, 0.3),
        ];
        assert_eq!(select_best(&runs), Some(1));
        assert_eq!(select_best(&[run(8, 0.1, 0.2)]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    fn data() -> PreparedDataset {
        let cfg = SyntheticConfig {
            products: 12,
            sessions: 200,
            min_len: 2,
            max_len: 6,
            order: MarkovOrder::First,
            seed: 8,
            ..SyntheticConfig::default()
        };
        PreparedDataset::build(&generate_synthetic(&cfg).unwrap().0, Some(12), 6).unwrap()
    }

    fn tiny() -> (ModelConfig, TrainConfig) {
        let mc = ModelConfig {
            d_product: 8,
            d_model: 8,
            n_blocks: 1,
            d_ffn: Some(8),
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 2,
            eval_negatives: 5,
            hidden_grid: vec![8],
            l2_grid: vec![0.001],
            seed: 4,
            ..TrainConfig::default()
        };
        (mc, tc)
    }

    #[test]
    fn single_point_sweep() {
        let d = data();
        let (mc, tc) = tiny();
        let out = sweep(&d, &mc, &tc, None, None, Exec::default()).unwrap();
        assert_eq!(out.runs.len(), 1);
        assert_eq!(out.best, 0);
        assert_eq!(out.model.config.d_ffn, Some(8));
        assert!(out.log.iter().any(|l| l.contains(&out.runs[0].fingerprint)));
        let budgeted = TrainConfig {
            hidden_grid: vec![8, 16],
            ..tc
        };
        let out = sweep(&d, &mc, &budgeted, None, Some(1), Exec::default()).unwrap();
        assert_eq!(out.runs.len(), 1);
    }

    #[test]
    fn curves_and_suite() {
        let d = data();
        let (mc, tc) = tiny();
        let points = dynamic_experiment(&d, &mc, &tc, None, &[2, 4], Exec::default()).unwrap();
        assert_eq!(points.len(), 2);
        let series = curve_series(&points, MetricKind::Hr, 5);
        assert_eq!(series.lines().count(), 3);
        assert!(series.lines().nth(1).unwrap().starts_with("2\t"));
        assert!(dynamic_experiment(&d, &mc, &tc, None, &[1], Exec::default()).is_err());

        let suite = run_configuration_suite(
            &d,
            &mc,
            &tc,
            None,
            &[Configuration::P, Configuration::PCart],
            Exec::default(),
        )
        .unwrap();
        assert_eq!(suite.len(), 2);
        assert_eq!(suite[0].report.ranks.len(), d.test.len());
        assert_eq!(suite[0].report.label, "P");
        assert!(
            run_configuration_suite(&d, &mc, &tc, None, &Configuration::ALL, Exec::default())
                .is_err()
        );
    }
}
