use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use seqrec::data::synthetic::successor_clusters;
use seqrec::data::{
    generate_synthetic, parse_sessions, stats_table, write_sessions, MarkovOrder, PreparedDataset,
    Session,
};
use seqrec::exec::Exec;
use seqrec::model::Model;
use seqrec::rng;
use seqrec::style::{
    build_cache, load_feature_maps, pattern_image, Image, PseudoFeatureProvider, StyleCache,
};
use seqrec::train::{
    comparison_table, curve_series, dynamic_experiment, evaluate, run_configuration_suite, sweep,
    table_columns, test_options, train, TrainOutcome,
};
use seqrec::{Error, Result};

use crate::artifacts::Artifacts;
use crate::config::{require, RunConfig, Split};

/// Prefixes input and format errors with the file they came from.
pub fn in_file(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Input { line, msg } => Error::Input {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Io(io) => Error::Input {
            line: None,
            msg: format!("{}: {io}", path.display()),
        },
        other => other,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.paths
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (--out or paths.out)".into()))
}

fn config_fingerprint(cfg: &RunConfig) -> String {
    format!("{:016x}", rng::fnv1a(&cfg.to_kv()))
}

fn load_data(cfg: &RunConfig) -> Result<PreparedDataset> {
    let path = require(cfg.paths.data.as_deref(), "prepared dataset")?;
    PreparedDataset::load(&path).map_err(in_file(&path))
}

fn load_style(cfg: &RunConfig) -> Result<Option<StyleCache>> {
    match &cfg.paths.style {
        None => Ok(None),
        Some(_) => {
            let path = require(cfg.paths.style.as_deref(), "style cache")?;
            StyleCache::load(&path).map(Some).map_err(in_file(&path))
        }
    }
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace('+', "-")
}

fn history(out: &TrainOutcome) -> String {
    let mut s = String::from("epoch\tmean_loss\tval_hr5\tval_ndcg5\tval_mrr5\n");
    for e in &out.epochs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            e.epoch, e.mean_loss, e.val.hr, e.val.ndcg, e.val.mrr
        );
    }
    s
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let input = require(cfg.paths.sessions.as_deref(), "sessions file")?;
    let raw = parse_sessions(&input).map_err(in_file(&input))?;
    let data = PreparedDataset::build(&raw, cfg.preprocess.catalog_size, cfg.preprocess.max_len)?;
    let cleaned: Vec<Session> = data.all_sessions().cloned().collect();
    let stats = stats_table(&cleaned);
    let mut art = Artifacts::create(
        &out_dir(cfg)?,
        "preprocess",
        cfg.seed,
        config_fingerprint(cfg),
    )?;
    let json = serde_json::to_vec(&data).map_err(|e| Error::Input {
        line: None,
        msg: e.to_string(),
    })?;
    art.bytes("dataset.json", &json)?;
    let splits = format!(
        "train={} val={} test={} catalog_size={} max_len={}\n",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.catalog_size,
        data.max_len
    );
    art.text("stats.txt", &format!("{stats}{splits}"))?;
    art.log([
        format!("read {} sessions from {}", raw.len(), input.display()),
        splits.trim().to_string(),
    ])?;
    art.finish(&cfg.to_kv())?;
    print!("{stats}{splits}");
    Ok(())
}

/// Product ids named `<id>.<ext>` in `dir`, ascending.
fn ids_in(dir: &Path, ext: &str) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| in_file(dir)(e.into()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u32>().ok())
            {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn stylegen(cfg: &RunConfig) -> Result<()> {
    let source = match (cfg.pseudo, &cfg.paths.features) {
        (true, Some(_)) => {
            return Err(Error::Config(
                "choose either --features or --pseudo, not both".into(),
            ))
        }
        (false, None) => {
            return Err(Error::Config(
                "stylegen needs --features DIR or --pseudo --images DIR".into(),
            ))
        }
        (true, None) => require(cfg.paths.images.as_deref(), "image directory")?,
        (false, Some(_)) => require(cfg.paths.features.as_deref(), "feature directory")?,
    };
    let ext = if cfg.pseudo { "s4im" } else { "s4rf" };
    let catalog = match (cfg.products, &cfg.paths.data) {
        (Some(p), _) => Some(p),
        (None, Some(_)) => Some(load_data(cfg)?.catalog_size),
        (None, None) => None,
    };
    let ids: Vec<u32> = match catalog {
        Some(p) => (1..=p).collect(),
        None => ids_in(&source, ext)?,
    };
    if ids.is_empty() {
        return Err(Error::Input {
            line: None,
            msg: format!("no .{ext} files in {}", source.display()),
        });
    }
    let provider = PseudoFeatureProvider::new(cfg.seed);
    let (cache, missing) = build_cache(
        &ids,
        |id| {
            let path = source.join(format!("{id}.{ext}"));
            if !path.exists() {
                return Ok(None);
            }
            if cfg.pseudo {
                let image = Image::load(&path).map_err(in_file(&path))?;
                provider.features(&image).map(Some)
            } else {
                load_feature_maps(&path).map(Some).map_err(in_file(&path))
            }
        },
        Exec::default(),
    )?;
    let mut art = Artifacts::create(
        &out_dir(cfg)?,
        "stylegen",
        cfg.seed,
        config_fingerprint(cfg),
    )?;
    art.bytes("style.s4se", &cache.to_bytes()?)?;
    let summary = format!(
        "{} products, {missing} without {ext} input (zero vectors)",
        ids.len()
    );
    art.log([format!("source {}", source.display()), summary.clone()])?;
    art.finish(&cfg.to_kv())?;
    if missing > 0 {
        eprintln!(
            "warning: {missing} of {} products have no .{ext} file and get zero style vectors",
            ids.len()
        );
    }
    println!("{summary}");
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let style = load_style(cfg)?;
    let out = train(
        &data,
        &cfg.model,
        &cfg.train,
        style.as_ref(),
        Exec::default(),
    )?;
    let mut art = Artifacts::create(&out_dir(cfg)?, "train", cfg.seed, out.fingerprint.clone())?;
    art.bytes("model.ckpt", &out.model.to_bytes()?)?;
    art.text("history.tsv", &history(&out))?;
    art.log(&out.log)?;
    art.finish(&cfg.to_kv())?;
    println!(
        "configuration={} best_epoch={} val_ndcg5={:.6} fingerprint={}",
        cfg.train.configuration, out.best_epoch, out.best_val_ndcg5, out.fingerprint
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let ckpt = require(cfg.paths.checkpoint.as_deref(), "checkpoint")?;
    let model = Model::load(&ckpt).map_err(in_file(&ckpt))?;
    let data = load_data(cfg)?;
    if model.products() != data.catalog_size {
        return Err(Error::Config(format!(
            "checkpoint covers {} products but the dataset catalog has {}",
            model.products(),
            data.catalog_size
        )));
    }
    let sessions = match cfg.experiment.split {
        Split::Test => &data.test,
        Split::Val => &data.val,
    };
    let label = ckpt
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();
    let opts = test_options(&cfg.train, cfg.experiment.mode, Exec::default());
    let report = evaluate(&model, sessions, data.catalog_size, &label, &opts)?;
    let fingerprint = crate::artifacts::digest(&std::fs::read(&ckpt)?);
    let mut art = Artifacts::create(&out_dir(cfg)?, "eval", cfg.seed, fingerprint)?;
    let mode = cfg.experiment.mode.to_string();
    art.text(&format!("report-{mode}.tsv"), &report.lines())?;
    let table = comparison_table(std::slice::from_ref(&report));
    art.text(&format!("table-{mode}.txt"), &table)?;
    art.log([format!(
        "evaluated {} on {} sessions ({mode})",
        ckpt.display(),
        sessions.len()
    )])?;
    art.finish(&cfg.to_kv())?;
    print!("{table}");
    Ok(())
}

pub fn suite(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let style = load_style(cfg)?;
    let runs = run_configuration_suite(
        &data,
        &cfg.model,
        &cfg.train,
        style.as_ref(),
        &cfg.experiment.configurations,
        Exec::default(),
    )?;
    let mut art = Artifacts::create(&out_dir(cfg)?, "suite", cfg.seed, config_fingerprint(cfg))?;
    let mut lines = String::new();
    for r in &runs {
        let name = slug(r.configuration.label());
        art.bytes(&format!("{name}.ckpt"), &r.outcome.model.to_bytes()?)?;
        art.text(&format!("{name}.history.tsv"), &history(&r.outcome))?;
        art.log(&r.outcome.log)?;
        lines.push_str(&r.report.lines());
    }
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    let table = comparison_table(&reports);
    art.text("reports.tsv", &lines)?;
    art.text("table.txt", &table)?;
    art.finish(&cfg.to_kv())?;
    print!("{table}");
    Ok(())
}

pub fn dynamic(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let style = load_style(cfg)?;
    let points = dynamic_experiment(
        &data,
        &cfg.model,
        &cfg.train,
        style.as_ref(),
        &cfg.experiment.max_lens,
        Exec::default(),
    )?;
    let mut art = Artifacts::create(&out_dir(cfg)?, "dynamic", cfg.seed, config_fingerprint(cfg))?;
    for (kind, k) in table_columns() {
        let name = format!("curve-{}{k}.tsv", kind.name().to_ascii_lowercase());
        art.text(&name, &curve_series(&points, kind, k))?;
    }
    let reports: Vec<_> = points.iter().map(|p| p.report.clone()).collect();
    let table = comparison_table(&reports);
    art.text("table.txt", &table)?;
    art.log(
        points
            .iter()
            .map(|p| format!("max_len={} ndcg5={:.6}", p.max_len, p.report.get(5).ndcg)),
    )?;
    art.finish(&cfg.to_kv())?;
    print!("{table}");
    Ok(())
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let style = load_style(cfg)?;
    let out = sweep(
        &data,
        &cfg.model,
        &cfg.train,
        style.as_ref(),
        cfg.experiment.budget,
        Exec::default(),
    )?;
    let best = &out.runs[out.best];
    let mut art = Artifacts::create(&out_dir(cfg)?, "sweep", cfg.seed, best.fingerprint.clone())?;
    let mut s = String::from("d_ffn\tl2\tval_ndcg5\tbest_epoch\tfingerprint\n");
    for r in &out.runs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.d_ffn, r.l2, r.val_ndcg5, r.best_epoch, r.fingerprint
        );
    }
    art.text("sweep.tsv", &s)?;
    art.bytes("best.ckpt", &out.model.to_bytes()?)?;
    art.log(&out.log)?;
    art.finish(&cfg.to_kv())?;
    print!("{s}");
    println!(
        "best d_ffn={} l2={} val_ndcg5={:.6}",
        best.d_ffn, best.l2, best.val_ndcg5
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let sc = &cfg.synth.config;
    let (sessions, oracle) = generate_synthetic(sc)?;
    let mut art = Artifacts::create(&out_dir(cfg)?, "synth", cfg.seed, config_fingerprint(cfg))?;
    let mut buf = Vec::new();
    write_sessions(&mut buf, &sessions)?;
    art.bytes("sessions.jsonl", &buf)?;
    let json = serde_json::to_vec(&oracle).map_err(|e| Error::Input {
        line: None,
        msg: e.to_string(),
    })?;
    art.bytes("oracle.json", &json)?;
    if cfg.synth.images {
        if sc.order != MarkovOrder::First {
            return Err(Error::Config(
                "synthetic images need a first-order chain".into(),
            ));
        }
        let clusters = cfg
            .synth
            .clusters
            .unwrap_or((sc.products as usize / 5).max(1));
        let assignment = successor_clusters(&oracle, clusters)?;
        for id in 1..=sc.products {
            let image = pattern_image(
                assignment[id as usize - 1],
                u64::from(id),
                cfg.synth.image_side,
                cfg.seed,
            )?;
            art.bytes(&format!("images/{id}.s4im"), &image.to_bytes()?)?;
        }
    }
    let summary = format!("{} sessions over {} products", sessions.len(), sc.products);
    art.log([summary.clone()])?;
    art.finish(&cfg.to_kv())?;
    println!("{summary}");
    Ok(())
}
