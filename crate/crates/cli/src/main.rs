//! `seqrec` command-line tool.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use seqrec::Result;

#[derive(Parser)]
#[command(
    name = "seqrec",
    version,
    about = "Session-based product recommendation with style embeddings"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed. Overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Extra setting, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and split a sessions file and report dataset statistics.
    Preprocess {
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        catalog_size: Option<u32>,
    },
    /// Build a style cache from feature maps or from images.
    Stylegen {
        /// Directory of `<id>.s4rf` feature-map files.
        #[arg(long, value_name = "DIR", conflicts_with = "pseudo")]
        features: Option<PathBuf>,
        /// Extract features from images with a seeded random network.
        #[arg(long, requires = "images")]
        pseudo: bool,
        /// Directory of `<id>.s4im` images.
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        /// Catalog size; products without input get zero vectors.
        #[arg(long)]
        products: Option<u32>,
        /// Take the catalog size from a prepared dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one configuration and save the best checkpoint.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long)]
        configuration: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// negsample or full-catalog.
        #[arg(long)]
        mode: Option<String>,
        /// val or test.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        negatives: Option<usize>,
    },
    /// Train and test every configuration on one split.
    Suite {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
        /// Comma-separated configuration labels.
        #[arg(long)]
        configurations: Option<String>,
    },
    /// Retrain at each maximum session length.
    Dynamic {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long)]
        configuration: Option<String>,
        /// Comma-separated lengths.
        #[arg(long)]
        max_lens: Option<String>,
    },
    /// Grid search over feed-forward width and L2 penalty.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long)]
        configuration: Option<String>,
        /// Number of grid points to run.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Generate sessions from a seeded random chain.
    Synth {
        #[arg(long)]
        products: Option<u32>,
        #[arg(long)]
        sessions: Option<usize>,
        /// first or second.
        #[arg(long)]
        order: Option<String>,
        #[arg(long)]
        cart_ratio: Option<f64>,
        /// Probability of the dominant next product.
        #[arg(long)]
        mass: Option<f64>,
        /// Also write one pattern image per product.
        #[arg(long)]
        images: bool,
    },
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(o: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key, v.to_string()));
    }
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn overrides(command: &Command) -> Overrides {
    let mut o = Overrides::new();
    match command {
        Command::Preprocess {
            sessions,
            max_len,
            catalog_size,
        } => {
            push(&mut o, "paths.sessions", &path(sessions));
            push(&mut o, "preprocess.max_len", max_len);
            push(&mut o, "preprocess.catalog_size", catalog_size);
        }
        Command::Stylegen {
            features,
            pseudo,
            images,
            products,
            data,
        } => {
            push(&mut o, "paths.features", &path(features));
            push(&mut o, "paths.images", &path(images));
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "products", products);
            if *pseudo {
                o.push(("pseudo", "true".into()));
            }
        }
        Command::Train {
            data,
            style,
            configuration,
            epochs,
        } => {
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "paths.style", &path(style));
            push(&mut o, "train.configuration", configuration);
            push(&mut o, "train.epochs", epochs);
        }
        Command::Eval {
            checkpoint,
            data,
            mode,
            split,
            negatives,
        } => {
            push(&mut o, "paths.checkpoint", &path(checkpoint));
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "experiment.mode", mode);
            push(&mut o, "experiment.split", split);
            push(&mut o, "train.eval_negatives", negatives);
        }
        Command::Suite {
            data,
            style,
            configurations,
        } => {
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "paths.style", &path(style));
            push(&mut o, "experiment.configurations", configurations);
        }
        Command::Dynamic {
            data,
            style,
            configuration,
            max_lens,
        } => {
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "paths.style", &path(style));
            push(&mut o, "train.configuration", configuration);
            push(&mut o, "experiment.max_lens", max_lens);
        }
        Command::Sweep {
            data,
            style,
            configuration,
            budget,
        } => {
            push(&mut o, "paths.data", &path(data));
            push(&mut o, "paths.style", &path(style));
            push(&mut o, "train.configuration", configuration);
            push(&mut o, "experiment.budget", budget);
        }
        Command::Synth {
            products,
            sessions,
            order,
            cart_ratio,
            mass,
            images,
        } => {
            push(&mut o, "synth.products", products);
            push(&mut o, "synth.sessions", sessions);
            push(&mut o, "synth.order", order);
            push(&mut o, "synth.cart_ratio", cart_ratio);
            push(&mut o, "synth.dominant_mass", mass);
            if *images {
                o.push(("synth.images", "true".into()));
            }
        }
    }
    o
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(file) = &cli.common.config {
        cfg.apply_file(file)?;
    }
    for kv in &cli.common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| seqrec::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in overrides(&cli.command) {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.paths.out = Some(out.clone());
    }
    cfg.finish()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Preprocess { .. } => commands::preprocess(&cfg),
        Command::Stylegen { .. } => commands::stylegen(&cfg),
        Command::Train { .. } => commands::train_cmd(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Suite { .. } => commands::suite(&cfg),
        Command::Dynamic { .. } => commands::dynamic(&cfg),
        Command::Sweep { .. } => commands::sweep_cmd(&cfg),
        Command::Synth { .. } => commands::synth(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let detail = e.to_string().replace('\n', " ");
        eprintln!("{}: {detail}", e.code());
        std::process::exit(e.exit_code());
    }
}
