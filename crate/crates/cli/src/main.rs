//! `ocam`: train, evaluate and query metric-learning retrieval models.
//!
//! Settings come from built-in defaults, then `--config`, then `--set`, then
//! the dedicated flags. Exit codes: 0 success, 2 usage or config error,
//! 3 runtime error. Failures print one JSON line on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ocam_core::config::RunConfig;
use ocam_core::corpus::{load_dataset, save_dataset, synth_clusters};
use ocam_core::embedder::{load_checkpoint, save_checkpoint};
use ocam_core::index::Space;
use ocam_core::pipeline::{self, QuerySource};
use ocam_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ocam", version, about = "Triplet-loss metric learning and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key = value settings file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. --set train.loss=triplet
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads (1 runs sequentially)
    #[arg(long)]
    threads: Option<usize>,
    /// Fixed-order aggregation and reproducible sampling
    #[arg(long)]
    deterministic: bool,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic Gaussian-cluster corpus as CSV
    Synth {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out-dir>/synth.csv
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model; writes model.ckpt, train_report.json, train.csv, test.csv
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a labelled CSV
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to <out-dir>/eval_report.json
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank a corpus against one query and print the hits as JSON
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// 0-based corpus row to use as the query (excluded from the hits)
        #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
        row: Option<usize>,
        /// Comma-separated feature vector
        #[arg(long, allow_hyphen_values = true)]
        vector: Option<String>,
        #[arg(long, default_value = "euclidean")]
        space: Space,
        #[arg(long, default_value_t = 10)]
        z: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train OCAM and its ablations on one split and compare them
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Print configuration settings
    Config {
        #[command(flatten)]
        common: Common,
        /// Print the built-in defaults instead of the resolved settings
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("file {} does not exist", path.display())))
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("--vector: cannot parse '{x}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, output } => {
            let cfg = resolve(&common)?;
            let path = match output {
                Some(p) => p,
                None => out_dir(&cfg)?.join("synth.csv"),
            };
            save_dataset(&synth_clusters(&cfg.synth_spec())?, &path)?;
            println!("{}", path.display());
        }
        Command::Train { common } => {
            let cfg = resolve(&common)?;
            let (fit, report) = pipeline::run_train(&cfg)?;
            let dir = out_dir(&cfg)?;
            save_checkpoint(&fit.checkpoint(&cfg), &dir.join("model.ckpt"))?;
            save_dataset(&fit.train, &dir.join("train.csv"))?;
            save_dataset(&fit.test, &dir.join("test.csv"))?;
            fs::write(dir.join("config.txt"), cfg.to_text(true))?;
            pipeline::write_json(&report, &dir.join("train_report.json"))?;
            println!("{}", dir.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            output,
        } => {
            let cfg = resolve(&common)?;
            require_file(&checkpoint)?;
            require_file(&data)?;
            let ck = load_checkpoint(&checkpoint)?;
            let test = load_dataset(&data)?;
            let report = pipeline::run_evaluate(&cfg, &ck, &test)?;
            let path = match output {
                Some(p) => p,
                None => out_dir(&cfg)?.join("eval_report.json"),
            };
            pipeline::write_json(&report, &path)?;
            println!("{}", path.display());
        }
        Command::Query {
            common,
            checkpoint,
            corpus,
            row,
            vector,
            space,
            z,
            output,
        } => {
            let cfg = resolve(&common)?;
            require_file(&checkpoint)?;
            require_file(&corpus)?;
            let source = match (row, vector) {
                (Some(r), _) => QuerySource::Row(r),
                (None, Some(v)) => QuerySource::Vector(parse_vector(&v)?),
                (None, None) => return Err(Error::Usage("give --row or --vector".into())),
            };
            let ck = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&corpus)?;
            let report = pipeline::run_query(&cfg, &ck, &ds, &source, space, z)?;
            let json = report.to_json()?;
            if let Some(p) = output {
                fs::write(p, &json)?;
            }
            print!("{json}");
        }
        Command::Ablate { common } => {
            let cfg = resolve(&common)?;
            let report = pipeline::run_ablation(&cfg)?;
            let table = pipeline::ablation_table(&report.body, &cfg);
            let dir = out_dir(&cfg)?;
            pipeline::write_json(&report, &dir.join("ablation_report.json"))?;
            fs::write(dir.join("ablation_table.txt"), &table)?;
            print!("{table}");
        }
        Command::Config { common, dump_defaults } => {
            if dump_defaults {
                print!("{}", RunConfig::default().to_text(false));
            } else {
                print!("{}", resolve(&common)?.to_text(true));
            }
        }
    }
    Ok(())
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({
        "error": kind,
        "exit_code": code,
        "message": message.split_whitespace().collect::<Vec<_>>().join(" "),
    });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", 2, &e.to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_usage() => fail(e.kind(), 2, &e.to_string()),
        Err(e) => fail(e.kind(), 3, &e.to_string()),
    }
}
