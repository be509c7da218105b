//! `mlr`: pretrain multimodal autoencoder embeddings, extract them, and run
//! downstream classification experiments.
//!
//! Exit codes: 0 success, 2 configuration/usage, 3 data, 4 numeric, 5 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mlr_cli::commands;
use mlr_cli::config::RunConfig;
use mlr_cli::error::{CliError, Result};

/// Environment variable providing the default output root.
const OUT_ENV: &str = "MLR_OUT";

#[derive(Parser)]
#[command(name = "mlr", version, about = "Unsupervised multimodal language representations")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: config out_dir, $MLR_OUT, then ./mlr-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Caps utterances per split for smoke runs (0 = no cap).
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Numeric mode for training runs.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (MLRD splits) from the [synth] section.
    Synth {
        /// Utterance count override.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Latent class-noise override.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        name: Option<String>,
        /// Comma-separated audio,vision,text widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        /// Blocks that carry the class signal.
        #[arg(long, value_delimiter = ',')]
        signal_blocks: Option<Vec<String>>,
    },
    /// Pretrain the convolutional autoencoder on the configured datasets.
    TrainCae,
    /// Extract embeddings for one dataset split using a weights file.
    Embed {
        #[arg(long)]
        weights: PathBuf,
        /// Dataset name from the config (alternative to --data-dir).
        #[arg(long)]
        dataset: Option<String>,
        /// Directory holding <split>.mlrd (alternative to --dataset).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output container path (default <out>/emb_<split>.mlrw).
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Train logistic-regression heads on train embeddings, score on test.
    TrainClf {
        #[arg(long)]
        train_embeddings: PathBuf,
        #[arg(long)]
        test_embeddings: PathBuf,
    },
    /// Evaluate a stored classifier on an embeddings file.
    Eval {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Run the modality/dataset ablation grid from the [ablate] section.
    Ablate,
    /// Print per-layer parameter counts and extractor+head totals.
    CountParams {
        /// Count a stored model instead of the reference configuration.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Verify every backward pass against central finite differences.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(limit) = cli.limit {
        cfg.data.limit = limit;
    }
    if let Some(p) = &cli.precision {
        cfg.precision = p.parse().expect("clap validated the value");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mlr-out"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = out_dir(&cli, &cfg);

    match cli.cmd {
        Cmd::Synth {
            n,
            classes,
            noise,
            name,
            widths,
            signal_blocks,
        } => {
            if let Some(n) = n {
                cfg.synth.n_utterances = n;
            }
            if let Some(c) = classes {
                cfg.synth.class_count = c;
            }
            if let Some(s) = noise {
                cfg.synth.noise_std = s;
            }
            if let Some(name) = name {
                cfg.synth.name = name;
            }
            if let Some(w) = widths {
                cfg.synth.widths = w;
            }
            if let Some(sb) = signal_blocks {
                cfg.synth.signal_blocks = sb;
            }
            let dir = commands::run_synth(&cfg, &out)?;
            println!("wrote dataset '{}' to {}", cfg.synth.name, dir.display());
        }
        Cmd::TrainCae => {
            let modalities = cfg.parse_modalities(&cfg.data.modalities)?;
            let trained = commands::run_train_cae(&cfg, &cfg.data.train_on.clone(), &modalities, &out)?;
            println!(
                "weights: {}\nhistory: {}\nbest val mse: {}\ncode length: {}",
                trained.weights.display(),
                trained.history.display(),
                trained.best_val_mse,
                trained.code_len
            );
        }
        Cmd::Embed {
            weights,
            dataset,
            data_dir,
            split,
            out_file,
        } => {
            let dir = match (dataset, data_dir) {
                (Some(name), None) => cfg.dataset_ref(&name)?.dir.clone(),
                (None, Some(dir)) => dir,
                _ => {
                    return Err(CliError::Config(
                        "embed needs exactly one of --dataset or --data-dir".into(),
                    ))
                }
            };
            let out_file = out_file.unwrap_or_else(|| out.join(format!("emb_{split}.mlrw")));
            let e = commands::run_embed(&weights, &dir, &split, cfg.data.limit, &out_file)?;
            println!("{} embeddings of width {} -> {}", e.count, e.code_len, e.path.display());
        }
        Cmd::TrainClf {
            train_embeddings,
            test_embeddings,
        } => {
            let r = commands::run_train_eval(&cfg, &train_embeddings, &test_embeddings, &out)?;
            print!("{}", commands::metrics_csv(&r.report));
            for (task, err) in &r.failed_tasks {
                eprintln!("task '{task}' skipped: {err}");
            }
            println!("classifier: {}", r.classifier.display());
            println!("report: {}", r.report_path.display());
        }
        Cmd::Eval {
            classifier,
            embeddings,
            out_file,
        } => {
            let report = commands::run_eval(&classifier, &embeddings, out_file.as_deref())?;
            print!("{}", commands::metrics_csv(&report));
        }
        Cmd::Ablate => {
            let (rows, path) = commands::run_ablate(&cfg, &out)?;
            println!("combination,val_mse,acc2,weighted_f1");
            for r in rows {
                println!("{},{},{},{}", r.combination, r.val_mse, r.acc2, r.weighted_f1);
            }
            println!("table: {}", path.display());
        }
        Cmd::CountParams { weights } => {
            print!("{}", commands::run_count_params(&cfg, weights.as_deref())?);
        }
        Cmd::Gradcheck { inject_fault } => {
            let (table, all_pass) = commands::run_gradcheck(inject_fault);
            print!("{table}");
            if !all_pass {
                return Err(CliError::Numeric(
                    "finite-difference verification failed".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
