//! `amddx`: ingestion, fold planning, cross-validation, evaluation, activation
//! maps, and synthetic data from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use amddx_core::evaluation::Merge;
use amddx_core::ingestion::MaskPolarity;
use amddx_core::training::Mode;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::DatasetKind;

// Training allocates and frees large tensors every step; glibc returns them
// to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "amddx", version, about = "Joint AMD diagnosis and lesion identification")]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Polarity {
    Dark,
    Bright,
}

impl From<Polarity> for MaskPolarity {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::Dark => MaskPolarity::DarkForeground,
            Polarity::Bright => MaskPolarity::BrightForeground,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MergeArg {
    Pool,
    Vertical,
}

impl From<MergeArg> for Merge {
    fn from(m: MergeArg) -> Self {
        match m {
            MergeArg::Pool => Merge::Pool,
            MergeArg::Vertical => Merge::Vertical,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and validate a manifest from a dataset on disk.
    Ingest {
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        /// Dataset root directory (or manifest file for `--dataset manifest`).
        #[arg(long)]
        root: PathBuf,
        /// JSON list of sample-id groups taken from the same eye.
        #[arg(long)]
        eye_groups: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_lesion_pixels: usize,
        #[arg(long, value_enum, default_value = "dark")]
        mask_polarity: Polarity,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan grouped, repeated k-fold splits for a manifest.
    Folds {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated cross-validation: one model per fold, test predictions pooled.
    Cv {
        #[arg(long)]
        config: PathBuf,
        /// `al` trains diagnosis and lesions, `ao` diagnosis only.
        #[arg(long, default_value = "al")]
        mode: Mode,
        /// Fold runs executed concurrently; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Use this fold plan instead of building one from the config.
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// AUC report and curves from cross-validation predictions, or from saved
    /// models applied to an external manifest.
    Eval {
        /// Cross-validation output directory (`<output_dir>/<mode>`); repeatable.
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        /// Predictions file, optionally `label=path`; repeatable. Needs `--manifest`.
        #[arg(long = "predictions")]
        predictions: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Apply each run's fold models to this manifest instead.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pool")]
        merge: MergeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-lesion activation maps and overlays.
    Maps {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        /// Resize images to this width first, as during training.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with known lesion geometry.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        size: Option<usize>,
        /// Generator settings JSON; `--n`, `--seed`, and `--size` override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::Ingest {
            dataset,
            root,
            eye_groups,
            min_lesion_pixels,
            mask_polarity,
            out,
        } => commands::ingest(dataset, &root, eye_groups.as_deref(), min_lesion_pixels, mask_polarity.into(), &out),
        Command::Folds {
            manifest,
            k,
            repetitions,
            seed,
            out,
        } => commands::folds(&manifest, k, repetitions, seed, &out),
        Command::Cv { config, mode, jobs, folds } => commands::cv(&config, mode, jobs, folds.as_deref()),
        Command::Eval {
            runs,
            predictions,
            manifest,
            external,
            merge,
            out,
        } => commands::eval(&commands::EvalArgs {
            runs,
            predictions,
            manifest,
            external,
            merge: merge.into(),
            out,
        }),
        Command::Maps {
            params,
            manifest,
            ids,
            width,
            out,
        } => commands::maps(&params, &manifest, &ids, width, &out),
        Command::Synth {
            n,
            seed,
            size,
            config,
            out,
        } => commands::synth(n, seed, size, config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
