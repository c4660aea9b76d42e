//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use bugloc_core::augment::{Scope, Technique};
use bugloc_core::corpus::ReportFormat;
use bugloc_core::models::ModelKind;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::benchmark::benchmark;
use crate::commands::{self, Ctx};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::predict::{Predictor, DEFAULT_TOP_K};
use crate::serve::{serve, DEFAULT_ADDR};
use crate::synth::{synth, SynthOptions};

#[derive(Debug, Parser)]
#[command(name = "bugloc", version, about = "Rank likely fault subfolders from bug-report text")]
pub struct Cli {
    /// Key-value config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory holding every stage's artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set tfidf.min_df=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value = "lr")]
    pub model: String,
    #[arg(long, default_value = "original")]
    pub variant: String,
    /// tfidf or dense
    #[arg(long)]
    pub features: Option<String>,
    /// Precomputed vectors (CSV or JSONL) for dense features.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Refit the final model on train + validation.
    #[arg(long)]
    pub refit_train_val: bool,
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    /// Bundle file; defaults to `<out>/models/<model>_<variant>.json`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "lr")]
    pub model: String,
    #[arg(long, default_value = "original")]
    pub variant: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load reports, derive subfolder labels, apply the corpus filters.
    Ingest {
        #[arg(long)]
        reports: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// csv or jsonl; inferred from the extension by default
        #[arg(long)]
        format: Option<String>,
    },
    /// Label frequencies and labels-per-report histogram.
    Stats {
        /// Summarize a histogram such as `1:428,2:138` instead of the corpus.
        #[arg(long)]
        histogram: Option<String>,
    },
    /// Clean and tokenize the corpus.
    Preprocess,
    /// Stratified train/validation/test split.
    Split {
        /// train,val,test ratios
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Build augmented training variants (all four by default).
    Augment {
        #[arg(long)]
        technique: Option<String>,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long)]
        threshold: Option<usize>,
        #[arg(long)]
        edit_rate: Option<String>,
    },
    /// Fit a model with default hyperparameters.
    Train(FitArgs),
    /// Grid search by cross-validated MAP, then refit.
    Tune(FitArgs),
    /// Score a saved model on the validation or test split.
    Evaluate {
        #[arg(long, default_value = "lr")]
        model: String,
        #[arg(long, default_value = "original")]
        variant: String,
        #[arg(long, default_value = "test")]
        split: String,
        /// Cutoffs, e.g. `1,3,5,10`.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Tune, refit and test every model × variant cell.
    Benchmark {
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        refit_train_val: bool,
    },
    /// Rank labels for one report.
    Predict {
        #[command(flatten)]
        bundle: BundleArgs,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Serve predictions over HTTP (loopback by default).
    Serve {
        #[command(flatten)]
        bundle: BundleArgs,
        #[arg(long, default_value = DEFAULT_ADDR)]
        addr: SocketAddr,
    },
    /// Write a planted-signal corpus (reports.csv, mapping.csv) to --out.
    Synth {
        #[arg(long, default_value_t = 600)]
        reports: usize,
        #[arg(long, default_value_t = 30)]
        labels: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Also write vectors.csv with this many dimensions.
        #[arg(long, default_value_t = 0)]
        vector_dim: usize,
    },
}

fn path_str(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Config file, then global flags, then `--set`, then command flags.
fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.override_with("seed", &s.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.override_with("out", &path_str(o))?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.override_with(k.trim(), v.trim())?;
    }
    let mut flag = |key: &str, value: Option<String>| match value {
        Some(v) => cfg.override_with(key, &v),
        None => Ok(()),
    };
    match &cli.command {
        Command::Ingest { reports, mapping, .. } => {
            flag("reports", reports.as_deref().map(path_str))?;
            flag("mapping", mapping.as_deref().map(path_str))?;
        }
        Command::Split { ratios } => flag("split.ratios", ratios.clone())?,
        Command::Augment {
            factor,
            threshold,
            edit_rate,
            ..
        } => {
            flag("augment.factor", factor.map(|v| v.to_string()))?;
            flag("augment.threshold", threshold.map(|v| v.to_string()))?;
            flag("augment.edit_rate", edit_rate.clone())?;
        }
        Command::Train(a) | Command::Tune(a) => {
            flag("features", a.features.clone())?;
            flag("vectors", a.vectors.as_deref().map(path_str))?;
            flag("refit_train_val", a.refit_train_val.then(|| "true".into()))?;
        }
        Command::Evaluate { k, vectors, .. } => {
            flag("ks", k.clone())?;
            flag("vectors", vectors.as_deref().map(path_str))?;
        }
        Command::Benchmark {
            models,
            variants,
            k,
            features,
            vectors,
            refit_train_val,
        } => {
            flag("models", models.clone())?;
            flag("variants", variants.clone())?;
            flag("ks", k.clone())?;
            flag("features", features.clone())?;
            flag("vectors", vectors.as_deref().map(path_str))?;
            flag("refit_train_val", refit_train_val.then(|| "true".into()))?;
        }
        Command::Stats { .. }
        | Command::Preprocess
        | Command::Predict { .. }
        | Command::Serve { .. }
        | Command::Synth { .. } => {}
    }
    Ok(cfg)
}

fn bundle_path(ctx: &Ctx, b: &BundleArgs) -> CliResult<PathBuf> {
    match &b.bundle {
        Some(p) => Ok(p.clone()),
        None => {
            let kind: ModelKind = b.model.parse()?;
            let p = ctx.layout.model(kind, &b.variant);
            crate::artifacts::require(&p, "tune")?;
            Ok(p)
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<Value> {
    let ctx = Ctx::new(resolve_config(&cli)?)?;
    match &cli.command {
        Command::Ingest { format, .. } => {
            let format = format.as_deref().map(str::parse::<ReportFormat>).transpose()?;
            commands::ingest(&ctx, format)
        }
        Command::Stats { histogram } => commands::stats(&ctx, histogram.as_deref()),
        Command::Preprocess => commands::preprocess(&ctx),
        Command::Split { .. } => commands::split(&ctx),
        Command::Augment { technique, scope, .. } => {
            let technique = technique.as_deref().map(str::parse::<Technique>).transpose()?;
            let scope = scope.as_deref().map(str::parse::<Scope>).transpose()?;
            let plans = commands::augment_plans(&ctx, technique, scope);
            commands::augment(&ctx, &plans)
        }
        Command::Train(a) => commands::train(&ctx, a.model.parse()?, &a.variant),
        Command::Tune(a) => commands::tune(&ctx, a.model.parse()?, &a.variant),
        Command::Evaluate {
            model, variant, split, ..
        } => commands::evaluate_cmd(&ctx, model.parse()?, variant, split),
        Command::Benchmark { .. } => {
            let report = benchmark(&ctx)?;
            Ok(serde_json::to_value(&report).expect("report serializes"))
        }
        Command::Predict {
            bundle,
            title,
            description,
            top_k,
        } => {
            let p = Predictor::load(&bundle_path(&ctx, bundle)?)?;
            let out = p.predict(title, description, *top_k)?;
            Ok(serde_json::to_value(&out).expect("ranking serializes"))
        }
        Command::Serve { bundle, addr } => {
            let p = Predictor::load(&bundle_path(&ctx, bundle)?)?;
            serve(p, *addr)?;
            Ok(serde_json::json!({ "stopped": true }))
        }
        Command::Synth {
            reports,
            labels,
            alpha,
            vector_dim,
        } => synth(
            &ctx.cfg.out,
            &SynthOptions {
                reports: *reports,
                labels: *labels,
                alpha: *alpha,
                seed: ctx.cfg.seed,
                vector_dim: *vector_dim,
            },
        ),
    }
}

/// Runs the CLI; returns the process exit code. Results go to stdout as
/// JSON, failures to stderr as `{"error": {"kind", "message"}}`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", CliError::usage(msg.trim()).to_json());
            return 2;
        }
    };
    match execute(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}
