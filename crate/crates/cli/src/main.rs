//! `pricecast` command-line tool.
//!
//! Exit status: 0 on success, 1 when a run fails, 2 for usage or config
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pricecast::config::{ConfigError, DataConfig, RunConfig, SynthSource, DEFAULT_SYNTH_DAYS};
use pricecast::data::CsvSchema;
use pricecast::models::ModelKind;
use pricecast::pipeline::{self, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "pricecast", version, about = "Electricity price forecasting")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Model seed, overriding the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Read data from this CSV instead of the config's source.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "synth_seed")]
    csv: Option<PathBuf>,
    /// Use the synthetic generator with this data seed.
    #[arg(long, global = true, value_name = "INT")]
    synth_seed: Option<u64>,
    /// Model architecture for `train`.
    #[arg(long, global = true, value_name = "KIND")]
    model: Option<ModelKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print schema and row statistics.
    Inspect,
    /// Write the feature correlation matrix.
    Corr,
    /// Train the configured model; write model, scaler, metrics and manifest.
    Train,
    /// Re-evaluate a trained model on the test partition.
    Evaluate,
    /// Train all three architectures and write a comparison table.
    Compare,
    /// Forecast past the end of the data with a trained model.
    Forecast,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if cli.csv.is_some() || cli.synth_seed.is_some() => RunConfig::synthetic(DEFAULT_SYNTH_DAYS, 0),
        None => {
            return Err(ConfigError(
                "no data source: pass --config, --csv or --synth-seed".into(),
            ))
        }
    };
    if let Some(path) = &cli.csv {
        config.data = DataConfig {
            csv_path: Some(path.clone()),
            synth: None,
            schema: config.data.schema.clone(),
        };
    }
    if let Some(seed) = cli.synth_seed {
        let n_days = config.data.synth.map_or(DEFAULT_SYNTH_DAYS, |s| s.n_days);
        config.data = DataConfig {
            csv_path: None,
            synth: Some(SynthSource { n_days, seed }),
            schema: CsvSchema::default(),
        };
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    if let Some(kind) = cli.model {
        config.model.kind = kind;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<(), PipelineError> {
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    let out = config.output_dir.display();
    match cli.command {
        Command::Inspect => {
            say(pipeline::inspect(config)?);
        }
        Command::Corr => {
            let m = pipeline::correlation(config)?;
            say(format!(
                "{}x{} correlation matrix written to {out}",
                m.names.len(),
                m.names.len()
            ));
            if let Some(r) = m.get("demand", "rrp") {
                say(format!("demand/rrp: {r:.4}"));
            }
        }
        Command::Train => {
            let (run, manifest) = pipeline::train(config)?;
            let seconds: f64 = run.history.epoch_seconds.iter().sum();
            say(format!(
                "{} trained for {} epochs ({seconds:.1}s), best epoch {}",
                run.kind.label(),
                run.history.train_loss.len(),
                run.history.best_epoch
            ));
            say(format!(
                "test RMSE {:.4}  MAE {:.4}  (persistence RMSE {:.4})",
                run.metrics.rmse, run.metrics.mae, manifest.persistence_metrics.rmse
            ));
            say(format!("artifacts written to {out}"));
        }
        Command::Evaluate => {
            let r = pipeline::evaluate(config)?;
            say(format!(
                "RMSE {:.4}  MAE {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}  F {:.4}",
                r.rmse, r.mae, r.accuracy, r.precision, r.recall, r.f_score
            ));
        }
        Command::Compare => {
            let c = pipeline::compare(config)?;
            say(c.to_csv().trim_end().to_string());
            say(format!("persistence RMSE {:.4}", c.persistence_metrics.rmse));
            say(format!("comparison written to {out}"));
        }
        Command::Forecast => {
            let f = pipeline::forecast(config)?;
            if let (Some(first), Some(last)) = (f.dates.first(), f.dates.last()) {
                say(format!(
                    "{} forecast rows, {first} .. {last}, written to {out}",
                    f.len()
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
