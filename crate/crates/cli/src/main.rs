//! `quantens` — train, ensemble, evaluate, and backtest the hybrid daily
//! direction pipeline from one JSON config.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use quantens_cli::config::PipelineConfig;
use quantens_cli::manifest::ArtifactWriter;
use quantens_cli::pipeline::{self, Scope};
use quantens_cli::CliError;
use quantens_core::data::{ohlcv_to_csv, synth_ohlcv};
use quantens_core::ensemble::ensemble_to_csv;
use quantens_core::backtest::equity_to_csv;
use quantens_core::qsentiment::params_doc_to_json;

#[derive(Parser)]
#[command(
    name = "quantens",
    version,
    about = "Hybrid ensemble pipeline for daily market direction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Training parallelism; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config, then $QUANTENS_OUT,
    /// then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: train, ensemble, evaluate, backtest, emit everything.
    Run(CommonArgs),
    /// Train the models and stop; emits model and circuit documents.
    Train(CommonArgs),
    /// Everything except the backtest.
    Evaluate(CommonArgs),
    /// Full pipeline twice (sentiment on/off) plus the ablation table.
    Ablate(CommonArgs),
    /// Full pipeline, emitting only the equity curves.
    Backtest(CommonArgs),
    /// Write the synthetic instruments from the config as CSV fixtures.
    Synth(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (args, scope) = match &cli.command {
        Command::Run(a) => (a, Scope::Full),
        Command::Train(a) => (a, Scope::Train),
        Command::Evaluate(a) => (a, Scope::Evaluate),
        Command::Ablate(a) => (a, Scope::Ablate),
        Command::Backtest(a) => (a, Scope::Backtest),
        Command::Synth(a) => {
            if let Err(e) = run_synth(a) {
                eprintln!("{e}");
                std::process::exit(e.exit_code());
            }
            return;
        }
    };
    if let Err(e) = run_command(args, scope) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(args: &CommonArgs) -> Result<PipelineConfig, CliError> {
    let mut config = PipelineConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Flag > config > environment > built-in default.
fn output_dir(args: &CommonArgs, config: &PipelineConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os("QUANTENS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_command(args: &CommonArgs, scope: Scope) -> Result<(), CliError> {
    let config = load_config(args)?;
    let dir = output_dir(args, &config);
    let outcome = pipeline::execute(&config, args.jobs, scope)?;

    let mut writer = ArtifactWriter::new(&dir)?;
    if scope != Scope::Backtest {
        for (symbol, doc) in &outcome.quantum_docs {
            writer.write(&format!("quantum_{symbol}.json"), params_doc_to_json(doc).as_bytes())?;
        }
        for (name, body) in pipeline::model_artifacts(&outcome.models, "")? {
            writer.write(&name, body.as_bytes())?;
        }
        for (name, body) in pipeline::model_artifacts(&outcome.models_noq, "_noq")? {
            writer.write(&name, body.as_bytes())?;
        }
    }
    if scope != Scope::Train && scope != Scope::Backtest {
        for out in &outcome.ensemble_outputs {
            let csv = ensemble_to_csv(out, &outcome.ensemble_dates)
                .map_err(|e| CliError::stage("emit", e))?;
            writer.write(&format!("ensemble_{}.csv", out.strategy), csv.as_bytes())?;
        }
        writer.write("report.json", outcome.report.to_json().as_bytes())?;
        writer.write("report.txt", outcome.report.to_text().as_bytes())?;
    }
    for (strategy, curve) in &outcome.equity_curves {
        writer.write(&format!("equity_{strategy}.csv"), equity_to_csv(curve).as_bytes())?;
    }
    let manifest = writer.finish(&config.content_hash(), args.jobs, &outcome.timings_ms)?;

    match scope {
        Scope::Train => println!(
            "trained {} models -> {}",
            outcome.models.len(),
            dir.display()
        ),
        Scope::Backtest => {
            for b in &outcome.report.backtests {
                println!(
                    "{}: {} trades, final equity {:.6}, max drawdown {:.4}",
                    b.strategy, b.trade_count, b.final_equity, b.max_drawdown
                );
            }
            println!("wrote {} artifacts -> {}", manifest.artifacts.len(), dir.display());
        }
        _ => {
            for s in &outcome.report.evaluation.strategies {
                println!(
                    "{}: {}/{} correct ({})",
                    s.strategy,
                    s.correct,
                    s.n,
                    quantens_core::evalstat::percent(s.accuracy)
                );
            }
            println!("wrote {} artifacts -> {}", manifest.artifacts.len(), dir.display());
        }
    }
    Ok(())
}

fn run_synth(args: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let dir = output_dir(args, &config);
    let mut writer = ArtifactWriter::new(&dir)?;
    let mut count = 0usize;
    for inst in &config.instruments {
        let Some(spec) = &inst.synthetic else { continue };
        let seed = spec
            .seed
            .unwrap_or_else(|| pipeline::derive_seed(config.seed, &inst.symbol, "synth"));
        let series = synth_ohlcv(
            &inst.symbol,
            spec.days,
            &spec.plan(),
            spec.signal_strength,
            seed,
        )
        .map_err(|e| CliError::stage("ingest", e))?;
        writer.write(&format!("{}.csv", inst.symbol), ohlcv_to_csv(&series).as_bytes())?;
        count += 1;
    }
    if count == 0 {
        return Err(CliError::Config(
            "synth: no synthetic instruments in config".into(),
        ));
    }
    writer.finish(&config.content_hash(), args.jobs, &[])?;
    println!("wrote {count} synthetic series -> {}", dir.display());
    Ok(())
}
