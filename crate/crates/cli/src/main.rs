use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnrq::harness::run::{resolve_output_dir, summary_path};
use cnrq::harness::{
    compare_runs, emit_plot_series, format_table, read_metrics, run_experiment, write_series, Algorithm,
    ExperimentConfig, ExperimentSummary,
};
use cnrq::Error;

const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

/// Constrained multi-agent learning experiments.
#[derive(Parser)]
#[command(name = "cnrq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics files plus a summary.
    Run {
        /// Experiment config (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Shipped preset: uplink-paper or downlink-paper.
        #[arg(long)]
        preset: Option<String>,
        /// Replace the config's seed list (repeatable).
        #[arg(long = "seed-override")]
        seed_override: Vec<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        /// Output directory; defaults to the config's, then $CNRQ_OUT_DIR, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate welfare and constraint violations across summaries.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Allowed excess of a tail cost over its bound.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        /// Print the rows as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Extract one column of a metrics file, optionally smoothed.
    PlotSeries {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        quantity: String,
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Destination file; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown algorithm {s:?} (cnrq, ceq-central, ceq-semi, qnr, regret-matching)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::MismatchedConfigs(_)
        | Error::UnknownQuantity(_)
        | Error::InvalidArgument(_) => CONFIG_ERROR,
        _ => RUNTIME_ERROR,
    }
}

fn read_input(path: &Path) -> cnrq::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> cnrq::Result<()> {
    match command {
        Command::Run {
            config,
            preset,
            seed_override,
            iterations,
            algorithm,
            out,
        } => {
            let mut config = match (config, preset) {
                (Some(path), _) => ExperimentConfig::from_toml(&read_input(&path)?)?,
                (None, Some(name)) => ExperimentConfig::named_preset(&name)?,
                (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
            };
            if !seed_override.is_empty() {
                config.seeds = seed_override;
            }
            if let Some(n) = iterations {
                config.iterations = n;
            }
            if let Some(a) = algorithm {
                config.algorithm = a;
            }
            config.validate()?;
            let dir = resolve_output_dir(out.as_deref(), &config);
            let summary = run_experiment(&config, &dir)?;
            let rows = compare_runs(std::slice::from_ref(&summary), 0.0)?;
            print!("{}", format_table(&rows));
            println!("summary: {}", summary_path(&dir, &config.name).display());
            Ok(())
        }
        Command::Compare {
            summaries,
            tolerance,
            json,
        } => {
            let loaded = summaries
                .iter()
                .map(|p| ExperimentSummary::from_json(&read_input(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))))
                .collect::<cnrq::Result<Vec<_>>>()?;
            let rows = compare_runs(&loaded, tolerance)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).map_err(|e| Error::Metrics(e.to_string()))?);
            } else {
                print!("{}", format_table(&rows));
            }
            Ok(())
        }
        Command::PlotSeries {
            metrics,
            quantity,
            window,
            output,
        } => {
            let file = File::open(&metrics).map_err(|e| Error::Config(format!("{}: {e}", metrics.display())))?;
            let records = read_metrics(BufReader::new(file))?;
            let series = emit_plot_series(&records, &quantity, window)?;
            match output {
                Some(path) => write_series(BufWriter::new(File::create(path)?), &quantity, &series)?,
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    write_series(&mut lock, &quantity, &series)?;
                    lock.flush()?;
                }
            }
            Ok(())
        }
    }
}
