use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use srmf_core::pipeline::{self, SweepParameter};
use srmf_core::{Baseline, EvalMode, ExperimentConfig};

/// Fault-injection test acceleration by smoothness-regularized matrix
/// completion.
#[derive(Debug, Parser)]
#[command(name = "srmf", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Experiment configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the configuration's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed for sampling and solver initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated baselines to evaluate (knn, mean). Empty disables them.
    #[arg(long, global = true)]
    baseline: Option<String>,

    /// Evaluate on untested cells only, or on every cell.
    #[arg(long, global = true)]
    eval_mode: Option<EvalMode>,

    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the full test space and write the ground truth.
    Simulate,
    /// Sample observations from the ground truth and complete the matrix.
    Complete,
    /// Score the completion and the baselines against the ground truth.
    Evaluate,
    /// Simulate, complete and evaluate.
    Pipeline,
    /// Refit for each value of one hyperparameter over a shared simulation.
    Sweep {
        /// rank, lambda1, lambda2 or lambda3
        #[arg(long)]
        sweep_param: SweepParameter,
        /// Comma-separated values, e.g. 5,10,20,40
        #[arg(long, default_value = "")]
        sweep_values: String,
    },
}

fn parse_list<T: std::str::FromStr>(text: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("invalid value `{s}`: {e}")))
        .collect()
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(list) = &cli.baseline {
        config.evaluation.baselines = parse_list::<Baseline>(list).context("--baseline")?;
    }
    if let Some(mode) = cli.eval_mode {
        config.evaluation.mode = mode;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.print_default_config {
        println!("{}", ExperimentConfig::default_json());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        bail!("no subcommand given");
    };
    let config = load_config(&cli)?;
    let out = config.output_dir.display().to_string();
    match command {
        Command::Simulate => {
            let truth = pipeline::run_simulate(&config)?;
            eprintln!("simulated {} cells in {:.3} s -> {out}", truth.matrix.dims.cell_count(), truth.seconds);
        }
        Command::Complete => {
            let c = pipeline::run_complete(&config)?;
            eprintln!(
                "fitted rank {} in {} sweeps ({:.3} s) from {} observed cells -> {out}",
                c.model.rank(),
                c.model.sweeps(),
                c.timing.model_seconds(),
                c.mask.len()
            );
        }
        Command::Evaluate => print!("{}", pipeline::run_evaluate(&config)?.render_text()),
        Command::Pipeline => print!("{}", pipeline::run_pipeline(&config)?.render_text()),
        Command::Sweep {
            sweep_param,
            sweep_values,
        } => {
            let values = parse_list::<f64>(sweep_values).context("--sweep-values")?;
            let rows = pipeline::run_sweep(&config, *sweep_param, &values)?;
            println!("{:<10} {:>10} {:>9} {:>8} {:>9} {:>8}", "parameter", "value", "MAE", "WMAPE", "precision", "F1");
            for r in rows {
                let wmape = r.wmape.map_or("-".to_string(), |w| format!("{w:.4}"));
                println!(
                    "{:<10} {:>10} {:>9.4} {:>8} {:>9.4} {:>8.4}",
                    r.parameter, r.value, r.mae, wmape, r.precision, r.f1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
