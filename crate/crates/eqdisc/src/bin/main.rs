use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eqdisc::harness::{
    builtin_config, builtin_names, emit_report, export_dataset_csv, generate_dataset, load_report,
    run_experiment, save_dataset, ExperimentConfig, ReportFormat,
};

#[derive(Parser)]
#[command(name = "eqdisc", about = "Discover differential equations from gridded data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset and write it to a directory
    Generate {
        /// Benchmark name: burgers, kdv, van_der_pol, lotka_volterra
        benchmark: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the dataset as a single CSV (coordinates, then values)
        #[arg(long)]
        csv: bool,
    },
    /// Write a built-in benchmark configuration to a JSON file
    Config {
        /// Benchmark name: burgers, kdv, van_der_pol, lotka_volterra
        benchmark: String,
        #[arg(long)]
        out: PathBuf,
        /// Directory the experiment will write reports into
        #[arg(long, default_value = "runs")]
        output_dir: String,
    },
    /// Run the discovery sweep described by a config file
    Discover {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of runs per noise level
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Full noise sweep with report emission (alias of discover without overrides)
    Benchmark {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-emit a stored report in the chosen format
    Report {
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Plot,
}

fn run() -> eqdisc::Result<()> {
    match Cli::parse().command {
        Command::Generate { benchmark, out, csv } => {
            let config = builtin_config(&benchmark, out.to_str().unwrap_or("."))?;
            let fields = generate_dataset(&config.dataset)?;
            save_dataset(&out, &fields)?;
            if csv {
                export_dataset_csv(&out.join("dataset.csv"), &fields)?;
            }
            println!(
                "wrote {} field(s) to {} (benchmarks: {})",
                fields.len(),
                out.display(),
                builtin_names().join(", ")
            );
        }
        Command::Config {
            benchmark,
            out,
            output_dir,
        } => {
            let dir = format!("{output_dir}/{benchmark}");
            let config = builtin_config(&benchmark, &dir)?;
            config.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Discover {
            config,
            seed,
            runs,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.master_seed = seed;
            }
            if let Some(runs) = runs {
                config.runs = runs;
            }
            let report = run_experiment(&config)?;
            print_summary(&report);
        }
        Command::Benchmark { config } => {
            let config = ExperimentConfig::load(&config)?;
            let report = run_experiment(&config)?;
            print_summary(&report);
        }
        Command::Report { input, format } => {
            let report = load_report(&input.join("report.json"))?;
            let fmt = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
                Format::Plot => ReportFormat::Plot,
            };
            emit_report(&report, &input, &[fmt])?;
            println!("report written to {}", input.display());
        }
    }
    Ok(())
}

fn print_summary(report: &eqdisc::harness::DetectionReport) {
    for level in &report.levels {
        println!(
            "{} @ NL {}%: success {}/{} runs",
            report.experiment,
            level.noise_level,
            level.runs.iter().filter(|r| r.success).count(),
            level.runs.len()
        );
        for run in &level.runs {
            if let Some(model) = &run.selected {
                println!("  run {}: {}{}", run.run_index, model, if run.success { "  [match]" } else { "" });
            } else if let Some(reason) = &run.failure {
                println!("  run {}: failed ({reason})", run.run_index);
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
