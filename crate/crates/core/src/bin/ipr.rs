use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipr_core::exec::with_threads;
use ipr_core::harness::IprConfig;
use ipr_core::report::{
    export_saliency_gallery, load_config, report_from_records, run_command, Aggregates,
    CommandOptions, CHART_FILE, CORRELATIONS_FILE,
};
use ipr_core::Error;

#[derive(Parser)]
#[command(name = "ipr", version, about = "Parameter-randomization sensitivity of saliency explainers")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train or load models, run the test and write the report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Recompute aggregates, chart and correlation tables from records.csv.
    Report {
        #[arg(long)]
        from: PathBuf,
        /// Config supplying bootstrap settings (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the directory holding the records file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write saliency maps of selected images as PGM files.
    Gallery {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated image ids, e.g. img0000,img0003.
        #[arg(long, value_delimiter = ',', required = true)]
        images: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
}

fn print_summary(aggregates: &Aggregates) {
    println!("{:<14} {:<20} {:>8} {:>19}  verdict", "architecture", "explainer", "S^I", "90% CI");
    for d in &aggregates.dataset_sensitivities {
        println!(
            "{:<14} {:<20} {:>8.4} [{:>7.4}, {:>7.4}]  {}",
            d.architecture_id,
            d.explainer.name(),
            d.score,
            d.ci90.0,
            d.ci90.1,
            if d.sensitive_to_dataset { "sensitive" } else { "not sensitive" }
        );
    }
    if let Some(w) = &aggregates.correlation_warning {
        println!("note: {w}");
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out, no_cache } => {
            let mut config = load_config(&config)?;
            if let Some(out) = out {
                config.output_dir = out;
            }
            let outcome = run_command(
                &config,
                &CommandOptions {
                    no_cache,
                    ..CommandOptions::default()
                },
            )?;
            print_summary(&outcome.report.aggregates);
            println!(
                "wrote report to {} in {:.1}s",
                config.output_dir.display(),
                outcome.timing.total_seconds
            );
        }
        Command::Report { from, config, out } => {
            let ipr = match config {
                Some(path) => load_config(&path)?.ipr,
                None => IprConfig::default(),
            };
            let out = out.unwrap_or_else(|| {
                from.parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let aggregates = report_from_records(&from, &ipr, &out)?;
            print_summary(&aggregates);
            println!(
                "wrote audit.json, {CHART_FILE} and {CORRELATIONS_FILE} to {}",
                out.display()
            );
        }
        Command::Gallery { config, images, out, no_cache } => {
            let mut config = load_config(&config)?;
            if let Some(out) = out {
                config.output_dir = out;
            }
            let files = export_saliency_gallery(
                &config,
                &images,
                &CommandOptions {
                    no_cache,
                    ..CommandOptions::default()
                },
            )?;
            println!("wrote {} maps under {}", files.len(), config.output_dir.join("gallery").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match with_threads(cli.threads, || execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
