use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use hybridcast::timeseries::CsvSpec;
use hybridcast_cli::{describe_file, format_stats, run, RunOptions};

#[derive(Parser)]
#[command(
    name = "hybridcast",
    version,
    about = "Hybrid return forecasting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Descriptive statistics of the daily log returns in a price file.
    Describe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "date")]
        date_column: String,
        #[arg(long, default_value = "close")]
        close_column: String,
        #[arg(long, default_value = "%Y-%m-%d")]
        date_format: String,
        /// First return date to include (YYYY-MM-DD).
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last return date to include (YYYY-MM-DD).
        #[arg(long)]
        to: Option<NaiveDate>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => match run(&config, &RunOptions { out, seed, jobs }) {
            Ok(summary) => {
                let m = &summary.manifest;
                println!(
                    "wrote {} files to {} in {:.1} s",
                    m.files.len(),
                    summary.out_dir.display(),
                    m.elapsed_ms as f64 / 1000.0
                );
                if summary.failures() > 0 {
                    for a in &m.assets {
                        for f in a.methods.iter().filter(|f| f.error.is_some()) {
                            eprintln!(
                                "{} {}: {}",
                                a.name,
                                f.method,
                                f.error.as_deref().unwrap_or_default()
                            );
                        }
                    }
                    eprintln!("{} method run(s) failed", summary.failures());
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Describe {
            data,
            date_column,
            close_column,
            date_format,
            from,
            to,
        } => {
            let spec = CsvSpec {
                date_column,
                close_column,
                date_format,
                ..Default::default()
            };
            match describe_file(&data, &spec, from, to) {
                Ok(stats) => {
                    print!("{}", format_stats(&stats));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
