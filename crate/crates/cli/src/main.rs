use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use petbd_cli::commands::{self, MetricsInputs, MetricsRow, Output};
use petbd_cli::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "petbd",
    version,
    about = "Blind deconvolution of PET-like images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults reproduce the 64x64 phantom experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "PGRID_OUT", default_value = "out")]
    out: PathBuf,

    /// Base seed, overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum number of trials run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Also export rasters as CSV.
    #[arg(long, global = true)]
    csv: bool,

    /// Run trials one at a time for bitwise-reproducible output ordering.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom, PSF, mask and noisy observations.
    Simulate,
    /// Jointly estimate image and PSF from one observation.
    Bd {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        omega: PathBuf,
    },
    /// Deconvolve with a fixed PSF.
    Nbd {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        h: PathBuf,
    },
    /// Score estimates against ground truth and print one CSV row.
    Metrics {
        #[arg(long)]
        x_true: PathBuf,
        #[arg(long)]
        h_true: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        x_est: Option<PathBuf>,
        #[arg(long)]
        h_est: Option<PathBuf>,
        /// Append the row to this CSV file.
        #[arg(long)]
        append: Option<PathBuf>,
    },
    /// Run the full BSNR x trial grid and print the summary table.
    Sweep,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    let out = Output::new(&cli.out, cli.csv);
    let jobs = if cli.deterministic {
        1
    } else {
        cli.jobs.max(1)
    };

    match cli.command {
        Command::Simulate => {
            let manifest = commands::cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} observations to {}",
                manifest.observations.len(),
                out.dir.display()
            );
        }
        Command::Bd { y, omega } => {
            let s = commands::cmd_bd(&y, &omega, &cfg, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("serializable")
            );
        }
        Command::Nbd { y, h } => {
            let s = commands::cmd_nbd(&y, &h, &cfg, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("serializable")
            );
        }
        Command::Metrics {
            x_true,
            h_true,
            y,
            x_est,
            h_est,
            append,
        } => {
            let inputs = MetricsInputs {
                x_true: &x_true,
                h_true: &h_true,
                y: &y,
                x_est: x_est.as_deref(),
                h_est: h_est.as_deref(),
            };
            let row = commands::cmd_metrics(&inputs, append.as_deref())?;
            println!("{}\n{}", MetricsRow::HEADER, row.csv());
        }
        Command::Sweep => {
            let report = commands::cmd_sweep(&cfg, Some(&out), jobs)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("petbd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
