use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use ddp_core::cli::{run_command, Command, RunOptions};
use ddp_core::config::load_config;
use ddp_core::report::{write_report, Format};

/// Deadline-differentiated energy pricing: menus, EDF schedules and audits.
#[derive(Parser, Debug)]
#[command(name = "ddp", version)]
struct Args {
    /// price | schedule | audit-ic | equilibrium | gradcheck | oracle-edf
    #[arg(value_parser = parse_command)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Monte Carlo samples; exact enumeration is used when omitted and the
    /// supply model allows it.
    #[arg(long)]
    samples: Option<usize>,
    /// Root seed; overrides the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Quantity steps per deadline in the deviation grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Finite-difference step relative to each coordinate.
    #[arg(long)]
    step: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: Format,
}

fn parse_command(s: &str) -> Result<Command, String> {
    s.parse().map_err(|e: ddp_core::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: ddp_core::Error| e.to_string())
}

fn run(args: Args) -> anyhow::Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        anyhow::ensure!(w >= 1, "--workers must be at least 1");
        pool = pool.num_threads(w);
    }
    let pool = pool.build().context("starting worker pool")?;

    let cfg = load_config(&args.config)?;
    let opts = RunOptions {
        samples: args.samples,
        seed: args.seed,
        grid: args.grid,
        step: args.step,
    };
    let outcome = pool.install(|| run_command(args.command, &cfg, &opts))?;
    write_report(&outcome.report, args.format, args.out.as_deref())?;
    for line in &outcome.verdicts {
        eprintln!("{line}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error[E_USAGE]: {}", e.render().to_string().trim_end());
            return ExitCode::from(1);
        }
    };
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            match e.downcast_ref::<ddp_core::Error>() {
                Some(inner) => eprintln!("error[{}]: {inner}", inner.code()),
                None => eprintln!("error[E_USAGE]: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}
