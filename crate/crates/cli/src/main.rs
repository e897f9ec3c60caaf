use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eprb_cli::{cmd_fit, cmd_report, cmd_simulate, cmd_tabulate, exit, CliError, FitArgs, PipelineConfig, TabulateArgs};

#[derive(Parser)]
#[command(name = "eprb", version, about = "Simulate, tabulate and fit filtered-EPRB count models")]
struct Cli {
    /// Pipeline config (JSON with simulate, tabulate and fit sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate event logs for the scan series.
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scan experiments, in table order.
        #[arg(long)]
        experiments: Option<usize>,
    },
    /// Match coincidences and write a count table CSV.
    Tabulate {
        /// Directory written by `simulate`.
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coincidence window width, ns.
        #[arg(long)]
        window: Option<f64>,
        /// Offset t_b − t_a of true pairs, ns.
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
        /// Per-experiment windows, CSV experiment,window_ns.
        #[arg(long)]
        windows_file: Option<PathBuf>,
    },
    /// Fit a count model to a count table.
    Fit {
        counts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        model: Option<u8>,
        /// Model #4 coefficients of variation, JSON.
        #[arg(long)]
        cv_file: Option<PathBuf>,
    },
    /// Channel tables and a summary ordered by Z.
    Report {
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Simulate { out, experiments } => {
            if let Some(n) = experiments {
                cfg.simulate.experiments = n;
            }
            let m = cmd_simulate(&cfg, &out)?;
            println!("simulated {} experiments into {}", m.experiments.len(), out.display());
        }
        Command::Tabulate { events, out, window, delta, windows_file } => {
            if let Some(w) = window {
                cfg.tabulate.window_ns = w;
            }
            if let Some(d) = delta {
                cfg.tabulate.delta_ns = d;
            }
            let (rows, _) = cmd_tabulate(&cfg, &TabulateArgs { events, out: out.clone(), windows: windows_file })?;
            println!("tabulated {} experiments into {}", rows.len(), out.display());
        }
        Command::Fit { counts, out, model, cv_file } => {
            if let Some(m) = model {
                cfg.fit.model = m;
            }
            let (result, _) = cmd_fit(&cfg, &FitArgs { counts, out, cv: cv_file })?;
            let s = &result.statistics;
            println!("model {}: X = {:.2}, DF = {}, Z = {:.2}, accepted = {}", result.model, s.x, s.df, s.z, s.accepted);
            if !result.converged {
                eprintln!("warning: optimizer stopped without converging ({:?})", result.stop);
                return Ok(exit::NON_CONVERGENCE);
            }
        }
        Command::Report { results, out } => {
            let rows = cmd_report(&results, &out)?;
            for r in rows {
                println!("model {}: X = {:.2}, DF = {}, Z = {:.2}", r.model, r.x, r.df, r.z);
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
