use clap::{Parser, Subcommand};
use rmt_cli::output::to_json_string;
use rmt_cli::{cmd_bogovskii, cmd_decay_fit, cmd_eigen, cmd_simulate, CliError, EigenMode, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Finite-element laboratory for the thermoelastic Reissner-Mindlin-Timoshenko plate.
#[derive(Parser)]
#[command(name = "rmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-integrate a configuration and write timeseries.csv, summary.json, config_echo.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solenoidal eigenmode, Korn constants or the scalar Dirichlet eigenvalue.
    Eigen {
        #[arg(long)]
        config: PathBuf,
        /// stokes, korn or laplace
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Manufactured reconstruction and empirical constants of the Bogovskii operator.
    Bogovskii {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-linear energy fit of a time-series CSV.
    DecayFit {
        csv: PathBuf,
        #[arg(long = "t-start")]
        t_start: Option<f64>,
    },
}

fn init_logging() {
    let level = match std::env::var("RMT_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            Ok(to_json_string(&cmd_simulate(&cfg, out.as_deref())?))
        }
        Command::Eigen { config, mode, out } => {
            let mode: EigenMode = mode.parse()?;
            let cfg = RunConfig::load(&config)?;
            Ok(to_json_string(&cmd_eigen(&cfg, mode, out.as_deref())?))
        }
        Command::Bogovskii { config, out } => {
            let cfg = RunConfig::load(&config)?;
            Ok(to_json_string(&cmd_bogovskii(&cfg, out.as_deref())?))
        }
        Command::DecayFit { csv, t_start } => Ok(to_json_string(&cmd_decay_fit(&csv, t_start)?)),
    }
}

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(json) => {
            print!("{json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
