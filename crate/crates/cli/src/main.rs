mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgt_core::config::{self, Preset};

/// Exit statuses beyond success.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DIVERGED: u8 = 3;
    pub const ABORTED: u8 = 4;
}

#[derive(Parser)]
#[command(
    name = "pgt",
    version,
    about = "Personalized distributed gradient tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation or a preset study and write its artifacts.
    Run(RunArgs),
    /// Check graph, cost and step-size conditions without simulating.
    Validate(SourceArgs),
    /// Turn a finished run directory into log-downsampled plot series.
    Plotdata {
        run_dir: PathBuf,
        /// Target number of points per series.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false, id = "source")]
struct Source {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name (see `pgt presets`).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Clone)]
struct SourceArgs {
    #[command(flatten)]
    source: Source,
    /// Overrides, e.g. `N=10,T=100000`.
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_interval: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: SourceArgs,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn load(args: &SourceArgs) -> pgt_core::Result<Preset> {
    let mut preset = match (&args.source.config, &args.source.preset) {
        (Some(path), _) => Preset::Run(config::load_config(path)?),
        (None, Some(name)) => config::preset(name)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    if let Some(scale) = &args.scale {
        preset.apply_overrides(&config::parse_overrides(scale)?)?;
    }
    let mut extra = Vec::new();
    if let Some(seed) = args.seed {
        extra.push(("seed".to_owned(), seed.to_string()));
    }
    if let Some(k) = args.log_interval {
        if !matches!(preset, Preset::Run(_)) {
            return Err(pgt_core::Error::Config(
                "--log-interval applies to simulation runs only".into(),
            ));
        }
        extra.push(("log_interval".to_owned(), k.to_string()));
    }
    preset.apply_overrides(&extra)?;
    Ok(preset)
}

fn validate(args: &SourceArgs) -> u8 {
    let preset = match load(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::USAGE;
        }
    };
    let Preset::Run(cfg) = preset else {
        println!("preset is a stand-alone study; nothing to validate");
        return 0;
    };
    let report = config::validate_config(&cfg);
    for c in &report.checks {
        let status = match (c.passed, c.advisory) {
            (true, _) => "PASS",
            (false, true) => "NOTE",
            (false, false) => "FAIL",
        };
        println!("{status} {:<11} {}", c.name, c.detail);
    }
    if report.passed() {
        println!("valid");
        0
    } else {
        println!("invalid");
        exit::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => match load(&args.common) {
            Ok(preset) => run::execute(preset, &args.out, args.resume.as_deref()),
            Err(e) => {
                eprintln!("error: {e}");
                exit::USAGE
            }
        },
        Command::Validate(args) => validate(&args),
        Command::Plotdata { run_dir, points } => match plot::plotdata(&run_dir, points) {
            Ok(written) => {
                for p in written {
                    println!("{}", p.display());
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                exit::FAILURE
            }
        },
        Command::Presets => {
            for name in config::PRESET_NAMES {
                println!("{name}");
            }
            0
        }
    };
    ExitCode::from(code)
}
