use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rqrf_cli::commands::{self, Format, LogRole};
use rqrf_cli::config::LoadedConfig;
use rqrf_core::Error;

#[derive(Parser)]
#[command(
    name = "rqrf",
    version,
    about = "RPM-oriented query rewriting: synthesize a marketplace, construct labels, \
             train a two-tower encoder, evaluate, and simulate A/B traffic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Text => Format::Text,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic marketplace universe.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a click log over the universe.
    Log {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which traffic slice to simulate (separate request counts + seeds).
        #[arg(long, value_enum, default_value = "train")]
        role: RoleArg,
    },
    /// Draw RPM-oriented training samples from a click log.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the two-tower model; writes per-epoch and final checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Offline ranking metrics; `--against` adds a paired t-test.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval_log: Option<PathBuf>,
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the full model plus the three single-ablation variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        eval_log: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired A/B simulation: memory baseline vs model, head/tail RPM lift.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check that positive-sampling frequency tracks RPM.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn error_kind_and_code(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config { .. } => ("config", 2),
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ("missing-input", 3),
        Error::Mismatch(_) => ("mismatch", 3),
        Error::Numerical(_) => ("numerical", 4),
        _ => ("error", 1),
    }
}

fn run(cli: Cli) -> rqrf_core::Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let loaded = LoadedConfig::load(&config)?;
            commands::cmd_gen(&loaded, out.as_deref())
        }
        Command::Log {
            config,
            universe,
            out,
            role,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let role = match role {
                RoleArg::Train => LogRole::Train,
                RoleArg::Eval => LogRole::Eval,
            };
            commands::cmd_log(&loaded, universe.as_deref(), out.as_deref(), role)
        }
        Command::Sample {
            config,
            universe,
            log,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            commands::cmd_sample(&loaded, universe.as_deref(), log.as_deref(), out.as_deref())
        }
        Command::Train {
            config,
            universe,
            samples,
            out_dir,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            commands::cmd_train(
                &loaded,
                universe.as_deref(),
                samples.as_deref(),
                out_dir.as_deref(),
            )
        }
        Command::Eval {
            config,
            universe,
            checkpoint,
            eval_log,
            against,
            format,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let report = commands::cmd_eval(
                &loaded,
                universe.as_deref(),
                checkpoint.as_deref(),
                eval_log.as_deref(),
                against.as_deref(),
                format.into(),
                out.as_deref(),
            )?;
            print!("{report}");
            Ok(())
        }
        Command::Ablate {
            config,
            universe,
            samples,
            eval_log,
            out_dir,
            format,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let report = commands::cmd_ablate(
                &loaded,
                universe.as_deref(),
                samples.as_deref(),
                eval_log.as_deref(),
                out_dir.as_deref(),
                format.into(),
                out.as_deref(),
            )?;
            print!("{report}");
            Ok(())
        }
        Command::Simulate {
            config,
            universe,
            log,
            checkpoint,
            format,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let report = commands::cmd_simulate(
                &loaded,
                universe.as_deref(),
                log.as_deref(),
                checkpoint.as_deref(),
                format.into(),
                out.as_deref(),
            )?;
            print!("{report}");
            Ok(())
        }
        Command::Verify {
            config,
            format,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let report = commands::cmd_verify(&loaded, format.into(), out.as_deref())?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = error_kind_and_code(&e);
            eprintln!("rqrf: error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}
