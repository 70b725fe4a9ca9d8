use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ionchain::cli::{self, ExperimentConfig, FigureKind, Format, Overrides};

#[derive(Parser)]
#[command(name = "ionchain", version, about = "Long ion-string simulations and analyses")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Write the data behind one figure analog.
    Figure {
        #[arg(value_enum)]
        kind: FigureKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => ExperimentConfig::load(&config).and_then(|mut cfg| {
            cfg.apply(&Overrides { seed, out, format });
            cli::run(&cfg)
        }),
        Command::Figure {
            kind,
            out,
            seed,
            format,
        } => cli::run_figure(kind, seed, format, &out),
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::from(cli::EXIT_OK as u8)
        }
        Err(e) => {
            eprint!("{e}");
            if !matches!(e, cli::CliError::Validation(_)) {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
