use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtrack_cli::{cmd_graph_info, cmd_run, cmd_sweep, variant_names, Options};

#[derive(Parser)]
#[command(name = "gtrack", version, about = "Decentralized gradient tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write trace.csv, certificates.json and report.txt.
    Run(Flags),
    /// Run the cross product of the config's sweep axes.
    Sweep(Flags),
    /// Print spectral constants and default step sizes of the configured graph.
    GraphInfo(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Flags {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Problem generator seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 4 when a certificate fails.
    #[arg(long)]
    strict: bool,
    /// Omit the timestamp header so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Concurrent sweep cells (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Per-iteration inequality diagnostics.
    #[arg(long, value_enum)]
    diagnostics: Option<Toggle>,
}

impl From<Flags> for Options {
    fn from(f: Flags) -> Self {
        Options {
            config: f.config,
            out: f.out,
            seed: f.seed,
            strict: f.strict,
            deterministic: f.deterministic,
            jobs: f.jobs,
            diagnostics: f.diagnostics.map(|t| matches!(t, Toggle::On)),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(f) => cmd_run(&f.into()).map(|dir| println!("wrote {}", dir.display())),
        Command::Sweep(f) => cmd_sweep(&f.into()).map(|dir| println!("wrote {}", dir.display())),
        Command::GraphInfo(f) => cmd_graph_info(&f.into(), std::io::stdout().lock()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, gtrack_cli::CliError::Validation(_)) {
                eprintln!("known variants: {}", variant_names().join(", "));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
