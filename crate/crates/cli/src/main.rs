use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mitograph_cli::{catalog, run, Overrides};

#[derive(Parser)]
#[command(name = "mitograph", version, about = "Run branching-mass experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its tables and report.json.
    Run {
        config: PathBuf,
        /// Worker threads (defaults to the available cores; never changes results).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the experiment kinds.
    List {
        #[arg(short, long)]
        verbose: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::List { verbose } => {
            print!("{}", catalog::render(verbose));
            ExitCode::SUCCESS
        }
        Command::Run { config, workers, out, seed } => match run(&config, &Overrides { workers, out, seed }) {
            Ok(report) => {
                for c in &report.criteria {
                    println!(
                        "{} {}: {} = {:.4e} ({} {:e})",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.id,
                        c.description,
                        c.statistic,
                        c.rule.symbol(),
                        c.tolerance
                    );
                }
                if report.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
    }
}
