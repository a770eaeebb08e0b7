use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use jdpd_cli::{run, Preset, RunRequest};

#[derive(Parser)]
#[command(name = "jdpd", version, about = "Josephson digital phase detector experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set protocol.drive_phase=3.14159`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Worker threads (default: all cores). Output does not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (default: output.dir, then $JDPD_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, overrides, preset, threads, out } = Cli::parse().command;
    let req = RunRequest { config, overrides, preset, threads, out };
    match run(&req) {
        Ok(report) => {
            println!("{}", report.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
