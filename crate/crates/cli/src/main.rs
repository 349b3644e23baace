mod error;
mod logs;
mod replay;
mod run;
mod serve;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Headless leader/follower teleoperation with autonomous grasping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run trials with a scripted or networked operator and report metrics.
    Run(run::RunArgs),
    /// Re-execute a demonstration log and check it reproduces bit for bit.
    Replay(replay::ReplayArgs),
    /// Serve the live control loop to operator and observer consoles.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Everything above clap's usage block.
            let text = e.to_string();
            let head: Vec<&str> = text.lines().take_while(|l| !l.trim().is_empty()).collect();
            return CliError::Usage(head.join("\n").trim_start_matches("error: ").to_string()).report();
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run::cmd_run(args),
        Command::Replay(args) => replay::cmd_replay(args),
        Command::Serve(args) => serve::cmd_serve(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => e.report(),
    }
}
