use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfdr::commands::{self, Summary};
use mfdr::config::{ConfigFlags, RunConfig};
use mfdr::CliError;

#[derive(Parser)]
#[command(name = "mfdr", version, about = "Design and closed-loop simulation of randomized load control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nominal statistics, tilt sweep and switching curves.
    Design(ConfigFlags),
    /// Bode data, zeros and poles, staggered step response.
    AnalyzeLti(ConfigFlags),
    /// Open-loop step in the tilt on the configured backend.
    Simulate(ConfigFlags),
    /// Closed-loop tracking of a reference signal.
    Track(ConfigFlags),
    /// Bisection estimate of the capacity envelope.
    Capacity(ConfigFlags),
    /// Brute-force and Monte-Carlo oracle suite.
    Verify(ConfigFlags),
    /// Print the resolved configuration.
    ShowConfig(ConfigFlags),
}

fn print(lines: &Summary) {
    for (k, v) in lines {
        println!("{k}: {v}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design(f) => print(&commands::cmd_design(&RunConfig::resolve(&f)?)?.summary()),
        Command::AnalyzeLti(f) => print(&commands::cmd_analyze_lti(&RunConfig::resolve(&f)?)?.summary()),
        Command::Simulate(f) => print(&commands::cmd_simulate(&RunConfig::resolve(&f)?)?.summary()),
        Command::Track(f) => print(&commands::cmd_track(&RunConfig::resolve(&f)?)?.summary()),
        Command::Capacity(f) => print(&commands::cmd_capacity(&RunConfig::resolve(&f)?)?.summary()),
        Command::Verify(f) => {
            let out = commands::cmd_verify(&RunConfig::resolve(&f)?)?;
            for c in out.checks.iter().filter(|c| !c.pass) {
                eprintln!(
                    "FAIL {} zeta={} T={} {}: pipeline {} oracle {} tol {}",
                    c.fixture, c.zeta, c.horizon, c.quantity, c.pipeline, c.oracle, c.tolerance
                );
            }
            print(&out.summary());
            if out.failures() > 0 {
                return Err(CliError::Verification(format!("{} oracle checks failed", out.failures())));
            }
        }
        Command::ShowConfig(f) => println!("{:#?}", RunConfig::resolve(&f)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
