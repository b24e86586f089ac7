use std::io::IsTerminal;
use std::process::ExitCode;

use clap::{ColorChoice, CommandFactory, FromArgMatches};
use hgkit_cli::app::{self, Cli};

fn main() -> ExitCode {
    let plain = std::env::var_os("HGKIT_NO_COLOR").is_some() || !std::io::stderr().is_terminal();
    let mut cmd = Cli::command();
    if plain {
        cmd = cmd.color(ColorChoice::Never);
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match app::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let label = if plain { "error:".to_string() } else { "\x1b[1;31merror:\x1b[0m".to_string() };
            eprintln!("{label} {e:#}");
            if let app::AppError::Usage(_) = e {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
