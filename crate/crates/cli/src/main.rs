mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::UsageError;
use settings::Settings;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = Settings::resolve(&cli.global).and_then(|settings| {
        let mut command = cli.command;
        commands::resolve(&mut command, &settings);
        commands::execute(settings, command, argv, cli.global.quiet)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
