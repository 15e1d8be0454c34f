mod args;
mod commands;
mod config_file;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> jtcse::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate_cmd(a),
        Command::Distill(a) => commands::distill_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::LossSurface(a) => commands::loss_surface(a),
    }
}

fn main() -> ExitCode {
    let argv = match config_file::merge(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.class().exit_code() as u8);
        }
    };
    // clap exits with 2 on usage errors and 0 on --help
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", cli.command.name());
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
