use std::process::ExitCode;

use omrmd::cli::{execute, parse_config, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let manifest = match parse_config(std::env::args_os()) {
        Ok(m) => m,
        Err(CliError::Info(text)) => {
            print!("{text}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("omrmd: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("omrmd: {e}");
            ExitCode::FAILURE
        }
    }
}
