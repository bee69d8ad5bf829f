use std::process::ExitCode;

use noisylab_cli::{execute, exit, parse_cli, ParseFailure, DATA_DIR_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let data_root = std::env::var_os(DATA_DIR_ENV).map(std::path::PathBuf::from);
    let code = match parse_cli(std::env::args_os(), data_root.as_deref()) {
        Ok(config) => match execute(config) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(ParseFailure::Clap(e)) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            code
        }
        Err(ParseFailure::Cli(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
