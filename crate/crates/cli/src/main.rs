use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(walldiff_cli::run(std::env::args_os()))
}
