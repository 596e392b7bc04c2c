use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(goalnet::cli::main_with(std::env::args_os()))
}
