use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(voxsg_cli::run(std::env::args_os()))
}
