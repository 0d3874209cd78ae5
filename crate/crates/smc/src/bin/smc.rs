use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(smc::cli::run() as u8)
}
