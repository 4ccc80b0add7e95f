use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    match panic::catch_unwind(|| semilex::cli::run(std::env::args_os())) {
        Ok(code) => ExitCode::from(code),
        Err(_) => ExitCode::from(3),
    }
}
