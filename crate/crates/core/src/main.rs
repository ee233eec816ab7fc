use std::process::ExitCode;

fn main() -> ExitCode {
    spca_si::cli::main_with_args(std::env::args_os())
}
