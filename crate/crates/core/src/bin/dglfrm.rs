use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(dglfrm::cli::LOG_ENV, "warn")).init();
    ExitCode::from(dglfrm::cli::run(std::env::args_os()) as u8)
}
