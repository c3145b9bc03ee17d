use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEPFRAME_LOG", "warn")).init();
    ExitCode::from(stepframe_cli::run(std::env::args_os(), std::env::vars()))
}
