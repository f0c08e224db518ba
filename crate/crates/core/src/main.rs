use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match fcasim::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // machine-readable error record on stderr
            let record = serde_json::json!({ "error": err.to_string(), "kind": err.kind() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
