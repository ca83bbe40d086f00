use clap::Parser;

use semqa_service::cli::{run, Cli};
use semqa_service::error_kind;

fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            println_error(first.trim_start_matches("error: "), "usage");
            std::process::exit(2);
        }
    };
    if let Err(err) = run(cli) {
        println_error(&format!("{err:#}"), error_kind(&err));
        std::process::exit(1);
    }
}

fn println_error(message: &str, kind: &str) {
    eprintln!("{}", serde_json::json!({ "error": message, "kind": kind }));
}
