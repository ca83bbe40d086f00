//! Pipeline commands and the read-only answer service built on `semqa-core`.

pub mod cli;
pub mod server;

/// Machine-readable tag for a failed command.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<semqa_core::Error>().map(semqa_core::Error::kind))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<std::io::Error>().map(|_| "io")))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<serde_json::Error>().map(|_| "json")))
        .unwrap_or("other")
}
