//! Scenario files, file formats and subcommands behind the `litdark` binary.

pub mod bundled;
pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;
pub mod suites;

pub use error::CliError;
pub use scenario::Scenario;

/// Environment variable read when `--threads` is not given.
pub const THREADS_ENV: &str = "LITDARK_THREADS";

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
