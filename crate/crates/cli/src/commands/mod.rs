//! The six subcommand implementations.
//!
//! Each command takes a parsed [`crate::config::Config`] plus the output
//! directory and worker count, reads exactly the keys it understands
//! (anything left over is a hard error), and writes CSV artifacts with
//! provenance headers into the output directory.

mod benchmark;
mod generate;
mod interpret;
mod portfolio;
mod train;
mod worstcase;

pub use benchmark::cmd_benchmark;
pub use generate::cmd_generate;
pub use interpret::cmd_interpret;
pub use portfolio::cmd_portfolio;
pub use train::cmd_train;
pub use worstcase::cmd_worstcase;

use crate::CliResult;
use std::path::Path;

/// Runs `body` inside a rayon pool bounded to `workers` threads
/// (0 = one thread per core). Grid cells, seeds, and the core library's
/// internal data-parallel loops all schedule onto this pool.
pub fn with_worker_pool<T: Send>(
    workers: usize,
    body: impl FnOnce() -> CliResult<T> + Send,
) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::CliError::runtime(anyhow::anyhow!("worker pool: {e}")))?;
    pool.install(body)
}

/// Validation error for a missing input file, naming the path.
pub fn require_file(path: &Path, role: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(crate::CliError::validation(anyhow::anyhow!(
            "{role} `{}` does not exist",
            path.display()
        )))
    }
}
