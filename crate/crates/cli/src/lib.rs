//! Batch front end: scenario files, sweeps, the built-in reproductions and
//! the oracle suites.

pub mod commands;
pub mod config;
pub mod scenarios;
pub mod table;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LIQSIM_THREADS";

/// Size the global thread pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| config::ConfigError {
                problems: vec![format!("{THREADS_ENV} must be a positive integer, got {v:?}")],
            })?;
        if n == 0 {
            anyhow::bail!(config::ConfigError {
                problems: vec![format!("{THREADS_ENV} must be at least 1")],
            });
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
