//! Worker-pool sizing.

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "EHDNAS_THREADS";

/// Worker count from `EHDNAS_THREADS`, or `None` to let rayon use every
/// processor.
pub fn threads_from_env() -> crate::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(crate::Error::InvalidConfig(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

/// Sizes rayon's global pool from the environment. Calling it again after
/// the pool exists has no effect.
pub fn init_global_pool() -> crate::Result<()> {
    if let Some(n) = threads_from_env()? {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialised");
        }
    }
    Ok(())
}
