//! Thread-pool batch runner.

use asldn_core::trainer::BatchRunner;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Caps worker threads for training and evaluation.
pub const THREADS_ENV: &str = "ASLDN_THREADS";

/// Runs per-sample jobs on a rayon pool; results come back in index order,
/// so training is bit-identical for any thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(Self { pool })
    }

    /// Uses `ASLDN_THREADS` when set, otherwise rayon's default.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => {
                let n: usize = v.trim().parse().map_err(|_| Error::BadValue {
                    key: THREADS_ENV.into(),
                    value: v.clone(),
                    reason: "expected a positive integer".into(),
                })?;
                if n == 0 {
                    return Err(Error::BadValue {
                        key: THREADS_ENV.into(),
                        value: v,
                        reason: "expected a positive integer".into(),
                    });
                }
                Self::new(n)
            }
            Err(_) => Self::new(0),
        }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl BatchRunner for Parallel {
    fn run<R, F>(&self, n: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}
