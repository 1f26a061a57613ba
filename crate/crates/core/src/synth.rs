//! Synthetic benchmark workload definition.
//!
//! A workload is `T` identical tasks of duration `D`, each with a unique
//! input of `I` bytes and a result of `O` bytes, run on `N` workers.

use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default size above which values are passed by reference.
pub const DEFAULT_PROXY_THRESHOLD: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynAppConfig {
    /// Task count `T`.
    pub tasks: usize,
    /// Task duration `D` in seconds.
    pub duration_s: f64,
    /// Input size `I` in bytes.
    pub input_size: usize,
    /// Output size `O` in bytes.
    pub output_size: usize,
    /// Worker count `N`.
    pub workers: usize,
    pub use_proxy: bool,
    pub threshold_bytes: u64,
    pub seed: u64,
}

impl Default for SynAppConfig {
    fn default() -> Self {
        SynAppConfig {
            tasks: 200,
            duration_s: 0.0,
            input_size: 0,
            output_size: 0,
            workers: 8,
            use_proxy: false,
            threshold_bytes: DEFAULT_PROXY_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("task count must be at least 1")]
    NoTasks,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("task duration must be a finite non-negative number of seconds")]
    BadDuration,
    #[error("proxy threshold must be positive")]
    BadThreshold,
}

impl SynAppConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tasks == 0 {
            return Err(ConfigError::NoTasks);
        }
        if self.workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(ConfigError::BadDuration);
        }
        if self.threshold_bytes == 0 {
            return Err(ConfigError::BadThreshold);
        }
        Ok(())
    }
}

/// Deterministic pseudorandom input for task `index`.
///
/// The first eight bytes hold the index (little endian) so inputs of eight
/// bytes or more never collide; the rest is a ChaCha stream keyed by the seed.
pub fn make_input(config: &SynAppConfig, index: usize) -> Vec<u8> {
    let mut out = vec![0u8; config.input_size];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    rng.fill_bytes(&mut out);
    let tag = (index as u64).to_le_bytes();
    let n = out.len().min(tag.len());
    out[..n].copy_from_slice(&tag[..n]);
    out
}

/// Result payload of `size` bytes.
pub fn make_output(size: usize) -> Vec<u8> {
    vec![0xA5; size]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(size: usize) -> SynAppConfig {
        SynAppConfig {
            input_size: size,
            seed: 11,
            ..SynAppConfig::default()
        }
    }

    #[test]
    fn same_seed_and_index_is_deterministic() {
        assert_eq!(make_input(&cfg(4096), 3), make_input(&cfg(4096), 3));
    }

    #[test]
    fn indices_differ() {
        let c = cfg(1_000_000);
        assert_ne!(make_input(&c, 0), make_input(&c, 1));
        assert_eq!(make_input(&c, 0).len(), 1_000_000);
    }

    #[test]
    fn empty_input() {
        assert!(make_input(&cfg(0), 0).is_empty());
    }

    #[test]
    fn validation() {
        assert_eq!(
            SynAppConfig { tasks: 0, ..cfg(0) }.validate(),
            Err(ConfigError::NoTasks)
        );
        assert_eq!(
            SynAppConfig { workers: 0, ..cfg(0) }.validate(),
            Err(ConfigError::NoWorkers)
        );
        assert_eq!(
            SynAppConfig { duration_s: -1.0, ..cfg(0) }.validate(),
            Err(ConfigError::BadDuration)
        );
        assert!(cfg(10).validate().is_ok());
    }
}
