//! Non-blocking pool ledger.
//!
//! A fixed number of resource units is split across named pools. Each pool
//! tracks units that are free (`available`) and units handed out to callers
//! (`outstanding`). Every operation preserves
//! `Σ available + Σ outstanding == total`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown pool `{0}`")]
    UnknownPool(String),
    #[error("pool `{pool}` has {outstanding} outstanding, cannot release {requested}")]
    OverRelease {
        pool: String,
        outstanding: u64,
        requested: u64,
    },
    #[error("duplicate pool `{0}`")]
    DuplicatePool(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolCounts {
    pub available: u64,
    pub outstanding: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceLedger {
    total: u64,
    pools: BTreeMap<String, PoolCounts>,
}

impl ResourceLedger {
    /// Builds a ledger whose total is the sum of the initial allocations.
    pub fn new<S: AsRef<str>>(pools: &[(S, u64)]) -> Result<Self, LedgerError> {
        let mut map = BTreeMap::new();
        for (name, count) in pools {
            let name = name.as_ref().to_string();
            if map.contains_key(&name) {
                return Err(LedgerError::DuplicatePool(name));
            }
            map.insert(
                name,
                PoolCounts {
                    available: *count,
                    outstanding: 0,
                },
            );
        }
        let total = pools.iter().map(|(_, c)| *c).sum();
        Ok(ResourceLedger { total, pools: map })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn pool_names(&self) -> Vec<String> {
        self.pools.keys().cloned().collect()
    }

    pub fn counts(&self, pool: &str) -> Result<PoolCounts, LedgerError> {
        self.pools
            .get(pool)
            .copied()
            .ok_or_else(|| LedgerError::UnknownPool(pool.into()))
    }

    pub fn available(&self, pool: &str) -> Result<u64, LedgerError> {
        Ok(self.counts(pool)?.available)
    }

    pub fn outstanding(&self, pool: &str) -> Result<u64, LedgerError> {
        Ok(self.counts(pool)?.outstanding)
    }

    /// Units currently assigned to `pool`, free or handed out.
    pub fn allocated(&self, pool: &str) -> Result<u64, LedgerError> {
        let c = self.counts(pool)?;
        Ok(c.available + c.outstanding)
    }

    fn pool_mut(&mut self, pool: &str) -> Result<&mut PoolCounts, LedgerError> {
        self.pools
            .get_mut(pool)
            .ok_or_else(|| LedgerError::UnknownPool(pool.into()))
    }

    /// Takes `n` units if that many are free; `Ok(false)` leaves state unchanged.
    pub fn try_acquire(&mut self, pool: &str, n: u64) -> Result<bool, LedgerError> {
        let c = self.pool_mut(pool)?;
        if c.available < n {
            return Ok(false);
        }
        c.available -= n;
        c.outstanding += n;
        Ok(true)
    }

    pub fn release(&mut self, pool: &str, n: u64) -> Result<(), LedgerError> {
        let c = self.pool_mut(pool)?;
        if c.outstanding < n {
            return Err(LedgerError::OverRelease {
                pool: pool.into(),
                outstanding: c.outstanding,
                requested: n,
            });
        }
        c.outstanding -= n;
        c.available += n;
        Ok(())
    }

    /// Moves `n` free units from one pool to another.
    pub fn try_move(&mut self, from: &str, to: &str, n: u64) -> Result<bool, LedgerError> {
        self.counts(to)?;
        let src = self.pool_mut(from)?;
        if src.available < n {
            return Ok(false);
        }
        src.available -= n;
        self.pool_mut(to)?.available += n;
        Ok(true)
    }

    pub fn is_conserved(&self) -> bool {
        let sum: u64 = self
            .pools
            .values()
            .map(|c| c.available + c.outstanding)
            .sum();
        sum == self.total
    }

    pub fn snapshot(&self) -> BTreeMap<String, PoolCounts> {
        self.pools.clone()
    }
}
