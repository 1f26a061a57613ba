use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use steer_core::resources::PoolCounts;
use steer_core::{LedgerError, ResourceLedger};

use std::collections::BTreeMap;

/// One serialized tracker operation, as recorded by the audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEntry {
    Acquire { pool: String, n: u64, granted: bool },
    Release { pool: String, n: u64 },
    Reallocate { from: String, to: String, n: u64, granted: bool },
}

/// Thread-safe resource pools with blocking acquire and reallocate.
///
/// Every operation runs under one lock, so `Σ available + Σ outstanding`
/// equals the total at every observable instant.
pub struct ResourceTracker {
    ledger: Mutex<ResourceLedger>,
    changed: Condvar,
    audit: Option<Mutex<Vec<AuditEntry>>>,
}

impl ResourceTracker {
    pub fn new<S: AsRef<str>>(pools: &[(S, u64)]) -> Result<Self, LedgerError> {
        Ok(ResourceTracker {
            ledger: Mutex::new(ResourceLedger::new(pools)?),
            changed: Condvar::new(),
            audit: None,
        })
    }

    /// Records every operation in the order it took effect.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit
            .as_ref()
            .map(|a| a.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn lock(&self) -> MutexGuard<'_, ResourceLedger> {
        self.ledger.lock().unwrap()
    }

    fn log(&self, entry: AuditEntry) {
        if let Some(a) = &self.audit {
            a.lock().unwrap().push(entry);
        }
    }

    pub fn total(&self) -> u64 {
        self.lock().total()
    }

    pub fn available(&self, pool: &str) -> Result<u64, LedgerError> {
        self.lock().available(pool)
    }

    pub fn outstanding(&self, pool: &str) -> Result<u64, LedgerError> {
        self.lock().outstanding(pool)
    }

    /// Available plus outstanding: the pool's current share of the total.
    pub fn allocated(&self, pool: &str) -> Result<u64, LedgerError> {
        self.lock().allocated(pool)
    }

    pub fn snapshot(&self) -> BTreeMap<String, PoolCounts> {
        self.lock().snapshot()
    }

    pub fn is_conserved(&self) -> bool {
        self.lock().is_conserved()
    }

    /// Waits on the ledger until `attempt` succeeds or `timeout` passes.
    /// `None` waits indefinitely.
    fn wait_for(
        &self,
        timeout: Option<Duration>,
        mut attempt: impl FnMut(&mut ResourceLedger) -> Result<bool, LedgerError>,
        entry: impl Fn(bool) -> AuditEntry,
    ) -> Result<bool, LedgerError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut ledger = self.lock();
        loop {
            if attempt(&mut ledger)? {
                self.log(entry(true));
                drop(ledger);
                self.changed.notify_all();
                return Ok(true);
            }
            match deadline {
                None => ledger = self.changed.wait(ledger).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        self.log(entry(false));
                        return Ok(false);
                    }
                    ledger = self.changed.wait_timeout(ledger, d - now).unwrap().0;
                }
            }
        }
    }

    /// Takes `n` units from `pool`, blocking until they are available.
    /// Returns false, with nothing changed, if `timeout` expires first.
    pub fn acquire(&self, pool: &str, n: u64, timeout: Option<Duration>) -> Result<bool, LedgerError> {
        self.wait_for(
            timeout,
            |l| l.try_acquire(pool, n),
            |granted| AuditEntry::Acquire {
                pool: pool.into(),
                n,
                granted,
            },
        )
    }

    pub fn release(&self, pool: &str, n: u64) -> Result<(), LedgerError> {
        let mut ledger = self.lock();
        ledger.release(pool, n)?;
        self.log(AuditEntry::Release { pool: pool.into(), n });
        drop(ledger);
        self.changed.notify_all();
        Ok(())
    }

    /// Moves `n` available units from one pool to another once `from` has
    /// them free.
    pub fn reallocate(
        &self,
        from: &str,
        to: &str,
        n: u64,
        timeout: Option<Duration>,
    ) -> Result<bool, LedgerError> {
        self.wait_for(
            timeout,
            |l| l.try_move(from, to, n),
            |granted| AuditEntry::Reallocate {
                from: from.into(),
                to: to.into(),
                n,
                granted,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn acquire_arithmetic() {
        let t = ResourceTracker::new(&[("sim", 8)]).unwrap();
        assert!(t.acquire("sim", 4, Some(Duration::ZERO)).unwrap());
        assert_eq!(t.available("sim").unwrap(), 4);
        assert_eq!(t.outstanding("sim").unwrap(), 4);
    }

    #[test]
    fn acquire_times_out_unchanged() {
        let t = ResourceTracker::new(&[("sim", 2)]).unwrap();
        let start = Instant::now();
        assert!(!t.acquire("sim", 4, Some(Duration::from_millis(10))).unwrap());
        assert!(start.elapsed() >= Duration::from_millis(10));
        assert_eq!(t.available("sim").unwrap(), 2);
    }

    #[test]
    fn release_wakes_blocked_acquirer() {
        let t = Arc::new(ResourceTracker::new(&[("sim", 1)]).unwrap());
        assert!(t.acquire("sim", 1, None).unwrap());
        let waiter = {
            let t = t.clone();
            thread::spawn(move || t.acquire("sim", 1, Some(Duration::from_secs(5))).unwrap())
        };
        thread::sleep(Duration::from_millis(20));
        t.release("sim", 1).unwrap();
        assert!(waiter.join().unwrap());
        assert_eq!(t.outstanding("sim").unwrap(), 1);
    }

    #[test]
    fn release_rules() {
        let t = ResourceTracker::new(&[("sim", 3)]).unwrap();
        t.release("sim", 0).unwrap();
        assert!(matches!(t.release("sim", 1), Err(LedgerError::OverRelease { .. })));
        assert!(matches!(
            t.acquire("gpu", 1, Some(Duration::ZERO)),
            Err(LedgerError::UnknownPool(_))
        ));
    }

    #[test]
    fn reallocate_moves_free_units() {
        let t = ResourceTracker::new(&[("sim", 8), ("ml", 0)]).unwrap();
        assert!(t.reallocate("sim", "ml", 4, Some(Duration::ZERO)).unwrap());
        assert_eq!(t.available("sim").unwrap(), 4);
        assert_eq!(t.available("ml").unwrap(), 4);
        assert!(!t.reallocate("sim", "ml", 9, Some(Duration::from_millis(5))).unwrap());
        assert!(t.is_conserved());
    }

    #[test]
    fn audit_records_outcomes() {
        let t = ResourceTracker::new(&[("a", 1)]).unwrap().with_audit();
        t.acquire("a", 1, None).unwrap();
        t.acquire("a", 1, Some(Duration::ZERO)).unwrap();
        t.release("a", 1).unwrap();
        assert_eq!(
            t.audit_log(),
            vec![
                AuditEntry::Acquire { pool: "a".into(), n: 1, granted: true },
                AuditEntry::Acquire { pool: "a".into(), n: 1, granted: false },
                AuditEntry::Release { pool: "a".into(), n: 1 },
            ]
        );
    }
}
