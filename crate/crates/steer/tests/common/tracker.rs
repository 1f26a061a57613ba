//! Randomized concurrent schedules against the tracker, replayed through a
//! sequential shadow model.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer::thinker::{AuditEntry, ResourceTracker};

const POOLS: [&str; 3] = ["sim", "ml", "io"];

#[derive(Debug, Default, Clone, Copy)]
pub struct Shadow {
    pub available: i64,
    pub outstanding: i64,
}

pub fn replay(initial: &[(&str, u64)], log: &[AuditEntry]) -> BTreeMap<String, Shadow> {
    let mut m: BTreeMap<String, Shadow> = initial
        .iter()
        .map(|(p, n)| {
            (
                p.to_string(),
                Shadow {
                    available: *n as i64,
                    outstanding: 0,
                },
            )
        })
        .collect();
    let total: i64 = initial.iter().map(|(_, n)| *n as i64).sum();
    for (i, e) in log.iter().enumerate() {
        match e {
            AuditEntry::Acquire { pool, n, granted } => {
                let s = m.get_mut(pool).unwrap();
                let fits = s.available >= *n as i64;
                assert_eq!(fits, *granted, "step {i}: {e:?} against {s:?}");
                if fits {
                    s.available -= *n as i64;
                    s.outstanding += *n as i64;
                }
            }
            AuditEntry::Release { pool, n } => {
                let s = m.get_mut(pool).unwrap();
                assert!(s.outstanding >= *n as i64, "step {i}: {e:?} against {s:?}");
                s.available += *n as i64;
                s.outstanding -= *n as i64;
            }
            AuditEntry::Reallocate { from, to, n, granted } => {
                let fits = m[from].available >= *n as i64;
                assert_eq!(fits, *granted, "step {i}: {e:?}");
                if fits {
                    m.get_mut(from).unwrap().available -= *n as i64;
                    m.get_mut(to).unwrap().available += *n as i64;
                }
            }
        }
        let sum: i64 = m.values().map(|s| s.available + s.outstanding).sum();
        assert_eq!(sum, total, "step {i}");
        assert!(m.values().all(|s| s.available >= 0 && s.outstanding >= 0));
    }
    m
}

/// Runs `ops` random operations from `threads` threads over three pools and
/// checks the audit log against the shadow. Returns the audited step count.
pub fn hammer(seed: u64, threads: usize, ops: usize) -> usize {
    let initial = [("sim", 6u64), ("ml", 3), ("io", 1)];
    let tracker = Arc::new(ResourceTracker::new(&initial).unwrap().with_audit());
    let remaining = Arc::new(AtomicUsize::new(ops));
    let stop = Arc::new(AtomicBool::new(false));

    let monitor = {
        let (tracker, stop) = (tracker.clone(), stop.clone());
        thread::spawn(move || {
            let mut checks = 0u64;
            while !stop.load(Ordering::SeqCst) {
                let snap = tracker.snapshot();
                let sum: u64 = snap.values().map(|c| c.available + c.outstanding).sum();
                assert_eq!(sum, tracker.total());
                checks += 1;
            }
            checks
        })
    };

    let workers: Vec<_> = (0..threads)
        .map(|w| {
            let (tracker, remaining) = (tracker.clone(), remaining.clone());
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + w as u64);
                let mut held: BTreeMap<&str, u64> = BTreeMap::new();
                while remaining
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| r.checked_sub(1))
                    .is_ok()
                {
                    let pool = POOLS[rng.random_range(0..3)];
                    let timeout = Some(Duration::from_micros(rng.random_range(0..300)));
                    match rng.random_range(0..10) {
                        0..=3 => {
                            let n = rng.random_range(0..3);
                            if tracker.acquire(pool, n, timeout).unwrap() {
                                *held.entry(pool).or_default() += n;
                            }
                        }
                        4..=7 => {
                            let have = held.get(pool).copied().unwrap_or(0);
                            let n = rng.random_range(0..=have);
                            tracker.release(pool, n).unwrap();
                            *held.entry(pool).or_default() -= n;
                        }
                        _ => {
                            let to = POOLS[rng.random_range(0..3)];
                            let n = rng.random_range(0..3);
                            tracker.reallocate(pool, to, n, timeout).unwrap();
                        }
                    }
                }
                for (pool, n) in held {
                    tracker.release(pool, n).unwrap();
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    stop.store(true, Ordering::SeqCst);
    assert!(monitor.join().unwrap() > 0);

    let log = tracker.audit_log();
    assert!(log.len() >= ops);
    let end = replay(&initial, &log);
    for (pool, s) in end {
        assert_eq!(s.outstanding, 0);
        assert_eq!(tracker.available(&pool).unwrap() as i64, s.available);
        assert_eq!(tracker.outstanding(&pool).unwrap(), 0);
    }
    assert!(tracker.is_conserved());
    log.len()
}
