mod common;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::tracker::hammer;
use steer::thinker::ResourceTracker;

#[test]
fn ten_thousand_concurrent_operations() {
    let start = Instant::now();
    hammer(1, 8, 10_000);
    assert!(start.elapsed() < Duration::from_secs(30));
}

#[test]
fn several_seeds() {
    for seed in 2..6 {
        hammer(seed, 4, 2_000);
    }
}

#[test]
fn blocked_reallocate_completes_after_release() {
    let t = Arc::new(ResourceTracker::new(&[("sim", 2), ("ml", 0)]).unwrap());
    assert!(t.acquire("sim", 2, None).unwrap());
    let mover = {
        let t = t.clone();
        thread::spawn(move || t.reallocate("sim", "ml", 2, Some(Duration::from_secs(5))).unwrap())
    };
    thread::sleep(Duration::from_millis(20));
    t.release("sim", 2).unwrap();
    assert!(mover.join().unwrap());
    assert_eq!(t.allocated("ml").unwrap(), 2);
    assert_eq!(t.allocated("sim").unwrap(), 0);
}
