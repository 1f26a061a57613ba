use proptest::prelude::*;
use std::collections::HashMap;

use steer_core::campaign::{
    record_score, ucb_score, AssayResultEntry, CampaignRecord, EntityId, MoleculeQueue,
};
use steer_core::lru::LruMap;
use steer_core::{Event, ResourceLedger, Stamp, TaskRecord, Value};

proptest! {
    #[test]
    fn overhead_segments_partition_round_trip(gaps in proptest::collection::vec(0i64..5_000_000, 6), start in 0i64..1_000_000_000) {
        let mut r = TaskRecord::new("t".into(), "sim", "f", vec![Value::Null]);
        let mut t = start;
        r.mark_at(Event::Created, Stamp(t)).unwrap();
        for (e, g) in Event::ALL[1..].iter().zip(&gaps) {
            t += g;
            r.mark_at(*e, Stamp(t)).unwrap();
        }
        prop_assert!(r.timestamps.is_monotone());
        let o = r.overhead_breakdown().unwrap();
        prop_assert_eq!(o.segment_sum(), o.total_overhead);
        prop_assert_eq!(o.total_overhead + o.compute, Stamp(t).since(Stamp(start)));
    }

    #[test]
    fn record_score_matches_scan(entries in proptest::collection::vec((0u32..50, proptest::option::of(-10.0f64..10.0), 0.0f64..3.0), 0..60), threshold in -5.0f64..5.0) {
        let mut rec = CampaignRecord::new();
        for (id, v, c) in &entries {
            rec.push(AssayResultEntry { entity_id: EntityId(*id), assay: "a".into(), property: "p".into(), value: *v, cost: *c });
        }
        let s = record_score(&rec, threshold);
        let mut best: Option<f64> = None;
        let mut above = 0;
        let mut cost = 0.0;
        for (_, v, c) in &entries {
            cost += c;
            if let Some(v) = v {
                if best.is_none() || *v > best.unwrap() { best = Some(*v); }
                if *v > threshold { above += 1; }
            }
        }
        prop_assert_eq!(s.best, best);
        prop_assert_eq!(s.count_above, above);
        prop_assert!((s.cost - cost).abs() < 1e-9);
    }

    #[test]
    fn ledger_matches_shadow(ops in proptest::collection::vec((0u8..3, 0usize..3, 0usize..3, 0u64..6), 1..300)) {
        let names = ["a", "b", "c"];
        let mut ledger = ResourceLedger::new(&[("a", 5), ("b", 3), ("c", 0)]).unwrap();
        // shadow: [available, outstanding] per pool
        let mut shadow = [[5u64, 0], [3, 0], [0, 0]];
        for (op, p, q, n) in ops {
            match op {
                0 => {
                    let ok = shadow[p][0] >= n;
                    if ok { shadow[p][0] -= n; shadow[p][1] += n; }
                    prop_assert_eq!(ledger.try_acquire(names[p], n).unwrap(), ok);
                }
                1 => {
                    let ok = shadow[p][1] >= n;
                    if ok { shadow[p][1] -= n; shadow[p][0] += n; }
                    prop_assert_eq!(ledger.release(names[p], n).is_ok(), ok);
                }
                _ => {
                    let ok = shadow[p][0] >= n;
                    if ok { shadow[p][0] -= n; shadow[q][0] += n; }
                    prop_assert_eq!(ledger.try_move(names[p], names[q], n).unwrap(), ok);
                }
            }
            for (i, name) in names.iter().enumerate() {
                let c = ledger.counts(name).unwrap();
                prop_assert_eq!([c.available, c.outstanding], shadow[i]);
            }
            prop_assert!(ledger.is_conserved());
            prop_assert_eq!(shadow.iter().map(|s| s[0] + s[1]).sum::<u64>(), 8);
        }
    }

    #[test]
    fn lru_matches_shadow(cap in 0usize..6, ops in proptest::collection::vec((any::<bool>(), 0u8..10), 1..200)) {
        let mut lru = LruMap::new(cap);
        // shadow: recency list, least recent first
        let mut order: Vec<u8> = Vec::new();
        let mut values: HashMap<u8, usize> = HashMap::new();
        for (step, (is_insert, k)) in ops.into_iter().enumerate() {
            if is_insert {
                lru.insert(k, step);
                if cap > 0 {
                    order.retain(|x| *x != k);
                    if order.len() >= cap {
                        let old = order.remove(0);
                        values.remove(&old);
                    }
                    order.push(k);
                    values.insert(k, step);
                }
            } else {
                let got = lru.get(&k).copied();
                prop_assert_eq!(got, values.get(&k).copied());
                if got.is_some() {
                    order.retain(|x| *x != k);
                    order.push(k);
                }
            }
            prop_assert_eq!(lru.keys_by_recency(), order.clone());
            prop_assert!(lru.len() <= cap);
        }
    }

    #[test]
    fn zero_kappa_orders_by_mean(preds in proptest::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..50)) {
        let mut q = MoleculeQueue::new();
        q.replace(preds.iter().enumerate().map(|(i, (m, s))| (EntityId(i as u32), ucb_score(*m, *s, 0.0))).collect());
        let mut by_mean: Vec<(u32, f64)> = preds.iter().enumerate().map(|(i, (m, _))| (i as u32, *m)).collect();
        by_mean.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got: Vec<u32> = q.entries().iter().map(|(id, _)| id.0).collect();
        let want: Vec<u32> = by_mean.iter().map(|(i, _)| *i).collect();
        prop_assert_eq!(got, want);
        prop_assert!(q.is_sorted());
    }
}
