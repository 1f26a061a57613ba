use std::collections::HashSet;
use std::sync::Arc;

use steer::broker::{TcpBroker, TcpBrokerServer};
use steer::campaign::{rank, run_campaign, run_campaign_on, CampaignError, CampaignReport, SelectionSource};
use steer_core::campaign::{
    CampaignConfig, CampaignConfigError, EntityId, MoleculeQueue, Policy, RetrainSchedule, Space, SpaceKind,
    SurrogateEnsemble,
};

fn quick(budget: usize, seed: u64) -> CampaignConfig {
    CampaignConfig {
        budget,
        assay_duration_s: 0.0,
        predict_batch: 500,
        seed,
        ..CampaignConfig::default()
    }
}

fn check_common(space: &Space, r: &CampaignReport) {
    let c = &r.config;
    assert_eq!(r.assays_submitted, c.budget);
    assert_eq!(r.record.len(), c.budget);
    assert_eq!(r.series.len(), c.budget);
    let ids: HashSet<EntityId> = r.selections.iter().map(|s| s.entity).collect();
    assert_eq!(ids.len(), c.budget, "an entity was assayed twice");
    let recorded: HashSet<EntityId> = r.record.entries().iter().map(|e| e.entity_id).collect();
    assert_eq!(ids, recorded);
    let cost: f64 = r.record.entries().iter().map(|e| e.cost).sum();
    assert!((r.score.cost - cost).abs() < 1e-9);
    assert_eq!(r.queue_violations, 0);
    assert_eq!(r.task_failures, 0);
    let schedule = RetrainSchedule::new(r.policy, c.n_retrain, space.dim());
    assert_eq!(r.trainings, schedule.trainings_due(r.record.success_count()));
    let last = r.series.last().unwrap();
    assert_eq!(last.count_above, r.score.count_above);
    assert_eq!(r.discoveries().len(), r.score.count_above);
    for w in r.series.windows(2) {
        assert!(w[0].assays_done < w[1].assays_done);
        assert!(w[0].count_above <= w[1].count_above);
        assert!(w[0].cost <= w[1].cost);
    }
}

#[test]
fn update_k_retrains_on_schedule() {
    let space = Space::generate(2000, 4, 11, SpaceKind::Rippled);
    let r = run_campaign(&space, &quick(60, 1), Policy::UpdateK).unwrap();
    check_common(&space, &r);
    // initial = max(8, 4 + 2) = 8; 60 successes -> (60 - 8) / 8 + 1
    assert_eq!(r.trainings, 7);
    assert_eq!(r.training_failures, 0);
    assert!(!r.reorders.is_empty());
    assert!(r.queue_checks > 0);
    assert!(r.selections[..8].iter().all(|s| s.source == SelectionSource::Initial));
    assert!(r.selections.iter().any(|s| s.source == SelectionSource::Queue));
    for w in r.reorders.windows(2) {
        assert!(w[0].version < w[1].version);
    }
}

#[test]
fn policies_differ_in_training() {
    let space = Space::generate(2000, 4, 12, SpaceKind::Rippled);
    let random = run_campaign(&space, &quick(40, 2), Policy::Random).unwrap();
    check_common(&space, &random);
    assert_eq!(random.trainings, 0);
    assert_eq!(random.predict_tasks, 0);
    assert!(random.selections.iter().all(|s| s.source == SelectionSource::Random));

    let once = run_campaign(&space, &quick(40, 2), Policy::NoRetrain).unwrap();
    check_common(&space, &once);
    assert_eq!(once.trainings, 1);
    assert_eq!(once.reorders.len(), 1);
    assert_eq!(once.predict_tasks, 4);
}

#[test]
fn failures_count_against_budget_and_cost() {
    let space = Space::generate(3000, 3, 13, SpaceKind::Rippled);
    let cfg = CampaignConfig {
        assay_failure_prob: 0.3,
        assay_duration_s: 0.002,
        nodes_per_assay: 2,
        ..quick(80, 3)
    };
    let r = run_campaign(&space, &cfg, Policy::UpdateK).unwrap();
    check_common(&space, &r);
    let failed = r.record.entries().iter().filter(|e| !e.success()).count();
    assert!(failed > 5 && failed < 45, "{failed} failures");
    assert!((r.score.cost - 80.0 * 0.002 * 2.0).abs() < 1e-9);
}

#[test]
fn fallback_is_recorded_when_no_model_can_come() {
    // every assay fails, so training never becomes due
    let space = Space::generate(500, 2, 14, SpaceKind::Linear);
    let cfg = CampaignConfig {
        assay_failure_prob: 1.0,
        ..quick(20, 4)
    };
    let r = run_campaign(&space, &cfg, Policy::UpdateK).unwrap();
    check_common(&space, &r);
    assert_eq!(r.trainings, 0);
    assert_eq!(r.score.best, None);
    let fallbacks = r.selections.iter().filter(|s| s.source == SelectionSource::Fallback).count();
    assert_eq!(fallbacks, 20 - 8);
    assert_eq!(r.fallbacks.len(), fallbacks);
    assert!(r.fallbacks.iter().all(|f| f.reason == "too few successful results to train"));
}

#[test]
fn synchronous_runs_are_reproducible() {
    let space = Space::generate(1500, 4, 15, SpaceKind::Rippled);
    let cfg = CampaignConfig {
        synchronous: true,
        sim_slots: 1,
        ml_slots: 1,
        assay_failure_prob: 0.1,
        ..quick(50, 5)
    };
    let a = run_campaign(&space, &cfg, Policy::UpdateK).unwrap();
    let b = run_campaign(&space, &cfg, Policy::UpdateK).unwrap();
    check_common(&space, &a);
    assert_eq!(a.selections, b.selections);
    assert_eq!(a.record, b.record);
    assert_eq!(a.trainings, b.trainings);
    assert_eq!(
        a.reorders.iter().map(|r| (r.training, r.assays_done)).collect::<Vec<_>>(),
        b.reorders.iter().map(|r| (r.training, r.assays_done)).collect::<Vec<_>>()
    );
    let c = run_campaign(&space, &CampaignConfig { seed: 6, ..cfg }, Policy::UpdateK).unwrap();
    assert_ne!(a.selections, c.selections);
}

#[test]
fn synchronous_reorders_follow_every_training() {
    let space = Space::generate(1000, 3, 16, SpaceKind::Linear);
    let cfg = CampaignConfig {
        synchronous: true,
        sim_slots: 3,
        ..quick(40, 7)
    };
    let r = run_campaign(&space, &cfg, Policy::UpdateK).unwrap();
    check_common(&space, &r);
    // the last training fires on the final result, after selection ended
    assert_eq!(r.reorders.len(), r.trainings - 1);
    for (k, ev) in r.reorders.iter().enumerate() {
        assert_eq!(ev.training, k);
        assert_eq!(ev.assays_done, 8 + 8 * k);
    }
}

/// Exact binomial tail sums.
fn binomial_interval(n: u64, p: f64, alpha: f64) -> (u64, u64) {
    let mut pmf = vec![0.0f64; n as usize + 1];
    pmf[0] = (1.0 - p).powi(n as i32);
    for k in 1..=n as usize {
        pmf[k] = pmf[k - 1] * (n as f64 - k as f64 + 1.0) / k as f64 * p / (1.0 - p);
    }
    let mut lo = 0;
    let mut tail = 0.0;
    while tail + pmf[lo] <= alpha / 2.0 {
        tail += pmf[lo];
        lo += 1;
    }
    let mut hi = n as usize;
    let mut tail = 0.0;
    while tail + pmf[hi] <= alpha / 2.0 {
        tail += pmf[hi];
        hi -= 1;
    }
    (lo as u64, hi as u64)
}

#[test]
fn binomial_interval_oracle() {
    let (lo, hi) = binomial_interval(1000, 0.01, 0.01);
    assert_eq!((lo, hi), (3, 19));
}

#[test]
fn random_policy_matches_base_rate() {
    let space = Space::generate(10_000, 8, 17, SpaceKind::Rippled);
    let mut total = 0;
    for seed in 0..20 {
        let r = run_campaign(&space, &quick(50, 100 + seed), Policy::Random).unwrap();
        assert_eq!(r.record.len(), 50);
        total += r.score.count_above as u64;
    }
    // 20 seeds x 50 draws at a 1% base rate
    let (lo, hi) = binomial_interval(1000, 0.01, 0.01);
    assert!((lo..=hi).contains(&total), "{total} outside [{lo}, {hi}]");
}

#[test]
fn zero_kappa_puts_the_best_mean_first() {
    let space = Space::generate(600, 3, 18, SpaceKind::Rippled);
    let xs: Vec<&[f64]> = space.entities[..40].iter().map(|e| e.features.as_slice()).collect();
    let ys: Vec<f64> = space.entities[..40].iter().map(|e| e.hidden_value()).collect();
    let model = SurrogateEnsemble::train(&xs, &ys, 8, 1e-2, 3).unwrap();
    let ids: Vec<EntityId> = (40..600).map(EntityId).collect();
    let preds: Vec<(f64, f64)> = ids
        .iter()
        .map(|id| {
            let p = model.predict(&space.get(*id).unwrap().features).unwrap();
            (p.mean, p.spread)
        })
        .collect();
    let mut q = MoleculeQueue::new();
    q.replace(rank(&ids, &preds, 0.0, |_| false));
    let best = preds.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(q.head().unwrap().1, best);
    // with exploration the head can differ, but stays sorted
    q.replace(rank(&ids, &preds, 2.0, |id| id.0 % 2 == 0));
    assert!(q.is_sorted());
    assert!(q.entries().iter().all(|(id, _)| id.0 % 2 == 1));
}

#[test]
fn invalid_campaigns_are_rejected() {
    let space = Space::generate(30, 2, 19, SpaceKind::Linear);
    assert!(matches!(
        run_campaign(&space, &quick(31, 0), Policy::Random),
        Err(CampaignError::BudgetExceedsSpace { budget: 31, space: 30 })
    ));
    let bad = CampaignConfig {
        nodes_per_assay: 7,
        ..quick(10, 0)
    };
    assert!(matches!(
        run_campaign(&space, &bad, Policy::Random),
        Err(CampaignError::Config(CampaignConfigError::BadNodes))
    ));
}

#[test]
fn whole_space_can_be_exhausted() {
    let space = Space::generate(30, 2, 20, SpaceKind::Linear);
    let r = run_campaign(&space, &quick(30, 1), Policy::UpdateK).unwrap();
    check_common(&space, &r);
}

#[test]
fn runs_over_tcp() {
    let server = TcpBrokerServer::bind("127.0.0.1:0").unwrap();
    let broker = Arc::new(TcpBroker::connect(server.local_addr()).unwrap());
    let space = Space::generate(800, 3, 21, SpaceKind::Rippled);
    let r = run_campaign_on(broker, &space, &quick(30, 2), Policy::UpdateK).unwrap();
    check_common(&space, &r);
}
