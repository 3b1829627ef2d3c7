mod common;

use std::collections::BTreeMap;

use common::{adv, detection_traffic, measure_detection, DETECTION_FIXTURE};
use ctrsim_core::traffic::{
    detect_scripted, flagged_ids, gen_organic, inject_human_fraud, inject_scripted_fraud, LogNormalGaps,
};
use ctrsim_core::{Cents, ClickSource, Event, FraudKind, FraudPlan, Seed, SlotAllocation, TrafficConfig};

fn slot(a: &str, s: u32) -> SlotAllocation {
    SlotAllocation {
        slot: s,
        advertiser: adv(a),
        bid: Cents(100),
        price_per_click: Cents(100),
        rank_score: 100.0,
    }
}

#[test]
fn organic_clicks_follow_the_binomial() {
    let cfg = TrafficConfig {
        queries_per_second: 20.0,
        base_ctr: BTreeMap::from([(adv("a"), 0.2), (adv("b"), 0.2)]),
        position_decay: 0.5,
        horizon_ms: 200_000,
        seed: Seed(5),
    };
    let log = gen_organic(&cfg, &[slot("a", 1), slot("b", 2)]).unwrap();
    for (a, p) in [("a", 0.2), ("b", 0.1)] {
        let imps = log
            .events()
            .iter()
            .filter(|e| matches!(e, Event::Impression(i) if i.advertiser.as_str() == a))
            .count() as f64;
        let clicks = log
            .events()
            .iter()
            .filter(|e| matches!(e, Event::Click(c) if c.advertiser.as_str() == a))
            .count() as f64;
        let sd = (imps * p * (1.0 - p)).sqrt();
        assert!(
            (clicks - imps * p).abs() <= 3.0 * sd,
            "{a}: {clicks} clicks on {imps} impressions"
        );
    }
    // about 20 queries per second over 200 s
    let queries = log.next_query_id() as f64;
    assert!((queries - 4_000.0).abs() <= 3.0 * 4_000f64.sqrt(), "{queries}");
}

#[test]
fn same_seed_same_traffic() {
    let cfg = TrafficConfig {
        queries_per_second: 5.0,
        base_ctr: BTreeMap::from([(adv("a"), 0.3)]),
        position_decay: 0.6,
        horizon_ms: 50_000,
        seed: Seed(77),
    };
    assert_eq!(
        gen_organic(&cfg, &[slot("a", 1)]).unwrap(),
        gen_organic(&cfg, &[slot("a", 1)]).unwrap()
    );
    let other = TrafficConfig {
        seed: Seed(78),
        ..cfg.clone()
    };
    assert_ne!(
        gen_organic(&cfg, &[slot("a", 1)]).unwrap(),
        gen_organic(&other, &[slot("a", 1)]).unwrap()
    );
}

#[test]
fn injection_adds_exactly_the_planned_clicks() {
    let organic = detection_traffic(3, 120_000);
    let plan = FraudPlan {
        target: adv("target"),
        start_ms: 10_000,
        count: 25,
        kind: FraudKind::Scripted { interval_ms: 400 },
    };
    let log = inject_scripted_fraud(&organic, &plan).unwrap();
    assert_eq!(log.len(), organic.len() + 50);
    let window = (10_000, 10_000 + 25 * 400);
    let before = organic.tally(window.0, window.1);
    let after = log.tally(window.0, window.1);
    assert_eq!(after.count(&adv("target")) - before.count(&adv("target")), 25);
    assert_eq!(log.tally(0, window.0), organic.tally(0, window.0));
    assert_eq!(log.tally(window.1, 120_000), organic.tally(window.1, 120_000));
    let organic_kept = log
        .events()
        .iter()
        .filter(|e| matches!(e, Event::Click(c) if c.source == ClickSource::Organic))
        .count();
    assert_eq!(
        organic_kept,
        organic.events().iter().filter(|e| matches!(e, Event::Click(_))).count()
    );
}

#[test]
fn human_gaps_have_the_log_normal_mean() {
    let dwell = LogNormalGaps { mu: 7.5, sigma: 0.6 };
    let plan = FraudPlan {
        target: adv("target"),
        start_ms: 0,
        count: 2_000,
        kind: FraudKind::Human { dwell },
    };
    let log = inject_human_fraud(&detection_traffic(1, 10_000_000), &plan, Seed(21)).unwrap();
    let times: Vec<u64> = log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Click(c) if c.source == ClickSource::HumanFraud => Some(c.t),
            _ => None,
        })
        .collect();
    assert_eq!(times.len(), 2_000);
    let mean = (times[times.len() - 1] - times[0]) as f64 / (times.len() - 1) as f64;
    let want = dwell.mean_ms();
    assert!((mean - want).abs() / want < 0.10, "mean gap {mean} vs {want}");
}

#[test]
fn scripted_run_is_flagged_in_full() {
    let organic = detection_traffic(4, 300_000);
    for (count, interval) in [(5, 1_000), (12, 137), (40, 2_500)] {
        let plan = FraudPlan {
            target: adv("target"),
            start_ms: 20_000,
            count,
            kind: FraudKind::Scripted { interval_ms: interval },
        };
        let log = inject_scripted_fraud(&organic, &plan).unwrap();
        let flags = detect_scripted(&log.view(), 5, 10).unwrap();
        let flagged = flagged_ids(&flags);
        let injected: Vec<u64> = log
            .events()
            .iter()
            .filter_map(|e| match e {
                Event::Click(c) if c.source == ClickSource::ScriptedFraud => Some(c.impression_ref),
                _ => None,
            })
            .collect();
        assert!(
            injected.iter().all(|id| flagged.contains(id)),
            "{count} x {interval} ms"
        );
    }
}

#[test]
fn measured_rates_meet_the_thresholds_and_match_the_fixture() {
    let measured = measure_detection(20);
    common::check_detection_thresholds(&measured).unwrap();
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        let text = serde_json::to_string_pretty(&measured).unwrap() + "\n";
        std::fs::write(DETECTION_FIXTURE, text).unwrap();
    }
    let recorded = common::recorded_detection_rates().unwrap();
    assert_eq!(
        measured, recorded,
        "rerun with UPDATE_FIXTURES=1 after an intended change"
    );
}
