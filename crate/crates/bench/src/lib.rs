//! Shared fixtures for the benchmarks. Everything is seeded so repeated
//! runs measure the same inputs.

use std::collections::BTreeMap;

use ctrsim_core::auction::{allocate, rank};
use ctrsim_core::traffic::{gen_organic, inject_scripted_fraud};
use ctrsim_core::{
    AdvertiserId, AuctionConfig, Bid, EventLog, FraudKind, FraudPlan, Mechanism, Millis, RelativeSpan, Seed,
    TrafficConfig, WindowSpec,
};

pub fn advertiser(i: usize) -> AdvertiserId {
    AdvertiserId::new(format!("adv{i}")).expect("valid id")
}

/// `n` bids spread over 1..=1000 cents without an RNG dependency.
pub fn bids(n: usize) -> Vec<Bid> {
    (0..n)
        .map(|i| Bid::new(advertiser(i), 1 + (i as u64 * 7919 + 13) % 1000))
        .collect()
}

pub fn flat_ctrs(n: usize) -> BTreeMap<AdvertiserId, f64> {
    (0..n).map(|i| (advertiser(i), 0.05 + 0.01 * (i % 10) as f64)).collect()
}

/// Organic traffic for `advertisers` bidders in `slots` slots over
/// `horizon_ms`, plus a scripted burst against `adv0` halfway through.
pub fn traffic_log(advertisers: usize, slots: u32, qps: f64, horizon_ms: Millis) -> EventLog {
    let cfg = AuctionConfig::by_bid(slots);
    let ranked = rank(&bids(advertisers), &BTreeMap::new(), &cfg).expect("rank");
    let allocation = allocate(&ranked, &cfg, Mechanism::Gsp);
    let traffic = TrafficConfig {
        queries_per_second: qps,
        base_ctr: flat_ctrs(advertisers),
        position_decay: 0.6,
        horizon_ms,
        seed: Seed(17),
    };
    let log = gen_organic(&traffic, &allocation).expect("organic traffic");
    let burst = FraudPlan {
        target: allocation[0].advertiser.clone(),
        start_ms: horizon_ms / 2,
        count: 200,
        kind: FraudKind::Scripted { interval_ms: 50 },
    };
    inject_scripted_fraud(&log, &burst).expect("burst fits the horizon")
}

/// One spec of each estimator kind, sized for a log of `horizon_ms`.
pub fn all_specs(horizon_ms: Millis) -> [WindowSpec; 4] {
    [
        WindowSpec::TimeWindow {
            window_ms: horizon_ms / 20,
        },
        WindowSpec::ImpressionWindow { impressions: 500 },
        WindowSpec::ClickWindow { clicks: 50 },
        WindowSpec::Relative {
            span: RelativeSpan::Cumulative,
        },
    ]
}

/// Short name for a spec, used as a benchmark id.
pub fn spec_name(spec: &WindowSpec) -> &'static str {
    match spec {
        WindowSpec::TimeWindow { .. } => "time_window",
        WindowSpec::ImpressionWindow { .. } => "impression_window",
        WindowSpec::ClickWindow { .. } => "click_window",
        WindowSpec::Relative { .. } => "relative",
    }
}
