//! Test support shared by the integration tests and the acceptance harness:
//! random logs, brute-force oracles and the property checks themselves.
//! Each check returns `Err` with a description of the first counterexample.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ctrsim_core::auction::{self, run_gfp_dynamics};
use ctrsim_core::estimators::{ctr_relative, relative_ctr_falls};
use ctrsim_core::traffic::{detect_scripted, flagged_ids, gen_organic, inject_fraud, LogNormalGaps};
use ctrsim_core::{
    AdvertiserId, AuctionConfig, Bid, Cents, ClickEvent, ClickSource, ClickTally, DetectorConfig, Event, EventLog,
    FraudKind, FraudPlan, ImpressionEvent, Mechanism, Millis, Ranking, RelativeSpan, Seed, SlotAllocation,
    TrafficConfig, WindowSpec,
};

pub fn adv(s: &str) -> AdvertiserId {
    AdvertiserId::new(s).unwrap()
}

pub fn adv_n(i: usize) -> AdvertiserId {
    adv(&format!("adv{i}"))
}

// ---------------------------------------------------------------- logs

#[derive(Clone, Copy, Debug)]
pub struct LogShape {
    pub advertisers: usize,
    pub impressions: usize,
    pub max_gap_ms: Millis,
    pub click_p: f64,
    /// Clicks land up to this many ms after their impression.
    pub max_latency_ms: Millis,
}

impl LogShape {
    pub fn random(rng: &mut impl Rng) -> Self {
        LogShape {
            advertisers: rng.random_range(1..=4),
            impressions: rng.random_range(0..=120),
            max_gap_ms: rng.random_range(0..=40),
            click_p: rng.random_range(0.0..=0.7),
            max_latency_ms: if rng.random_bool(0.5) {
                0
            } else {
                rng.random_range(1..=60)
            },
        }
    }
}

pub fn random_log(rng: &mut impl Rng, shape: LogShape) -> EventLog {
    let mut events = Vec::new();
    let mut t = 0;
    for id in 0..shape.impressions as u64 {
        t += rng.random_range(0..=shape.max_gap_ms);
        let a = adv_n(rng.random_range(0..shape.advertisers));
        let slot = rng.random_range(1..=3);
        events.push(Event::Impression(ImpressionEvent {
            id,
            t,
            advertiser: a.clone(),
            slot,
            query_id: id,
        }));
        if rng.random_bool(shape.click_p) {
            let latency = if shape.max_latency_ms == 0 {
                0
            } else {
                rng.random_range(0..=shape.max_latency_ms)
            };
            events.push(Event::Click(ClickEvent {
                t: t + latency,
                advertiser: a,
                slot,
                query_id: id,
                impression_ref: id,
                source: ClickSource::Organic,
            }));
        }
    }
    let horizon = events.iter().map(Event::t).max().map_or(1, |t| t + 1);
    EventLog::from_events(events, horizon).unwrap()
}

pub fn random_spec(rng: &mut impl Rng) -> WindowSpec {
    match rng.random_range(0..5) {
        0 => WindowSpec::TimeWindow {
            window_ms: rng.random_range(1..=400),
        },
        1 => WindowSpec::ImpressionWindow {
            impressions: rng.random_range(1..=40),
        },
        2 => WindowSpec::ClickWindow {
            clicks: rng.random_range(1..=15),
        },
        3 => WindowSpec::Relative {
            span: RelativeSpan::Cumulative,
        },
        _ => WindowSpec::Relative {
            span: RelativeSpan::Interval(rng.random_range(1..=400)),
        },
    }
}

pub fn spec_of_kind(rng: &mut impl Rng, kind: usize) -> WindowSpec {
    loop {
        let s = random_spec(rng);
        let k = match s {
            WindowSpec::TimeWindow { .. } => 0,
            WindowSpec::ImpressionWindow { .. } => 1,
            WindowSpec::ClickWindow { .. } => 2,
            WindowSpec::Relative { .. } => 3,
        };
        if k == kind {
            return s;
        }
    }
}

// ------------------------------------------------------------- oracles

/// What an estimator should report: `(defined, clicks, denominator)`.
pub type Expected = (bool, u64, u64);

fn visible<'a>(events: &'a [Event], dropped: &'a HashSet<u64>, now: Millis) -> impl Iterator<Item = &'a Event> + 'a {
    events.iter().filter(move |e| {
        e.t() <= now
            && match e {
                Event::Click(c) => !dropped.contains(&c.impression_ref),
                Event::Impression(_) => true,
            }
    })
}

/// Re-scan of the whole log for one estimator at `now`, written directly
/// from the estimator definitions.
pub fn oracle(spec: &WindowSpec, events: &[Event], dropped: &HashSet<u64>, a: &AdvertiserId, now: Millis) -> Expected {
    let seen: Vec<&Event> = visible(events, dropped, now).collect();
    let defined = |c: u64, d: u64| (d > 0, c, d);
    match *spec {
        WindowSpec::TimeWindow { window_ms } => {
            let lo = now.saturating_sub(window_ms);
            let inside = |e: &&&Event| e.advertiser() == a && e.t() >= lo && e.t() < now;
            let imps = seen
                .iter()
                .filter(inside)
                .filter(|e| matches!(e, Event::Impression(_)))
                .count() as u64;
            let clicks = seen
                .iter()
                .filter(inside)
                .filter(|e| matches!(e, Event::Click(_)))
                .count() as u64;
            defined(clicks, imps)
        }
        WindowSpec::ImpressionWindow { impressions } => {
            let own: Vec<u64> = seen
                .iter()
                .filter_map(|e| match e {
                    Event::Impression(i) if &i.advertiser == a => Some(i.id),
                    _ => None,
                })
                .collect();
            let last: HashSet<u64> = own.iter().rev().take(impressions as usize).copied().collect();
            let clicks = seen
                .iter()
                .filter(|e| matches!(e, Event::Click(c) if &c.advertiser == a && last.contains(&c.impression_ref)))
                .count() as u64;
            defined(clicks, last.len() as u64)
        }
        WindowSpec::ClickWindow { clicks } => {
            let ordinal: BTreeMap<u64, u64> = seen
                .iter()
                .filter_map(|e| match e {
                    Event::Impression(i) if &i.advertiser == a => Some(i.id),
                    _ => None,
                })
                .zip(1..)
                .collect();
            let own_clicks: Vec<u64> = seen
                .iter()
                .filter_map(|e| match e {
                    Event::Click(c) if &c.advertiser == a => Some(ordinal[&c.impression_ref]),
                    _ => None,
                })
                .collect();
            if (own_clicks.len() as u64) < clicks {
                return (false, own_clicks.len() as u64, 0);
            }
            let last = &own_clicks[own_clicks.len() - clicks as usize..];
            let first = *last.iter().min().unwrap();
            defined(clicks, ordinal.len() as u64 - first + 1)
        }
        WindowSpec::Relative { span } => {
            let lo = match span {
                RelativeSpan::Cumulative => 0,
                RelativeSpan::Interval(ms) => now.saturating_sub(ms),
            };
            let in_span: Vec<&ClickEvent> = seen
                .iter()
                .filter_map(|e| match e {
                    Event::Click(c) if c.t >= lo && c.t < now => Some(c),
                    _ => None,
                })
                .collect();
            let own = in_span.iter().filter(|c| &c.advertiser == a).count() as u64;
            defined(own, in_span.len() as u64)
        }
    }
}

fn same(got: &ctrsim_core::CtrEstimate, want: Expected) -> bool {
    let (defined, clicks, denom) = want;
    if got.defined != defined || got.clicks_in_window != clicks || got.denominator != denom {
        return false;
    }
    !defined || got.value.to_bits() == (clicks as f64 / denom as f64).to_bits()
}

/// Streams random logs through every estimator, querying at increasing
/// `now`, and compares each answer with the re-scan oracle and with the
/// batch form. `triples` is the number of (log, window, now) checks per
/// estimator kind.
pub fn check_oracle_equivalence(seed: u64, triples: usize) -> Result<usize, String> {
    let mut rng = Seed(seed).rng();
    let mut checked = 0;
    const QUERIES: usize = 5;
    for kind in 0..4 {
        let mut done = 0;
        while done < triples {
            let log = {
                let shape = LogShape::random(&mut rng);
                random_log(&mut rng, shape)
            };
            let spec = spec_of_kind(&mut rng, kind);
            let dropped: HashSet<u64> = if rng.random_bool(0.3) {
                let n = log.next_impression_id();
                (0..n).filter(|_| rng.random_bool(0.2)).collect()
            } else {
                HashSet::new()
            };
            let a = adv_n(rng.random_range(0..3));
            let top = log.horizon() + 50;
            let mut nows: Vec<Millis> = (0..QUERIES).map(|_| rng.random_range(0..=top)).collect();
            nows.sort_unstable();

            let view = log.view().without_clicks(&dropped);
            let mut est = spec.streaming(a.clone()).map_err(|e| e.to_string())?;
            let mut pending = view.iter().peekable();
            for &now in &nows {
                while let Some(obs) = pending.next_if(|o| o.t() <= now) {
                    est.observe(&obs);
                }
                let want = oracle(&spec, log.events(), &dropped, &a, now);
                let streamed = est.estimate(now);
                if !same(&streamed, want) {
                    return Err(format!(
                        "{spec:?} for {a} at now={now}: streaming {streamed:?}, oracle {want:?}"
                    ));
                }
                let batch = spec.estimate(&view, &a, now).map_err(|e| e.to_string())?;
                if !same(&batch, want) {
                    return Err(format!(
                        "{spec:?} for {a} at now={now}: batch {batch:?}, oracle {want:?}"
                    ));
                }
                done += 1;
                checked += 1;
            }
        }
    }
    Ok(checked)
}

// ------------------------------------------------------ relative clicks

fn random_tally(rng: &mut impl Rng, n: usize) -> ClickTally {
    ClickTally::from_counts((0..n).map(|i| (adv_n(i), rng.random_range(0..=1_000_000u64))), (0, 1))
}

/// Σ CTR = 1 and the exact fall condition, over `cases` random tallies.
pub fn check_relative_laws(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = Seed(seed).rng();
    for case in 0..cases {
        let n = rng.random_range(1..=10);
        let tally = random_tally(&mut rng, n);
        let ids: Vec<AdvertiserId> = (0..n).map(adv_n).collect();
        if tally.total() == 0 {
            if ids.iter().any(|a| ctr_relative(&tally, a).defined) {
                return Err(format!("case {case}: defined CTR on an empty tally"));
            }
            continue;
        }
        let sum: f64 = ids.iter().map(|a| ctr_relative(&tally, a).value).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("case {case}: CTRs sum to {sum}"));
        }

        // Add a random batch of clicks and see who falls.
        let delta = random_tally(&mut rng, n);
        let later = tally.merge(&delta);
        for a in &ids {
            let (c, t) = (tally.count(a) as u128, tally.total() as u128);
            let (d, dt) = (delta.count(a) as u128, delta.total() as u128);
            // (c + d) / (t + dt) < c / t, cross-multiplied.
            let falls_exact = (c + d) * t < c * (t + dt);
            let predicted = relative_ctr_falls(c as u64, t as u64, d as u64, dt as u64);
            if predicted != falls_exact {
                return Err(format!(
                    "case {case}: fall predicate {predicted} vs exact {falls_exact} for {a}"
                ));
            }
            let before = ctr_relative(&tally, a).value;
            let after = ctr_relative(&later, a).value;
            let consistent = if falls_exact { after <= before } else { after >= before };
            if !consistent {
                return Err(format!(
                    "case {case}: {a} moved {before} -> {after}, exact fall = {falls_exact}"
                ));
            }
        }
    }
    Ok(())
}

// -------------------------------------------------------------- auction

pub fn random_bids(rng: &mut impl Rng, n: usize) -> Vec<Bid> {
    (0..n)
        .map(|i| Bid::new(adv_n(i), rng.random_range(0..=10_000)))
        .collect()
}

/// Second-price prices computed straight from the definition.
pub fn gsp_oracle(bids: &[Bid], cfg: &AuctionConfig) -> Vec<(AdvertiserId, Cents)> {
    let mut field: Vec<&Bid> = bids.iter().filter(|b| b.amount >= cfg.reserve_price).collect();
    field.sort_by(|x, y| y.amount.cmp(&x.amount).then(x.advertiser.cmp(&y.advertiser)));
    let k = (cfg.num_slots as usize).min(field.len());
    (0..k)
        .map(|i| {
            let price = field.get(i + 1).map_or(cfg.reserve_price, |b| b.amount);
            (field[i].advertiser.clone(), price)
        })
        .collect()
}

fn run_auction(bids: &[Bid], cfg: &AuctionConfig, mech: Mechanism) -> Vec<SlotAllocation> {
    let ranked = auction::rank(bids, &BTreeMap::new(), cfg).unwrap();
    auction::allocate(&ranked, cfg, mech)
}

/// Price never exceeds the bid, prices fall with the slot, GSP matches the
/// oracle and GFP revenue dominates.
pub fn check_gsp_properties(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = Seed(seed).rng();
    for case in 0..cases {
        let n = rng.random_range(1..=8);
        let bids = random_bids(&mut rng, n);
        let cfg = AuctionConfig {
            num_slots: rng.random_range(1..=6),
            reserve_price: Cents(rng.random_range(0..=2_000)),
            ranking: Ranking::ByBid,
        };
        let gsp = run_auction(&bids, &cfg, Mechanism::Gsp);
        let gfp = run_auction(&bids, &cfg, Mechanism::Gfp);
        for s in &gsp {
            if s.price_per_click > s.bid {
                return Err(format!(
                    "case {case}: {} pays {} above its bid {}",
                    s.advertiser, s.price_per_click, s.bid
                ));
            }
            if s.price_per_click < cfg.reserve_price {
                return Err(format!("case {case}: {} pays below the reserve", s.advertiser));
            }
        }
        if gsp.windows(2).any(|w| w[1].price_per_click > w[0].price_per_click) {
            return Err(format!("case {case}: GSP prices rise down the page: {gsp:?}"));
        }
        let got: Vec<(AdvertiserId, Cents)> = gsp.iter().map(|s| (s.advertiser.clone(), s.price_per_click)).collect();
        let want = gsp_oracle(&bids, &cfg);
        if got != want {
            return Err(format!("case {case}: GSP {got:?}, oracle {want:?}"));
        }
        if auction::revenue_per_round(&gfp) < auction::revenue_per_round(&gsp) {
            return Err(format!("case {case}: GFP revenue below GSP"));
        }
    }
    Ok(())
}

/// Two bidders with distinct caps at least `reserve + 2 * epsilon`: the
/// alternating best-response process must enter a cycle in which the bids
/// keep changing. Returns the largest number of steps any instance needed.
pub fn check_gfp_non_convergence(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = Seed(seed).rng();
    let mut worst = 0;
    for case in 0..cases {
        let reserve = rng.random_range(0..=500u64);
        let eps = rng.random_range(1..=100u64);
        let floor = reserve + 2 * eps;
        let cap_a = rng.random_range(floor..=floor + 5_000);
        let cap_b = loop {
            let c = rng.random_range(floor..=floor + 5_000);
            if c != cap_a {
                break c;
            }
        };
        let start_a = rng.random_range(0..=cap_a);
        let start_b = rng.random_range(0..=cap_b);
        let (a, b) = (adv("a"), adv("b"));
        let values = BTreeMap::from([(a.clone(), Cents(cap_a)), (b.clone(), Cents(cap_b))]);
        let cfg = AuctionConfig {
            num_slots: 2,
            reserve_price: Cents(reserve),
            ranking: Ranking::ByBid,
        };
        let bound = gfp_step_bound(cap_a.max(cap_b), reserve, eps);
        let run = run_gfp_dynamics(
            &[(a, Cents(start_a)), (b, Cents(start_b))],
            &values,
            Cents(eps),
            &cfg,
            bound,
        )
        .map_err(|e| e.to_string())?;
        let Some(period) = run.period else {
            return Err(format!(
                "case {case}: no cycle within {bound} steps (caps {cap_a}/{cap_b}, reserve {reserve}, eps {eps})"
            ));
        };
        let history = run.bid_history();
        let cycle = &history[history.len() - 1 - period..];
        if cycle.iter().all(|b| b == &cycle[0]) {
            return Err(format!("case {case}: bids settled at {:?}", cycle[0]));
        }
        worst = worst.max(run.steps());
    }
    Ok(worst)
}

/// Step budget for the dynamics: four moves per epsilon of bid range.
pub fn gfp_step_bound(max_cap: u64, reserve: u64, eps: u64) -> usize {
    (4 * (max_cap - reserve).div_ceil(eps)) as usize + 4
}

// ------------------------------------------------------------ detection

/// Organic traffic of the kind used for the detector measurements: one
/// slot, 5 queries per second, base CTR 0.1, so organic clicks on the ad
/// are a Poisson stream with a mean gap of 2 s.
pub fn detection_traffic(seed: u64, horizon_ms: Millis) -> EventLog {
    let target = adv("target");
    let cfg = TrafficConfig {
        queries_per_second: 5.0,
        base_ctr: BTreeMap::from([(target.clone(), 0.1)]),
        position_decay: 0.6,
        horizon_ms,
        seed: Seed(seed),
    };
    let alloc = vec![SlotAllocation {
        slot: 1,
        advertiser: target,
        bid: Cents(100),
        price_per_click: Cents(100),
        rank_score: 100.0,
    }];
    gen_organic(&cfg, &alloc).unwrap()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub seeds: u64,
    pub scripted_injected: u64,
    pub scripted_flagged: u64,
    pub scripted_recall: f64,
    pub organic_clicks: u64,
    pub organic_flagged: u64,
    pub organic_false_flag_rate: f64,
    pub human_injected: u64,
    pub human_flagged: u64,
    pub human_recall: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn labelled(log: &EventLog, source: ClickSource) -> Vec<u64> {
    log.events()
        .iter()
        .filter_map(|e| match e {
            Event::Click(c) if c.source == source => Some(c.impression_ref),
            _ => None,
        })
        .collect()
}

/// Detector measurements over `seeds` seeds with default tolerances.
///
/// * scripted: one zero-jitter plan per seed, 5..=60 clicks at a gap of
///   100..=5000 ms, injected into organic traffic on the same ad;
/// * organic: the false-flag rate over pure organic traffic;
/// * human: one plan per seed with log-normal gaps, median 1..=5 s and
///   sigma in [0.5, 1.0].
pub fn measure_detection(seeds: u64) -> DetectionRates {
    let det = DetectorConfig::default();
    let horizon = 600_000;
    let mut r = DetectionRates {
        seeds,
        ..Default::default()
    };
    for seed in 0..seeds {
        let organic = detection_traffic(seed, horizon);
        let flags = detect_scripted(&organic.view(), det.min_run, det.tolerance_ms).unwrap();
        r.organic_clicks += labelled(&organic, ClickSource::Organic).len() as u64;
        r.organic_flagged += flagged_ids(&flags).len() as u64;

        let mut rng: ChaCha8Rng = Seed(seed).stream(100);
        let interval = rng.random_range(100..=5_000);
        let count = rng.random_range(5..=60u64);
        let start = rng.random_range(0..=horizon - count * interval - 1);
        let scripted = FraudPlan {
            target: adv("target"),
            start_ms: start,
            count,
            kind: FraudKind::Scripted { interval_ms: interval },
        };
        let log = inject_fraud(&organic, &scripted, Seed(seed)).unwrap();
        let flagged = flagged_ids(&detect_scripted(&log.view(), det.min_run, det.tolerance_ms).unwrap());
        let injected = labelled(&log, ClickSource::ScriptedFraud);
        r.scripted_injected += injected.len() as u64;
        r.scripted_flagged += injected.iter().filter(|id| flagged.contains(id)).count() as u64;

        let median_ms: f64 = rng.random_range(1_000.0..=5_000.0);
        let human = FraudPlan {
            target: adv("target"),
            start_ms: rng.random_range(0..=horizon / 4),
            count: 50,
            kind: FraudKind::Human {
                dwell: LogNormalGaps {
                    mu: median_ms.ln(),
                    sigma: rng.random_range(0.5..=1.0),
                },
            },
        };
        let log = inject_fraud(&organic, &human, Seed(seed)).unwrap();
        let flagged = flagged_ids(&detect_scripted(&log.view(), det.min_run, det.tolerance_ms).unwrap());
        let injected = labelled(&log, ClickSource::HumanFraud);
        r.human_injected += injected.len() as u64;
        r.human_flagged += injected.iter().filter(|id| flagged.contains(id)).count() as u64;
    }
    r.scripted_recall = ratio(r.scripted_flagged, r.scripted_injected);
    r.organic_false_flag_rate = ratio(r.organic_flagged, r.organic_clicks);
    r.human_recall = ratio(r.human_flagged, r.human_injected);
    r
}

pub fn check_detection_thresholds(r: &DetectionRates) -> Result<(), String> {
    if r.scripted_flagged != r.scripted_injected {
        return Err(format!(
            "scripted recall {:.4} ({} of {})",
            r.scripted_recall, r.scripted_flagged, r.scripted_injected
        ));
    }
    if r.organic_false_flag_rate >= 0.01 {
        return Err(format!("organic false-flag rate {:.4}", r.organic_false_flag_rate));
    }
    if r.human_recall >= 0.20 {
        return Err(format!("human recall {:.4}", r.human_recall));
    }
    Ok(())
}

pub const DETECTION_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/detection_rates.json");

pub fn recorded_detection_rates() -> Result<DetectionRates, String> {
    let text = std::fs::read_to_string(DETECTION_FIXTURE).map_err(|e| format!("{DETECTION_FIXTURE}: {e}"))?;
    serde_json::from_str(&text).map_err(|e| format!("{DETECTION_FIXTURE}: {e}"))
}
