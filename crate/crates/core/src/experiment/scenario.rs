//! Tick-by-tick scenario runner.
//!
//! Each tick covers `[k * tick_ms, (k + 1) * tick_ms)`:
//!
//! 1. rank the bids, using each advertiser's first-estimator CTR from the
//!    end of the previous tick (`default_ctr` while undefined);
//! 2. allocate slots and price them;
//! 3. generate organic traffic against that allocation and add the fraud
//!    clicks that fall in the tick;
//! 4. append everything to the log and update the estimators;
//! 5. report the focus advertiser's row at `now = (k + 1) * tick_ms - 1`,
//!    the last instant of the tick.
//!
//! Row counts (`impressions`, `clicks`, `total_clicks`) are cumulative from
//! time zero; `total_clicks` covers the whole cohort.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use super::config::{DiscardMode, ScenarioConfig};
use super::series::{CtrColumn, Series, SeriesRow};
use crate::auction::{self, AuctionError, Bid, Cents, SlotAllocation};
use crate::estimators::{CtrEstimate, CtrEstimator, EstimatorError, RelativeSpan, WindowSpec};
use crate::events::{AdvertiserId, Event, EventError, EventLog, LogView, Millis, Observation};
use crate::traffic::{self, fraud_pair, FraudFlag, OrganicGenerator, TrafficError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Clicks billed to one advertiser and what they cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Billing {
    pub clicks: u64,
    pub spend: Cents,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub series: Series,
    pub log: EventLog,
    /// Detector output over the whole log.
    pub flags: Vec<FraudFlag>,
    /// Allocation in force during each tick.
    pub allocations: Vec<Vec<SlotAllocation>>,
    pub billing: BTreeMap<AdvertiserId, Billing>,
}

/// One streaming estimator per (advertiser, spec).
pub struct EstimatorBank {
    advertisers: Vec<AdvertiserId>,
    specs: Vec<WindowSpec>,
    estimators: Vec<Vec<Box<dyn CtrEstimator>>>,
}

impl EstimatorBank {
    pub fn new(advertisers: &[AdvertiserId], specs: &[WindowSpec]) -> Result<Self, EstimatorError> {
        let estimators = advertisers
            .iter()
            .map(|a| {
                specs
                    .iter()
                    .map(|s| s.streaming(a.clone()))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EstimatorBank {
            advertisers: advertisers.to_vec(),
            specs: specs.to_vec(),
            estimators,
        })
    }

    pub fn observe(&mut self, obs: &Observation<'_>) {
        for row in &mut self.estimators {
            for est in row {
                est.observe(obs);
            }
        }
    }

    /// Estimates for every advertiser, aligned with the spec order.
    pub fn estimate(&mut self, now: Millis) -> BTreeMap<AdvertiserId, Vec<CtrEstimate>> {
        self.advertisers
            .iter()
            .zip(&mut self.estimators)
            .map(|(a, row)| (a.clone(), row.iter_mut().map(|e| e.estimate(now)).collect()))
            .collect()
    }

    pub fn specs(&self) -> &[WindowSpec] {
        &self.specs
    }
}

fn batch_estimates(
    view: &LogView<'_>,
    advertisers: &[AdvertiserId],
    specs: &[WindowSpec],
    now: Millis,
) -> Result<BTreeMap<AdvertiserId, Vec<CtrEstimate>>, EstimatorError> {
    advertisers
        .iter()
        .map(|a| {
            let row = specs
                .iter()
                .map(|s| s.estimate(view, a, now))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((a.clone(), row))
        })
        .collect()
}

#[derive(Default)]
struct RunningCounts {
    focus_impressions: u64,
    focus_clicks: u64,
    total_clicks: u64,
}

impl RunningCounts {
    fn observe(&mut self, obs: &Observation<'_>, focus: &AdvertiserId) {
        match obs {
            Observation::Impression(i) if &i.advertiser == focus => self.focus_impressions += 1,
            Observation::Click(c) => {
                self.total_clicks += 1;
                if c.advertiser == focus {
                    self.focus_clicks += 1;
                }
            }
            _ => {}
        }
    }

    fn scan(view: &LogView<'_>, focus: &AdvertiserId) -> Self {
        let mut counts = RunningCounts::default();
        for obs in view.iter() {
            counts.observe(&obs, focus);
        }
        counts
    }
}

fn columns_for(specs: &[WindowSpec]) -> Vec<CtrColumn> {
    specs.iter().map(CtrColumn::for_spec).collect()
}

fn row(time_index: u64, counts: &RunningCounts, estimates: &[CtrEstimate]) -> SeriesRow {
    SeriesRow {
        time_index,
        impressions: counts.focus_impressions,
        clicks: counts.focus_clicks,
        total_clicks: counts.total_clicks,
        ctr: estimates.iter().map(|e| e.value()).collect(),
    }
}

/// Runs the scenario. The result is a pure function of `cfg`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    let traffic_cfg = cfg.traffic();
    let mut generator = OrganicGenerator::new(&traffic_cfg)?;
    let advertisers: Vec<AdvertiserId> = cfg.advertisers.iter().map(|a| a.id.clone()).collect();
    let bids: Vec<Bid> = cfg
        .advertisers
        .iter()
        .map(|a| Bid {
            advertiser: a.id.clone(),
            amount: a.bid,
        })
        .collect();

    // Fraud click times for the whole run, each plan on its own stream.
    let mut fraud_times: Vec<(Millis, usize)> = Vec::new();
    for (i, plan) in cfg.fraud.iter().enumerate() {
        let times = plan.click_times(&mut cfg.seed.stream(i as u64))?;
        fraud_times.extend(times.into_iter().map(|t| (t, i)));
    }
    fraud_times.sort_unstable();
    if let Some(&(t, _)) = fraud_times.iter().find(|(t, _)| *t >= cfg.horizon_ms()) {
        return Err(TrafficError::HorizonExceeded {
            t,
            horizon: cfg.horizon_ms(),
        }
        .into());
    }
    let mut next_fraud = 0;

    let mut log = EventLog::new(cfg.horizon_ms());
    let mut bank = EstimatorBank::new(&advertisers, &cfg.estimators)?;
    let mut counts = RunningCounts::default();
    let mut series = Series::new(columns_for(&cfg.estimators));
    let mut allocations = Vec::with_capacity(cfg.ticks as usize);
    let mut last_slot: HashMap<AdvertiserId, u32> = HashMap::new();
    let mut ranking_ctr: BTreeMap<AdvertiserId, f64> =
        advertisers.iter().map(|a| (a.clone(), cfg.default_ctr)).collect();
    // Price per click in force when each click happened, keyed by impression id.
    let mut click_price: HashMap<u64, (AdvertiserId, Cents)> = HashMap::new();

    for k in 0..cfg.ticks {
        let from = k * cfg.tick_ms;
        let to = from + cfg.tick_ms;
        let now = to - 1;

        let ranked = auction::rank(&bids, &ranking_ctr, &cfg.auction)?;
        let allocation = auction::allocate(&ranked, &cfg.auction, cfg.mechanism);
        for a in &allocation {
            last_slot.insert(a.advertiser.clone(), a.slot);
        }
        let price: HashMap<&AdvertiserId, Cents> =
            allocation.iter().map(|a| (&a.advertiser, a.price_per_click)).collect();

        let mut events = if allocation.is_empty() {
            Vec::new()
        } else {
            generator.generate(&traffic_cfg, &allocation, from, to)?
        };
        while next_fraud < fraud_times.len() && fraud_times[next_fraud].0 < to {
            let (t, plan_idx) = fraud_times[next_fraud];
            let plan = &cfg.fraud[plan_idx];
            let slot = last_slot.get(&plan.target).copied().unwrap_or(1);
            let (query_id, impression_id) = generator.allocate_ids();
            events.extend(fraud_pair(
                &plan.target,
                t,
                slot,
                query_id,
                impression_id,
                plan.source(),
            ));
            next_fraud += 1;
        }
        events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));

        for e in events {
            if let Event::Click(c) = &e {
                // Ads that are not on the page are never billed.
                let p = price.get(&c.advertiser).copied().unwrap_or_default();
                click_price.insert(c.impression_ref, (c.advertiser.clone(), p));
            }
            log.append(e)?;
        }

        let tick_events = {
            let all = log.events();
            let start = all.partition_point(|e| e.t() < from);
            &all[start..]
        };
        let estimates = match cfg.discard {
            DiscardMode::Count => {
                let view = LogView::new(tick_events);
                for obs in view.iter() {
                    bank.observe(&obs);
                    counts.observe(&obs, &cfg.focus);
                }
                bank.estimate(now)
            }
            DiscardMode::Drop => {
                let view = log.view();
                let flags = traffic::detect_scripted(&view, cfg.detector.min_run, cfg.detector.tolerance_ms)?;
                let dropped = traffic::flagged_ids(&flags);
                let filtered = view.without_clicks(&dropped);
                counts = RunningCounts::scan(&filtered, &cfg.focus);
                batch_estimates(&filtered, &advertisers, &cfg.estimators, now)?
            }
        };

        ranking_ctr = estimates
            .iter()
            .map(|(a, ests)| {
                let ctr = ests.first().and_then(|e| e.value()).unwrap_or(cfg.default_ctr);
                (a.clone(), ctr)
            })
            .collect();
        series.rows.push(row(k + 1, &counts, &estimates[&cfg.focus]));
        allocations.push(allocation);
    }

    let flags = traffic::detect_scripted(&log.view(), cfg.detector.min_run, cfg.detector.tolerance_ms)?;
    let dropped: HashSet<u64> = match cfg.discard {
        DiscardMode::Count => HashSet::new(),
        DiscardMode::Drop => traffic::flagged_ids(&flags),
    };
    let mut billing: BTreeMap<AdvertiserId, Billing> =
        advertisers.iter().map(|a| (a.clone(), Billing::default())).collect();
    for (id, (adv, p)) in &click_price {
        if dropped.contains(id) || p.0 == 0 {
            continue;
        }
        let b = billing.entry(adv.clone()).or_default();
        b.clicks += 1;
        b.spend = b.spend + *p;
    }

    Ok(ScenarioRun {
        series,
        log,
        flags,
        allocations,
        billing,
    })
}

/// Re-estimates a recorded log: one row per `tick_ms` up to the horizon,
/// with the same row layout as [`run_scenario`].
pub fn series_from_log(
    log: &EventLog,
    focus: &AdvertiserId,
    specs: &[WindowSpec],
    tick_ms: Millis,
    dropped: Option<&HashSet<u64>>,
) -> Result<Series, EstimatorError> {
    if tick_ms == 0 {
        return Err(EstimatorError::EmptyWindow);
    }
    let mut bank = EstimatorBank::new(std::slice::from_ref(focus), specs)?;
    let mut counts = RunningCounts::default();
    let mut series = Series::new(columns_for(specs));
    let view = match dropped {
        Some(d) => log.view().without_clicks(d),
        None => log.view(),
    };
    let horizon = log.horizon().max(log.events().last().map_or(0, |e| e.t() + 1));
    let ticks = horizon.div_ceil(tick_ms);
    let mut pending = view.iter().peekable();
    for k in 0..ticks {
        let now = (k + 1) * tick_ms - 1;
        while let Some(obs) = pending.next_if(|o| o.t() <= now) {
            bank.observe(&obs);
            counts.observe(&obs, focus);
        }
        let estimates = bank.estimate(now);
        series.rows.push(row(k + 1, &counts, &estimates[focus]));
    }
    Ok(series)
}

/// Default spec for each estimator kind, scaled to the reporting tick.
pub fn default_specs(tick_ms: Millis) -> [WindowSpec; 4] {
    [
        WindowSpec::TimeWindow { window_ms: 5 * tick_ms },
        WindowSpec::ImpressionWindow { impressions: 100 },
        WindowSpec::ClickWindow { clicks: 10 },
        WindowSpec::Relative {
            span: RelativeSpan::Cumulative,
        },
    ]
}

/// The configured estimators, completed with defaults so that all four
/// kinds are present, in column order.
pub fn all_four(cfg: &ScenarioConfig) -> Vec<WindowSpec> {
    let mut specs: Vec<WindowSpec> = default_specs(cfg.tick_ms)
        .into_iter()
        .map(|d| {
            cfg.estimators
                .iter()
                .copied()
                .find(|s| CtrColumn::for_spec(s) == CtrColumn::for_spec(&d))
                .unwrap_or(d)
        })
        .collect();
    specs.sort_by_key(CtrColumn::for_spec);
    specs
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub counted: ScenarioRun,
    pub dropped: ScenarioRun,
}

/// Runs the scenario with all four estimators, once keeping flagged clicks
/// and once discarding them.
pub fn compare_scenario(cfg: &ScenarioConfig) -> Result<Comparison, ScenarioError> {
    let mut base = cfg.clone();
    base.estimators = all_four(cfg);
    let counted = run_scenario(&ScenarioConfig {
        discard: DiscardMode::Count,
        ..base.clone()
    })?;
    let dropped = run_scenario(&ScenarioConfig {
        discard: DiscardMode::Drop,
        ..base
    })?;
    Ok(Comparison { counted, dropped })
}
