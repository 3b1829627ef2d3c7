//! Synthetic traffic: organic impressions and clicks, click-fraud injection,
//! and a detector for fixed-interval scripted clicking.
//!
//! Queries arrive as a Poisson process. Each query shows every allocated ad
//! once, and each impression is clicked independently with probability
//! `base_ctr(adv) * position_decay^(slot - 1)`. Clicks carry the timestamp of
//! their impression.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::SlotAllocation;
use crate::events::{
    AdvertiserId, ClickEvent, ClickSource, Event, EventError, EventLog, ImpressionEvent, LogView, Millis, Observation,
};
use crate::rng::Seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("allocation is empty")]
    EmptyAllocation,
    #[error("no base CTR configured for advertiser {0}")]
    MissingBaseCtr(AdvertiserId),
    #[error("base CTR for {0} must lie in [0, 1]")]
    InvalidProbability(AdvertiserId),
    #[error("position decay must lie in (0, 1]")]
    InvalidDecay,
    #[error("query rate must be finite and non-negative")]
    InvalidRate,
    #[error("fraud plan must inject at least one click")]
    EmptyPlan,
    #[error("scripted interval must be at least 1 ms")]
    ZeroInterval,
    #[error("dwell distribution parameters are invalid")]
    InvalidDwell,
    #[error("plan kind does not match the injector")]
    WrongPlanKind,
    #[error("injected click at t={t} ms passes the log horizon {horizon} ms")]
    HorizonExceeded { t: Millis, horizon: Millis },
    #[error("min_run must be at least 3")]
    MinRunTooSmall,
    #[error(transparent)]
    Event(#[from] EventError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    /// Mean query arrivals per simulated second.
    pub queries_per_second: f64,
    pub base_ctr: BTreeMap<AdvertiserId, f64>,
    pub position_decay: f64,
    pub horizon_ms: Millis,
    pub seed: Seed,
}

pub const DEFAULT_POSITION_DECAY: f64 = 0.6;

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !self.queries_per_second.is_finite() || self.queries_per_second < 0.0 {
            return Err(TrafficError::InvalidRate);
        }
        if !(self.position_decay > 0.0 && self.position_decay <= 1.0) {
            return Err(TrafficError::InvalidDecay);
        }
        for (adv, p) in &self.base_ctr {
            if !(0.0..=1.0).contains(p) {
                return Err(TrafficError::InvalidProbability(adv.clone()));
            }
        }
        Ok(())
    }

    pub fn click_probability(&self, adv: &AdvertiserId, slot: u32) -> Result<f64, TrafficError> {
        let base = *self
            .base_ctr
            .get(adv)
            .ok_or_else(|| TrafficError::MissingBaseCtr(adv.clone()))?;
        Ok(base * self.position_decay.powi(slot.saturating_sub(1) as i32))
    }
}

/// Poisson query stream that can be driven window by window. Successive
/// calls to [`OrganicGenerator::generate`] must cover contiguous windows.
pub struct OrganicGenerator {
    rng: ChaCha8Rng,
    arrivals: Option<Exp<f64>>,
    next_arrival: f64,
    next_query: u64,
    next_impression: u64,
}

impl OrganicGenerator {
    pub fn new(cfg: &TrafficConfig) -> Result<Self, TrafficError> {
        cfg.validate()?;
        let mut rng = cfg.seed.rng();
        let per_ms = cfg.queries_per_second / 1000.0;
        let arrivals = if per_ms > 0.0 {
            Some(Exp::new(per_ms).map_err(|_| TrafficError::InvalidRate)?)
        } else {
            None
        };
        let next_arrival = match &arrivals {
            Some(d) => d.sample(&mut rng),
            None => f64::INFINITY,
        };
        Ok(OrganicGenerator {
            rng,
            arrivals,
            next_arrival,
            next_query: 0,
            next_impression: 0,
        })
    }

    /// Fresh (query id, impression id) pair from the shared id space.
    pub fn allocate_ids(&mut self) -> (u64, u64) {
        let ids = (self.next_query, self.next_impression);
        self.next_query += 1;
        self.next_impression += 1;
        ids
    }

    /// Events for all queries arriving in `[from, to)`, in arrival order.
    pub fn generate(
        &mut self,
        cfg: &TrafficConfig,
        allocation: &[SlotAllocation],
        from: Millis,
        to: Millis,
    ) -> Result<Vec<Event>, TrafficError> {
        let probs = allocation
            .iter()
            .map(|a| cfg.click_probability(&a.advertiser, a.slot))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::new();
        let Some(arrivals) = self.arrivals else {
            return Ok(out);
        };
        while self.next_arrival < to as f64 {
            let t = self.next_arrival.floor() as Millis;
            self.next_arrival += arrivals.sample(&mut self.rng);
            if t < from {
                continue;
            }
            let query_id = self.next_query;
            self.next_query += 1;
            for (alloc, p) in allocation.iter().zip(&probs) {
                let id = self.next_impression;
                self.next_impression += 1;
                out.push(Event::Impression(ImpressionEvent {
                    id,
                    t,
                    advertiser: alloc.advertiser.clone(),
                    slot: alloc.slot,
                    query_id,
                }));
                if self.rng.random::<f64>() < *p {
                    out.push(Event::Click(ClickEvent {
                        t,
                        advertiser: alloc.advertiser.clone(),
                        slot: alloc.slot,
                        query_id,
                        impression_ref: id,
                        source: ClickSource::Organic,
                    }));
                }
            }
        }
        Ok(out)
    }
}

/// Organic traffic for a fixed allocation over `[0, horizon_ms)`.
pub fn gen_organic(cfg: &TrafficConfig, allocation: &[SlotAllocation]) -> Result<EventLog, TrafficError> {
    if allocation.is_empty() {
        return Err(TrafficError::EmptyAllocation);
    }
    let mut gen = OrganicGenerator::new(cfg)?;
    let events = gen.generate(cfg, allocation, 0, cfg.horizon_ms)?;
    Ok(EventLog::from_events(events, cfg.horizon_ms)?)
}

/// Log-normal inter-click gaps: `ln(gap_ms) ~ N(mu, sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalGaps {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalGaps {
    pub fn mean_ms(&self) -> f64 {
        (self.mu + self.sigma * self.sigma / 2.0).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FraudKind {
    /// Clicks exactly `interval_ms` apart.
    Scripted { interval_ms: Millis },
    /// Clicks separated by human-like random dwell times.
    Human { dwell: LogNormalGaps },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FraudPlan {
    pub target: AdvertiserId,
    pub start_ms: Millis,
    pub count: u64,
    #[serde(flatten)]
    pub kind: FraudKind,
}

impl FraudPlan {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.count == 0 {
            return Err(TrafficError::EmptyPlan);
        }
        match self.kind {
            FraudKind::Scripted { interval_ms: 0 } => Err(TrafficError::ZeroInterval),
            FraudKind::Human { dwell } if !(dwell.mu.is_finite() && dwell.sigma.is_finite() && dwell.sigma >= 0.0) => {
                Err(TrafficError::InvalidDwell)
            }
            _ => Ok(()),
        }
    }

    pub fn source(&self) -> ClickSource {
        match self.kind {
            FraudKind::Scripted { .. } => ClickSource::ScriptedFraud,
            FraudKind::Human { .. } => ClickSource::HumanFraud,
        }
    }

    /// Injection times, starting at `start_ms`. Scripted plans ignore `rng`.
    pub fn click_times(&self, rng: &mut impl Rng) -> Result<Vec<Millis>, TrafficError> {
        self.validate()?;
        let mut times = Vec::with_capacity(self.count as usize);
        match self.kind {
            FraudKind::Scripted { interval_ms } => {
                for i in 0..self.count {
                    times.push(self.start_ms + i * interval_ms);
                }
            }
            FraudKind::Human { dwell } => {
                let gaps = LogNormal::new(dwell.mu, dwell.sigma).map_err(|_| TrafficError::InvalidDwell)?;
                let mut t = self.start_ms;
                times.push(t);
                for _ in 1..self.count {
                    let gap = gaps.sample(rng).round().max(1.0) as Millis;
                    t += gap;
                    times.push(t);
                }
            }
        }
        Ok(times)
    }
}

/// Impression + click pair produced by a fraudster at `t`: the clicker loads
/// the results page, then clicks the target ad.
pub fn fraud_pair(
    target: &AdvertiserId,
    t: Millis,
    slot: u32,
    query_id: u64,
    impression_id: u64,
    source: ClickSource,
) -> [Event; 2] {
    [
        Event::Impression(ImpressionEvent {
            id: impression_id,
            t,
            advertiser: target.clone(),
            slot,
            query_id,
        }),
        Event::Click(ClickEvent {
            t,
            advertiser: target.clone(),
            slot,
            query_id,
            impression_ref: impression_id,
            source,
        }),
    ]
}

fn inject_at(log: &EventLog, plan: &FraudPlan, times: &[Millis]) -> Result<EventLog, TrafficError> {
    if let Some(&t) = times.iter().find(|&&t| t >= log.horizon()) {
        return Err(TrafficError::HorizonExceeded {
            t,
            horizon: log.horizon(),
        });
    }
    // Slot the target was last shown in, by time.
    let target_slots: Vec<(Millis, u32)> = log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Impression(i) if i.advertiser == plan.target => Some((i.t, i.slot)),
            _ => None,
        })
        .collect();
    let (first_imp, first_query) = (log.next_impression_id(), log.next_query_id());
    let mut events = log.events().to_vec();
    for (k, &t) in (0u64..).zip(times) {
        let idx = target_slots.partition_point(|(ts, _)| *ts <= t);
        let slot = if idx == 0 { 1 } else { target_slots[idx - 1].1 };
        events.extend(fraud_pair(
            &plan.target,
            t,
            slot,
            first_query + k,
            first_imp + k,
            plan.source(),
        ));
    }
    Ok(EventLog::from_events(events, log.horizon())?)
}

pub fn inject_scripted_fraud(log: &EventLog, plan: &FraudPlan) -> Result<EventLog, TrafficError> {
    if !matches!(plan.kind, FraudKind::Scripted { .. }) {
        return Err(TrafficError::WrongPlanKind);
    }
    // The seed is irrelevant for fixed-interval plans.
    let times = plan.click_times(&mut Seed(0).rng())?;
    inject_at(log, plan, &times)
}

pub fn inject_human_fraud(log: &EventLog, plan: &FraudPlan, seed: Seed) -> Result<EventLog, TrafficError> {
    if !matches!(plan.kind, FraudKind::Human { .. }) {
        return Err(TrafficError::WrongPlanKind);
    }
    let times = plan.click_times(&mut seed.rng())?;
    inject_at(log, plan, &times)
}

pub fn inject_fraud(log: &EventLog, plan: &FraudPlan, seed: Seed) -> Result<EventLog, TrafficError> {
    match plan.kind {
        FraudKind::Scripted { .. } => inject_scripted_fraud(log, plan),
        FraudKind::Human { .. } => inject_human_fraud(log, plan, seed),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    FixedIntervalRun,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FraudFlag {
    pub advertiser: AdvertiserId,
    /// First and last flagged click times, inclusive.
    pub span: (Millis, Millis),
    /// Impression ids of the flagged clicks, in time order.
    pub flagged_click_ids: Vec<u64>,
    pub reason: FlagReason,
    pub median_gap_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub min_run: usize,
    pub tolerance_ms: Millis,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_run: 5,
            tolerance_ms: 10,
        }
    }
}

/// How many following clicks are tried as the second member of a run.
/// Organic clicks on the same ad can interleave with a scripted stream.
const PAIR_LOOKAHEAD: usize = 8;

/// Flags runs of at least `min_run` clicks on one advertiser whose
/// consecutive gaps all lie within `±tolerance_ms` of the run's median gap.
///
/// A run is a subsequence of the advertiser's clicks, so organic clicks
/// interleaved with a scripted stream do not break it. The median gap must
/// exceed the tolerance; otherwise any burst of near-simultaneous clicks
/// would qualify. Runs are grown greedily from the earliest unflagged click.
/// A start is skipped when the run grown from its second member is longer,
/// so a stray click in front of a stream cannot claim every other click.
pub fn detect_scripted(
    view: &LogView<'_>,
    min_run: usize,
    tolerance_ms: Millis,
) -> Result<Vec<FraudFlag>, TrafficError> {
    if min_run < 3 {
        return Err(TrafficError::MinRunTooSmall);
    }
    let mut per_adv: BTreeMap<&AdvertiserId, Vec<(Millis, u64)>> = BTreeMap::new();
    for obs in view.iter() {
        if let Observation::Click(c) = obs {
            per_adv.entry(c.advertiser).or_default().push((c.t, c.impression_ref));
        }
    }
    let mut flags = Vec::new();
    for (adv, clicks) in per_adv {
        let times: Vec<Millis> = clicks.iter().map(|c| c.0).collect();
        let mut flagged = vec![false; times.len()];
        for i in 0..times.len() {
            if flagged[i] {
                continue;
            }
            let Some(run) = best_run_from(&times, &flagged, i, tolerance_ms) else {
                continue;
            };
            if run.members.len() < min_run {
                continue;
            }
            if let Some(from_second) = best_run_from(&times, &flagged, run.members[1], tolerance_ms) {
                if from_second.members.len() > run.members.len() {
                    continue;
                }
            }
            for &k in &run.members {
                flagged[k] = true;
            }
            flags.push(FraudFlag {
                advertiser: adv.clone(),
                span: (times[run.members[0]], times[*run.members.last().unwrap()]),
                flagged_click_ids: run.members.iter().map(|&k| clicks[k].1).collect(),
                reason: FlagReason::FixedIntervalRun,
                median_gap_ms: run.median_gap,
            });
        }
    }
    Ok(flags)
}

/// Impression ids of every flagged click.
pub fn flagged_ids(flags: &[FraudFlag]) -> HashSet<u64> {
    flags.iter().flat_map(|f| f.flagged_click_ids.iter().copied()).collect()
}

struct Run {
    members: Vec<usize>,
    median_gap: f64,
}

fn unflagged_after(flagged: &[bool], i: usize) -> impl Iterator<Item = usize> + '_ {
    (i + 1..flagged.len()).filter(move |&k| !flagged[k])
}

fn best_run_from(times: &[Millis], flagged: &[bool], i: usize, tol: Millis) -> Option<Run> {
    let mut best: Option<Run> = None;
    for j in unflagged_after(flagged, i).take(PAIR_LOOKAHEAD) {
        if times[j] - times[i] <= tol {
            continue;
        }
        let run = grow_run(times, flagged, i, j, tol);
        if best.as_ref().is_none_or(|b| run.members.len() > b.members.len()) {
            best = Some(run);
        }
    }
    best
}

fn median(sorted: &[Millis]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

fn grow_run(times: &[Millis], flagged: &[bool], i: usize, j: usize, tol: Millis) -> Run {
    let tol_f = tol as f64;
    let mut members = vec![i, j];
    let mut gaps = vec![times[j] - times[i]];
    loop {
        let med = median(&gaps);
        let last = *members.last().unwrap();
        let expected = times[last] as f64 + med;
        let lo = times.partition_point(|&t| (t as f64) < expected - tol_f);
        let hi = times.partition_point(|&t| (t as f64) <= expected + tol_f);
        let candidate = (lo.max(last + 1)..hi).filter(|&k| !flagged[k]).min_by(|&a, &b| {
            let da = (times[a] as f64 - expected).abs();
            let db = (times[b] as f64 - expected).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let Some(k) = candidate else {
            break;
        };
        let gap = times[k] - times[last];
        let pos = gaps.partition_point(|&g| g < gap);
        gaps.insert(pos, gap);
        let med = median(&gaps);
        let lo_gap = gaps[0] as f64;
        let hi_gap = gaps[gaps.len() - 1] as f64;
        if med <= tol_f || med - lo_gap > tol_f || hi_gap - med > tol_f {
            gaps.remove(pos);
            break;
        }
        members.push(k);
    }
    Run {
        median_gap: median(&gaps),
        members,
    }
}
