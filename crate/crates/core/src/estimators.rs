//! Click-through-rate estimators.
//!
//! Three windowed baselines estimate clicks over impressions:
//!
//! * [`TimeWindowCtr`]: clicks and impressions within the last T ms,
//!   over the half-open window `[now - T, now)`;
//! * [`ImpressionWindowCtr`]: clicks landing on the last Y impressions;
//! * [`ClickWindowCtr`]: X divided by the impressions served since the
//!   X-th most recent click's impression.
//!
//! [`RelativeCtr`] instead divides an advertiser's clicks by the clicks of
//! the whole cohort bidding on the keyword, cumulatively or over a sliding
//! interval. A burst of clicks on one advertiser inflates the cohort total
//! as well, so the relative estimate moves far less than the windowed ones.
//!
//! Every estimator is a streaming fold: feed it the label-free observations
//! of a log in order, then query [`CtrEstimator::estimate`] at `now` once all
//! observations with `t <= now` have been fed. Queries must use non-decreasing
//! `now`. The free functions (`ctr_time_window`, ...) run a fresh fold over a
//! view and are the batch form of the same computation.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{AdvertiserId, ClickTally, LogView, Millis, Observation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimatorError {
    #[error("window size must be at least 1")]
    EmptyWindow,
    #[error("clicks and impressions are both zero")]
    DivisionByZero,
}

/// Span of a relative-clicks tally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeSpan {
    /// Everything since time zero.
    Cumulative,
    /// The trailing `[now - ms, now)` interval.
    Interval(Millis),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    TimeWindow { window_ms: Millis },
    ImpressionWindow { impressions: u64 },
    ClickWindow { clicks: u64 },
    Relative { span: RelativeSpan },
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let size = match *self {
            WindowSpec::TimeWindow { window_ms } => window_ms,
            WindowSpec::ImpressionWindow { impressions } => impressions,
            WindowSpec::ClickWindow { clicks } => clicks,
            WindowSpec::Relative {
                span: RelativeSpan::Interval(ms),
            } => ms,
            WindowSpec::Relative {
                span: RelativeSpan::Cumulative,
            } => 1,
        };
        if size == 0 {
            Err(EstimatorError::EmptyWindow)
        } else {
            Ok(())
        }
    }

    /// Builds the streaming estimator for `advertiser`.
    pub fn streaming(&self, advertiser: AdvertiserId) -> Result<Box<dyn CtrEstimator>, EstimatorError> {
        self.validate()?;
        Ok(match *self {
            WindowSpec::TimeWindow { window_ms } => Box::new(TimeWindowCtr::new(advertiser, window_ms)?),
            WindowSpec::ImpressionWindow { impressions } => {
                Box::new(ImpressionWindowCtr::new(advertiser, impressions)?)
            }
            WindowSpec::ClickWindow { clicks } => Box::new(ClickWindowCtr::new(advertiser, clicks)?),
            WindowSpec::Relative { span } => Box::new(RelativeCtr::new(advertiser, span)?),
        })
    }

    /// Batch evaluation over `view` at `now`.
    pub fn estimate(
        &self,
        view: &LogView<'_>,
        advertiser: &AdvertiserId,
        now: Millis,
    ) -> Result<CtrEstimate, EstimatorError> {
        let mut est = self.streaming(advertiser.clone())?;
        Ok(run_fold(est.as_mut(), view, now))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtrEstimate {
    pub value: f64,
    /// Numerator: clicks counted by the window.
    pub clicks_in_window: u64,
    /// Impressions for the windowed estimators, cohort clicks for the
    /// relative one.
    pub denominator: u64,
    /// False during cold start (zero denominator).
    pub defined: bool,
}

impl CtrEstimate {
    pub fn from_counts(clicks: u64, denominator: u64) -> Self {
        if denominator == 0 {
            CtrEstimate {
                value: 0.0,
                clicks_in_window: clicks,
                denominator,
                defined: false,
            }
        } else {
            CtrEstimate {
                value: clicks as f64 / denominator as f64,
                clicks_in_window: clicks,
                denominator,
                defined: true,
            }
        }
    }

    pub fn undefined(clicks: u64, denominator: u64) -> Self {
        CtrEstimate {
            value: 0.0,
            clicks_in_window: clicks,
            denominator,
            defined: false,
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

pub trait CtrEstimator {
    fn observe(&mut self, obs: &Observation<'_>);
    fn estimate(&mut self, now: Millis) -> CtrEstimate;
}

fn run_fold(est: &mut dyn CtrEstimator, view: &LogView<'_>, now: Millis) -> CtrEstimate {
    for obs in view.up_to(now).iter() {
        est.observe(&obs);
    }
    est.estimate(now)
}

/// Clicks and impressions of one advertiser over `[now - T, now)`.
#[derive(Clone, Debug)]
pub struct TimeWindowCtr {
    advertiser: AdvertiserId,
    window_ms: Millis,
    // (t, is_click), oldest first
    events: VecDeque<(Millis, bool)>,
    clicks: u64,
}

impl TimeWindowCtr {
    pub fn new(advertiser: AdvertiserId, window_ms: Millis) -> Result<Self, EstimatorError> {
        if window_ms == 0 {
            return Err(EstimatorError::EmptyWindow);
        }
        Ok(TimeWindowCtr {
            advertiser,
            window_ms,
            events: VecDeque::new(),
            clicks: 0,
        })
    }
}

impl CtrEstimator for TimeWindowCtr {
    fn observe(&mut self, obs: &Observation<'_>) {
        if obs.advertiser() != &self.advertiser {
            return;
        }
        let is_click = matches!(obs, Observation::Click(_));
        self.clicks += is_click as u64;
        self.events.push_back((obs.t(), is_click));
    }

    fn estimate(&mut self, now: Millis) -> CtrEstimate {
        let start = now.saturating_sub(self.window_ms);
        while let Some(&(t, is_click)) = self.events.front() {
            if t >= start {
                break;
            }
            self.clicks -= is_click as u64;
            self.events.pop_front();
        }
        // Events stamped exactly `now` sit at the back and fall outside the
        // half-open window.
        let mut clicks = self.clicks;
        let mut impressions = self.events.len() as u64 - self.clicks;
        for &(t, is_click) in self.events.iter().rev() {
            if t < now {
                break;
            }
            if is_click {
                clicks -= 1;
            } else {
                impressions -= 1;
            }
        }
        CtrEstimate::from_counts(clicks, impressions)
    }
}

/// Clicks on the last Y impressions (fewer if fewer exist).
#[derive(Clone, Debug)]
pub struct ImpressionWindowCtr {
    advertiser: AdvertiserId,
    capacity: usize,
    window: VecDeque<u64>,
    clicked: HashMap<u64, bool>,
    clicks: u64,
}

impl ImpressionWindowCtr {
    pub fn new(advertiser: AdvertiserId, impressions: u64) -> Result<Self, EstimatorError> {
        if impressions == 0 {
            return Err(EstimatorError::EmptyWindow);
        }
        Ok(ImpressionWindowCtr {
            advertiser,
            capacity: impressions as usize,
            window: VecDeque::new(),
            clicked: HashMap::new(),
            clicks: 0,
        })
    }
}

impl CtrEstimator for ImpressionWindowCtr {
    fn observe(&mut self, obs: &Observation<'_>) {
        if obs.advertiser() != &self.advertiser {
            return;
        }
        match obs {
            Observation::Impression(imp) => {
                if self.window.len() == self.capacity {
                    if let Some(old) = self.window.pop_front() {
                        if self.clicked.remove(&old) == Some(true) {
                            self.clicks -= 1;
                        }
                    }
                }
                self.window.push_back(imp.id);
                self.clicked.insert(imp.id, false);
            }
            Observation::Click(c) => {
                if let Some(flag) = self.clicked.get_mut(&c.impression_ref) {
                    if !*flag {
                        *flag = true;
                        self.clicks += 1;
                    }
                }
            }
        }
    }

    fn estimate(&mut self, _now: Millis) -> CtrEstimate {
        CtrEstimate::from_counts(self.clicks, self.window.len() as u64)
    }
}

/// X over the impressions served since the X-th last click's impression.
///
/// The window starts at the earliest impression referenced by the last X
/// clicks. When clicks arrive in the order of their impressions, which
/// the generators guarantee, that is exactly the X-th last click's impression.
/// With out-of-order clicks it keeps all X clicked impressions inside the
/// window, so the estimate never exceeds 1.
#[derive(Clone, Debug)]
pub struct ClickWindowCtr {
    advertiser: AdvertiserId,
    capacity: usize,
    impressions_seen: u64,
    // impression id -> 1-based ordinal among this advertiser's impressions;
    // entries are removed once clicked.
    ordinals: HashMap<u64, u64>,
    recent_clicks: VecDeque<u64>,
}

impl ClickWindowCtr {
    pub fn new(advertiser: AdvertiserId, clicks: u64) -> Result<Self, EstimatorError> {
        if clicks == 0 {
            return Err(EstimatorError::EmptyWindow);
        }
        Ok(ClickWindowCtr {
            advertiser,
            capacity: clicks as usize,
            impressions_seen: 0,
            ordinals: HashMap::new(),
            recent_clicks: VecDeque::new(),
        })
    }
}

impl CtrEstimator for ClickWindowCtr {
    fn observe(&mut self, obs: &Observation<'_>) {
        if obs.advertiser() != &self.advertiser {
            return;
        }
        match obs {
            Observation::Impression(imp) => {
                self.impressions_seen += 1;
                self.ordinals.insert(imp.id, self.impressions_seen);
            }
            Observation::Click(c) => {
                if let Some(ord) = self.ordinals.remove(&c.impression_ref) {
                    if self.recent_clicks.len() == self.capacity {
                        self.recent_clicks.pop_front();
                    }
                    self.recent_clicks.push_back(ord);
                }
            }
        }
    }

    fn estimate(&mut self, _now: Millis) -> CtrEstimate {
        let x = self.recent_clicks.len() as u64;
        if self.recent_clicks.len() < self.capacity {
            return CtrEstimate::undefined(x, 0);
        }
        let first = self.recent_clicks.iter().copied().min().unwrap_or(1);
        CtrEstimate::from_counts(x, self.impressions_seen - first + 1)
    }
}

/// An advertiser's clicks as a share of the cohort's clicks.
#[derive(Clone, Debug)]
pub struct RelativeCtr {
    advertiser: AdvertiserId,
    counter: CohortClickCounter,
}

impl RelativeCtr {
    pub fn new(advertiser: AdvertiserId, span: RelativeSpan) -> Result<Self, EstimatorError> {
        Ok(RelativeCtr {
            advertiser,
            counter: CohortClickCounter::new(span)?,
        })
    }

    pub fn tally(&mut self, now: Millis) -> ClickTally {
        self.counter.tally(now)
    }
}

impl CtrEstimator for RelativeCtr {
    fn observe(&mut self, obs: &Observation<'_>) {
        self.counter.observe(obs);
    }

    fn estimate(&mut self, now: Millis) -> CtrEstimate {
        ctr_relative(&self.counter.tally(now), &self.advertiser)
    }
}

/// Streaming per-advertiser click counts for the whole cohort.
#[derive(Clone, Debug)]
pub struct CohortClickCounter {
    span: RelativeSpan,
    counts: BTreeMap<AdvertiserId, u64>,
    // Interval mode: every click still inside the window. Cumulative mode:
    // only clicks at the latest timestamp, not yet folded into `counts`.
    pending: VecDeque<(Millis, AdvertiserId)>,
}

impl CohortClickCounter {
    pub fn new(span: RelativeSpan) -> Result<Self, EstimatorError> {
        if span == RelativeSpan::Interval(0) {
            return Err(EstimatorError::EmptyWindow);
        }
        Ok(CohortClickCounter {
            span,
            counts: BTreeMap::new(),
            pending: VecDeque::new(),
        })
    }

    pub fn observe(&mut self, obs: &Observation<'_>) {
        let Observation::Click(c) = obs else {
            return;
        };
        if self.span == RelativeSpan::Cumulative {
            if let Some(&(last_t, _)) = self.pending.back() {
                if c.t > last_t {
                    for (_, a) in self.pending.drain(..) {
                        *self.counts.entry(a).or_insert(0) += 1;
                    }
                }
            }
        }
        self.pending.push_back((c.t, c.advertiser.clone()));
    }

    /// Clicks with `t < now` inside the configured span.
    pub fn tally(&mut self, now: Millis) -> ClickTally {
        match self.span {
            RelativeSpan::Cumulative => {
                let mut tally = ClickTally::from_counts(self.counts.iter().map(|(a, n)| (a.clone(), *n)), (0, now));
                for (t, a) in &self.pending {
                    if *t < now {
                        tally.add(a, 1);
                    }
                }
                tally
            }
            RelativeSpan::Interval(ms) => {
                let start = now.saturating_sub(ms);
                while self.pending.front().is_some_and(|(t, _)| *t < start) {
                    self.pending.pop_front();
                }
                let mut tally = ClickTally::empty(start, now);
                for (t, a) in &self.pending {
                    if *t < now {
                        tally.add(a, 1);
                    }
                }
                tally
            }
        }
    }
}

pub fn ctr_time_window(
    view: &LogView<'_>,
    adv: &AdvertiserId,
    window_ms: Millis,
    now: Millis,
) -> Result<CtrEstimate, EstimatorError> {
    WindowSpec::TimeWindow { window_ms }.estimate(view, adv, now)
}

pub fn ctr_impression_window(
    view: &LogView<'_>,
    adv: &AdvertiserId,
    impressions: u64,
    now: Millis,
) -> Result<CtrEstimate, EstimatorError> {
    WindowSpec::ImpressionWindow { impressions }.estimate(view, adv, now)
}

pub fn ctr_click_window(
    view: &LogView<'_>,
    adv: &AdvertiserId,
    clicks: u64,
    now: Millis,
) -> Result<CtrEstimate, EstimatorError> {
    WindowSpec::ClickWindow { clicks }.estimate(view, adv, now)
}

/// `C_adv / (sum of C over the cohort)`. Advertisers missing from the tally
/// count as zero.
pub fn ctr_relative(tally: &ClickTally, adv: &AdvertiserId) -> CtrEstimate {
    CtrEstimate::from_counts(tally.count(adv), tally.total())
}

/// Whether adding `delta_own` clicks to an advertiser with `own` of `total`
/// clicks, and `delta_total` to the cohort total (including `delta_own`),
/// lowers its relative CTR. Decided in exact integer arithmetic:
/// `(own + d) / (total + D) < own / total  <=>  d * total < own * D`.
pub fn relative_ctr_falls(own: u64, total: u64, delta_own: u64, delta_total: u64) -> bool {
    (delta_own as u128) * (total as u128) < (own as u128) * (delta_total as u128)
}

/// `clicks / (impressions + clicks)`. This is the ratio the published
/// baseline table actually reports; its impression column counts displays
/// that were not clicked.
pub fn ctr_paper_table1(clicks: u64, impressions: u64) -> Result<f64, EstimatorError> {
    let denom = clicks + impressions;
    if denom == 0 {
        return Err(EstimatorError::DivisionByZero);
    }
    Ok(clicks as f64 / denom as f64)
}

/// Half-up rounding to `places` decimals, used for display only.
pub fn round_half_up(value: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    (value * scale + 0.5).floor() / scale
}
