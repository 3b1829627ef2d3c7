//! Traffic atoms, the append-only event log, and interval click tallies.
//!
//! Every estimator and detector in the crate reads the log through a
//! [`LogView`], which hides the ground-truth fraud label carried by each
//! click. The label stays in the log for evaluation only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in integer milliseconds.
pub type Millis = u64;

/// Opaque advertiser token. Ordering is lexicographic and is used for every
/// deterministic tie-break in the crate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AdvertiserId(String);

impl AdvertiserId {
    pub fn new(id: impl Into<String>) -> Result<Self, EventError> {
        let id = id.into();
        if id.is_empty() {
            return Err(EventError::EmptyAdvertiserId);
        }
        Ok(AdvertiserId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AdvertiserId {
    type Error = EventError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        AdvertiserId::new(value)
    }
}

impl From<AdvertiserId> for String {
    fn from(value: AdvertiserId) -> Self {
        value.0
    }
}

impl std::str::FromStr for AdvertiserId {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AdvertiserId::new(s)
    }
}

impl fmt::Display for AdvertiserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ground-truth origin of a click.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickSource {
    Organic,
    ScriptedFraud,
    HumanFraud,
}

/// One display of an ad. `id` is unique within a log and is what clicks
/// point back to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpressionEvent {
    pub id: u64,
    pub t: Millis,
    pub advertiser: AdvertiserId,
    pub slot: u32,
    pub query_id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClickEvent {
    pub t: Millis,
    pub advertiser: AdvertiserId,
    pub slot: u32,
    pub query_id: u64,
    /// Id of the clicked impression. Since an impression takes at most one
    /// click, this doubles as the click's own id.
    pub impression_ref: u64,
    pub source: ClickSource,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Impression(ImpressionEvent),
    Click(ClickEvent),
}

impl Event {
    pub fn t(&self) -> Millis {
        match self {
            Event::Impression(e) => e.t,
            Event::Click(e) => e.t,
        }
    }

    pub fn advertiser(&self) -> &AdvertiserId {
        match self {
            Event::Impression(e) => &e.advertiser,
            Event::Click(e) => &e.advertiser,
        }
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Event::Impression(_) => 0,
            Event::Click(_) => 1,
        }
    }

    /// Log order: time, then impressions before clicks, then advertiser.
    /// Anything still tied keeps insertion order.
    pub fn order_key(&self) -> (Millis, u8, &AdvertiserId) {
        (self.t(), self.kind_rank(), self.advertiser())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("advertiser id must be non-empty")]
    EmptyAdvertiserId,
    #[error("event at t={t} ms is out of order (log tail at t={tail} ms)")]
    OutOfOrder { t: Millis, tail: Millis },
    #[error(
        "click at t={t} ms references impression {impression_ref} which does not exist for advertiser {advertiser}"
    )]
    DanglingClick {
        t: Millis,
        advertiser: AdvertiserId,
        impression_ref: u64,
    },
    #[error("impression {0} already has a click")]
    DuplicateClick(u64),
    #[error("impression id {0} is already in the log")]
    DuplicateImpression(u64),
    #[error("slot index must be >= 1")]
    ZeroSlot,
}

#[derive(Clone, Debug)]
struct ImpressionMeta {
    advertiser: AdvertiserId,
    clicked: bool,
}

/// Time-ordered impressions and clicks up to a horizon.
#[derive(Clone, Debug)]
pub struct EventLog {
    events: Vec<Event>,
    horizon: Millis,
    impressions: HashMap<u64, ImpressionMeta>,
    next_impression_id: u64,
    next_query_id: u64,
}

impl PartialEq for EventLog {
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon && self.events == other.events
    }
}

impl EventLog {
    pub fn new(horizon: Millis) -> Self {
        EventLog {
            events: Vec::new(),
            horizon,
            impressions: HashMap::new(),
            next_impression_id: 0,
            next_query_id: 0,
        }
    }

    /// Builds a log from events in any order. The events are stably sorted
    /// into log order and then appended one by one, so every append-time
    /// check applies.
    pub fn from_events(mut events: Vec<Event>, horizon: Millis) -> Result<Self, EventError> {
        events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        let mut log = EventLog::new(horizon);
        for e in events {
            log.append(e)?;
        }
        Ok(log)
    }

    pub fn horizon(&self) -> Millis {
        self.horizon
    }

    pub fn set_horizon(&mut self, horizon: Millis) {
        self.horizon = horizon;
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Smallest impression id not yet used in this log.
    pub fn next_impression_id(&self) -> u64 {
        self.next_impression_id
    }

    /// Smallest query id not yet used in this log.
    pub fn next_query_id(&self) -> u64 {
        self.next_query_id
    }

    pub fn append(&mut self, e: Event) -> Result<(), EventError> {
        if let Some(last) = self.events.last() {
            if e.order_key() < last.order_key() {
                return Err(EventError::OutOfOrder {
                    t: e.t(),
                    tail: last.t(),
                });
            }
        }
        match &e {
            Event::Impression(imp) => {
                if imp.slot == 0 {
                    return Err(EventError::ZeroSlot);
                }
                if self.impressions.contains_key(&imp.id) {
                    return Err(EventError::DuplicateImpression(imp.id));
                }
                self.impressions.insert(
                    imp.id,
                    ImpressionMeta {
                        advertiser: imp.advertiser.clone(),
                        clicked: false,
                    },
                );
                self.next_impression_id = self.next_impression_id.max(imp.id + 1);
                self.next_query_id = self.next_query_id.max(imp.query_id + 1);
            }
            Event::Click(click) => {
                if click.slot == 0 {
                    return Err(EventError::ZeroSlot);
                }
                match self.impressions.get_mut(&click.impression_ref) {
                    Some(meta) if meta.advertiser == click.advertiser => {
                        if meta.clicked {
                            return Err(EventError::DuplicateClick(click.impression_ref));
                        }
                        meta.clicked = true;
                    }
                    _ => {
                        return Err(EventError::DanglingClick {
                            t: click.t,
                            advertiser: click.advertiser.clone(),
                            impression_ref: click.impression_ref,
                        })
                    }
                }
            }
        }
        self.events.push(e);
        Ok(())
    }

    /// Label-stripped view over the whole log.
    pub fn view(&self) -> LogView<'_> {
        LogView::new(&self.events)
    }

    /// Clicks with `from_ms <= t < to_ms`, counted per advertiser.
    pub fn tally(&self, from_ms: Millis, to_ms: Millis) -> ClickTally {
        self.view().tally(from_ms, to_ms)
    }

    /// Distinct advertisers appearing in the log, in id order.
    pub fn advertisers(&self) -> Vec<AdvertiserId> {
        let set: std::collections::BTreeSet<&AdvertiserId> = self.events.iter().map(Event::advertiser).collect();
        set.into_iter().cloned().collect()
    }
}

/// A click as seen by estimators and detectors: everything but the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObservedClick<'a> {
    pub t: Millis,
    pub advertiser: &'a AdvertiserId,
    pub slot: u32,
    pub query_id: u64,
    pub impression_ref: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation<'a> {
    Impression(&'a ImpressionEvent),
    Click(ObservedClick<'a>),
}

impl Observation<'_> {
    pub fn t(&self) -> Millis {
        match self {
            Observation::Impression(e) => e.t,
            Observation::Click(c) => c.t,
        }
    }

    pub fn advertiser(&self) -> &AdvertiserId {
        match self {
            Observation::Impression(e) => &e.advertiser,
            Observation::Click(c) => c.advertiser,
        }
    }
}

/// Read-only, label-free window onto a log. Optionally hides a set of
/// clicks (by impression id), which is how flagged clicks get discarded.
#[derive(Clone, Copy, Debug)]
pub struct LogView<'a> {
    events: &'a [Event],
    dropped: Option<&'a HashSet<u64>>,
}

impl<'a> LogView<'a> {
    pub fn new(events: &'a [Event]) -> Self {
        LogView { events, dropped: None }
    }

    pub fn without_clicks(self, dropped: &'a HashSet<u64>) -> Self {
        LogView {
            events: self.events,
            dropped: Some(dropped),
        }
    }

    /// Restricts the view to events with `t <= now`.
    pub fn up_to(self, now: Millis) -> Self {
        let end = self.events.partition_point(|e| e.t() <= now);
        LogView {
            events: &self.events[..end],
            dropped: self.dropped,
        }
    }

    /// Restricts the view to events with `t < end`.
    pub fn before(self, end: Millis) -> Self {
        let cut = self.events.partition_point(|e| e.t() < end);
        LogView {
            events: &self.events[..cut],
            dropped: self.dropped,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Observation<'a>> + 'a {
        let dropped = self.dropped;
        self.events.iter().filter_map(move |e| match e {
            Event::Impression(imp) => Some(Observation::Impression(imp)),
            Event::Click(c) => {
                if dropped.is_some_and(|d| d.contains(&c.impression_ref)) {
                    None
                } else {
                    Some(Observation::Click(ObservedClick {
                        t: c.t,
                        advertiser: &c.advertiser,
                        slot: c.slot,
                        query_id: c.query_id,
                        impression_ref: c.impression_ref,
                    }))
                }
            }
        })
    }

    pub fn tally(&self, from_ms: Millis, to_ms: Millis) -> ClickTally {
        let mut tally = ClickTally::empty(from_ms, to_ms.max(from_ms));
        if to_ms <= from_ms {
            return tally;
        }
        let lo = self.events.partition_point(|e| e.t() < from_ms);
        let hi = self.events.partition_point(|e| e.t() < to_ms);
        let sub = LogView {
            events: &self.events[lo..hi],
            dropped: self.dropped,
        };
        for obs in sub.iter() {
            if let Observation::Click(c) = obs {
                tally.add(c.advertiser, 1);
            }
        }
        tally
    }
}

/// Per-advertiser click counts over `[from_ms, to_ms)`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ClickTally {
    per_advertiser: BTreeMap<AdvertiserId, u64>,
    total: u64,
    window: (Millis, Millis),
}

impl ClickTally {
    pub fn empty(from_ms: Millis, to_ms: Millis) -> Self {
        ClickTally {
            per_advertiser: BTreeMap::new(),
            total: 0,
            window: (from_ms, to_ms),
        }
    }

    /// Tally from explicit counts, e.g. a replayed table row.
    pub fn from_counts<I>(counts: I, window: (Millis, Millis)) -> Self
    where
        I: IntoIterator<Item = (AdvertiserId, u64)>,
    {
        let mut tally = ClickTally::empty(window.0, window.1);
        for (adv, n) in counts {
            tally.add(&adv, n);
        }
        tally
    }

    pub fn add(&mut self, advertiser: &AdvertiserId, n: u64) {
        if let Some(c) = self.per_advertiser.get_mut(advertiser) {
            *c += n;
        } else {
            self.per_advertiser.insert(advertiser.clone(), n);
        }
        self.total += n;
    }

    pub fn count(&self, advertiser: &AdvertiserId) -> u64 {
        self.per_advertiser.get(advertiser).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn window(&self) -> (Millis, Millis) {
        self.window
    }

    pub fn per_advertiser(&self) -> &BTreeMap<AdvertiserId, u64> {
        &self.per_advertiser
    }

    /// Component-wise sum of two tallies over adjacent windows.
    pub fn merge(&self, later: &ClickTally) -> ClickTally {
        let mut out = self.clone();
        for (adv, n) in &later.per_advertiser {
            out.add(adv, *n);
        }
        out.window = (self.window.0.min(later.window.0), self.window.1.max(later.window.1));
        out
    }

    /// Counts with zero entries removed, for comparing tallies built
    /// different ways.
    pub fn nonzero_counts(&self) -> BTreeMap<AdvertiserId, u64> {
        self.per_advertiser
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(a, n)| (a.clone(), *n))
            .collect()
    }
}
