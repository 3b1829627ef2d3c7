//! Sponsored-search auction simulator.
//!
//! * [`events`]: impressions, clicks, the append-only log and click tallies
//! * [`auction`]: GFP/GSP slot allocation and GFP best-response dynamics
//! * [`estimators`]: windowed and relative-clicks CTR estimators
//! * [`traffic`]: organic traffic, fraud injection, scripted-click detection
//! * [`experiment`]: scenario runner, table replay, CSV/SVG output

pub mod auction;
pub mod estimators;
pub mod events;
pub mod experiment;
pub mod io;
pub mod rng;
pub mod traffic;

pub use auction::{AuctionConfig, Bid, Cents, Mechanism, Ranking, SlotAllocation};
pub use estimators::{CtrEstimate, CtrEstimator, RelativeSpan, WindowSpec};
pub use events::{
    AdvertiserId, ClickEvent, ClickSource, ClickTally, Event, EventLog, ImpressionEvent, LogView, Millis,
};
pub use rng::Seed;
pub use traffic::{DetectorConfig, FraudFlag, FraudKind, FraudPlan, TrafficConfig};
