//! Scenario files.
//!
//! A scenario is a TOML document. Every key is listed below; keys marked
//! optional show their default.
//!
//! ```toml
//! seed = 7                 # RNG seed for traffic and fraud timing
//! tick_ms = 1000           # reporting cadence
//! ticks = 20               # rows to produce; horizon = ticks * tick_ms
//! focus = "victim"         # advertiser whose CTR columns are reported
//! default_ctr = 0.1        # optional; CTR used while an estimate is undefined
//! discard = "count"        # optional; "count" keeps flagged clicks, "drop" hides them
//! mechanism = "gsp"        # optional; "gsp" or "gfp"
//!
//! [auction]
//! num_slots = 2
//! reserve = 0              # optional, cents
//! ranking = "by_bid"       # optional; or "by_ctr_weighted"
//!
//! [traffic]
//! queries_per_second = 5.0
//! position_decay = 0.6     # optional
//!
//! [[advertisers]]
//! id = "victim"
//! bid = 120                # cents per click
//! value = 150              # optional, cents; defaults to the bid
//! base_ctr = 0.1           # organic click probability in slot 1
//!
//! [[fraud]]                # optional, repeatable
//! target = "victim"
//! start_ms = 5000
//! count = 40
//! kind = "scripted"        # fixed gap of interval_ms
//! interval_ms = 250
//! # kind = "human" takes mu and sigma: ln(gap_ms) ~ N(mu, sigma^2)
//!
//! [[estimators]]           # optional; defaults to a 5-tick time window
//! kind = "time_window"     # plus window_ms
//! # kind = "impression_window" takes impressions
//! # kind = "click_window" takes clicks
//! # kind = "relative" takes an optional interval_ms (cumulative without it)
//!
//! [detector]               # optional
//! min_run = 5
//! tolerance_ms = 10
//!
//! [output]                 # optional; paths are relative to the working directory
//! csv = "victim.csv"
//! svg = "victim.svg"
//! log = "victim.jsonl"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::auction::{AuctionConfig, Cents, Mechanism, Ranking};
use crate::estimators::{RelativeSpan, WindowSpec};
use crate::events::{AdvertiserId, Millis};
use crate::rng::Seed;
use crate::traffic::{DetectorConfig, FraudKind, FraudPlan, LogNormalGaps, TrafficConfig, DEFAULT_POSITION_DECAY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// What happens to clicks the detector flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardMode {
    /// Flagged clicks still count and are billed.
    #[default]
    Count,
    /// Flagged clicks are hidden from the estimators and not billed.
    Drop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvertiserSpec {
    pub id: AdvertiserId,
    pub bid: Cents,
    pub value: Cents,
    pub base_ctr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: Seed,
    pub tick_ms: Millis,
    pub ticks: u64,
    pub focus: AdvertiserId,
    pub default_ctr: f64,
    pub discard: DiscardMode,
    pub mechanism: Mechanism,
    pub auction: AuctionConfig,
    pub queries_per_second: f64,
    pub position_decay: f64,
    pub advertisers: Vec<AdvertiserSpec>,
    pub fraud: Vec<FraudPlan>,
    pub estimators: Vec<WindowSpec>,
    pub detector: DetectorConfig,
    pub output: OutputPaths,
}

impl ScenarioConfig {
    pub fn horizon_ms(&self) -> Millis {
        self.tick_ms * self.ticks
    }

    pub fn traffic(&self) -> TrafficConfig {
        TrafficConfig {
            queries_per_second: self.queries_per_second,
            base_ctr: self
                .advertisers
                .iter()
                .map(|a| (a.id.clone(), a.base_ctr))
                .collect::<BTreeMap<_, _>>(),
            position_decay: self.position_decay,
            horizon_ms: self.horizon_ms(),
            seed: self.seed,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    tick_ms: Millis,
    ticks: u64,
    focus: String,
    #[serde(default = "default_ctr")]
    default_ctr: f64,
    #[serde(default)]
    discard: DiscardMode,
    #[serde(default)]
    mechanism: Mechanism,
    auction: AuctionSection,
    traffic: TrafficSection,
    #[serde(default)]
    advertisers: Vec<AdvertiserEntry>,
    #[serde(default)]
    fraud: Vec<FraudEntry>,
    #[serde(default)]
    estimators: Vec<EstimatorEntry>,
    #[serde(default)]
    detector: Option<DetectorConfig>,
    #[serde(default)]
    output: OutputSection,
}

fn default_ctr() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuctionSection {
    num_slots: u32,
    #[serde(default)]
    reserve: u64,
    #[serde(default)]
    ranking: Ranking,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSection {
    queries_per_second: f64,
    #[serde(default = "default_decay")]
    position_decay: f64,
}

fn default_decay() -> f64 {
    DEFAULT_POSITION_DECAY
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvertiserEntry {
    id: String,
    bid: u64,
    value: Option<u64>,
    base_ctr: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FraudEntry {
    target: String,
    start_ms: Millis,
    count: u64,
    kind: String,
    interval_ms: Option<Millis>,
    mu: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorEntry {
    kind: String,
    window_ms: Option<Millis>,
    impressions: Option<u64>,
    clicks: Option<u64>,
    interval_ms: Option<Millis>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    csv: Option<PathBuf>,
    svg: Option<PathBuf>,
    log: Option<PathBuf>,
}

fn require<T>(v: Option<T>, field: String, kind: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| invalid(field, format!("required for kind = \"{kind}\"")))
}

fn forbid<T>(v: &Option<T>, field: String, kind: &str) -> Result<(), ConfigError> {
    match v {
        Some(_) => Err(invalid(field, format!("not accepted for kind = \"{kind}\""))),
        None => Ok(()),
    }
}

impl ScenarioFile {
    fn into_config(self) -> Result<ScenarioConfig, ConfigError> {
        if self.tick_ms == 0 {
            return Err(invalid("tick_ms", "must be at least 1"));
        }
        if self.ticks == 0 {
            return Err(invalid("ticks", "must be at least 1"));
        }
        let horizon = self
            .tick_ms
            .checked_mul(self.ticks)
            .ok_or_else(|| invalid("ticks", "tick_ms * ticks overflows"))?;
        if !(0.0..=1.0).contains(&self.default_ctr) {
            return Err(invalid("default_ctr", "must lie in [0, 1]"));
        }
        if self.auction.num_slots == 0 {
            return Err(invalid("auction.num_slots", "must be at least 1"));
        }
        if !self.traffic.queries_per_second.is_finite() || self.traffic.queries_per_second < 0.0 {
            return Err(invalid("traffic.queries_per_second", "must be finite and non-negative"));
        }
        if !(self.traffic.position_decay > 0.0 && self.traffic.position_decay <= 1.0) {
            return Err(invalid("traffic.position_decay", "must lie in (0, 1]"));
        }

        if self.advertisers.is_empty() {
            return Err(invalid("advertisers", "at least one advertiser is required"));
        }
        let mut advertisers = Vec::with_capacity(self.advertisers.len());
        let mut seen = BTreeSet::new();
        for (i, a) in self.advertisers.into_iter().enumerate() {
            let id = AdvertiserId::new(a.id).map_err(|e| invalid(format!("advertisers[{i}].id"), e.to_string()))?;
            if !seen.insert(id.clone()) {
                return Err(invalid(format!("advertisers[{i}].id"), format!("duplicate id {id}")));
            }
            if !(0.0..=1.0).contains(&a.base_ctr) {
                return Err(invalid(format!("advertisers[{i}].base_ctr"), "must lie in [0, 1]"));
            }
            advertisers.push(AdvertiserSpec {
                id,
                bid: Cents(a.bid),
                value: Cents(a.value.unwrap_or(a.bid)),
                base_ctr: a.base_ctr,
            });
        }
        let known = |s: String, field: String| -> Result<AdvertiserId, ConfigError> {
            let id = AdvertiserId::new(s).map_err(|e| invalid(field.clone(), e.to_string()))?;
            if seen.contains(&id) {
                Ok(id)
            } else {
                Err(invalid(field, format!("unknown advertiser {id}")))
            }
        };
        let focus = known(self.focus, "focus".into())?;

        let mut fraud = Vec::with_capacity(self.fraud.len());
        for (i, f) in self.fraud.into_iter().enumerate() {
            let at = |k: &str| format!("fraud[{i}].{k}");
            let target = known(f.target, at("target"))?;
            let kind = match f.kind.as_str() {
                "scripted" => {
                    forbid(&f.mu, at("mu"), "scripted")?;
                    forbid(&f.sigma, at("sigma"), "scripted")?;
                    FraudKind::Scripted {
                        interval_ms: require(f.interval_ms, at("interval_ms"), "scripted")?,
                    }
                }
                "human" => {
                    forbid(&f.interval_ms, at("interval_ms"), "human")?;
                    FraudKind::Human {
                        dwell: LogNormalGaps {
                            mu: require(f.mu, at("mu"), "human")?,
                            sigma: require(f.sigma, at("sigma"), "human")?,
                        },
                    }
                }
                other => {
                    return Err(invalid(
                        at("kind"),
                        format!("expected \"scripted\" or \"human\", got {other:?}"),
                    ))
                }
            };
            let plan = FraudPlan {
                target,
                start_ms: f.start_ms,
                count: f.count,
                kind,
            };
            plan.validate()
                .map_err(|e| invalid(format!("fraud[{i}]"), e.to_string()))?;
            if plan.start_ms >= horizon {
                return Err(invalid(
                    at("start_ms"),
                    format!("must be below the horizon {horizon} ms"),
                ));
            }
            if let FraudKind::Scripted { interval_ms } = plan.kind {
                let last = plan.start_ms + (plan.count - 1) * interval_ms;
                if last >= horizon {
                    return Err(invalid(
                        format!("fraud[{i}]"),
                        format!("last click at {last} ms passes the horizon {horizon} ms"),
                    ));
                }
            }
            fraud.push(plan);
        }

        let mut estimators = Vec::with_capacity(self.estimators.len());
        for (i, e) in self.estimators.into_iter().enumerate() {
            let at = |k: &str| format!("estimators[{i}].{k}");
            let spec = match e.kind.as_str() {
                "time_window" => WindowSpec::TimeWindow {
                    window_ms: require(e.window_ms, at("window_ms"), "time_window")?,
                },
                "impression_window" => WindowSpec::ImpressionWindow {
                    impressions: require(e.impressions, at("impressions"), "impression_window")?,
                },
                "click_window" => WindowSpec::ClickWindow {
                    clicks: require(e.clicks, at("clicks"), "click_window")?,
                },
                "relative" => WindowSpec::Relative {
                    span: match e.interval_ms {
                        Some(ms) => RelativeSpan::Interval(ms),
                        None => RelativeSpan::Cumulative,
                    },
                },
                other => return Err(invalid(at("kind"), format!("unknown estimator kind {other:?}"))),
            };
            let stray = [
                ("window_ms", e.window_ms.is_some() && e.kind != "time_window"),
                ("impressions", e.impressions.is_some() && e.kind != "impression_window"),
                ("clicks", e.clicks.is_some() && e.kind != "click_window"),
                ("interval_ms", e.interval_ms.is_some() && e.kind != "relative"),
            ];
            if let Some((key, _)) = stray.iter().find(|(_, bad)| *bad) {
                return Err(invalid(at(key), format!("not accepted for kind = \"{}\"", e.kind)));
            }
            spec.validate()
                .map_err(|err| invalid(format!("estimators[{i}]"), err.to_string()))?;
            if estimators
                .iter()
                .any(|s: &WindowSpec| std::mem::discriminant(s) == std::mem::discriminant(&spec))
            {
                return Err(invalid(format!("estimators[{i}].kind"), "each kind may appear once"));
            }
            estimators.push(spec);
        }
        if estimators.is_empty() {
            estimators.push(WindowSpec::TimeWindow {
                window_ms: 5 * self.tick_ms,
            });
        }

        let detector = self.detector.unwrap_or_default();
        if detector.min_run < 3 {
            return Err(invalid("detector.min_run", "must be at least 3"));
        }

        Ok(ScenarioConfig {
            seed: Seed(self.seed),
            tick_ms: self.tick_ms,
            ticks: self.ticks,
            focus,
            default_ctr: self.default_ctr,
            discard: self.discard,
            mechanism: self.mechanism,
            auction: AuctionConfig {
                num_slots: self.auction.num_slots,
                reserve_price: Cents(self.auction.reserve),
                ranking: self.auction.ranking,
            },
            queries_per_second: self.traffic.queries_per_second,
            position_decay: self.traffic.position_decay,
            advertisers,
            fraud,
            estimators,
            detector,
            output: OutputPaths {
                csv: self.output.csv,
                svg: self.output.svg,
                log: self.output.log,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        tick_ms = 1000
        ticks = 20
        focus = "a"

        [auction]
        num_slots = 2

        [traffic]
        queries_per_second = 4.0

        [[advertisers]]
        id = "a"
        bid = 100
        base_ctr = 0.1

        [[advertisers]]
        id = "b"
        bid = 90
        base_ctr = 0.1
    "#;

    fn field_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ScenarioConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.horizon_ms(), 20_000);
        assert_eq!(cfg.estimators, vec![WindowSpec::TimeWindow { window_ms: 5000 }]);
        assert_eq!(cfg.discard, DiscardMode::Count);
        assert_eq!(cfg.mechanism, Mechanism::Gsp);
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert_eq!(cfg.advertisers[0].value, Cents(100));
        assert_eq!(cfg.position_decay, DEFAULT_POSITION_DECAY);
    }

    #[test]
    fn fraud_and_estimators_parse() {
        let text = format!(
            "{BASE}\n[[fraud]]\ntarget = \"a\"\nstart_ms = 100\ncount = 5\nkind = \"scripted\"\ninterval_ms = 50\n\
             [[fraud]]\ntarget = \"b\"\nstart_ms = 0\ncount = 5\nkind = \"human\"\nmu = 7.0\nsigma = 0.5\n\
             [[estimators]]\nkind = \"relative\"\n[[estimators]]\nkind = \"click_window\"\nclicks = 10\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.fraud[0].kind, FraudKind::Scripted { interval_ms: 50 });
        assert!(matches!(cfg.fraud[1].kind, FraudKind::Human { .. }));
        assert_eq!(
            cfg.estimators,
            vec![
                WindowSpec::Relative {
                    span: RelativeSpan::Cumulative
                },
                WindowSpec::ClickWindow { clicks: 10 }
            ]
        );
    }

    #[test]
    fn errors_name_the_field() {
        let bad_ctr = BASE.replacen(
            "base_ctr = 0.1\n\n        [[advertisers]]\n        id = \"b\"\n        bid = 90\n        base_ctr = 0.1",
            "base_ctr = 0.1\n[[advertisers]]\nid = \"b\"\nbid = 90\nbase_ctr = 1.5",
            1,
        );
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(&bad_ctr).unwrap_err()),
            "advertisers[1].base_ctr"
        );

        let bad_focus = BASE.replace("focus = \"a\"", "focus = \"z\"");
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(&bad_focus).unwrap_err()),
            "focus"
        );

        let zero_tick = BASE.replace("tick_ms = 1000", "tick_ms = 0");
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(&zero_tick).unwrap_err()),
            "tick_ms"
        );

        let missing_interval =
            format!("{BASE}\n[[fraud]]\ntarget = \"a\"\nstart_ms = 0\ncount = 5\nkind = \"scripted\"\n");
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(&missing_interval).unwrap_err()),
            "fraud[0].interval_ms"
        );

        let late = format!(
            "{BASE}\n[[fraud]]\ntarget = \"a\"\nstart_ms = 19000\ncount = 5\nkind = \"scripted\"\ninterval_ms = 500\n"
        );
        assert_eq!(field_of(ScenarioConfig::from_toml_str(&late).unwrap_err()), "fraud[0]");

        let stray = format!("{BASE}\n[[estimators]]\nkind = \"relative\"\nclicks = 3\n");
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(&stray).unwrap_err()),
            "estimators[0].clicks"
        );
    }

    #[test]
    fn no_advertisers_is_rejected() {
        let text = "seed = 1\ntick_ms = 10\nticks = 2\nfocus = \"a\"\n[auction]\nnum_slots = 1\n[traffic]\nqueries_per_second = 1.0\n";
        assert_eq!(
            field_of(ScenarioConfig::from_toml_str(text).unwrap_err()),
            "advertisers"
        );
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let text = BASE.replace("seed = 3", "seed = 3\nsead = 4");
        assert!(matches!(
            ScenarioConfig::from_toml_str(&text),
            Err(ConfigError::Parse(_))
        ));
    }
}
