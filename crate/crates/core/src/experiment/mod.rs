//! Scenario runner, table replay, curve-shape checks and CSV/SVG output.

pub mod config;
pub mod emit;
pub mod scenario;
pub mod series;
pub mod shape;
pub mod tables;

pub use config::{AdvertiserSpec, ConfigError, DiscardMode, OutputPaths, ScenarioConfig};
pub use emit::{emit_csv, emit_plot, read_csv, render_svg, write_csv, EmitError};
pub use scenario::{compare_scenario, run_scenario, series_from_log, Billing, Comparison, ScenarioError, ScenarioRun};
pub use series::{CtrColumn, Series, SeriesRow};
pub use shape::{curve_shape_check, ShapeError, ShapeReport};
pub use tables::{render_report, replay_paper_tables, Erratum, TableColumn, TableRef, TableReplay};
