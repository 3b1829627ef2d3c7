use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::estimators::WindowSpec;

/// One CTR column of a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrColumn {
    /// Fixed time window.
    Time,
    /// Fixed impression window.
    Impression,
    /// Fixed click window.
    Click,
    /// Relative clicks.
    Relative,
    /// `clicks / (impressions + clicks)`, as in the published baseline table.
    Old,
}

impl CtrColumn {
    pub const ALL: [CtrColumn; 5] = [
        CtrColumn::Time,
        CtrColumn::Impression,
        CtrColumn::Click,
        CtrColumn::Relative,
        CtrColumn::Old,
    ];

    pub fn header(self) -> &'static str {
        match self {
            CtrColumn::Time => "ctr_time",
            CtrColumn::Impression => "ctr_impr",
            CtrColumn::Click => "ctr_click",
            CtrColumn::Relative => "ctr_relative",
            CtrColumn::Old => "ctr_old",
        }
    }

    pub fn for_spec(spec: &WindowSpec) -> Self {
        match spec {
            WindowSpec::TimeWindow { .. } => CtrColumn::Time,
            WindowSpec::ImpressionWindow { .. } => CtrColumn::Impression,
            WindowSpec::ClickWindow { .. } => CtrColumn::Click,
            WindowSpec::Relative { .. } => CtrColumn::Relative,
        }
    }

    pub fn is_windowed(self) -> bool {
        matches!(self, CtrColumn::Time | CtrColumn::Impression | CtrColumn::Click)
    }
}

impl fmt::Display for CtrColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

impl FromStr for CtrColumn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CtrColumn::ALL
            .into_iter()
            .find(|c| c.header() == s)
            .ok_or_else(|| format!("unknown CTR column {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub time_index: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub total_clicks: u64,
    /// Aligned with [`Series::columns`]; `None` while an estimator is
    /// undefined.
    pub ctr: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub columns: Vec<CtrColumn>,
    pub rows: Vec<SeriesRow>,
}

impl Series {
    pub fn new(columns: Vec<CtrColumn>) -> Self {
        Series {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, column: CtrColumn) -> Option<usize> {
        self.columns.iter().position(|c| *c == column)
    }

    /// `(time_index, value)` pairs of one column.
    pub fn column(&self, column: CtrColumn) -> Option<Vec<(u64, Option<f64>)>> {
        let idx = self.column_index(column)?;
        Some(self.rows.iter().map(|r| (r.time_index, r.ctr[idx])).collect())
    }

    pub fn headers(&self) -> Vec<&'static str> {
        let mut h = vec!["time", "impressions", "clicks", "total_clicks"];
        h.extend(self.columns.iter().map(|c| c.header()));
        h
    }
}
