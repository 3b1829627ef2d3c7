//! Qualitative curve checks: the windowed baseline climbs monotonically
//! under a sustained click burst, while the relative-clicks estimate rises
//! to a peak and then falls.

use thiserror::Error;

use super::series::{CtrColumn, Series};

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("series has no {0} column")]
    MissingColumn(&'static str),
    #[error("{column} at tick {tick}: {reason}")]
    ShapeViolation {
        column: CtrColumn,
        tick: u64,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeReport {
    pub rising_column: CtrColumn,
    pub rising_first: f64,
    pub rising_last: f64,
    pub peak_tick: u64,
    pub peak_value: f64,
    pub falling_last: f64,
}

fn defined(column: CtrColumn, points: &[(u64, Option<f64>)]) -> Result<Vec<(u64, f64)>, ShapeError> {
    points
        .iter()
        .map(|&(t, v)| {
            v.map(|v| (t, v)).ok_or_else(|| ShapeError::ShapeViolation {
                column,
                tick: t,
                reason: "estimate undefined".into(),
            })
        })
        .collect()
}

pub fn check_strictly_increasing(column: CtrColumn, points: &[(u64, Option<f64>)]) -> Result<(), ShapeError> {
    let pts = defined(column, points)?;
    for w in pts.windows(2) {
        if w[1].1 <= w[0].1 {
            return Err(ShapeError::ShapeViolation {
                column,
                tick: w[1].0,
                reason: format!("{:.4} does not exceed previous {:.4}", w[1].1, w[0].1),
            });
        }
    }
    Ok(())
}

/// Strictly increasing up to a single peak, strictly decreasing after it.
/// Returns the peak's tick and value.
pub fn check_rise_then_fall(
    column: CtrColumn,
    points: &[(u64, Option<f64>)],
    expected_peak: Option<u64>,
) -> Result<(u64, f64), ShapeError> {
    let pts = defined(column, points)?;
    let Some(&first) = pts.first() else {
        return Err(ShapeError::ShapeViolation {
            column,
            tick: 0,
            reason: "empty series".into(),
        });
    };
    let mut peak = first;
    let mut falling = false;
    for w in pts.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if cur.1 > prev.1 && !falling {
            peak = cur;
        } else if cur.1 < prev.1 {
            falling = true;
        } else {
            return Err(ShapeError::ShapeViolation {
                column,
                tick: cur.0,
                reason: format!("{:.4} after {:.4} breaks the rise-then-fall shape", cur.1, prev.1),
            });
        }
    }
    if let Some(expected) = expected_peak {
        if peak.0 != expected {
            return Err(ShapeError::ShapeViolation {
                column,
                tick: peak.0,
                reason: format!("peak at tick {} instead of {expected}", peak.0),
            });
        }
    }
    Ok(peak)
}

/// The rising curve is `ctr_old` when present, else the first windowed
/// column; the falling curve is `ctr_relative`.
pub fn curve_shape_check(series: &Series, expected_peak: Option<u64>) -> Result<ShapeReport, ShapeError> {
    let rising_column = series
        .columns
        .iter()
        .copied()
        .find(|c| *c == CtrColumn::Old)
        .or_else(|| series.columns.iter().copied().find(|c| c.is_windowed()))
        .ok_or(ShapeError::MissingColumn("ctr_old or windowed"))?;
    let rising = series.column(rising_column).expect("column present");
    let falling = series
        .column(CtrColumn::Relative)
        .ok_or(ShapeError::MissingColumn("ctr_relative"))?;

    check_strictly_increasing(rising_column, &rising)?;
    let (peak_tick, peak_value) = check_rise_then_fall(CtrColumn::Relative, &falling, expected_peak)?;
    Ok(ShapeReport {
        rising_column,
        rising_first: rising.first().and_then(|p| p.1).unwrap_or(0.0),
        rising_last: rising.last().and_then(|p| p.1).unwrap_or(0.0),
        peak_tick,
        peak_value,
        falling_last: falling.last().and_then(|p| p.1).unwrap_or(0.0),
    })
}
