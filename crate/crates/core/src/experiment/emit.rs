//! CSV and SVG output for series.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::series::{CtrColumn, Series, SeriesRow};
use crate::estimators::round_half_up;
use crate::io::write_atomic;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("series is empty")]
    EmptySeries,
    #[error("CSV: {0}")]
    Parse(String),
}

/// Rates printed with four decimals, rounded half-up. Undefined cells are
/// left empty.
pub fn format_rate(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{:.4}", round_half_up(v, 4)),
        _ => String::new(),
    }
}

pub fn write_csv(series: &Series, w: &mut dyn Write) -> Result<(), EmitError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(series.headers())?;
    for row in &series.rows {
        let mut rec = vec![
            row.time_index.to_string(),
            row.impressions.to_string(),
            row.clicks.to_string(),
            row.total_clicks.to_string(),
        ];
        rec.extend(row.ctr.iter().map(|v| format_rate(*v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(series: &Series, path: impl AsRef<Path>) -> Result<(), EmitError> {
    if series.rows.is_empty() {
        return Err(EmitError::EmptySeries);
    }
    let mut buf = Vec::new();
    write_csv(series, &mut buf)?;
    write_atomic(path.as_ref(), |w| w.write_all(&buf))?;
    Ok(())
}

/// Parses a CSV produced by [`write_csv`].
pub fn read_csv<R: Read>(r: R) -> Result<Series, EmitError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let fixed = ["time", "impressions", "clicks", "total_clicks"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(EmitError::Parse(format!("unexpected header {headers:?}")));
    }
    let columns = headers
        .iter()
        .skip(fixed.len())
        .map(|h| h.parse::<CtrColumn>().map_err(EmitError::Parse))
        .collect::<Result<Vec<_>, _>>()?;
    let mut series = Series::new(columns);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let int = |k: usize| -> Result<u64, EmitError> {
            rec[k]
                .parse()
                .map_err(|e| EmitError::Parse(format!("row {}: {e}", i + 1)))
        };
        let ctr = rec
            .iter()
            .skip(fixed.len())
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|e| EmitError::Parse(format!("row {}: {e}", i + 1)))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        series.rows.push(SeriesRow {
            time_index: int(0)?,
            impressions: int(1)?,
            clicks: int(2)?,
            total_clicks: int(3)?,
            ctr,
        });
    }
    Ok(series)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let step = 10f64.powf(v.log10().floor()) / 2.0;
    (v / step).ceil() * step
}

/// SVG 1.1 line chart: one polyline per CTR column over the time index.
pub fn render_svg(series: &Series, title: &str) -> String {
    let x_min = series.rows.first().map_or(0, |r| r.time_index) as f64;
    let x_max = series.rows.last().map_or(1, |r| r.time_index) as f64;
    let x_span = (x_max - x_min).max(1.0);
    let y_max = nice_ceiling(
        series
            .rows
            .iter()
            .flat_map(|r| r.ctr.iter().flatten().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max),
    );
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / x_span * plot_w;
    let py = |y: f64| TOP + plot_h - y / y_max * plot_h;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        LEFT + plot_w / 2.0,
        xml_escape(title)
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        TOP + plot_h,
        LEFT + plot_w
    ));
    s.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"black\"/>\n",
        TOP + plot_h
    ));
    for i in 0..=5 {
        let y = y_max * i as f64 / 5.0;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            LEFT - 6.0,
            py(y) + 4.0,
            y
        ));
    }
    let ticks = series.rows.len().clamp(1, 10);
    for i in 0..=ticks {
        let x = x_min + x_span * i as f64 / ticks as f64;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            px(x),
            TOP + plot_h + 16.0,
            x.round()
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">time</text>\n",
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">CTR</text>\n",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    ));
    for (ci, column) in series.columns.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        let points: Vec<String> = series
            .rows
            .iter()
            .filter_map(|r| {
                r.ctr[ci]
                    .filter(|v| v.is_finite())
                    .map(|v| format!("{:.2},{:.2}", px(r.time_index as f64), py(v)))
            })
            .collect();
        s.push_str(&format!(
            "<polyline class=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            column.header(),
            points.join(" ")
        ));
        let ly = TOP + 14.0 + 18.0 * ci as f64;
        s.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            LEFT + plot_w + 12.0,
            LEFT + plot_w + 32.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            LEFT + plot_w + 38.0,
            ly + 4.0,
            column.header()
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn emit_plot(series: &Series, title: &str, path: impl AsRef<Path>) -> Result<(), EmitError> {
    if series.rows.is_empty() {
        return Err(EmitError::EmptySeries);
    }
    let svg = render_svg(series, title);
    write_atomic(path.as_ref(), |w| w.write_all(svg.as_bytes()))?;
    Ok(())
}
