//! Replay of the two published CTR tables from their arithmetic
//! reconstruction, with a ledger of printed cells the reconstruction
//! contradicts.
//!
//! The reconstruction, for t = 1..=20:
//!
//! * impressions(t) = 16 + 12 (t - 1)
//! * clicks(t) = 2 for t = 1, else 6 (t - 1)
//! * cohort total clicks: 22, 50, 84, ... (increments 22 + 6 (t - 1))
//!
//! Table 1 CTR is `clicks / (impressions + clicks)`; Table 2 CTR is the
//! relative-clicks estimate `clicks / total`.

use std::fmt;

use super::series::{CtrColumn, Series, SeriesRow};
use crate::estimators::{ctr_paper_table1, ctr_relative};
use crate::events::{AdvertiserId, ClickTally};

/// Absolute tolerance for matching a printed CTR cell.
pub const CTR_TOLERANCE: f64 = 0.001;

pub const ROWS: usize = 20;

/// Published Table 1 cells: time, impressions, clicks, CTR.
pub const PUBLISHED_TABLE1: [(u32, &str, &str, &str); ROWS] = [
    (1, "16", "2", "0.111"),
    (2, "28", "6", "0.176"),
    (3, "40", "12", "0.230"),
    (4, "52", "18", "0.257"),
    (5, "64", "24", "0.272"),
    (6, "76", "30", "0.283"),
    (7, "88", "42", "0.290"),
    (8, "100", "48", "0.295"),
    (9, "112", "54", "3.0"),
    (10, "124", "60", "0.303"),
    (11, "136", "66", "0.306"),
    (12, "148", "72", "0.308"),
    (13, "160", "78", "0.310"),
    (14, "172", "84", "0.312"),
    (15, "184", "90", "0.313"),
    (16, "196", "96", "0.314"),
    (17, "208", "102", "0.315"),
    (18, "220", "108", "0.316"),
    (19, "232", "114", "0.317"),
    (20, "244", "120", "0.318"),
];

/// Published Table 2 cells: time, impressions, clicks, total clicks, CTR.
pub const PUBLISHED_TABLE2: [(u32, &str, &str, &str, &str); ROWS] = [
    (1, "16", "2", "22", "0.090"),
    (2, "28", "6", "50", "0.12"),
    (3, "40", "12", "84", "0.142"),
    (4, "52", "18", "124", "0.145"),
    (5, "64", "24", "170", "0.141"),
    (6, "76", "30", "222", "0.135"),
    (7, "88", "42", "280", "0.128"),
    (8, "100", "48", "344", "0.122"),
    (9, "112", "54", "414", "0.115"),
    (10, "124", "60", "490", "0.110"),
    (11, "136", "66", "572", "0.104"),
    (12, "148", "72", "660", "0.100"),
    (13, "160", "78", "754", "0.095"),
    (14, "172", "84", "854", "0.091"),
    (15, "184", "90", "960", "0.087"),
    (16, "196", "96", "1072", "0.083"),
    (17, "208", "102", "1190", "0.080"),
    (18, "220", "108", "1314", "0.077"),
    (19, "232", "114", "0.317", "0.074"),
    (20, "244", "120", "1444", "0.072"),
];

/// Reconstructed cohort click totals.
pub const COHORT_TOTALS: [u64; ROWS] = [
    22, 50, 84, 124, 170, 222, 280, 344, 414, 490, 572, 660, 754, 854, 960, 1072, 1190, 1314, 1444, 1580,
];

pub fn reconstructed_impressions(t: u32) -> u64 {
    16 + 12 * (t as u64 - 1)
}

pub fn reconstructed_clicks(t: u32) -> u64 {
    if t == 1 {
        2
    } else {
        6 * (t as u64 - 1)
    }
}

pub fn reconstructed_total(t: u32) -> u64 {
    COHORT_TOTALS[t as usize - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableRef {
    One,
    Two,
    Both,
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableRef::One => f.write_str("Table 1"),
            TableRef::Two => f.write_str("Table 2"),
            TableRef::Both => f.write_str("Tables 1+2"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableColumn {
    Impressions,
    Clicks,
    TotalClicks,
    Ctr,
}

impl fmt::Display for TableColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableColumn::Impressions => "impressions",
            TableColumn::Clicks => "clicks",
            TableColumn::TotalClicks => "total clicks",
            TableColumn::Ctr => "CTR",
        })
    }
}

/// A printed cell, or run of cells, that contradicts the reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Erratum {
    pub table: TableRef,
    /// Inclusive row range.
    pub rows: (u32, u32),
    pub column: TableColumn,
    pub printed_value: String,
    pub reconstructed_value: String,
    pub justification: String,
}

/// Comparison of one printed cell against the reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct CellCheck {
    pub table: TableRef,
    pub row: u32,
    pub column: TableColumn,
    pub printed: String,
    pub reconstructed: f64,
    pub matches: bool,
}

#[derive(Clone, Debug)]
pub struct TableReplay {
    /// Columns `ctr_old` (Table 1) and `ctr_relative` (Table 2).
    pub series: Series,
    pub checks: Vec<CellCheck>,
    pub errata: Vec<Erratum>,
}

impl TableReplay {
    pub fn ctr_checks(&self) -> impl Iterator<Item = &CellCheck> {
        self.checks.iter().filter(|c| c.column == TableColumn::Ctr)
    }

    pub fn is_erratum(&self, table: TableRef, row: u32, column: TableColumn) -> bool {
        self.errata.iter().any(|e| {
            (e.table == table || e.table == TableRef::Both)
                && e.column == column
                && (e.rows.0..=e.rows.1).contains(&row)
        })
    }

    /// CTR cells outside the ledger that fail to match.
    pub fn unexplained_ctr_mismatches(&self) -> Vec<&CellCheck> {
        self.ctr_checks()
            .filter(|c| !c.matches && !self.is_erratum(c.table, c.row, c.column))
            .collect()
    }
}

fn cell_matches(column: TableColumn, printed: &str, reconstructed: f64) -> bool {
    match printed.parse::<f64>() {
        Ok(p) if column == TableColumn::Ctr => (p - reconstructed).abs() <= CTR_TOLERANCE,
        Ok(p) => p == reconstructed,
        Err(_) => false,
    }
}

fn table1_ctr(t: u32) -> f64 {
    ctr_paper_table1(reconstructed_clicks(t), reconstructed_impressions(t)).expect("reconstructed rows are never empty")
}

fn table2_ctr(t: u32) -> f64 {
    let own = AdvertiserId::new("focus").expect("non-empty");
    let rest = AdvertiserId::new("rest").expect("non-empty");
    let clicks = reconstructed_clicks(t);
    let tally = ClickTally::from_counts(
        [(own.clone(), clicks), (rest, reconstructed_total(t) - clicks)],
        (0, t as u64),
    );
    ctr_relative(&tally, &own).value
}

/// Rebuilds both tables, compares every printed cell and derives the errata
/// ledger from the mismatches.
pub fn replay_paper_tables() -> TableReplay {
    let mut series = Series::new(vec![CtrColumn::Old, CtrColumn::Relative]);
    let mut checks = Vec::new();
    for t in 1..=ROWS as u32 {
        let (imp, clicks, total) = (
            reconstructed_impressions(t),
            reconstructed_clicks(t),
            reconstructed_total(t),
        );
        let (ctr1, ctr2) = (table1_ctr(t), table2_ctr(t));
        series.rows.push(SeriesRow {
            time_index: t as u64,
            impressions: imp,
            clicks,
            total_clicks: total,
            ctr: vec![Some(ctr1), Some(ctr2)],
        });

        let p1 = PUBLISHED_TABLE1[t as usize - 1];
        let p2 = PUBLISHED_TABLE2[t as usize - 1];
        let cells = [
            (TableRef::One, TableColumn::Impressions, p1.1, imp as f64),
            (TableRef::One, TableColumn::Clicks, p1.2, clicks as f64),
            (TableRef::One, TableColumn::Ctr, p1.3, ctr1),
            (TableRef::Two, TableColumn::Impressions, p2.1, imp as f64),
            (TableRef::Two, TableColumn::Clicks, p2.2, clicks as f64),
            (TableRef::Two, TableColumn::TotalClicks, p2.3, total as f64),
            (TableRef::Two, TableColumn::Ctr, p2.4, ctr2),
        ];
        for (table, column, printed, reconstructed) in cells {
            checks.push(CellCheck {
                table,
                row: t,
                column,
                printed: printed.to_string(),
                reconstructed,
                matches: cell_matches(column, printed, reconstructed),
            });
        }
    }
    let errata = derive_errata(&checks);
    TableReplay { series, checks, errata }
}

fn fmt_value(column: TableColumn, v: f64) -> String {
    match column {
        TableColumn::Ctr => format!("{v:.4}"),
        _ => format!("{v}"),
    }
}

/// Rows whose printed clicks equal the reconstruction one row later.
fn shifted_click_rows(checks: &[CellCheck], table: TableRef) -> Option<(u32, u32)> {
    let bad: Vec<&CellCheck> = checks
        .iter()
        .filter(|c| c.table == table && c.column == TableColumn::Clicks && !c.matches)
        .collect();
    let first = bad.first()?.row;
    let last = bad.last()?.row;
    let contiguous = bad.iter().enumerate().all(|(i, c)| c.row == first + i as u32);
    let shifted = bad
        .iter()
        .all(|c| c.printed.parse::<u64>().ok() == Some(reconstructed_clicks(c.row + 1)));
    (contiguous && shifted).then_some((first, last))
}

fn derive_errata(checks: &[CellCheck]) -> Vec<Erratum> {
    let mut errata = Vec::new();
    let shift1 = shifted_click_rows(checks, TableRef::One);
    let shift2 = shifted_click_rows(checks, TableRef::Two);
    let mut covered: Vec<(TableRef, (u32, u32))> = Vec::new();
    let shift_entry = |table, rows: (u32, u32)| {
        Erratum {
        table,
        rows,
        column: TableColumn::Clicks,
        printed_value: format!(
            "{}, {}, ..., {}",
            reconstructed_clicks(rows.0 + 1),
            reconstructed_clicks(rows.0 + 2),
            reconstructed_clicks(rows.1 + 1)
        ),
        reconstructed_value: format!(
            "{}, {}, ..., {}",
            reconstructed_clicks(rows.0),
            reconstructed_clicks(rows.0 + 1),
            reconstructed_clicks(rows.1)
        ),
        justification: format!(
            "printed clicks from row {} on repeat the next row's value; the printed CTR column is consistent only with the unshifted clicks",
            rows.0
        ),
    }
    };
    match (shift1, shift2) {
        (Some(a), Some(b)) if a == b => {
            errata.push(shift_entry(TableRef::Both, a));
            covered.push((TableRef::One, a));
            covered.push((TableRef::Two, a));
        }
        (a, b) => {
            if let Some(a) = a {
                errata.push(shift_entry(TableRef::One, a));
                covered.push((TableRef::One, a));
            }
            if let Some(b) = b {
                errata.push(shift_entry(TableRef::Two, b));
                covered.push((TableRef::Two, b));
            }
        }
    }

    for c in checks.iter().filter(|c| !c.matches) {
        let in_shift = c.column == TableColumn::Clicks
            && covered
                .iter()
                .any(|(t, (lo, hi))| *t == c.table && (*lo..=*hi).contains(&c.row));
        if in_shift {
            continue;
        }
        errata.push(Erratum {
            table: c.table,
            rows: (c.row, c.row),
            column: c.column,
            printed_value: c.printed.clone(),
            reconstructed_value: fmt_value(c.column, c.reconstructed),
            justification: explain(c),
        });
    }
    errata
}

fn explain(c: &CellCheck) -> String {
    let printed = c.printed.parse::<f64>().ok();
    if c.column == TableColumn::Ctr {
        if let Some(p) = printed {
            if (p / 10.0 - c.reconstructed).abs() <= CTR_TOLERANCE {
                return format!(
                    "decimal point misplaced: clicks / (impressions + clicks) = {:.4}",
                    c.reconstructed
                );
            }
        }
    }
    if c.column == TableColumn::TotalClicks && c.table == TableRef::Two {
        let t1_ctr = PUBLISHED_TABLE1[c.row as usize - 1].3;
        if c.printed == t1_ctr {
            return format!(
                "cell holds the same row's Table 1 CTR; the running total {} reproduces the printed CTR {}",
                c.reconstructed,
                PUBLISHED_TABLE2[c.row as usize - 1].4
            );
        }
        if c.row > 1 && printed == Some(reconstructed_total(c.row - 1) as f64) {
            return format!(
                "cell repeats the previous row's total; the running total {} reproduces the printed CTR {}",
                c.reconstructed,
                PUBLISHED_TABLE2[c.row as usize - 1].4
            );
        }
    }
    "printed value disagrees with the reconstruction".to_string()
}

/// Plain-text report: both tables side by side with the reconstruction,
/// then the errata ledger.
pub fn render_report(replay: &TableReplay) -> String {
    let mut out = String::new();
    let check = |table, row, column| {
        replay
            .checks
            .iter()
            .find(|c| c.table == table && c.row == row && c.column == column)
            .expect("every cell is checked")
    };
    let mark = |c: &CellCheck| {
        if c.matches {
            " "
        } else if replay.is_erratum(c.table, c.row, c.column) {
            "E"
        } else {
            "!"
        }
    };
    out.push_str("Table 1: clicks / (impressions + clicks)\n");
    out.push_str(" time  impr  clicks(printed)  ctr(printed)  ctr(reconstructed)\n");
    for t in 1..=ROWS as u32 {
        let clicks = check(TableRef::One, t, TableColumn::Clicks);
        let ctr = check(TableRef::One, t, TableColumn::Ctr);
        out.push_str(&format!(
            "{t:>5} {:>5} {:>7} ({:>4}){} {:>8}{}      {:>8.4}\n",
            reconstructed_impressions(t),
            reconstructed_clicks(t),
            clicks.printed,
            mark(clicks),
            ctr.printed,
            mark(ctr),
            ctr.reconstructed
        ));
    }
    out.push_str("\nTable 2: relative clicks, clicks / cohort total\n");
    out.push_str(" time  impr  clicks(printed)  total(printed)  ctr(printed)  ctr(reconstructed)\n");
    for t in 1..=ROWS as u32 {
        let clicks = check(TableRef::Two, t, TableColumn::Clicks);
        let total = check(TableRef::Two, t, TableColumn::TotalClicks);
        let ctr = check(TableRef::Two, t, TableColumn::Ctr);
        out.push_str(&format!(
            "{t:>5} {:>5} {:>7} ({:>4}){} {:>6} ({:>5}){} {:>8}{}      {:>8.4}\n",
            reconstructed_impressions(t),
            reconstructed_clicks(t),
            clicks.printed,
            mark(clicks),
            reconstructed_total(t),
            total.printed,
            mark(total),
            ctr.printed,
            mark(ctr),
            ctr.reconstructed
        ));
    }
    out.push_str("\nErrata (E = printed cell explained by the ledger, ! = unexplained)\n");
    out.push_str(&format!(
        "{:<11} {:<8} {:<13} {:<20} {:<20} {}\n",
        "table", "rows", "column", "printed", "reconstructed", "justification"
    ));
    for e in &replay.errata {
        let rows = if e.rows.0 == e.rows.1 {
            e.rows.0.to_string()
        } else {
            format!("{}-{}", e.rows.0, e.rows.1)
        };
        out.push_str(&format!(
            "{:<11} {:<8} {:<13} {:<20} {:<20} {}\n",
            e.table.to_string(),
            rows,
            e.column.to_string(),
            e.printed_value,
            e.reconstructed_value,
            e.justification
        ));
    }
    let ctr_total = replay.ctr_checks().count();
    let ctr_ok = replay.ctr_checks().filter(|c| c.matches).count();
    out.push_str(&format!(
        "\nCTR cells matching within {CTR_TOLERANCE}: {ctr_ok}/{ctr_total}; unexplained mismatches: {}\n",
        replay.unexplained_ctr_mismatches().len()
    ));
    out
}
