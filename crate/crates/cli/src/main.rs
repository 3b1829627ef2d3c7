//! `ctrsim`: run auction scenarios, replay the published CTR tables and
//! demonstrate GFP bid cycling.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config or usage error,
//! 3 shape or acceptance violation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctrsim_core::auction::run_gfp_dynamics;
use ctrsim_core::experiment::config::ConfigError;
use ctrsim_core::experiment::emit::format_rate;
use ctrsim_core::experiment::scenario::default_specs;
use ctrsim_core::experiment::{
    compare_scenario, curve_shape_check, emit_csv, emit_plot, read_csv, render_report, replay_paper_tables,
    run_scenario, series_from_log, DiscardMode, ScenarioConfig, ScenarioRun, Series, ShapeError,
};
use ctrsim_core::io::{read_log, write_log};
use ctrsim_core::traffic::{detect_scripted, flagged_ids};
use ctrsim_core::{AdvertiserId, AuctionConfig, Cents, DetectorConfig, Millis, Ranking, RelativeSpan, WindowSpec};

#[derive(Parser)]
#[command(
    name = "ctrsim",
    version,
    about = "Sponsored-search auction and CTR estimator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its series, plot and event log.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        /// Override the scenario's handling of flagged clicks.
        #[arg(long, value_enum)]
        discard: Option<Discard>,
    },
    /// Rebuild both published CTR tables and print the errata ledger.
    Tables {
        /// Write the replayed series (ctr_old, ctr_relative) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run a scenario with all four estimators, keeping and then dropping
    /// flagged clicks.
    Compare {
        config: PathBuf,
        /// CSV for the run that keeps flagged clicks.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// CSV for the run that drops flagged clicks.
        #[arg(long)]
        csv_dropped: Option<PathBuf>,
    },
    /// Re-estimate CTRs from a saved JSONL event log.
    Replay(ReplayArgs),
    /// Check a series CSV for the rising and rise-then-fall curve shapes.
    Shape {
        csv: PathBuf,
        /// Tick at which the relative CTR must peak.
        #[arg(long)]
        peak: Option<u64>,
    },
    /// Alternate GFP best responses between two bidders and report the cycle.
    DemoGfp(DemoArgs),
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Discard {
    Count,
    Drop,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    #[arg(long)]
    focus: String,
    #[arg(long, default_value_t = 1000)]
    tick_ms: Millis,
    #[arg(long)]
    time_window: Option<Millis>,
    #[arg(long)]
    impression_window: Option<u64>,
    #[arg(long)]
    click_window: Option<u64>,
    /// Cumulative relative-clicks CTR.
    #[arg(long)]
    relative: bool,
    /// Relative-clicks CTR over a sliding interval instead.
    #[arg(long, conflicts_with = "relative")]
    relative_interval: Option<Millis>,
    /// Hide clicks the scripted-click detector flags.
    #[arg(long)]
    drop_flagged: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 1100)]
    cap_a: u64,
    #[arg(long, default_value_t = 800)]
    cap_b: u64,
    #[arg(long, default_value_t = 1000)]
    start_a: u64,
    #[arg(long, default_value_t = 300)]
    start_b: u64,
    #[arg(long, default_value_t = 100)]
    epsilon: u64,
    #[arg(long, default_value_t = 0)]
    reserve: u64,
    #[arg(long, default_value_t = 30)]
    max_steps: usize,
}

/// A result that fails a shape or acceptance check.
#[derive(Debug)]
struct Violation(String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if err.downcast_ref::<ConfigError>().is_some() {
                2
            } else if err.downcast_ref::<Violation>().is_some() || err.downcast_ref::<ShapeError>().is_some() {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, discard } => run(&config, out, discard),
        Command::Tables { csv, svg } => tables(csv, svg),
        Command::Compare {
            config,
            csv,
            csv_dropped,
        } => compare(&config, csv, csv_dropped),
        Command::Replay(args) => replay(args),
        Command::Shape { csv, peak } => shape(&csv, peak),
        Command::DemoGfp(args) => demo_gfp(args),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    // Keep ConfigError as the root cause so main maps it to exit code 2.
    Ok(ScenarioConfig::load(path)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_series(series: &Series, csv: Option<&Path>, svg: Option<&Path>, title: &str) -> Result<()> {
    if let Some(path) = csv {
        ensure_parent(path)?;
        emit_csv(series, path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = svg {
        ensure_parent(path)?;
        emit_plot(series, title, path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_series(series: &Series) {
    let headers = series.headers();
    println!("{}", headers.iter().map(|h| format!("{h:>12}")).collect::<String>());
    for row in &series.rows {
        let mut line = format!(
            "{:>12}{:>12}{:>12}{:>12}",
            row.time_index, row.impressions, row.clicks, row.total_clicks
        );
        for v in &row.ctr {
            let cell = format_rate(*v);
            line.push_str(&format!("{:>12}", if cell.is_empty() { "-" } else { &cell }));
        }
        println!("{line}");
    }
}

fn print_summary(run: &ScenarioRun) {
    let flagged = flagged_ids(&run.flags).len();
    println!(
        "{} events, {} flagged run(s) covering {flagged} click(s)",
        run.log.len(),
        run.flags.len()
    );
    for (adv, bill) in &run.billing {
        println!("  {adv:<16} billed {:>6} clicks  {}", bill.clicks, bill.spend);
    }
}

fn run(config: &Path, out: OutputArgs, discard: Option<Discard>) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(d) = discard {
        cfg.discard = match d {
            Discard::Count => DiscardMode::Count,
            Discard::Drop => DiscardMode::Drop,
        };
    }
    let run = run_scenario(&cfg)?;
    print_series(&run.series);
    print_summary(&run);
    let csv = out.csv.or(cfg.output.csv.clone());
    let svg = out.svg.or(cfg.output.svg.clone());
    let log = out.log.or(cfg.output.log.clone());
    write_series(
        &run.series,
        csv.as_deref(),
        svg.as_deref(),
        &format!("CTR of {}", cfg.focus),
    )?;
    if let Some(path) = log {
        ensure_parent(&path)?;
        write_log(&run.log, &path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn tables(csv: Option<PathBuf>, svg: Option<PathBuf>) -> Result<()> {
    let replay = replay_paper_tables();
    print!("{}", render_report(&replay));
    write_series(&replay.series, csv.as_deref(), svg.as_deref(), "Replayed CTR tables")?;
    let unexplained = replay.unexplained_ctr_mismatches();
    if !unexplained.is_empty() {
        return Err(Violation(format!(
            "{} CTR cell(s) disagree outside the errata ledger",
            unexplained.len()
        ))
        .into());
    }
    let report = curve_shape_check(&replay.series, Some(4))?;
    println!(
        "\nshape: {} strictly increasing {:.3} -> {:.3}; ctr_relative peaks {:.3} at t={} then falls to {:.3}",
        report.rising_column,
        report.rising_first,
        report.rising_last,
        report.peak_value,
        report.peak_tick,
        report.falling_last
    );
    Ok(())
}

fn compare(config: &Path, csv: Option<PathBuf>, csv_dropped: Option<PathBuf>) -> Result<()> {
    let cfg = load(config)?;
    let cmp = compare_scenario(&cfg)?;
    println!("flagged clicks kept:");
    print_series(&cmp.counted.series);
    print_summary(&cmp.counted);
    println!("\nflagged clicks dropped:");
    print_series(&cmp.dropped.series);
    print_summary(&cmp.dropped);
    write_series(&cmp.counted.series, csv.as_deref(), None, "")?;
    write_series(&cmp.dropped.series, csv_dropped.as_deref(), None, "")?;
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<()> {
    let log = read_log(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let focus = AdvertiserId::new(args.focus).map_err(|e| ConfigError::Invalid {
        field: "--focus".into(),
        reason: e.to_string(),
    })?;
    let mut specs = Vec::new();
    if let Some(window_ms) = args.time_window {
        specs.push(WindowSpec::TimeWindow { window_ms });
    }
    if let Some(impressions) = args.impression_window {
        specs.push(WindowSpec::ImpressionWindow { impressions });
    }
    if let Some(clicks) = args.click_window {
        specs.push(WindowSpec::ClickWindow { clicks });
    }
    if args.relative {
        specs.push(WindowSpec::Relative {
            span: RelativeSpan::Cumulative,
        });
    }
    if let Some(ms) = args.relative_interval {
        specs.push(WindowSpec::Relative {
            span: RelativeSpan::Interval(ms),
        });
    }
    if specs.is_empty() {
        specs = default_specs(args.tick_ms).to_vec();
    }
    for spec in &specs {
        spec.validate().map_err(|e| ConfigError::Invalid {
            field: format!("{spec:?}"),
            reason: e.to_string(),
        })?;
    }
    if args.tick_ms == 0 {
        return Err(ConfigError::Invalid {
            field: "--tick-ms".into(),
            reason: "must be at least 1".into(),
        }
        .into());
    }
    let dropped: Option<HashSet<u64>> = if args.drop_flagged {
        let det = DetectorConfig::default();
        Some(flagged_ids(&detect_scripted(
            &log.view(),
            det.min_run,
            det.tolerance_ms,
        )?))
    } else {
        None
    };
    let series = series_from_log(&log, &focus, &specs, args.tick_ms, dropped.as_ref())?;
    print_series(&series);
    write_series(&series, args.csv.as_deref(), None, "")?;
    Ok(())
}

fn shape(csv: &Path, peak: Option<u64>) -> Result<()> {
    let file = std::fs::File::open(csv).with_context(|| format!("reading {}", csv.display()))?;
    let series = read_csv(file)?;
    let report = curve_shape_check(&series, peak)?;
    println!(
        "PASS: {} strictly increasing; ctr_relative peaks {:.4} at t={}",
        report.rising_column, report.peak_value, report.peak_tick
    );
    Ok(())
}

fn demo_gfp(args: DemoArgs) -> Result<()> {
    let a = AdvertiserId::new("A")?;
    let b = AdvertiserId::new("B")?;
    let values = BTreeMap::from([(a.clone(), Cents(args.cap_a)), (b.clone(), Cents(args.cap_b))]);
    let cfg = AuctionConfig {
        num_slots: 2,
        reserve_price: Cents(args.reserve),
        ranking: Ranking::ByBid,
    };
    let run = run_gfp_dynamics(
        &[(a, Cents(args.start_a)), (b, Cents(args.start_b))],
        &values,
        Cents(args.epsilon),
        &cfg,
        args.max_steps,
    )?;
    println!(
        "values A={} B={}, epsilon {}, reserve {}",
        Cents(args.cap_a),
        Cents(args.cap_b),
        Cents(args.epsilon),
        Cents(args.reserve)
    );
    println!("{:>5} {:>6} {:>9} {:>9}", "step", "moved", "bid A", "bid B");
    for (i, state) in run.states.iter().enumerate() {
        let moved = match i {
            0 => "-",
            _ if i % 2 == 1 => "A",
            _ => "B",
        };
        println!(
            "{i:>5} {moved:>6} {:>9} {:>9}",
            state.bids[0].to_string(),
            state.bids[1].to_string()
        );
    }
    match run.period {
        Some(p) => {
            println!("cycle detected after {} steps: period {p}", run.steps());
            Ok(())
        }
        None => Err(Violation(format!("no cycle within {} steps", args.max_steps)).into()),
    }
}
