//! Argument definitions and subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nms_disloc::disloc::{
    classify, histogram_csv, per_second_rate, segments_csv, start_histogram, summarize, Thresholds, Tier,
};
use nms_disloc::engine::{analyze, Analysis, EngineConfig};
use nms_disloc::ingest::{read_events_path, validate_stream, write_events_csv, ObserverEvent};
use nms_disloc::netviz::{build, components, components_csv, edges_csv, nodes_csv, renormalize, LayoutMode};
use nms_disloc::roc::{aggregate, trades_csv};
use nms_disloc::sim::{parse_scenario, random_scenario, run, truth_csv, RandomScenario, SimTopology};
use nms_disloc::{Side, Symbol, VenueId};

#[derive(Debug, Parser)]
#[command(name = "nms-disloc", version, about = "SIP vs direct-feed dislocation analytics")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads for per-symbol parallelism.
    #[arg(long, global = true, env = "NMS_DISLOC_THREADS", default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect dislocation segments; writes segments.csv and histogram.csv.
    Detect(DetectArgs),
    /// Realized opportunity cost; writes trades_roc.csv and aggregate.csv.
    Roc(InputArgs),
    /// Ordered-network export; writes nodes.csv, edges.csv, components.csv.
    Circle(CircleArgs),
    /// Summary tables; writes table1.csv and table3.csv and prints a report.
    Stats(StatsArgs),
    /// Run the market simulator; writes events.csv and truth.csv.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Event stream (CSV with header, or NDJSON).
    #[arg(long)]
    pub input: PathBuf,
    /// Restrict to these symbols (repeatable or comma-separated).
    #[arg(long = "symbol", value_delimiter = ',')]
    pub symbols: Vec<String>,
    /// Accept direct quotes only from these venues.
    #[arg(long, value_delimiter = ',')]
    pub venues: Vec<u16>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Keep only the last difference per microsecond.
    #[arg(long)]
    pub coalesce_us: bool,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Segments strictly longer than this are actionable.
    #[arg(long, default_value_t = 545)]
    pub threshold_us: u64,
    /// Segments whose minimum magnitude strictly exceeds this (e4) are large.
    #[arg(long, default_value_t = 100)]
    pub large_min_mag_e4: i64,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Result<Thresholds> {
        if self.large_min_mag_e4 < 0 {
            bail!("--large-min-mag-e4 must be non-negative");
        }
        Ok(Thresholds { actionable_us: self.threshold_us, large_min_mag_e4: self.large_min_mag_e4 })
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Also write snapshots.csv with (SIP, DBBO) after every quote.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Args)]
pub struct CircleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Node layout: event-space or real-time.
    #[arg(long, default_value = "event-space")]
    pub layout: LayoutMode,
    /// Segment filter: none, actionable or actionable_large.
    #[arg(long, default_value = "none")]
    pub tier: Tier,
    /// Restrict to one side (bid or offer).
    #[arg(long)]
    pub side: Option<Side>,
    /// Fold all days onto one trading day.
    #[arg(long)]
    pub modulo_day: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Trading days for the per-second rates (default: days in the stream).
    #[arg(long)]
    pub days: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Topology config; defaults to the built-in New Jersey layout.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Scenario file; without one a random scenario is generated.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Seed for the random scenario.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random actions.
    #[arg(long, default_value_t = 10_000)]
    pub orders: usize,
    /// Override the topology's SIP processing time.
    #[arg(long)]
    pub sip_processing_us: Option<u64>,
    /// Last permitted action time.
    #[arg(long, default_value_t = u64::MAX)]
    pub horizon_us: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Reads `--config FILE` (`key = value` lines) and splices the values in as
/// flags right after the subcommand, so flags given on the command line win.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let mut extra = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').with_context(|| format!("{path}:{}: expected key = value", i + 1))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => extra.push(format!("--{k}")),
            "false" => {}
            _ => {
                extra.push(format!("--{k}"));
                extra.push(v.to_string());
            }
        }
    }
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 2).unwrap_or(rest.len());
    rest.splice(sub..sub, extra);
    Ok(rest)
}

/// Data problems: reported with exit status 1.
#[derive(Debug)]
pub struct DataError(pub anyhow::Error);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for DataError {}

fn data<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| DataError(e).into())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load(args: &InputArgs, threads: usize, snapshots: bool) -> Result<(Vec<ObserverEvent>, Analysis)> {
    let symbols = args
        .symbols
        .iter()
        .map(|s| Symbol::new(s).with_context(|| format!("--symbol {s}")))
        .collect::<Result<BTreeSet<_>>>()?;
    let events = data(read_events_path(&args.input).with_context(|| format!("reading {}", args.input.display())))?;
    let report = validate_stream(&events);
    if !report.is_ordered() {
        return data(Err(anyhow::anyhow!(
            "{}: {} timestamp regressions; sort the stream by observer time first",
            args.input.display(),
            report.regressions
        )));
    }
    let config = EngineConfig {
        venues: (!args.venues.is_empty()).then(|| args.venues.iter().map(|&v| VenueId(v)).collect()),
        symbols: (!symbols.is_empty()).then_some(symbols),
        snapshots,
        coalesce_us: args.coalesce_us,
    };
    let analysis = data(analyze(&events, &config, threads.max(1)).map_err(anyhow::Error::from))?;
    Ok((events, analysis))
}

pub fn run_cli(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Detect(a) => {
            let t = a.thresholds.thresholds()?;
            let (_, an) = load(&a.input, threads, a.snapshots)?;
            write_out(&a.input.out, "segments.csv", &segments_csv(&an.segments, &t))?;
            write_out(&a.input.out, "histogram.csv", &histogram_csv(&start_histogram(&an.segments, &t)))?;
            if a.snapshots {
                let mut s = format!("{}\n", nms_disloc::consolidate::SNAPSHOT_HEADER);
                for row in &an.snapshots {
                    s.push_str(row);
                    s.push('\n');
                }
                write_out(&a.input.out, "snapshots.csv", &s)?;
            }
            eprintln!("{} events, {} segments", an.events, an.segments.len());
        }
        Command::Roc(a) => {
            let (_, an) = load(&a, threads, false)?;
            let agg = aggregate(&an.roc_records, &an.trades);
            write_out(&a.out, "trades_roc.csv", &trades_csv(&an.trades, &an.roc_records))?;
            write_out(&a.out, "aggregate.csv", &agg.table_csv())?;
            write_out(&a.out, "aggregate_by_key.csv", &agg.breakdown_csv())?;
            eprintln!(
                "{} trades, {} ROC records, {} skipped for a missing direct side",
                an.trades.len(),
                an.roc_records.len(),
                an.roc_skipped
            );
        }
        Command::Circle(a) => {
            let t = a.thresholds.thresholds()?;
            let (_, an) = load(&a.input, threads, false)?;
            let chosen: Vec<_> = an
                .segments
                .iter()
                .filter(|s| a.tier.admits(classify(s, &t)) && a.side.is_none_or(|side| s.side == side))
                .copied()
                .collect();
            let net = build(&chosen, a.modulo_day);
            let comps = components(&net);
            write_out(&a.input.out, "nodes.csv", &nodes_csv(&net, &renormalize(&net, a.layout)))?;
            write_out(&a.input.out, "edges.csv", &edges_csv(&net))?;
            write_out(&a.input.out, "components.csv", &components_csv(&net, &comps))?;
            eprintln!("{} nodes, {} edges, {} components", net.nodes.len(), net.edges.len(), comps.len());
        }
        Command::Stats(a) => {
            let t = a.thresholds.thresholds()?;
            let (events, an) = load(&a.input, threads, false)?;
            let days = match a.days {
                Some(0) => bail!("--days must be positive"),
                Some(d) => d,
                None => events.iter().map(|e| e.obs_ts.day()).collect::<BTreeSet<_>>().len().max(1) as u64,
            };
            let table = summarize(&an.segments, &t);
            let agg = aggregate(&an.roc_records, &an.trades);
            write_out(&a.input.out, "table1.csv", &agg.table_csv())?;
            write_out(&a.input.out, "table3.csv", &table.to_csv())?;
            print!("{}", table.render_text(&t));
            for tier in Tier::ALL {
                let n = table.tier(tier).count;
                println!(
                    "{:<18} {:>12} segments, {:.4} per second over {} day(s)",
                    tier.as_str(),
                    n,
                    per_second_rate(n, days),
                    days
                );
            }
        }
        Command::Simulate(a) => {
            let mut topo = match &a.topology {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    data(SimTopology::parse(&text).with_context(|| p.display().to_string()))?
                }
                None => SimTopology::default_nms(0),
            };
            if let Some(us) = a.sip_processing_us {
                topo.sip_processing_us = us;
            }
            let scenario = match &a.scenario {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    data(parse_scenario(&text).with_context(|| p.display().to_string()))?
                }
                None => {
                    let params = RandomScenario { orders: a.orders, ..RandomScenario::default() };
                    random_scenario(&params, a.seed)
                }
            };
            let out = data(run(&topo, &scenario, a.horizon_us).map_err(anyhow::Error::from))?;
            let mut buf = Vec::new();
            write_events_csv(&mut buf, &out.events)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("events.csv"), buf).context("writing events.csv")?;
            write_out(&a.out, "truth.csv", &truth_csv(&out.truth))?;
            eprintln!(
                "{} actions, {} fills, {} events, {} true segments",
                out.stats.actions,
                out.stats.fills,
                out.events.len(),
                out.truth.segments.len()
            );
        }
    }
    Ok(())
}
