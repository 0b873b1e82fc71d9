//! Dislocation segments: maximal runs of constant, non-zero sign of the
//! SIP-minus-direct price difference on one side of one symbol.
//!
//! Intervals are half-open `[start, end)`. A sign flip closes one segment and
//! opens the next at the same instant; a return to zero or to an undefined
//! difference closes the run. Several samples may share a timestamp, so
//! zero-duration segments are legal.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::consolidate::DeltaSample;
use crate::types::{format_e4, Price, Side, Symbol, TimeUs};

/// Trading seconds in one regular session (6.5 hours).
pub const SESSION_SECONDS: u64 = 23_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DislocationSegment {
    pub symbol: Symbol,
    pub side: Side,
    pub start: TimeUs,
    pub end: TimeUs,
    /// +1 when the SIP price is above the direct price, -1 when below.
    pub direction: i8,
    pub min_dp: Price,
    pub max_dp: Price,
    pub min_mag: Price,
    pub max_mag: Price,
    /// Closed by end of stream rather than by a feed change.
    pub truncated: bool,
    /// Opened by a sign flip that closed the previous segment.
    pub flip_start: bool,
}

impl DislocationSegment {
    pub fn duration_us(&self) -> u64 {
        self.end.0 - self.start.0
    }

    /// Twice the mean magnitude, `max_mag + min_mag`, kept integral.
    pub fn mean_mag_x2(&self) -> i64 {
        self.max_mag.0 + self.min_mag.0
    }

    pub fn mean_mag(&self) -> f64 {
        self.mean_mag_x2() as f64 / 2.0
    }

    /// Edge weight used by the ordered network: the larger absolute extreme.
    pub fn peak_abs(&self) -> Price {
        Price(self.min_dp.0.abs().max(self.max_dp.0.abs()))
    }
}

/// A maximal interval with a non-zero difference of any sign, partitioned
/// into segments of alternating direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dislocation {
    pub symbol: Symbol,
    pub side: Side,
    pub start: TimeUs,
    pub end: TimeUs,
    pub segments: Vec<DislocationSegment>,
}

#[derive(Debug, Clone, Copy)]
struct OpenRun {
    start: TimeUs,
    direction: i8,
    min_dp: Price,
    max_dp: Price,
    flip_start: bool,
}

impl OpenRun {
    fn close(self, symbol: Symbol, side: Side, end: TimeUs, truncated: bool) -> DislocationSegment {
        let (a, b) = (self.min_dp.abs(), self.max_dp.abs());
        DislocationSegment {
            symbol,
            side,
            start: self.start,
            end,
            direction: self.direction,
            min_dp: self.min_dp,
            max_dp: self.max_dp,
            min_mag: a.min(b),
            max_mag: a.max(b),
            truncated,
            flip_start: self.flip_start,
        }
    }
}

/// Streaming detector for one symbol and side.
///
/// By default every sample takes effect in stream order, so several samples
/// sharing a timestamp can yield zero-duration segments. A coalescing
/// detector instead keeps only the last sample per timestamp, which models an
/// observer that resolves state once per microsecond.
#[derive(Debug, Clone)]
pub struct SegmentDetector {
    symbol: Symbol,
    side: Side,
    open: Option<OpenRun>,
    coalesce: bool,
    pending: Option<(TimeUs, Option<Price>)>,
}

impl SegmentDetector {
    pub fn new(symbol: Symbol, side: Side) -> SegmentDetector {
        SegmentDetector { symbol, side, open: None, coalesce: false, pending: None }
    }

    /// A detector that applies only the last sample of each timestamp.
    pub fn coalescing(symbol: Symbol, side: Side) -> SegmentDetector {
        SegmentDetector { coalesce: true, ..SegmentDetector::new(symbol, side) }
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    /// Feeds the new piecewise-constant value taking effect at `ts`.
    /// Returns the segment this change closes, if any.
    pub fn push(&mut self, ts: TimeUs, dp: Option<Price>) -> Option<DislocationSegment> {
        if !self.coalesce {
            return self.apply(ts, dp);
        }
        match self.pending.replace((ts, dp)) {
            Some((t, v)) if t != ts => self.apply(t, v),
            _ => None,
        }
    }

    fn apply(&mut self, ts: TimeUs, dp: Option<Price>) -> Option<DislocationSegment> {
        let sign = dp.map_or(0, Price::signum);
        if let Some(run) = self.open.as_mut() {
            if run.direction == sign {
                let v = dp.unwrap_or_default();
                run.min_dp = run.min_dp.min(v);
                run.max_dp = run.max_dp.max(v);
                return None;
            }
        }
        let closed = self.open.take().map(|r| r.close(self.symbol, self.side, ts, false));
        if sign != 0 {
            let v = dp.unwrap_or_default();
            self.open =
                Some(OpenRun { start: ts, direction: sign, min_dp: v, max_dp: v, flip_start: closed.is_some() });
        }
        closed
    }

    /// Applies any pending sample, then closes the open run at `end`,
    /// flagged as truncated.
    pub fn finish(&mut self, end: TimeUs) -> impl Iterator<Item = DislocationSegment> {
        let flushed = self.pending.take().and_then(|(t, v)| self.apply(t, v));
        let truncated = self.open.take().map(|r| r.close(self.symbol, self.side, end.max(r.start), true));
        flushed.into_iter().chain(truncated)
    }
}

/// Runs one detector per symbol over the samples for `side`, closing open
/// runs at `stream_end`. Output is in closing order, then symbol order for
/// runs closed by end of stream.
pub fn detect_until(deltas: &[DeltaSample], side: Side, stream_end: TimeUs) -> Vec<DislocationSegment> {
    let mut detectors: HashMap<Symbol, SegmentDetector> = HashMap::new();
    let mut out = Vec::new();
    for s in deltas.iter().filter(|s| s.side == side) {
        let det = detectors.entry(s.symbol).or_insert_with(|| SegmentDetector::new(s.symbol, side));
        out.extend(det.push(s.ts, s.dp));
    }
    let mut rest: Vec<_> = detectors.into_iter().collect();
    rest.sort_by_key(|(sym, _)| *sym);
    for (_, mut det) in rest {
        out.extend(det.finish(stream_end));
    }
    out
}

/// [`detect_until`] with the stream ending at the last sample.
pub fn detect(deltas: &[DeltaSample], side: Side) -> Vec<DislocationSegment> {
    let end = deltas.last().map(|s| s.ts).unwrap_or_default();
    detect_until(deltas, side, end)
}

/// Groups segments (in time order, one symbol and side) into dislocations.
pub fn group_dislocations(segments: &[DislocationSegment]) -> Vec<Dislocation> {
    let mut out: Vec<Dislocation> = Vec::new();
    for seg in segments {
        match out.last_mut() {
            Some(d) if seg.flip_start && d.end == seg.start && d.symbol == seg.symbol && d.side == seg.side => {
                d.end = seg.end;
                d.segments.push(*seg);
            }
            _ => out.push(Dislocation {
                symbol: seg.symbol,
                side: seg.side,
                start: seg.start,
                end: seg.end,
                segments: vec![*seg],
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    /// Segments strictly longer than this are actionable.
    pub actionable_us: u64,
    /// Segments whose minimum magnitude strictly exceeds this are large.
    pub large_min_mag_e4: i64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { actionable_us: 545, large_min_mag_e4: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flags {
    pub actionable: bool,
    pub large: bool,
    /// Large by maximum rather than minimum magnitude.
    pub large_by_max: bool,
}

pub fn classify(seg: &DislocationSegment, t: &Thresholds) -> Flags {
    Flags {
        actionable: seg.duration_us() > t.actionable_us,
        large: seg.min_mag.0 > t.large_min_mag_e4,
        large_by_max: seg.max_mag.0 > t.large_min_mag_e4,
    }
}

/// Filter tiers of the summary table, each a subset of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    All,
    Actionable,
    ActionableLarge,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::All, Tier::Actionable, Tier::ActionableLarge];

    pub fn admits(self, f: Flags) -> bool {
        match self {
            Tier::All => true,
            Tier::Actionable => f.actionable,
            Tier::ActionableLarge => f.actionable && f.large,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::All => "none",
            Tier::Actionable => "actionable",
            Tier::ActionableLarge => "actionable_large",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "all" => Ok(Tier::All),
            "actionable" => Ok(Tier::Actionable),
            "actionable_large" | "large" => Ok(Tier::ActionableLarge),
            _ => Err(format!("unknown filter tier {s:?}")),
        }
    }
}

/// Describe-style statistics of one column, in the column's native unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub std: Option<f64>,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of the `k`-th order statistics, selecting
/// instead of sorting.
fn select_quantile(values: &mut [i64], q: f64) -> f64 {
    let n = values.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    let (_, lo_v, upper) = values.select_nth_unstable(lo);
    let lo_v = *lo_v;
    let hi_v = if hi == lo { lo_v } else { upper.iter().copied().min().unwrap_or(lo_v) };
    lo_v as f64 + (hi_v - lo_v) as f64 * frac
}

/// Statistics over integer observations, divided by `scale` (a power of two
/// keeps the division exact).
pub fn describe(values: &mut [i64], scale: f64) -> Option<ColumnStats> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let sum: i128 = values.iter().map(|&v| v as i128).sum();
    let sum_sq: i128 = values.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let std = (n > 1).then(|| {
        let num = n as i128 * sum_sq - sum * sum;
        ((num as f64) / ((n * (n - 1)) as f64)).sqrt() / scale
    });
    let min = *values.iter().min().unwrap_or(&0);
    let max = *values.iter().max().unwrap_or(&0);
    let q25 = select_quantile(values, 0.25);
    let q50 = select_quantile(values, 0.5);
    let q75 = select_quantile(values, 0.75);
    Some(ColumnStats {
        mean: sum as f64 / n as f64 / scale,
        std,
        min: min as f64 / scale,
        q25: q25 / scale,
        q50: q50 / scale,
        q75: q75 / scale,
        max: max as f64 / scale,
    })
}

/// Columns of the summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    DurationUs,
    MinDp,
    MaxDp,
    MinMag,
    MeanMag,
    MaxMag,
}

impl Column {
    pub const ALL: [Column; 6] =
        [Column::DurationUs, Column::MinDp, Column::MaxDp, Column::MinMag, Column::MeanMag, Column::MaxMag];

    pub fn title(self) -> &'static str {
        match self {
            Column::DurationUs => "Duration",
            Column::MinDp => "Min. Value",
            Column::MaxDp => "Max. Value",
            Column::MinMag => "Min. Mag.",
            Column::MeanMag => "Mean Mag.",
            Column::MaxMag => "Max. Mag.",
        }
    }

    fn csv_name(self) -> &'static str {
        match self {
            Column::DurationUs => "duration_s",
            Column::MinDp => "min_value",
            Column::MaxDp => "max_value",
            Column::MinMag => "min_mag",
            Column::MeanMag => "mean_mag",
            Column::MaxMag => "max_mag",
        }
    }

    /// Raw integer observation and its divisor into native units.
    fn extract(self, s: &DislocationSegment) -> (i64, f64) {
        match self {
            Column::DurationUs => (s.duration_us() as i64, 1.0),
            Column::MinDp => (s.min_dp.0, 1.0),
            Column::MaxDp => (s.max_dp.0, 1.0),
            Column::MinMag => (s.min_mag.0, 1.0),
            Column::MeanMag => (s.mean_mag_x2(), 2.0),
            Column::MaxMag => (s.max_mag.0, 1.0),
        }
    }

    /// Divisor from native units (microseconds, 10^-4 dollars) to report
    /// units (seconds, dollars).
    fn report_divisor(self) -> f64 {
        match self {
            Column::DurationUs => 1e6,
            _ => 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierStats {
    pub tier: Tier,
    pub count: u64,
    /// Indexed like [`Column::ALL`]; `None` when the tier is empty.
    pub columns: Option<[ColumnStats; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable {
    pub tiers: Vec<TierStats>,
}

pub fn summarize(segments: &[DislocationSegment], thresholds: &Thresholds) -> StatsTable {
    let tiers = Tier::ALL
        .iter()
        .map(|&tier| {
            let chosen: Vec<&DislocationSegment> =
                segments.iter().filter(|s| tier.admits(classify(s, thresholds))).collect();
            let columns = (!chosen.is_empty()).then(|| {
                Column::ALL.map(|c| {
                    let mut values: Vec<i64> = Vec::with_capacity(chosen.len());
                    let mut scale = 1.0;
                    for s in &chosen {
                        let (v, d) = c.extract(s);
                        values.push(v);
                        scale = d;
                    }
                    describe(&mut values, scale).expect("non-empty")
                })
            });
            TierStats { tier, count: chosen.len() as u64, columns }
        })
        .collect();
    StatsTable { tiers }
}

fn fmt_stat(v: f64, column: Column) -> String {
    let x = v / column.report_divisor();
    match column {
        Column::DurationUs => format!("{x:.6}"),
        _ => format!("{x:.4}"),
    }
}

impl StatsTable {
    pub fn tier(&self, tier: Tier) -> &TierStats {
        &self.tiers[tier as usize]
    }

    /// CSV in report units: seconds for duration, dollars for prices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter,statistic");
        for c in Column::ALL {
            out.push(',');
            out.push_str(c.csv_name());
        }
        out.push('\n');
        for t in &self.tiers {
            let _ = writeln!(out, "{},count,{},,,,,", t.tier.as_str(), t.count);
            let Some(cols) = &t.columns else { continue };
            type Pick = fn(&ColumnStats) -> Option<f64>;
            let rows: [(&str, Pick); 7] = [
                ("mean", |s| Some(s.mean)),
                ("std", |s| s.std),
                ("min", |s| Some(s.min)),
                ("25%", |s| Some(s.q25)),
                ("50%", |s| Some(s.q50)),
                ("75%", |s| Some(s.q75)),
                ("max", |s| Some(s.max)),
            ];
            for (name, pick) in rows {
                let _ = write!(out, "{},{}", t.tier.as_str(), name);
                for (c, s) in Column::ALL.iter().zip(cols) {
                    out.push(',');
                    if let Some(v) = pick(s) {
                        out.push_str(&fmt_stat(v, *c));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Fixed-width rendering in the layout of the published summary table.
    pub fn render_text(&self, thresholds: &Thresholds) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<38}{:<10}", "Filter", "Statistic");
        for c in Column::ALL {
            let _ = write!(out, "{:>14}", c.title());
        }
        out.push('\n');
        for t in &self.tiers {
            let label = match t.tier {
                Tier::All => "None".to_string(),
                Tier::Actionable => format!("Duration > {} us", thresholds.actionable_us),
                Tier::ActionableLarge => format!(
                    "Duration > {} us & Min. Mag. > ${}",
                    thresholds.actionable_us,
                    format_e4(thresholds.large_min_mag_e4 as i128)
                ),
            };
            let _ = writeln!(out, "{:<38}{:<10}{:>14}", label, "count", t.count);
            let Some(cols) = &t.columns else { continue };
            for (i, name) in ["mean", "std", "min", "25%", "50%", "75%", "max"].iter().enumerate() {
                let _ = write!(out, "{:<38}{:<10}", "", name);
                for (c, s) in Column::ALL.iter().zip(cols) {
                    let v = [Some(s.mean), s.std, Some(s.min), Some(s.q25), Some(s.q50), Some(s.q75), Some(s.max)][i];
                    let _ = write!(out, "{:>14}", v.map(|v| fmt_stat(v, *c)).unwrap_or_else(|| "-".into()));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Average segments per trading second over `trading_days` regular sessions.
pub fn per_second_rate(count: u64, trading_days: u64) -> f64 {
    assert!(trading_days > 0, "trading_days must be positive");
    count as f64 / (trading_days * SESSION_SECONDS) as f64
}

pub const SEGMENT_CSV_HEADER: &str = "symbol,side,start_us,end_us,duration_us,direction,min_dp_e4,max_dp_e4,min_mag_e4,max_mag_e4,actionable,large,truncated,large_by_max";

pub fn segment_csv_row(s: &DislocationSegment, t: &Thresholds) -> String {
    let f = classify(s, t);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.symbol,
        s.side,
        s.start.0,
        s.end.0,
        s.duration_us(),
        s.direction,
        s.min_dp.0,
        s.max_dp.0,
        s.min_mag.0,
        s.max_mag.0,
        f.actionable,
        f.large,
        s.truncated,
        f.large_by_max
    )
}

pub fn segments_csv(segments: &[DislocationSegment], t: &Thresholds) -> String {
    let mut out = String::with_capacity(80 * (segments.len() + 1));
    out.push_str(SEGMENT_CSV_HEADER);
    out.push('\n');
    for s in segments {
        out.push_str(&segment_csv_row(s, t));
        out.push('\n');
    }
    out
}

/// Segment start counts per minute of day, for every tier.
pub fn start_histogram(segments: &[DislocationSegment], t: &Thresholds) -> BTreeMap<(Tier, u32), u64> {
    let mut bins = BTreeMap::new();
    for s in segments {
        let flags = classify(s, t);
        for tier in Tier::ALL {
            if tier.admits(flags) {
                *bins.entry((tier, s.start.minute_of_day())).or_insert(0) += 1;
            }
        }
    }
    bins
}

pub const HISTOGRAM_CSV_HEADER: &str = "tier,minute_of_day,count";

pub fn histogram_csv(bins: &BTreeMap<(Tier, u32), u64>) -> String {
    let mut out = String::from(HISTOGRAM_CSV_HEADER);
    out.push('\n');
    for ((tier, minute), count) in bins {
        let _ = writeln!(out, "{},{},{}", tier.as_str(), minute, count);
    }
    out
}
