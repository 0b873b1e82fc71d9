//! Parsing, serialization and validation of the observer event stream.
//!
//! Every event carries the observer's receive timestamp. Exchange or SIP
//! origin timestamps ride along as `origin_ts` for diagnostics and never
//! affect ordering.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IngestError, ParseError, ValidationError};
use crate::types::{FeedId, Price, Qty, Symbol, TimeUs, VenueId};

pub const CSV_HEADER: &str =
    "obs_ts_us,feed,kind,symbol,venue,bid_px_e4,bid_sz,ask_px_e4,ask_sz,trade_px_e4,trade_sz,side_hint,origin_ts_us";
const FIELD_COUNT: usize = 13;

/// Price and size of one quote side or one trade print.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quote {
    pub px: Price,
    pub qty: Qty,
}

impl Quote {
    pub fn new(px: i64, qty: u64) -> Quote {
        Quote { px: Price(px), qty: Qty(qty) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Quote,
    Trade,
}

/// Aggressor hint carried by a trade record, when the source provides one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SideHint {
    Buy,
    Sell,
    #[default]
    Unknown,
}

impl SideHint {
    fn code(self) -> &'static str {
        match self {
            SideHint::Buy => "B",
            SideHint::Sell => "S",
            SideHint::Unknown => "U",
        }
    }
}

/// One quote or trade message as timestamped by the observer.
///
/// A quote side whose size is zero withdraws that side of the feed's quote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObserverEvent {
    pub obs_ts: TimeUs,
    pub feed: FeedId,
    pub kind: EventKind,
    pub symbol: Symbol,
    pub venue: VenueId,
    pub bid: Option<Quote>,
    pub offer: Option<Quote>,
    pub trade: Option<Quote>,
    pub side_hint: SideHint,
    pub origin_ts: Option<TimeUs>,
}

impl ObserverEvent {
    pub fn quote(
        obs_ts: u64,
        feed: FeedId,
        symbol: Symbol,
        venue: VenueId,
        bid: Option<Quote>,
        offer: Option<Quote>,
    ) -> ObserverEvent {
        ObserverEvent {
            obs_ts: TimeUs(obs_ts),
            feed,
            kind: EventKind::Quote,
            symbol,
            venue,
            bid,
            offer,
            trade: None,
            side_hint: SideHint::Unknown,
            origin_ts: None,
        }
    }

    pub fn trade(obs_ts: u64, symbol: Symbol, venue: VenueId, print: Quote, side_hint: SideHint) -> ObserverEvent {
        ObserverEvent {
            obs_ts: TimeUs(obs_ts),
            feed: FeedId::Sip,
            kind: EventKind::Trade,
            symbol,
            venue,
            bid: None,
            offer: None,
            trade: Some(print),
            side_hint,
            origin_ts: None,
        }
    }

    /// Appends the CSV row (no trailing newline) to `out`.
    pub fn write_csv(&self, out: &mut String) {
        fn side(out: &mut String, q: Option<Quote>) {
            if let Some(q) = q {
                let _ = write!(out, "{},{}", q.px.0, q.qty.0);
            } else {
                out.push(',');
            }
        }
        let _ = write!(
            out,
            "{},{},{},{},{},",
            self.obs_ts.0,
            self.feed,
            match self.kind {
                EventKind::Quote => "Q",
                EventKind::Trade => "T",
            },
            self.symbol,
            self.venue.0
        );
        side(out, self.bid);
        out.push(',');
        side(out, self.offer);
        out.push(',');
        side(out, self.trade);
        let _ = write!(out, ",{},", self.side_hint.code());
        if let Some(t) = self.origin_ts {
            let _ = write!(out, "{}", t.0);
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut s = String::with_capacity(64);
        self.write_csv(&mut s);
        s
    }

    pub fn to_json_line(&self) -> String {
        let rec = RawRecord {
            obs_ts_us: Some(self.obs_ts.0),
            feed: Cow::Owned(self.feed.to_string()),
            kind: Cow::Borrowed(match self.kind {
                EventKind::Quote => "Q",
                EventKind::Trade => "T",
            }),
            symbol: Cow::Borrowed(self.symbol.as_str()),
            venue: Some(self.venue.0 as i64),
            bid_px_e4: self.bid.map(|q| q.px.0),
            bid_sz: self.bid.map(|q| q.qty.0 as i64),
            ask_px_e4: self.offer.map(|q| q.px.0),
            ask_sz: self.offer.map(|q| q.qty.0 as i64),
            trade_px_e4: self.trade.map(|q| q.px.0),
            trade_sz: self.trade.map(|q| q.qty.0 as i64),
            side_hint: Cow::Borrowed(self.side_hint.code()),
            origin_ts_us: self.origin_ts.map(|t| t.0),
        };
        serde_json::to_string(&rec).unwrap_or_default()
    }
}

/// Failure to turn one record into an event.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Parse(ParseError),
    #[error(transparent)]
    Invalid(ValidationError),
}

impl RecordError {
    fn at(self, line: usize) -> IngestError {
        match self {
            RecordError::Parse(source) => IngestError::Parse { line, source },
            RecordError::Invalid(source) => IngestError::Invalid { line, source },
        }
    }
}

impl From<ParseError> for RecordError {
    fn from(e: ParseError) -> Self {
        RecordError::Parse(e)
    }
}

fn invalid(msg: impl Into<String>) -> RecordError {
    RecordError::Invalid(ValidationError(msg.into()))
}

/// Field values shared by the CSV and NDJSON encodings before validation.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord<'a> {
    obs_ts_us: Option<u64>,
    #[serde(borrow)]
    feed: Cow<'a, str>,
    #[serde(borrow)]
    kind: Cow<'a, str>,
    #[serde(borrow)]
    symbol: Cow<'a, str>,
    venue: Option<i64>,
    bid_px_e4: Option<i64>,
    bid_sz: Option<i64>,
    ask_px_e4: Option<i64>,
    ask_sz: Option<i64>,
    trade_px_e4: Option<i64>,
    trade_sz: Option<i64>,
    #[serde(borrow, default = "unknown_hint")]
    side_hint: Cow<'a, str>,
    origin_ts_us: Option<u64>,
}

fn unknown_hint() -> Cow<'static, str> {
    Cow::Borrowed("U")
}

fn pair(
    px: Option<i64>,
    sz: Option<i64>,
    px_name: &'static str,
    sz_name: &'static str,
) -> Result<Option<Quote>, RecordError> {
    match (px, sz) {
        (None, None) => Ok(None),
        (Some(_), None) => Err(ParseError::Missing(sz_name).into()),
        (None, Some(_)) => Err(ParseError::Missing(px_name).into()),
        (Some(p), Some(s)) => {
            if p < 0 {
                return Err(invalid(format!("negative {px_name}: {p}")));
            }
            if s < 0 {
                return Err(invalid(format!("negative {sz_name}: {s}")));
            }
            Ok(Some(Quote::new(p, s as u64)))
        }
    }
}

impl RawRecord<'_> {
    fn into_event(self) -> Result<ObserverEvent, RecordError> {
        let obs_ts = TimeUs(self.obs_ts_us.ok_or(ParseError::Missing("obs_ts_us"))?);
        let feed: FeedId = self.feed.parse()?;
        let kind = match &*self.kind {
            "Q" => EventKind::Quote,
            "T" => EventKind::Trade,
            other => return Err(ParseError::Field { field: "kind", value: other.to_string() }.into()),
        };
        let symbol = Symbol::new(&self.symbol)?;
        let venue = self.venue.ok_or(ParseError::Missing("venue"))?;
        let venue = u16::try_from(venue).map(VenueId).map_err(|_| invalid(format!("venue out of range: {venue}")))?;
        let bid = pair(self.bid_px_e4, self.bid_sz, "bid_px_e4", "bid_sz")?;
        let offer = pair(self.ask_px_e4, self.ask_sz, "ask_px_e4", "ask_sz")?;
        let trade = pair(self.trade_px_e4, self.trade_sz, "trade_px_e4", "trade_sz")?;
        let side_hint = match &*self.side_hint {
            "B" => SideHint::Buy,
            "S" => SideHint::Sell,
            "U" | "" => SideHint::Unknown,
            other => return Err(ParseError::Field { field: "side_hint", value: other.to_string() }.into()),
        };
        match kind {
            EventKind::Quote => {
                if bid.is_none() && offer.is_none() {
                    return Err(invalid("quote carries neither bid nor offer"));
                }
                if trade.is_some() {
                    return Err(invalid("quote carries a trade print"));
                }
            }
            EventKind::Trade => {
                let Some(t) = trade else {
                    return Err(invalid("trade carries no print"));
                };
                if bid.is_some() || offer.is_some() {
                    return Err(invalid("trade carries quote sides"));
                }
                if t.qty.0 == 0 {
                    return Err(invalid("trade size must be positive"));
                }
            }
        }
        Ok(ObserverEvent {
            obs_ts,
            feed,
            kind,
            symbol,
            venue,
            bid,
            offer,
            trade,
            side_hint,
            origin_ts: self.origin_ts_us.map(TimeUs),
        })
    }
}

fn int_field(raw: &str, field: &'static str) -> Result<Option<i64>, ParseError> {
    if raw.is_empty() {
        return Ok(None);
    }
    crate::types::parse_scaled(raw.as_bytes(), 0)
        .map(Some)
        .ok_or_else(|| ParseError::Field { field, value: raw.to_string() })
}

fn uint_field(raw: &str, field: &'static str) -> Result<Option<u64>, ParseError> {
    if raw.is_empty() {
        return Ok(None);
    }
    let bad = || ParseError::Field { field, value: raw.to_string() };
    if !raw.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    raw.parse::<u64>().map(Some).map_err(|_| bad())
}

/// Parses one CSV record (without its newline) into an event.
pub fn parse_record(line: &str) -> Result<ObserverEvent, RecordError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut f: [&str; FIELD_COUNT] = [""; FIELD_COUNT];
    let mut n = 0;
    for part in line.split(',') {
        if n == FIELD_COUNT {
            return Err(ParseError::Arity { expected: FIELD_COUNT, found: line.split(',').count() }.into());
        }
        f[n] = part;
        n += 1;
    }
    if n != FIELD_COUNT {
        return Err(ParseError::Arity { expected: FIELD_COUNT, found: n }.into());
    }
    RawRecord {
        obs_ts_us: uint_field(f[0], "obs_ts_us")?,
        feed: Cow::Borrowed(f[1]),
        kind: Cow::Borrowed(f[2]),
        symbol: Cow::Borrowed(f[3]),
        venue: int_field(f[4], "venue")?,
        bid_px_e4: int_field(f[5], "bid_px_e4")?,
        bid_sz: int_field(f[6], "bid_sz")?,
        ask_px_e4: int_field(f[7], "ask_px_e4")?,
        ask_sz: int_field(f[8], "ask_sz")?,
        trade_px_e4: int_field(f[9], "trade_px_e4")?,
        trade_sz: int_field(f[10], "trade_sz")?,
        side_hint: Cow::Borrowed(f[11]),
        origin_ts_us: uint_field(f[12], "origin_ts_us")?,
    }
    .into_event()
}

/// Parses one CSV record, attributing failures to `line_no`.
pub fn parse_event(line: &str, line_no: usize) -> Result<ObserverEvent, IngestError> {
    parse_record(line).map_err(|e| e.at(line_no))
}

/// Parses one NDJSON object with the CSV field names.
pub fn parse_json_record(line: &str) -> Result<ObserverEvent, RecordError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| ParseError::Json(e.to_string()))?;
    raw.into_event()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

/// Streaming reader over a CSV (header required) or NDJSON event source.
/// The format is chosen from the first non-blank line.
pub struct EventReader<R> {
    input: R,
    buf: String,
    line_no: usize,
    format: Option<Format>,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(input: R) -> Self {
        EventReader { input, buf: String::new(), line_no: 0, format: None }
    }

    fn next_line(&mut self) -> Result<bool, IngestError> {
        loop {
            self.buf.clear();
            if self.input.read_line(&mut self.buf)? == 0 {
                return Ok(false);
            }
            self.line_no += 1;
            let trimmed = self.buf.trim_end_matches(['\n', '\r']);
            if !trimmed.trim().is_empty() {
                let len = trimmed.len();
                self.buf.truncate(len);
                return Ok(true);
            }
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<ObserverEvent, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_line() {
            Ok(true) => {}
            Ok(false) => return None,
            Err(e) => return Some(Err(e)),
        }
        if self.format.is_none() {
            if self.buf.trim_start().starts_with('{') {
                self.format = Some(Format::Json);
            } else {
                self.format = Some(Format::Csv);
                if self.buf.trim() != CSV_HEADER {
                    return Some(Err(IngestError::Header { expected: CSV_HEADER }));
                }
                match self.next_line() {
                    Ok(true) => {}
                    Ok(false) => return None,
                    Err(e) => return Some(Err(e)),
                }
            }
        }
        let parsed = match self.format {
            Some(Format::Json) => parse_json_record(&self.buf),
            _ => parse_record(&self.buf),
        };
        Some(parsed.map_err(|e| e.at(self.line_no)))
    }
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<ObserverEvent>, IngestError> {
    EventReader::new(input).collect()
}

pub fn read_events_path(path: &Path) -> Result<Vec<ObserverEvent>, IngestError> {
    let file = std::fs::File::open(path)?;
    read_events(std::io::BufReader::with_capacity(1 << 20, file))
}

/// Writes events as CSV with the header.
pub fn write_events_csv<W: Write>(out: &mut W, events: &[ObserverEvent]) -> std::io::Result<()> {
    let mut buf = String::with_capacity(64 * 1024);
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for ev in events {
        ev.write_csv(&mut buf);
        buf.push('\n');
        if buf.len() > 60 * 1024 {
            out.write_all(buf.as_bytes())?;
            buf.clear();
        }
    }
    out.write_all(buf.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolCoverage {
    pub quotes: u64,
    pub trades: u64,
    pub first_ts: TimeUs,
    pub last_ts: TimeUs,
}

/// Report-only summary of stream hygiene.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub events: u64,
    /// Pairs of events whose observer timestamps are out of order.
    pub regressions: u64,
    /// Adjacent events sharing one observer timestamp.
    pub ties: u64,
    /// Direct-feed events whose `D.<venue>` disagrees with the venue column.
    pub venue_mismatches: u64,
    /// Quotes repeating the previous quote from the same feed and venue.
    pub duplicate_quotes: u64,
    pub symbols: BTreeMap<Symbol, SymbolCoverage>,
}

impl ValidationReport {
    pub fn is_ordered(&self) -> bool {
        self.regressions == 0
    }
}

/// Counts out-of-order pairs by merge sort.
fn count_inversions(values: &mut [u64], scratch: &mut [u64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (lo, hi) = values.split_at_mut(mid);
        let (slo, shi) = scratch.split_at_mut(mid);
        count_inversions(lo, slo) + count_inversions(hi, shi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if values[i] <= values[j] {
            scratch[k] = values[i];
            i += 1;
        } else {
            scratch[k] = values[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&values[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&scratch[..n]);
    count
}

pub fn validate_stream(events: &[ObserverEvent]) -> ValidationReport {
    let mut report = ValidationReport { events: events.len() as u64, ..Default::default() };
    let mut last_quote: std::collections::HashMap<(Symbol, FeedId, VenueId), (Option<Quote>, Option<Quote>)> =
        std::collections::HashMap::new();
    let mut prev_ts: Option<TimeUs> = None;
    let mut descending = false;
    for ev in events {
        if let Some(p) = prev_ts {
            if p == ev.obs_ts {
                report.ties += 1;
            } else if p > ev.obs_ts {
                descending = true;
            }
        }
        prev_ts = Some(ev.obs_ts);
        if let FeedId::Direct(v) = ev.feed {
            if v != ev.venue {
                report.venue_mismatches += 1;
            }
        }
        let cov = report.symbols.entry(ev.symbol).or_insert_with(|| SymbolCoverage {
            first_ts: ev.obs_ts,
            last_ts: ev.obs_ts,
            ..Default::default()
        });
        cov.first_ts = cov.first_ts.min(ev.obs_ts);
        cov.last_ts = cov.last_ts.max(ev.obs_ts);
        match ev.kind {
            EventKind::Quote => {
                cov.quotes += 1;
                let key = (ev.symbol, ev.feed, ev.venue);
                let sides = (ev.bid, ev.offer);
                if last_quote.insert(key, sides) == Some(sides) {
                    report.duplicate_quotes += 1;
                }
            }
            EventKind::Trade => cov.trades += 1,
        }
    }
    if descending {
        let mut ts: Vec<u64> = events.iter().map(|e| e.obs_ts.0).collect();
        let mut scratch = vec![0; ts.len()];
        report.regressions = count_inversions(&mut ts, &mut scratch);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(s: &str) -> Symbol {
        Symbol::new(s).unwrap()
    }

    #[test]
    fn parses_trade_record() {
        let ev = parse_event("34135398386,SIP,T,AAPL,5,,,,,991300,100,S,34135397989", 2).unwrap();
        assert_eq!(ev.kind, EventKind::Trade);
        assert_eq!(ev.feed, FeedId::Sip);
        assert_eq!(ev.symbol, sym("AAPL"));
        assert_eq!(ev.venue, VenueId(5));
        assert_eq!(ev.trade, Some(Quote::new(991300, 100)));
        assert_eq!(ev.side_hint, SideHint::Sell);
        assert_eq!(ev.origin_ts, Some(TimeUs(34135397989)));
        assert_eq!(ev.bid, None);
    }

    #[test]
    fn parses_two_sided_quote() {
        let line = "0,D.1,Q,XYZ,1,991300,100,991500,100,,,U,";
        let ev = parse_event(line, 2).unwrap();
        assert_eq!(ev.feed, FeedId::Direct(VenueId(1)));
        assert_eq!(ev.bid, Some(Quote::new(991300, 100)));
        assert_eq!(ev.offer, Some(Quote::new(991500, 100)));
        assert_eq!(ev.origin_ts, None);
        assert_eq!(ev.to_csv_line(), line);
    }

    #[test]
    fn rejects_fractional_price() {
        let err = parse_event("0,D.1,Q,XYZ,1,99.13001,100,,,,,U,", 7).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 7, source: ParseError::Field { field: "bid_px_e4", .. } }));
    }

    #[test]
    fn rejects_negative_values() {
        let err = parse_event("0,D.1,Q,XYZ,1,-5,100,,,,,U,", 3).unwrap_err();
        assert!(matches!(err, IngestError::Invalid { line: 3, .. }));
        let err = parse_event("0,SIP,T,XYZ,1,,,,,991300,-1,U,", 4).unwrap_err();
        assert!(matches!(err, IngestError::Invalid { line: 4, .. }));
    }

    #[test]
    fn rejects_structural_errors() {
        for bad in [
            "0,D.1,Q,XYZ,1,,,,,,,U,",                   // quote without sides
            "0,SIP,T,XYZ,1,991300,100,,,991300,100,U,", // trade with a quote side
            "0,SIP,T,XYZ,1,,,,,,,U,",                   // trade without print
            "0,SIP,T,XYZ,1,,,,,991300,0,U,",            // zero-size trade
        ] {
            assert!(matches!(parse_event(bad, 1), Err(IngestError::Invalid { .. })), "{bad}");
        }
        for bad in [
            "0,D.1,Q,XYZ,1,991300,,,,,,U,", // price without size
            "0,X,Q,XYZ,1,991300,1,,,,,U,",
            "0,SIP,Z,XYZ,1,991300,1,,,,,U,",
            "0,SIP,Q,xyz,1,991300,1,,,,,U,",
            "0,SIP,Q,XYZ,1,991300,1,,,,,Q,",
            "0,SIP,Q,XYZ,1,991300,1,,,,,U",
            "0,SIP,Q,XYZ,1,991300,1,,,,,U,,",
            "-1,SIP,Q,XYZ,1,991300,1,,,,,U,",
        ] {
            assert!(matches!(parse_event(bad, 1), Err(IngestError::Parse { .. })), "{bad}");
        }
    }

    #[test]
    fn reader_handles_csv_and_json() {
        let csv =
            format!("{CSV_HEADER}\n0,D.1,Q,XYZ,1,991300,100,991500,100,,,U,\r\n\n5,SIP,T,XYZ,1,,,,,991300,10,B,4\n");
        let events = read_events(csv.as_bytes()).unwrap();
        assert_eq!(events.len(), 2);
        let json: String = events.iter().map(|e| e.to_json_line() + "\n").collect();
        assert_eq!(read_events(json.as_bytes()).unwrap(), events);
    }

    #[test]
    fn reader_reports_line_numbers() {
        let csv = format!("{CSV_HEADER}\n0,D.1,Q,XYZ,1,991300,100,991500,100,,,U,\n1,D.1,Q,XYZ,1,x,100,,,,,U,\n");
        let err = read_events(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, .. }), "{err}");
        let err = read_events("ts,feed\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
    }

    fn q(ts: u64) -> ObserverEvent {
        ObserverEvent::quote(ts, FeedId::Sip, sym("XYZ"), VenueId(1), Some(Quote::new(100, 1)), None)
    }

    #[test]
    fn validation_examples() {
        let mono: Vec<_> = (0..5).map(q).collect();
        assert_eq!(validate_stream(&mono).regressions, 0);

        let tied = vec![q(3), q(3), q(3)];
        let r = validate_stream(&tied);
        assert_eq!((r.regressions, r.ties), (0, 2));

        let down = vec![q(5), q(3), q(4), q(1)];
        assert_eq!(validate_stream(&down).regressions, 5);
    }

    #[test]
    fn validation_anomalies() {
        let mut a = q(1);
        a.feed = FeedId::Direct(VenueId(2));
        let b = q(2);
        let c = q(3);
        let r = validate_stream(&[a, b, c]);
        assert_eq!(r.venue_mismatches, 1);
        assert_eq!(r.duplicate_quotes, 1);
        assert_eq!(r.symbols[&sym("XYZ")].quotes, 3);
    }

    fn reference_inversions(ts: &[u64]) -> u64 {
        let mut n = 0;
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                if ts[i] > ts[j] {
                    n += 1;
                }
            }
        }
        n
    }

    fn arb_event() -> impl Strategy<Value = ObserverEvent> {
        let side = proptest::option::of((0i64..2_000_000, 0u64..10_000).prop_map(|(p, s)| Quote::new(p, s)));
        (
            any::<u64>().prop_map(|t| t >> 8),
            prop_oneof![Just(FeedId::Sip), (0u16..64).prop_map(|v| FeedId::Direct(VenueId(v)))],
            prop_oneof![Just("A"), Just("AAPL"), Just("BRK.B"), Just("Z9")],
            0u16..64,
            side.clone(),
            side,
            (0i64..2_000_000, 1u64..10_000).prop_map(|(p, s)| Quote::new(p, s)),
            prop_oneof![Just(SideHint::Buy), Just(SideHint::Sell), Just(SideHint::Unknown)],
            proptest::option::of(any::<u64>().prop_map(|t| TimeUs(t >> 8))),
            any::<bool>(),
        )
            .prop_map(|(ts, feed, s, venue, bid, offer, print, hint, origin, is_trade)| {
                let mut ev = if is_trade || (bid.is_none() && offer.is_none()) {
                    ObserverEvent::trade(ts, sym(s), VenueId(venue), print, hint)
                } else {
                    let mut e = ObserverEvent::quote(ts, feed, sym(s), VenueId(venue), bid, offer);
                    e.side_hint = hint;
                    e
                };
                ev.origin_ts = origin;
                ev
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(ev in arb_event()) {
            prop_assert_eq!(parse_record(&ev.to_csv_line()).unwrap(), ev.clone());
            prop_assert_eq!(parse_json_record(&ev.to_json_line()).unwrap(), ev);
        }

        #[test]
        fn inversions_match_quadratic_scan(ts in proptest::collection::vec(0u64..20, 0..60)) {
            let events: Vec<_> = ts.iter().map(|&t| q(t)).collect();
            prop_assert_eq!(validate_stream(&events).regressions, reference_inversions(&ts));
        }
    }
}
