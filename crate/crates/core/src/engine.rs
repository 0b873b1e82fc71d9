//! Streaming pipeline: consolidation, segment detection and trade ROC in a
//! single pass over a time-ordered observer stream.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::consolidate::{snapshot_row, BboPair, MarketView, ViewError};
use crate::disloc::{DislocationSegment, SegmentDetector};
use crate::ingest::{EventKind, ObserverEvent};
use crate::roc::{classify_differing, trade_roc, RocRecord, TradeSummary};
use crate::types::{Side, Symbol, TimeUs, VenueId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event {index}: timestamp {ts} is earlier than the previous event ({prev})")]
    OutOfOrder { index: usize, ts: u64, prev: u64 },
    #[error("event {index}: {source}")]
    View { index: usize, source: ViewError },
}

#[derive(Debug, Clone, Default)]
pub struct EngineConfig {
    /// Restrict direct quotes to these venues; `None` accepts any venue.
    pub venues: Option<Vec<VenueId>>,
    /// Only analyze these symbols; `None` analyzes everything.
    pub symbols: Option<BTreeSet<Symbol>>,
    /// Record a (SIP, DBBO) snapshot row after every quote.
    pub snapshots: bool,
    /// Resolve each side once per microsecond: only the last sample at a
    /// timestamp counts, so same-microsecond transients leave no segment.
    pub coalesce_us: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Analysis {
    /// Sorted by (symbol, start, side).
    pub segments: Vec<DislocationSegment>,
    /// ROC records in (symbol, stream) order.
    pub roc_records: Vec<RocRecord>,
    /// Every trade in (symbol, stream) order.
    pub trades: Vec<TradeSummary>,
    /// ROC entries skipped because the DBBO side they needed was absent.
    pub roc_skipped: u64,
    pub events: u64,
    /// Snapshot CSV rows (no header), in (symbol, stream) order.
    pub snapshots: Vec<String>,
}

/// Incremental engine; feed events with [`Engine::process`] and close the
/// stream with [`Engine::finish`].
#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    view: MarketView,
    detectors: HashMap<Symbol, [SegmentDetector; 2]>,
    out: Analysis,
    last_ts: Option<TimeUs>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Engine {
        let view = match &config.venues {
            Some(v) => MarketView::with_venues(v.iter().copied()),
            None => MarketView::new(),
        };
        Engine { config, view, detectors: HashMap::new(), out: Analysis::default(), last_ts: None }
    }

    pub fn last_ts(&self) -> Option<TimeUs> {
        self.last_ts
    }

    pub fn process(&mut self, ev: &ObserverEvent) -> Result<(), EngineError> {
        let index = self.out.events as usize;
        if let Some(prev) = self.last_ts {
            if ev.obs_ts < prev {
                return Err(EngineError::OutOfOrder { index, ts: ev.obs_ts.0, prev: prev.0 });
            }
        }
        self.last_ts = Some(ev.obs_ts);
        self.out.events += 1;
        if let Some(filter) = &self.config.symbols {
            if !filter.contains(&ev.symbol) {
                return Ok(());
            }
        }
        match ev.kind {
            EventKind::Trade => self.on_trade(ev),
            EventKind::Quote => {
                let deltas = self.view.apply_event(ev).map_err(|source| EngineError::View { index, source })?;
                if !deltas.is_empty() {
                    let coalesce = self.config.coalesce_us;
                    let dets = self.detectors.entry(ev.symbol).or_insert_with(|| {
                        Side::BOTH.map(|side| {
                            if coalesce {
                                SegmentDetector::coalescing(ev.symbol, side)
                            } else {
                                SegmentDetector::new(ev.symbol, side)
                            }
                        })
                    });
                    for d in deltas.iter() {
                        if let Some(seg) = dets[d.side.index()].push(d.ts, d.dp) {
                            self.out.segments.push(seg);
                        }
                    }
                }
                if self.config.snapshots {
                    let (sip, dbbo) = self.view.snapshot(ev.symbol).unwrap_or_default();
                    self.out.snapshots.push(snapshot_row(ev.obs_ts, ev.symbol, &sip, &dbbo));
                }
            }
        }
        Ok(())
    }

    fn on_trade(&mut self, ev: &ObserverEvent) {
        let Some(print) = ev.trade else { return };
        let (sip, dbbo) = self.view.snapshot(ev.symbol).unwrap_or((BboPair::default(), BboPair::default()));
        let roc = trade_roc(ev, &sip, &dbbo);
        let inferred = roc.inferred.unwrap_or(crate::roc::InferredSide::None);
        self.out.roc_skipped += roc.skipped as u64;
        self.out.roc_records.extend(roc.records);
        self.out.trades.push(TradeSummary {
            ts: ev.obs_ts,
            symbol: ev.symbol,
            venue: ev.venue,
            exec_px: print.px,
            shares: print.qty,
            inferred,
            differing: classify_differing(ev.side_hint, inferred, &sip, &dbbo),
        });
    }

    /// Closes open segments at `stream_end` (defaults to the last event) and
    /// returns the results in canonical order.
    pub fn finish(mut self, stream_end: Option<TimeUs>) -> Analysis {
        let end = stream_end.or(self.last_ts).unwrap_or_default();
        let mut symbols: Vec<_> = self.detectors.keys().copied().collect();
        symbols.sort();
        for sym in symbols {
            for det in self.detectors.get_mut(&sym).into_iter().flatten() {
                self.out.segments.extend(det.finish(end));
            }
        }
        let mut out = self.out;
        out.segments.sort_by_key(|s| (s.symbol, s.start, s.side, s.end));
        out.roc_records.sort_by_key(|r| r.symbol);
        out.trades.sort_by_key(|t| t.symbol);
        if !out.snapshots.is_empty() {
            // Rows start with "ts,symbol,"; order stably by symbol.
            out.snapshots.sort_by(|a, b| a.split(',').nth(1).cmp(&b.split(',').nth(1)));
        }
        out
    }
}

/// Analyze a complete stream. With `threads > 1` symbols are processed in
/// parallel; the result is identical to the sequential run.
pub fn analyze(events: &[ObserverEvent], config: &EngineConfig, threads: usize) -> Result<Analysis, EngineError> {
    if let Some(i) = events.windows(2).position(|w| w[1].obs_ts < w[0].obs_ts) {
        return Err(EngineError::OutOfOrder { index: i + 1, ts: events[i + 1].obs_ts.0, prev: events[i].obs_ts.0 });
    }
    let stream_end = events.last().map(|e| e.obs_ts);
    if threads <= 1 {
        let mut engine = Engine::new(config.clone());
        for ev in events {
            engine.process(ev)?;
        }
        return Ok(engine.finish(stream_end));
    }

    let mut by_symbol: HashMap<Symbol, Vec<usize>> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        by_symbol.entry(ev.symbol).or_default().push(i);
    }
    let mut groups: Vec<(Symbol, Vec<usize>)> = by_symbol.into_iter().collect();
    groups.sort_by_key(|(s, _)| *s);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let parts: Vec<Result<Analysis, EngineError>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(_, idx)| {
                let mut engine = Engine::new(config.clone());
                for &i in idx {
                    engine.process(&events[i]).map_err(|e| reindex(e, i))?;
                }
                Ok(engine.finish(stream_end))
            })
            .collect()
    });

    let mut out = Analysis { events: events.len() as u64, ..Analysis::default() };
    for part in parts {
        let part = part?;
        out.segments.extend(part.segments);
        out.roc_records.extend(part.roc_records);
        out.trades.extend(part.trades);
        out.roc_skipped += part.roc_skipped;
        out.snapshots.extend(part.snapshots);
    }
    Ok(out)
}

fn reindex(e: EngineError, index: usize) -> EngineError {
    match e {
        EngineError::OutOfOrder { ts, prev, .. } => EngineError::OutOfOrder { index, ts, prev },
        EngineError::View { source, .. } => EngineError::View { index, source },
    }
}
