//! The observer's consolidated view of one or more symbols.
//!
//! For each symbol the view keeps every venue's direct-feed BBO, the direct
//! consolidated BBO (DBBO) derived from them, and the SIP NBBO as last
//! published. Each quote event may change the per-side price difference
//! `dp = sip.px - dbbo.px`; changes are emitted as [`DeltaSample`]s. A side
//! where either feed has no quote has an undefined difference (`None`).

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::ingest::{EventKind, ObserverEvent, Quote};
use crate::types::{FeedId, Price, Side, Symbol, TimeUs, VenueId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViewError {
    #[error("event for unknown venue {0}")]
    UnknownVenue(VenueId),
    #[error("symbol {0} is not tracked")]
    UnknownSymbol(Symbol),
}

/// Best bid and best offer of one feed view. Locked and crossed pairs are
/// legal and carried as-is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct BboPair {
    pub bid: Option<Quote>,
    pub offer: Option<Quote>,
}

impl BboPair {
    pub fn new(bid: Option<Quote>, offer: Option<Quote>) -> BboPair {
        BboPair { bid, offer }
    }

    /// Prices only, sizes set to 1. Handy for tests and callers that only
    /// care about price levels.
    pub fn prices(bid: i64, offer: i64) -> BboPair {
        BboPair { bid: Some(Quote::new(bid, 1)), offer: Some(Quote::new(offer, 1)) }
    }

    pub fn side(&self, side: Side) -> Option<Quote> {
        match side {
            Side::Bid => self.bid,
            Side::Offer => self.offer,
        }
    }

    pub fn px(&self, side: Side) -> Option<Price> {
        self.side(side).map(|q| q.px)
    }

    pub fn side_mut(&mut self, side: Side) -> &mut Option<Quote> {
        match side {
            Side::Bid => &mut self.bid,
            Side::Offer => &mut self.offer,
        }
    }

    pub fn is_locked(&self) -> bool {
        matches!((self.bid, self.offer), (Some(b), Some(o)) if b.px == o.px)
    }

    pub fn is_crossed(&self) -> bool {
        matches!((self.bid, self.offer), (Some(b), Some(o)) if b.px > o.px)
    }
}

/// `true` when `a` is a strictly better price than `b` on `side`.
pub fn better(side: Side, a: Price, b: Price) -> bool {
    match side {
        Side::Bid => a > b,
        Side::Offer => a < b,
    }
}

/// A change of the SIP-minus-direct price difference on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaSample {
    pub ts: TimeUs,
    pub symbol: Symbol,
    pub side: Side,
    /// `None` when either feed has no quote on this side.
    pub dp: Option<Price>,
}

/// At most one sample per side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Deltas([Option<DeltaSample>; 2]);

impl Deltas {
    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeltaSample> {
        self.0.iter().flatten()
    }
}

impl IntoIterator for Deltas {
    type Item = DeltaSample;
    type IntoIter = std::iter::Flatten<std::array::IntoIter<Option<DeltaSample>, 2>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter().flatten()
    }
}

/// Full rescan of venue quotes: best price per side, size from the best venue
/// with the lowest id on price ties.
pub fn recompute_dbbo<'a>(venues: impl IntoIterator<Item = (&'a VenueId, &'a BboPair)>) -> BboPair {
    let mut best: [Option<(Quote, VenueId)>; 2] = [None, None];
    for (&venue, pair) in venues {
        for side in Side::BOTH {
            let Some(q) = pair.side(side) else { continue };
            let slot = &mut best[side.index()];
            let take = match slot {
                None => true,
                Some((cur, cur_v)) => better(side, q.px, cur.px) || (q.px == cur.px && venue < *cur_v),
            };
            if take {
                *slot = Some((q, venue));
            }
        }
    }
    BboPair { bid: best[0].map(|b| b.0), offer: best[1].map(|b| b.0) }
}

#[derive(Debug, Clone, Default)]
struct SymbolView {
    /// Sorted by venue id.
    venues: Vec<(VenueId, BboPair)>,
    sip: BboPair,
    dbbo: BboPair,
    /// Venue currently supplying each DBBO side.
    dbbo_src: [Option<VenueId>; 2],
    dp: [Option<Price>; 2],
    last_change_ts: TimeUs,
}

impl SymbolView {
    fn venue_slot(&mut self, venue: VenueId) -> usize {
        match self.venues.binary_search_by_key(&venue, |(v, _)| *v) {
            Ok(i) => i,
            Err(i) => {
                self.venues.insert(i, (venue, BboPair::default()));
                i
            }
        }
    }

    fn rescan_side(&mut self, side: Side) {
        let mut best: Option<(Quote, VenueId)> = None;
        for (v, pair) in &self.venues {
            if let Some(q) = pair.side(side) {
                let take = match best {
                    None => true,
                    Some((cur, _)) => better(side, q.px, cur.px),
                };
                if take {
                    best = Some((q, *v));
                }
            }
        }
        *self.dbbo.side_mut(side) = best.map(|b| b.0);
        self.dbbo_src[side.index()] = best.map(|b| b.1);
    }

    /// Updates one venue side and keeps the DBBO side current.
    fn set_venue_side(&mut self, slot: usize, side: Side, quote: Option<Quote>) {
        let venue = self.venues[slot].0;
        *self.venues[slot].1.side_mut(side) = quote;
        let src = self.dbbo_src[side.index()];
        let cur = self.dbbo.side(side);
        match (quote, cur) {
            (Some(q), Some(c)) if src != Some(venue) => {
                // Another venue holds the extreme; this venue can only take over.
                let takes = better(side, q.px, c.px) || (q.px == c.px && Some(venue) < src);
                if takes {
                    *self.dbbo.side_mut(side) = Some(q);
                    self.dbbo_src[side.index()] = Some(venue);
                }
            }
            (Some(q), None) => {
                *self.dbbo.side_mut(side) = Some(q);
                self.dbbo_src[side.index()] = Some(venue);
            }
            (Some(q), Some(c)) if !better(side, c.px, q.px) => {
                // Source venue improved or kept its price.
                *self.dbbo.side_mut(side) = Some(q);
            }
            (None, _) if src != Some(venue) => {}
            _ => self.rescan_side(side),
        }
    }

    fn refresh_dp(&mut self, ts: TimeUs, symbol: Symbol) -> Deltas {
        let mut out = Deltas::default();
        for side in Side::BOTH {
            let dp = match (self.sip.px(side), self.dbbo.px(side)) {
                (Some(s), Some(d)) => Some(s - d),
                _ => None,
            };
            if dp != self.dp[side.index()] {
                self.dp[side.index()] = dp;
                self.last_change_ts = ts;
                out.0[side.index()] = Some(DeltaSample { ts, symbol, side, dp });
            }
        }
        out
    }
}

fn apply_sides(target: &mut BboPair, ev: &ObserverEvent) {
    for (side, q) in [(Side::Bid, ev.bid), (Side::Offer, ev.offer)] {
        if let Some(q) = q {
            *target.side_mut(side) = (q.qty.0 > 0).then_some(q);
        }
    }
}

/// Per-symbol SIP and direct state as seen by the observer.
#[derive(Debug, Clone, Default)]
pub struct MarketView {
    symbols: HashMap<Symbol, SymbolView>,
    venues: Option<BTreeSet<VenueId>>,
}

impl MarketView {
    /// A view that accepts direct quotes from any venue.
    pub fn new() -> MarketView {
        MarketView::default()
    }

    /// A view restricted to a configured venue set.
    pub fn with_venues(venues: impl IntoIterator<Item = VenueId>) -> MarketView {
        MarketView { symbols: HashMap::new(), venues: Some(venues.into_iter().collect()) }
    }

    pub fn track(&mut self, symbol: Symbol) {
        self.symbols.entry(symbol).or_default();
    }

    /// Applies one validated event. Trades leave the view unchanged.
    pub fn apply_event(&mut self, ev: &ObserverEvent) -> Result<Deltas, ViewError> {
        if ev.kind == EventKind::Trade {
            return Ok(Deltas::default());
        }
        if let (FeedId::Direct(v), Some(allowed)) = (ev.feed, &self.venues) {
            if !allowed.contains(&v) {
                return Err(ViewError::UnknownVenue(v));
            }
        }
        let view = self.symbols.entry(ev.symbol).or_default();
        match ev.feed {
            FeedId::Sip => apply_sides(&mut view.sip, ev),
            FeedId::Direct(v) => {
                let slot = view.venue_slot(v);
                for (side, q) in [(Side::Bid, ev.bid), (Side::Offer, ev.offer)] {
                    if let Some(q) = q {
                        view.set_venue_side(slot, side, (q.qty.0 > 0).then_some(q));
                    }
                }
            }
        }
        Ok(view.refresh_dp(ev.obs_ts, ev.symbol))
    }

    /// Prevailing (SIP, DBBO) pair for a tracked symbol.
    pub fn snapshot(&self, symbol: Symbol) -> Result<(BboPair, BboPair), ViewError> {
        self.symbols.get(&symbol).map(|v| (v.sip, v.dbbo)).ok_or(ViewError::UnknownSymbol(symbol))
    }

    /// Current difference per side, `None` where undefined.
    pub fn dp(&self, symbol: Symbol, side: Side) -> Option<Price> {
        self.symbols.get(&symbol).and_then(|v| v.dp[side.index()])
    }

    pub fn last_change_ts(&self, symbol: Symbol) -> Option<TimeUs> {
        self.symbols.get(&symbol).map(|v| v.last_change_ts)
    }

    /// Venue map for a symbol, sorted by venue id.
    pub fn venue_quotes(&self, symbol: Symbol) -> impl Iterator<Item = (&VenueId, &BboPair)> {
        self.symbols.get(&symbol).into_iter().flat_map(|v| v.venues.iter().map(|(id, p)| (id, p)))
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.symbols.keys().copied()
    }
}

pub const SNAPSHOT_HEADER: &str = "ts_us,symbol,sip_bid,sip_ask,dbb,dbo";

/// One row of the snapshot dump; absent sides are empty fields.
pub fn snapshot_row(ts: TimeUs, symbol: Symbol, sip: &BboPair, dbbo: &BboPair) -> String {
    let px = |q: Option<Quote>| q.map(|q| q.px.to_decimal()).unwrap_or_default();
    format!("{},{},{},{},{},{}", ts.0, symbol, px(sip.bid), px(sip.offer), px(dbbo.bid), px(dbbo.offer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym() -> Symbol {
        Symbol::new("AAPL").unwrap()
    }

    fn direct(ts: u64, v: u16, bid: Option<(i64, u64)>, offer: Option<(i64, u64)>) -> ObserverEvent {
        ObserverEvent::quote(
            ts,
            FeedId::Direct(VenueId(v)),
            sym(),
            VenueId(v),
            bid.map(|(p, s)| Quote::new(p, s)),
            offer.map(|(p, s)| Quote::new(p, s)),
        )
    }

    fn sip(ts: u64, bid: Option<(i64, u64)>, offer: Option<(i64, u64)>) -> ObserverEvent {
        ObserverEvent::quote(
            ts,
            FeedId::Sip,
            sym(),
            VenueId(0),
            bid.map(|(p, s)| Quote::new(p, s)),
            offer.map(|(p, s)| Quote::new(p, s)),
        )
    }

    #[test]
    fn dbb_is_max_over_venues() {
        let mut view = MarketView::new();
        view.apply_event(&direct(1, 1, Some((991300, 100)), None)).unwrap();
        view.apply_event(&direct(2, 2, Some((991600, 300)), None)).unwrap();
        let (_, dbbo) = view.snapshot(sym()).unwrap();
        assert_eq!(dbbo.bid, Some(Quote::new(991600, 300)));
    }

    #[test]
    fn price_ties_take_lowest_venue_size() {
        let mut view = MarketView::new();
        view.apply_event(&direct(1, 3, Some((991300, 300)), None)).unwrap();
        view.apply_event(&direct(2, 2, Some((991300, 200)), None)).unwrap();
        assert_eq!(view.snapshot(sym()).unwrap().1.bid, Some(Quote::new(991300, 200)));
        view.apply_event(&direct(3, 4, Some((991300, 400)), None)).unwrap();
        assert_eq!(view.snapshot(sym()).unwrap().1.bid, Some(Quote::new(991300, 200)));
    }

    #[test]
    fn offer_gap_emits_negative_delta() {
        let mut view = MarketView::new();
        assert!(view.apply_event(&sip(1, None, Some((991100, 100)))).unwrap().is_empty());
        let d: Vec<_> = view.apply_event(&direct(2, 1, None, Some((991700, 100)))).unwrap().into_iter().collect();
        assert_eq!(d, vec![DeltaSample { ts: TimeUs(2), symbol: sym(), side: Side::Offer, dp: Some(Price(-600)) }]);
    }

    #[test]
    fn synchronized_feeds_emit_nothing_after_first_alignment() {
        let mut view = MarketView::new();
        view.apply_event(&sip(1, Some((991300, 1)), Some((991500, 1)))).unwrap();
        let d: Vec<_> =
            view.apply_event(&direct(1, 1, Some((991300, 5)), Some((991500, 5)))).unwrap().into_iter().collect();
        // undefined -> 0 on both sides
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|s| s.dp == Some(Price(0))));
        // size-only changes never move dp
        assert!(view.apply_event(&direct(2, 1, Some((991300, 9)), Some((991500, 9)))).unwrap().is_empty());
        assert!(view.apply_event(&sip(3, Some((991300, 7)), Some((991500, 7)))).unwrap().is_empty());
    }

    #[test]
    fn snapshot_states() {
        let mut view = MarketView::new();
        assert_eq!(view.snapshot(sym()), Err(ViewError::UnknownSymbol(sym())));
        view.track(sym());
        assert_eq!(view.snapshot(sym()).unwrap(), (BboPair::default(), BboPair::default()));
        view.apply_event(&sip(1, Some((991300, 1)), Some((991500, 1)))).unwrap();
        let (s, d) = view.snapshot(sym()).unwrap();
        assert_eq!(s, BboPair::new(Some(Quote::new(991300, 1)), Some(Quote::new(991500, 1))));
        assert_eq!(d, BboPair::default());
    }

    #[test]
    fn unknown_venue_rejected() {
        let mut view = MarketView::with_venues([VenueId(1)]);
        assert!(view.apply_event(&direct(1, 1, Some((1, 1)), None)).is_ok());
        assert_eq!(view.apply_event(&direct(1, 2, Some((1, 1)), None)), Err(ViewError::UnknownVenue(VenueId(2))));
    }

    #[test]
    fn zero_size_withdraws_side_and_undefines_dp() {
        let mut view = MarketView::new();
        view.apply_event(&sip(1, Some((991300, 1)), None)).unwrap();
        view.apply_event(&direct(1, 1, Some((991400, 1)), None)).unwrap();
        assert_eq!(view.dp(sym(), Side::Bid), Some(Price(-100)));
        let d: Vec<_> = view.apply_event(&direct(2, 1, Some((991400, 0)), None)).unwrap().into_iter().collect();
        assert_eq!(d[0].dp, None);
        assert_eq!(view.snapshot(sym()).unwrap().1.bid, None);
    }

    #[test]
    fn crossed_states_carried_verbatim() {
        let mut view = MarketView::new();
        view.apply_event(&direct(1, 1, Some((991500, 1)), None)).unwrap();
        view.apply_event(&direct(1, 2, None, Some((991400, 1)))).unwrap();
        assert!(view.snapshot(sym()).unwrap().1.is_crossed());
    }

    #[test]
    fn snapshot_row_format() {
        let row = snapshot_row(
            TimeUs(5),
            sym(),
            &BboPair::prices(991300, 991500),
            &BboPair::new(Some(Quote::new(991350, 1)), None),
        );
        assert_eq!(row, "5,AAPL,99.13,99.15,99.135,");
    }

    proptest! {
        #[test]
        fn incremental_dbbo_matches_rescan(
            updates in proptest::collection::vec((0u16..6, any::<bool>(), proptest::option::of((990_000i64..990_020, 0u64..3))), 1..200)
        ) {
            let mut view = MarketView::new();
            for (i, (venue, is_bid, q)) in updates.into_iter().enumerate() {
                let q = q.map(|(p, s)| (p * 100, s));
                let ev = if is_bid { direct(i as u64, venue, q, None) } else { direct(i as u64, venue, None, q) };
                // an event with both sides absent is not a valid quote
                if ev.bid.is_none() && ev.offer.is_none() {
                    continue;
                }
                view.apply_event(&ev).unwrap();
                let expected = recompute_dbbo(view.venue_quotes(sym()));
                prop_assert_eq!(view.snapshot(sym()).unwrap().1, expected);
            }
        }
    }
}
