//! Realized opportunity cost (ROC) on trades.
//!
//! A trade printing at an NBBO price reveals which side was the liquidity
//! demander. Its ROC is the per-share gap between the SIP and direct prices on
//! the side it traded against, times the shares traded:
//!
//! * active offer (hit the bid): `(NBB - DBB) * shares`
//! * active bid (lifted the offer): `(DBO - NBO) * shares`
//!
//! Positive values mean the SIP showed the better price (direct ROC),
//! negative values mean the direct feeds did (SIP ROC). Quote sizes never
//! enter the computation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use crate::consolidate::BboPair;
use crate::ingest::{ObserverEvent, SideHint};
use crate::types::{format_e4, Price, Qty, Side, Symbol, TimeUs, VenueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InferredSide {
    /// Printed at the NBB only: a seller hit the bid.
    ActiveOffer,
    /// Printed at the NBO only: a buyer lifted the offer.
    ActiveBid,
    /// Printed at a locked NBBO: either side could have been active.
    Both,
    /// Printed away from the NBBO.
    None,
}

impl InferredSide {
    pub fn as_str(self) -> &'static str {
        match self {
            InferredSide::ActiveOffer => "active_offer",
            InferredSide::ActiveBid => "active_bid",
            InferredSide::Both => "both",
            InferredSide::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActiveSide {
    ActiveBid,
    ActiveOffer,
}

impl ActiveSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ActiveSide::ActiveBid => "active_bid",
            ActiveSide::ActiveOffer => "active_offer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    /// Positive: the SIP displayed the better price.
    DirectRoc,
    /// Negative: the direct feeds displayed the better price.
    SipRoc,
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::DirectRoc => "direct_roc",
            Flavor::SipRoc => "sip_roc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RocRecord {
    pub ts: TimeUs,
    pub symbol: Symbol,
    pub venue: VenueId,
    pub exec_px: Price,
    pub shares: Qty,
    pub inferred_side: ActiveSide,
    /// Dollars x 10^4 (price units times shares).
    pub roc_e4: i64,
    pub flavor: Flavor,
}

pub fn infer_side(exec_px: Price, sip: &BboPair) -> InferredSide {
    let at_bid = sip.bid.is_some_and(|q| q.px == exec_px);
    let at_offer = sip.offer.is_some_and(|q| q.px == exec_px);
    match (at_bid, at_offer) {
        (true, true) => InferredSide::Both,
        (true, false) => InferredSide::ActiveOffer,
        (false, true) => InferredSide::ActiveBid,
        (false, false) => InferredSide::None,
    }
}

/// Records produced for one trade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TradeRoc {
    pub inferred: Option<InferredSide>,
    pub records: Vec<RocRecord>,
    /// Entries dropped because the needed DBBO side was absent.
    pub skipped: u32,
}

/// ROC for one trade given the quotes prevailing strictly before it.
pub fn trade_roc(trade: &ObserverEvent, sip: &BboPair, dbbo: &BboPair) -> TradeRoc {
    let Some(print) = trade.trade else {
        return TradeRoc::default();
    };
    let inferred = infer_side(print.px, sip);
    let mut out = TradeRoc { inferred: Some(inferred), ..TradeRoc::default() };
    let sides: &[ActiveSide] = match inferred {
        InferredSide::ActiveBid => &[ActiveSide::ActiveBid],
        InferredSide::ActiveOffer => &[ActiveSide::ActiveOffer],
        InferredSide::Both => &[ActiveSide::ActiveBid, ActiveSide::ActiveOffer],
        InferredSide::None => &[],
    };
    for &active in sides {
        let per_share = match active {
            ActiveSide::ActiveOffer => dbbo.px(Side::Bid).map(|dbb| print.px - dbb),
            ActiveSide::ActiveBid => dbbo.px(Side::Offer).map(|dbo| dbo - print.px),
        };
        let Some(per_share) = per_share else {
            out.skipped += 1;
            continue;
        };
        let roc_e4 = per_share.0 * print.qty.0 as i64;
        if roc_e4 == 0 {
            continue;
        }
        out.records.push(RocRecord {
            ts: trade.obs_ts,
            symbol: trade.symbol,
            venue: trade.venue,
            exec_px: print.px,
            shares: print.qty,
            inferred_side: active,
            roc_e4,
            flavor: if roc_e4 > 0 { Flavor::DirectRoc } else { Flavor::SipRoc },
        });
    }
    out
}

fn differs(side: Side, sip: &BboPair, dbbo: &BboPair) -> bool {
    sip.px(side) != dbbo.px(side)
}

/// Whether a trade executed while the relevant side's SIP and direct prices
/// differed. A buy compares bids and a sell compares offers; the side comes
/// from the record's hint when present, otherwise from the NBBO inference,
/// and an undeterminable side counts as differing when either side differs.
pub fn classify_differing(hint: SideHint, inferred: InferredSide, sip: &BboPair, dbbo: &BboPair) -> bool {
    let buy = match (hint, inferred) {
        (SideHint::Buy, _) => Some(true),
        (SideHint::Sell, _) => Some(false),
        (SideHint::Unknown, InferredSide::ActiveBid) => Some(true),
        (SideHint::Unknown, InferredSide::ActiveOffer) => Some(false),
        (SideHint::Unknown, _) => None,
    };
    match buy {
        Some(true) => differs(Side::Bid, sip, dbbo),
        Some(false) => differs(Side::Offer, sip, dbbo),
        None => differs(Side::Bid, sip, dbbo) || differs(Side::Offer, sip, dbbo),
    }
}

/// What the aggregation needs to know about every trade, ROC or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeSummary {
    pub ts: TimeUs,
    pub symbol: Symbol,
    pub venue: VenueId,
    pub exec_px: Price,
    pub shares: Qty,
    pub inferred: InferredSide,
    pub differing: bool,
}

impl TradeSummary {
    pub fn notional_e4(&self) -> i128 {
        self.exec_px.0 as i128 * self.shares.0 as i128
    }
}

/// Aggregation key: (day index, symbol, venue).
pub type AggKey = (u64, Symbol, VenueId);

/// Sums for one key. Money fields are dollars x 10^4.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RocTotals {
    pub trades: u64,
    pub differing_trades: u64,
    pub traded_value: i128,
    pub differing_traded_value: i128,
    /// Sum of negative records (<= 0).
    pub sip_roc: i128,
    /// Sum of positive records (>= 0).
    pub direct_roc: i128,
}

impl RocTotals {
    pub fn net_roc(&self) -> i128 {
        self.direct_roc + self.sip_roc
    }

    pub fn total_roc(&self) -> i128 {
        self.direct_roc - self.sip_roc
    }

    fn add_record(&mut self, r: &RocRecord) {
        if r.roc_e4 > 0 {
            self.direct_roc += r.roc_e4 as i128;
        } else {
            self.sip_roc += r.roc_e4 as i128;
        }
    }

    fn add_trade(&mut self, t: &TradeSummary) {
        self.trades += 1;
        self.traded_value += t.notional_e4();
        if t.differing {
            self.differing_trades += 1;
            self.differing_traded_value += t.notional_e4();
        }
    }

    pub fn fraction_differing_trades(&self) -> Option<f64> {
        (self.trades > 0).then(|| self.differing_trades as f64 / self.trades as f64)
    }

    pub fn fraction_differing_notional(&self) -> Option<f64> {
        (self.traded_value != 0).then(|| self.differing_traded_value as f64 / self.traded_value as f64)
    }

    pub fn notional_to_count_ratio(&self) -> Option<f64> {
        match (self.fraction_differing_notional(), self.fraction_differing_trades()) {
            (Some(n), Some(c)) if c > 0.0 => Some(n / c),
            _ => None,
        }
    }
}

impl AddAssign for RocTotals {
    fn add_assign(&mut self, o: RocTotals) {
        self.trades += o.trades;
        self.differing_trades += o.differing_trades;
        self.traded_value += o.traded_value;
        self.differing_traded_value += o.differing_traded_value;
        self.sip_roc += o.sip_roc;
        self.direct_roc += o.direct_roc;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RocAggregate {
    pub by_key: BTreeMap<AggKey, RocTotals>,
}

impl RocAggregate {
    pub fn total(&self) -> RocTotals {
        let mut t = RocTotals::default();
        for v in self.by_key.values() {
            t += *v;
        }
        t
    }

    /// Associative, commutative merge of two partial aggregates.
    pub fn merge(&mut self, other: RocAggregate) {
        for (k, v) in other.by_key {
            *self.by_key.entry(k).or_default() += v;
        }
    }

    /// Headline table: opportunity costs, trade counts, traded value and the
    /// differing fractions.
    pub fn table_csv(&self) -> String {
        let t = self.total();
        let ratio = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let rows = [
            ("Total Opportunity Cost", format_e4(t.total_roc())),
            ("SIP Opportunity Cost", format_e4(-t.sip_roc)),
            ("Direct Opportunity Cost", format_e4(t.direct_roc)),
            ("Trades", t.trades.to_string()),
            ("Differing Trades", t.differing_trades.to_string()),
            ("Traded Value", format_e4(t.traded_value)),
            ("Differing Traded Value", format_e4(t.differing_traded_value)),
            ("Fraction of differing trades", ratio(t.fraction_differing_trades())),
            ("Fraction of differing notional", ratio(t.fraction_differing_notional())),
            ("Ratio of (9) over (8)", ratio(t.notional_to_count_ratio())),
            ("Net Opportunity Cost", format_e4(t.net_roc())),
        ];
        let mut out = String::from("row,statistic,value\n");
        for (i, (name, value)) in rows.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, name, value);
        }
        out
    }

    pub fn breakdown_csv(&self) -> String {
        let mut out = String::from(
            "day,symbol,venue,trades,differing_trades,traded_value,differing_traded_value,sip_roc,direct_roc,net_roc,total_roc\n",
        );
        for ((day, symbol, venue), t) in &self.by_key {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                day,
                symbol,
                venue,
                t.trades,
                t.differing_trades,
                format_e4(t.traded_value),
                format_e4(t.differing_traded_value),
                format_e4(t.sip_roc),
                format_e4(t.direct_roc),
                format_e4(t.net_roc()),
                format_e4(t.total_roc())
            );
        }
        out
    }
}

pub fn aggregate(records: &[RocRecord], trades: &[TradeSummary]) -> RocAggregate {
    let mut agg = RocAggregate::default();
    for r in records {
        agg.by_key.entry((r.ts.day(), r.symbol, r.venue)).or_default().add_record(r);
    }
    for t in trades {
        agg.by_key.entry((t.ts.day(), t.symbol, t.venue)).or_default().add_trade(t);
    }
    agg
}

pub const TRADES_CSV_HEADER: &str = "ts_us,symbol,venue,exec_px_e4,shares,side,differing,roc_e4,flavor";

/// One row per ROC record; trades without a record get a single row with an
/// empty ROC. `records` must be in the same order as `trades`.
pub fn trades_csv(trades: &[TradeSummary], records: &[RocRecord]) -> String {
    let mut out = String::from(TRADES_CSV_HEADER);
    out.push('\n');
    let mut rec = records.iter().peekable();
    for t in trades {
        let mut any = false;
        while let Some(r) = rec.peek() {
            if r.ts != t.ts
                || r.symbol != t.symbol
                || r.venue != t.venue
                || r.exec_px != t.exec_px
                || r.shares != t.shares
            {
                break;
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                t.ts.0,
                t.symbol,
                t.venue,
                t.exec_px.0,
                t.shares.0,
                r.inferred_side.as_str(),
                t.differing,
                r.roc_e4,
                r.flavor.as_str()
            );
            any = true;
            rec.next();
        }
        if !any {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},,",
                t.ts.0,
                t.symbol,
                t.venue,
                t.exec_px.0,
                t.shares.0,
                t.inferred.as_str(),
                t.differing
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Quote;

    fn trade(px: i64, shares: u64) -> ObserverEvent {
        ObserverEvent::trade(1, Symbol::new("AAPL").unwrap(), VenueId(5), Quote::new(px, shares), SideHint::Unknown)
    }

    #[test]
    fn side_inference() {
        let sip = BboPair::prices(991300, 991500);
        assert_eq!(infer_side(Price(991300), &sip), InferredSide::ActiveOffer);
        assert_eq!(infer_side(Price(991500), &sip), InferredSide::ActiveBid);
        assert_eq!(infer_side(Price(991350), &sip), InferredSide::None);
        assert_eq!(infer_side(Price(991400), &BboPair::prices(991400, 991400)), InferredSide::Both);
        assert_eq!(infer_side(Price(991400), &BboPair::default()), InferredSide::None);
    }

    #[test]
    fn active_offer_at_nbb() {
        let out = trade_roc(&trade(991300, 100), &BboPair::prices(991300, 991500), &BboPair::prices(991600, 991700));
        assert_eq!(out.records.len(), 1);
        let r = out.records[0];
        assert_eq!((r.inferred_side, r.roc_e4, r.flavor), (ActiveSide::ActiveOffer, -30000, Flavor::SipRoc));
    }

    #[test]
    fn active_bid_at_nbo() {
        let out = trade_roc(&trade(991100, 395), &BboPair::prices(991000, 991100), &BboPair::prices(991400, 991500));
        let r = out.records[0];
        assert_eq!((r.inferred_side, r.roc_e4, r.flavor), (ActiveSide::ActiveBid, 158000, Flavor::DirectRoc));
    }

    #[test]
    fn locked_sip_emits_both_sides() {
        let out = trade_roc(&trade(991400, 100), &BboPair::prices(991400, 991400), &BboPair::prices(991600, 991700));
        let got: Vec<_> = out.records.iter().map(|r| (r.inferred_side, r.roc_e4)).collect();
        assert_eq!(got, vec![(ActiveSide::ActiveBid, 30000), (ActiveSide::ActiveOffer, -20000)]);
    }

    #[test]
    fn off_nbbo_and_zero_roc_produce_nothing() {
        let sip = BboPair::prices(991300, 991500);
        assert!(trade_roc(&trade(991350, 100), &sip, &BboPair::prices(991600, 991700)).records.is_empty());
        assert!(trade_roc(&trade(991300, 100), &sip, &sip).records.is_empty());
    }

    #[test]
    fn missing_dbbo_side_is_counted() {
        let dbbo = BboPair::new(None, Some(Quote::new(991700, 1)));
        let out = trade_roc(&trade(991300, 100), &BboPair::prices(991300, 991500), &dbbo);
        assert!(out.records.is_empty());
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn differing_rules() {
        let sip = BboPair::prices(991300, 991500);
        let dbbo = BboPair::prices(991300, 991700);
        assert!(classify_differing(SideHint::Sell, InferredSide::None, &sip, &dbbo));
        assert!(!classify_differing(SideHint::Buy, InferredSide::None, &sip, &dbbo));
        assert!(!classify_differing(SideHint::Unknown, InferredSide::None, &sip, &sip));
        assert!(classify_differing(SideHint::Unknown, InferredSide::None, &sip, &dbbo));
        assert!(classify_differing(SideHint::Unknown, InferredSide::ActiveOffer, &sip, &dbbo));
        assert!(!classify_differing(SideHint::Unknown, InferredSide::ActiveBid, &sip, &dbbo));
    }

    /// The fallback equals "either side differs", checked against an
    /// enumeration of bid/offer equality cases.
    #[test]
    fn differing_fallback_enumeration() {
        for bid_differs in [false, true] {
            for offer_differs in [false, true] {
                let sip = BboPair::prices(991300, 991500);
                let dbbo = BboPair::prices(991300 + 100 * bid_differs as i64, 991500 + 100 * offer_differs as i64);
                let expected = bid_differs || offer_differs;
                for inferred in [InferredSide::None, InferredSide::Both] {
                    assert_eq!(classify_differing(SideHint::Unknown, inferred, &sip, &dbbo), expected);
                }
            }
        }
    }

    fn rec(roc: i64) -> RocRecord {
        RocRecord {
            ts: TimeUs(0),
            symbol: Symbol::new("XYZ").unwrap(),
            venue: VenueId(1),
            exec_px: Price(1_000_000),
            shares: Qty(100),
            inferred_side: ActiveSide::ActiveBid,
            roc_e4: roc,
            flavor: if roc > 0 { Flavor::DirectRoc } else { Flavor::SipRoc },
        }
    }

    #[test]
    fn toy_cancellation() {
        let agg = aggregate(&[rec(-10000), rec(20000)], &[]);
        let t = agg.total();
        assert_eq!(t.net_roc(), 10000);
        assert_eq!(t.total_roc(), 30000);
    }

    #[test]
    fn empty_aggregate() {
        let agg = aggregate(&[], &[]);
        assert_eq!(agg.total(), RocTotals::default());
        assert!(agg.table_csv().contains("1,Total Opportunity Cost,0.00\n"));
    }

    #[test]
    fn merge_matches_single_pass() {
        let recs: Vec<_> = [-3, 5, -7, 11].iter().map(|v| rec(v * 100)).collect();
        let whole = aggregate(&recs, &[]);
        let mut a = aggregate(&recs[..1], &[]);
        a.merge(aggregate(&recs[1..], &[]));
        assert_eq!(a, whole);
    }
}
