//! Discrete-event simulator of a geographically fragmented market.
//!
//! Venues run [`LocalBook`]s at named sites. Every change of a venue's
//! displayed top of book travels to the observer twice: directly from the
//! venue's site, and through the SIP, which consolidates at its tape's site,
//! spends a fixed processing time and then publishes to the observer. Trades
//! reach the observer through the SIP path only. The emitted stream uses the
//! ingest schema, and a ground truth is derived from the same delivery
//! schedule for checking the analytics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::book::{BookError, BookEvent, LocalBook, Order, OrderId};
use crate::consolidate::{recompute_dbbo, BboPair};
use crate::disloc::DislocationSegment;
use crate::ingest::{ObserverEvent, Quote, SideHint};
use crate::types::{FeedId, Price, Qty, Side, Symbol, TimeUs, VenueId};

/// Speed of light used for straight-line estimates, miles per second.
pub const LIGHT_MI_PER_S: f64 = 186_000.0;
/// Speed of light, kilometres per second (for distances given only in km).
pub const LIGHT_KM_PER_S: f64 = 300_000.0;
/// Fiber propagation delay, microseconds per kilometre.
pub const FIBER_US_PER_KM: f64 = 4.9;
pub const KM_PER_MI: f64 = 1.609344;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("topology: {0}")]
    Topology(String),
    #[error("scenario line {line}: {msg}")]
    Scenario { line: usize, msg: String },
    #[error("scenario line {line}: {source}")]
    Book { line: usize, source: BookError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Medium {
    LightVacuum,
    Fiber,
    /// Microwave/laser hybrid with a measured one-way delay.
    HybridLaser {
        one_way_us: f64,
    },
}

impl std::fmt::Display for Medium {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Medium::LightVacuum => f.write_str("light"),
            Medium::Fiber => f.write_str("fiber"),
            Medium::HybridLaser { one_way_us } => write!(f, "laser:{one_way_us}"),
        }
    }
}

impl std::str::FromStr for Medium {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "light" => Ok(Medium::LightVacuum),
            "fiber" => Ok(Medium::Fiber),
            _ => {
                let us = s.strip_prefix("laser:").ok_or_else(|| format!("unknown medium {s:?}"))?;
                let one_way_us: f64 = us.parse().map_err(|_| format!("bad laser delay {us:?}"))?;
                if !(one_way_us >= 0.0 && one_way_us.is_finite()) {
                    return Err(format!("bad laser delay {us:?}"));
                }
                Ok(Medium::HybridLaser { one_way_us })
            }
        }
    }
}

/// One-way delay in microseconds over `distance_mi` miles. Fiber converts
/// miles to kilometres exactly.
pub fn propagation_delay(distance_mi: f64, medium: Medium) -> Result<f64, SimError> {
    if !(distance_mi >= 0.0) || !distance_mi.is_finite() {
        return Err(SimError::Domain(format!("distance must be non-negative, got {distance_mi}")));
    }
    Ok(match medium {
        Medium::LightVacuum => distance_mi / LIGHT_MI_PER_S * 1e6,
        Medium::Fiber => fiber_delay_km(distance_mi * KM_PER_MI)?,
        Medium::HybridLaser { one_way_us } => {
            if distance_mi == 0.0 {
                0.0
            } else {
                one_way_us
            }
        }
    })
}

/// One-way fiber delay in microseconds over `km` kilometres.
pub fn fiber_delay_km(km: f64) -> Result<f64, SimError> {
    if !(km >= 0.0) || !km.is_finite() {
        return Err(SimError::Domain(format!("distance must be non-negative, got {km}")));
    }
    Ok(km * FIBER_US_PER_KM)
}

/// A point-to-point link. When both units are given, light-speed math uses
/// miles and fiber math uses the kilometre figure as stated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub miles: Option<f64>,
    pub km: Option<f64>,
    pub medium: Medium,
}

impl LinkSpec {
    pub fn one_way_us(&self) -> Result<f64, SimError> {
        match (self.medium, self.miles, self.km) {
            (_, None, None) => Err(SimError::Topology("link has no distance".into())),
            (Medium::Fiber, _, Some(km)) => fiber_delay_km(km),
            (Medium::LightVacuum, None, Some(km)) => {
                if km < 0.0 {
                    return Err(SimError::Domain(format!("distance must be non-negative, got {km}")));
                }
                Ok(km / LIGHT_KM_PER_S * 1e6)
            }
            (m, Some(mi), _) => propagation_delay(mi, m),
            (m @ Medium::HybridLaser { .. }, None, Some(km)) => propagation_delay(km / KM_PER_MI, m),
        }
    }

    fn one_way_ns(&self) -> Result<u64, SimError> {
        Ok((self.one_way_us()? * 1000.0).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTopology {
    pub sites: Vec<String>,
    /// Keyed by site pair in config order.
    pub links: BTreeMap<(String, String), LinkSpec>,
    pub venues: BTreeMap<VenueId, String>,
    /// Tape name to SIP processing site.
    pub tapes: BTreeMap<String, String>,
    pub symbol_tape: BTreeMap<Symbol, String>,
    /// Tape for symbols not listed in `symbol_tape`.
    pub default_tape: Option<String>,
    pub observer_site: String,
    pub sip_processing_us: u64,
}

/// Shortest one-way delays between all sites, in nanoseconds.
#[derive(Debug, Clone)]
pub struct SiteDelays {
    index: HashMap<String, usize>,
    ns: Vec<Vec<Option<u64>>>,
}

impl SiteDelays {
    pub fn ns(&self, a: &str, b: &str) -> Option<u64> {
        let (i, j) = (*self.index.get(a)?, *self.index.get(b)?);
        self.ns[i][j]
    }
}

fn site_name_ok(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SimTopology {
    /// Northern New Jersey data centers with straight-line fiber links,
    /// NYSE-style venues at Mahwah, Nasdaq-style venues at Carteret, other
    /// exchanges at Secaucus and one at Weehawken. Tapes A and B consolidate
    /// at Mahwah, tape C at Carteret; the observer sits at Carteret.
    pub fn default_nms(sip_processing_us: u64) -> SimTopology {
        let link = |mi: f64, km: f64| LinkSpec { miles: Some(mi), km: Some(km), medium: Medium::Fiber };
        let mut links = BTreeMap::new();
        links.insert(("Carteret".to_string(), "Mahwah".to_string()), link(34.55, 55.6));
        links.insert(("Mahwah".to_string(), "Secaucus".to_string()), link(21.31, 34.3));
        links.insert(("Carteret".to_string(), "Secaucus".to_string()), link(16.22, 26.1));
        links.insert(("Secaucus".to_string(), "Weehawken".to_string()), link(2.56, 4.12));
        let mut venues = BTreeMap::new();
        for (ids, site) in [(1..=3, "Carteret"), (4..=6, "Mahwah"), (7..=10, "Secaucus"), (11..=11, "Weehawken")] {
            for id in ids {
                venues.insert(VenueId(id), site.to_string());
            }
        }
        let tapes = [("A", "Mahwah"), ("B", "Mahwah"), ("C", "Carteret")]
            .into_iter()
            .map(|(t, s)| (t.to_string(), s.to_string()))
            .collect();
        SimTopology {
            sites: ["Carteret", "Mahwah", "Secaucus", "Weehawken"].map(String::from).to_vec(),
            links,
            venues,
            tapes,
            symbol_tape: BTreeMap::new(),
            default_tape: Some("C".to_string()),
            observer_site: "Carteret".to_string(),
            sip_processing_us,
        }
    }

    /// Parses the sectioned `key = value` format written by
    /// [`SimTopology::to_config_string`].
    pub fn parse(text: &str) -> Result<SimTopology, SimError> {
        let mut topo = SimTopology {
            sites: Vec::new(),
            links: BTreeMap::new(),
            venues: BTreeMap::new(),
            tapes: BTreeMap::new(),
            symbol_tape: BTreeMap::new(),
            default_tape: None,
            observer_site: String::new(),
            sip_processing_us: 0,
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| SimError::Config { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match section.as_str() {
                "sites" if key == "list" => {
                    for s in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        if !site_name_ok(s) {
                            return Err(err(format!("bad site name {s:?}")));
                        }
                        topo.sites.push(s.to_string());
                    }
                }
                "links" => {
                    let (a, b) =
                        key.split_once('-').ok_or_else(|| err(format!("link key must be A-B, got {key:?}")))?;
                    let mut spec = LinkSpec { miles: None, km: None, medium: Medium::Fiber };
                    for tok in value.split_whitespace() {
                        if let Some(v) = tok.strip_suffix("mi") {
                            spec.miles = Some(v.parse().map_err(|_| err(format!("bad distance {tok:?}")))?);
                        } else if let Some(v) = tok.strip_suffix("km") {
                            spec.km = Some(v.parse().map_err(|_| err(format!("bad distance {tok:?}")))?);
                        } else {
                            spec.medium = tok.parse().map_err(err)?;
                        }
                    }
                    topo.links.insert((a.trim().to_string(), b.trim().to_string()), spec);
                }
                "venues" => {
                    let id: u16 = key.parse().map_err(|_| err(format!("bad venue id {key:?}")))?;
                    topo.venues.insert(VenueId(id), value.to_string());
                }
                "tapes" => {
                    topo.tapes.insert(key.to_string(), value.to_string());
                }
                "symbols" if key == "default" => topo.default_tape = Some(value.to_string()),
                "symbols" => {
                    let sym = Symbol::new(key).map_err(|e| err(e.to_string()))?;
                    topo.symbol_tape.insert(sym, value.to_string());
                }
                "sip" if key == "processing_us" => {
                    topo.sip_processing_us = value.parse().map_err(|_| err(format!("bad processing_us {value:?}")))?;
                }
                "observer" if key == "site" => topo.observer_site = value.to_string(),
                _ => return Err(err(format!("unknown key {key:?} in section [{section}]"))),
            }
        }
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[sites]\nlist = {}\n", self.sites.join(", "));
        out.push_str("[links]\n");
        for ((a, b), l) in &self.links {
            let mut v = Vec::new();
            if let Some(mi) = l.miles {
                v.push(format!("{mi}mi"));
            }
            if let Some(km) = l.km {
                v.push(format!("{km}km"));
            }
            v.push(l.medium.to_string());
            let _ = writeln!(out, "{a}-{b} = {}", v.join(" "));
        }
        out.push_str("\n[venues]\n");
        for (v, s) in &self.venues {
            let _ = writeln!(out, "{v} = {s}");
        }
        out.push_str("\n[tapes]\n");
        for (t, s) in &self.tapes {
            let _ = writeln!(out, "{t} = {s}");
        }
        out.push_str("\n[symbols]\n");
        if let Some(t) = &self.default_tape {
            let _ = writeln!(out, "default = {t}");
        }
        for (sym, t) in &self.symbol_tape {
            let _ = writeln!(out, "{sym} = {t}");
        }
        let _ = writeln!(
            out,
            "\n[sip]\nprocessing_us = {}\n\n[observer]\nsite = {}",
            self.sip_processing_us, self.observer_site
        );
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let known = |s: &str| self.sites.iter().any(|x| x == s);
        let bad = |msg: String| Err(SimError::Topology(msg));
        for ((a, b), l) in &self.links {
            if !known(a) || !known(b) {
                return bad(format!("link {a}-{b} names an undefined site"));
            }
            let d = l.one_way_us()?;
            if a != b && l.miles.or(l.km).is_some_and(|x| x <= 0.0) {
                return bad(format!("link {a}-{b} must have a positive distance"));
            }
            if !d.is_finite() {
                return bad(format!("link {a}-{b} has a non-finite delay"));
            }
        }
        for (v, s) in &self.venues {
            if !known(s) {
                return bad(format!("venue {v} at undefined site {s}"));
            }
        }
        for (t, s) in &self.tapes {
            if !known(s) {
                return bad(format!("tape {t} at undefined site {s}"));
            }
        }
        for t in self.symbol_tape.values().chain(self.default_tape.as_ref()) {
            if !self.tapes.contains_key(t) {
                return bad(format!("undefined tape {t}"));
            }
        }
        if !known(&self.observer_site) {
            return bad(format!("observer at undefined site {:?}", self.observer_site));
        }
        Ok(())
    }

    /// All-pairs shortest delays over the links (same site = 0).
    pub fn delays(&self) -> Result<SiteDelays, SimError> {
        let n = self.sites.len();
        let index: HashMap<String, usize> = self.sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut ns = vec![vec![None; n]; n];
        for (i, row) in ns.iter_mut().enumerate() {
            row[i] = Some(0);
        }
        for ((a, b), l) in &self.links {
            let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
                return Err(SimError::Topology(format!("link {a}-{b} names an undefined site")));
            };
            let d = l.one_way_ns()?;
            for (x, y) in [(i, j), (j, i)] {
                if ns[x][y].is_none_or(|cur| d < cur) {
                    ns[x][y] = Some(d);
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                let Some(ik) = ns[i][k] else { continue };
                for j in 0..n {
                    if let Some(kj) = ns[k][j] {
                        if ns[i][j].is_none_or(|cur| ik + kj < cur) {
                            ns[i][j] = Some(ik + kj);
                        }
                    }
                }
            }
        }
        Ok(SiteDelays { index, ns })
    }

    fn tape_of(&self, symbol: Symbol) -> Option<&String> {
        self.symbol_tape.get(&symbol).or(self.default_tape.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Submit(Order),
    Cancel(OrderId),
    Modify(OrderId, Qty),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioLine {
    pub t_us: u64,
    pub venue: VenueId,
    pub symbol: Symbol,
    pub action: Action,
}

impl ScenarioLine {
    /// Renders the line in the `t_us venue symbol side px_e4|MKT qty flags`
    /// format accepted by [`parse_scenario`].
    pub fn to_line(&self) -> String {
        let (side, px, qty, flags) = match self.action {
            Action::Submit(o) => {
                let mut flags = vec![format!("id={}", o.id)];
                if o.peg == crate::book::Peg::Midpoint {
                    flags.push("peg".into());
                } else if !o.displayed {
                    flags.push("hidden".into());
                }
                if o.ioc && o.limit_px.is_some() {
                    flags.push("ioc".into());
                }
                let px = o.limit_px.map_or("MKT".to_string(), |p| p.0.to_string());
                (side_code(o.side), px, o.qty.0.to_string(), flags.join(","))
            }
            Action::Cancel(id) => ("-", "-".into(), "-".into(), format!("cancel={id}")),
            Action::Modify(id, q) => ("-", "-".into(), q.0.to_string(), format!("modify={id}")),
        };
        format!("{} {} {} {side} {px} {qty} {flags}", self.t_us, self.venue, self.symbol)
    }
}

fn side_code(side: Side) -> &'static str {
    match side {
        Side::Bid => "B",
        Side::Offer => "S",
    }
}

/// Parses scenario lines `t_us venue symbol side px_e4|MKT qty flags`.
///
/// `side` is `B`/`S` (or `bid`/`offer`); `flags` is `-` or a comma list of
/// `ioc`, `hidden`, `peg`, `id=N`, `cancel=N`, `modify=N`. Cancel lines may
/// use `-` for side, price and quantity; modify lines give the new quantity.
/// Orders without `id=` get ids from a counter starting at one.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioLine>, SimError> {
    let mut out = Vec::new();
    let mut next_id: OrderId = 1;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| SimError::Scenario { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let t_us: u64 = f[0].parse().map_err(|_| err(format!("bad time {:?}", f[0])))?;
        let venue = VenueId(f[1].parse().map_err(|_| err(format!("bad venue {:?}", f[1])))?);
        let symbol = Symbol::new(f[2]).map_err(|e| err(e.to_string()))?;
        let (mut ioc, mut hidden, mut peg) = (false, false, false);
        let (mut id, mut cancel, mut modify) = (None, None, None);
        if f[6] != "-" {
            for flag in f[6].split(',') {
                let num = |v: &str| v.parse::<OrderId>().map_err(|_| err(format!("bad flag {flag:?}")));
                match flag.split_once('=') {
                    None if flag == "ioc" => ioc = true,
                    None if flag == "hidden" => hidden = true,
                    None if flag == "peg" => peg = true,
                    Some(("id", v)) => id = Some(num(v)?),
                    Some(("cancel", v)) => cancel = Some(num(v)?),
                    Some(("modify", v)) => modify = Some(num(v)?),
                    _ => return Err(err(format!("unknown flag {flag:?}"))),
                }
            }
        }
        let qty = || -> Result<u64, SimError> { f[5].parse().map_err(|_| err(format!("bad quantity {:?}", f[5]))) };
        let action = if let Some(target) = cancel {
            Action::Cancel(target)
        } else if let Some(target) = modify {
            Action::Modify(target, Qty(qty()?))
        } else {
            let side = match f[3] {
                "B" | "b" | "buy" | "bid" => Side::Bid,
                "S" | "s" | "sell" | "offer" => Side::Offer,
                other => return Err(err(format!("bad side {other:?}"))),
            };
            let qty = qty()?;
            if qty == 0 {
                return Err(err("quantity must be positive".into()));
            }
            let px = match f[4] {
                "MKT" | "-" => None,
                p => Some(p.parse::<i64>().ok().filter(|v| *v > 0).ok_or_else(|| err(format!("bad price {p:?}")))?),
            };
            let id = id.unwrap_or_else(|| {
                let v = next_id;
                next_id += 1;
                v
            });
            let mut order = match (peg, px) {
                (true, cap) => Order { limit_px: cap.map(Price), ..Order::midpoint_peg(id, side, qty) },
                (false, None) => Order::market(id, side, qty),
                (false, Some(p)) => Order::limit(id, side, p, qty),
            };
            if hidden {
                order = order.hidden();
            }
            if ioc {
                order = order.ioc();
            }
            Action::Submit(order)
        };
        out.push(ScenarioLine { t_us, venue, symbol, action });
    }
    Ok(out)
}

pub fn scenario_to_string(lines: &[ScenarioLine]) -> String {
    let mut out = String::from("# t_us venue symbol side px_e4|MKT qty flags\n");
    for l in lines {
        out.push_str(&l.to_line());
        out.push('\n');
    }
    out
}

/// Parameters for [`random_scenario`].
#[derive(Debug, Clone)]
pub struct RandomScenario {
    pub venues: Vec<VenueId>,
    pub symbols: Vec<Symbol>,
    pub orders: usize,
    /// Mean gap between consecutive actions, microseconds.
    pub mean_gap_us: u64,
    pub start_us: u64,
    /// Reference price, e4.
    pub base_px: i64,
    /// Half-width of the limit-price band around the reference, in cents.
    pub band_cents: i64,
}

impl Default for RandomScenario {
    fn default() -> Self {
        RandomScenario {
            venues: vec![VenueId(1), VenueId(4), VenueId(7)],
            symbols: vec![Symbol::new("AAPL").expect("valid symbol")],
            orders: 1000,
            mean_gap_us: 300,
            start_us: 34_200_000_000,
            base_px: 1_000_000,
            band_cents: 5,
        }
    }
}

/// Seeded random order flow: mostly displayed limits near a drifting
/// reference price, plus cancels, modifies, marketable IOCs, hidden orders
/// and midpoint pegs.
pub fn random_scenario(params: &RandomScenario, seed: u64) -> Vec<ScenarioLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(params.orders);
    let mut live: Vec<(VenueId, Symbol, OrderId)> = Vec::new();
    let mut t = params.start_us;
    let mut reference = params.base_px;
    for id in 1..=params.orders as OrderId {
        t += rng.gen_range(0..=2 * params.mean_gap_us);
        if rng.gen_bool(0.05) {
            reference += 100 * rng.gen_range(-1..=1);
        }
        let venue = *params.venues.choose(&mut rng).expect("venues");
        let symbol = *params.symbols.choose(&mut rng).expect("symbols");
        let side = if rng.gen_bool(0.5) { Side::Bid } else { Side::Offer };
        let qty = 100 * rng.gen_range(1..=5);
        let roll: f64 = rng.gen();
        let away = 100 * rng.gen_range(0..=params.band_cents);
        let passive_px = match side {
            Side::Bid => reference - away,
            Side::Offer => reference + away,
        }
        .max(100);
        let action = if roll < 0.15 && !live.is_empty() {
            let k = rng.gen_range(0..live.len());
            let (v, s, target) = live.swap_remove(k);
            out.push(ScenarioLine { t_us: t, venue: v, symbol: s, action: Action::Cancel(target) });
            continue;
        } else if roll < 0.22 && !live.is_empty() {
            let (v, s, target) = live[rng.gen_range(0..live.len())];
            out.push(ScenarioLine { t_us: t, venue: v, symbol: s, action: Action::Modify(target, Qty(qty)) });
            continue;
        } else if roll < 0.30 {
            Action::Submit(Order::market(id, side, qty))
        } else if roll < 0.35 {
            Action::Submit(Order::limit(id, side, passive_px, qty).hidden())
        } else if roll < 0.40 {
            Action::Submit(Order::midpoint_peg(id, side, qty))
        } else {
            Action::Submit(Order::limit(id, side, passive_px, qty))
        };
        live.push((venue, symbol, id));
        out.push(ScenarioLine { t_us: t, venue, symbol, action });
    }
    out
}

/// Per symbol and side: the difference at microsecond resolution (the value
/// after all deliveries at that microsecond) and the segments it implies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub steps: BTreeMap<(Symbol, Side), Vec<(TimeUs, Option<Price>)>>,
    /// Sorted by (symbol, start, side, end).
    pub segments: Vec<DislocationSegment>,
    pub stream_end: TimeUs,
}

impl GroundTruth {
    pub fn dislocated_us(&self, side: Side) -> u64 {
        self.segments.iter().filter(|s| s.side == side).map(DislocationSegment::duration_us).sum()
    }
}

pub const TRUTH_CSV_HEADER: &str = "symbol,side,start_us,end_us,duration_us,direction,min_dp_e4,max_dp_e4,truncated";

pub fn truth_csv(truth: &GroundTruth) -> String {
    let mut out = format!("{TRUTH_CSV_HEADER}\n");
    for s in &truth.segments {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.symbol,
            s.side.as_str(),
            s.start.0,
            s.end.0,
            s.duration_us(),
            s.direction,
            s.min_dp.0,
            s.max_dp.0,
            s.truncated
        );
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub actions: u64,
    /// Orders refused by a book (e.g. a peg without a usable NBBO) and
    /// cancels or modifies of orders no longer resting.
    pub rejected: u64,
    pub fills: u64,
    pub lbbo_changes: u64,
    pub sip_quotes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub events: Vec<ObserverEvent>,
    pub truth: GroundTruth,
    pub stats: SimStats,
}

/// Something that happened at a venue's matching engine.
#[derive(Debug, Clone, Copy)]
enum VenueChange {
    Lbbo(BboPair),
    Trade { print: Quote, taker: Side },
}

#[derive(Debug, Clone, Copy)]
struct Origin {
    t_us: u64,
    venue: VenueId,
    symbol: Symbol,
    change: VenueChange,
}

/// Sort key for deliveries at the observer: microsecond, SIP before direct,
/// then venue id for direct messages, then sequence.
type DeliveryKey = (u64, u8, u16, u64);

fn round_us(ns: u64) -> u64 {
    (ns + 500) / 1000
}

fn side_or_withdrawn(q: Option<Quote>) -> Option<Quote> {
    Some(q.unwrap_or(Quote::new(0, 0)))
}

/// Runs a scenario to completion. Actions must be at or before `horizon_us`.
pub fn run(topo: &SimTopology, scenario: &[ScenarioLine], horizon_us: u64) -> Result<SimOutput, SimError> {
    topo.validate()?;
    let delays = topo.delays()?;
    let obs = topo.observer_site.as_str();

    let mut order: Vec<usize> = (0..scenario.len()).collect();
    order.sort_by_key(|&i| scenario[i].t_us);

    let mut stats = SimStats::default();
    let mut books: HashMap<(VenueId, Symbol), LocalBook> = HashMap::new();
    let mut shown: HashMap<(VenueId, Symbol), BboPair> = HashMap::new();
    let mut origins: Vec<Origin> = Vec::new();

    for &i in &order {
        let line = &scenario[i];
        let line_no = i + 1;
        if line.t_us > horizon_us {
            return Err(SimError::Scenario {
                line: line_no,
                msg: format!("time {} beyond horizon {horizon_us}", line.t_us),
            });
        }
        if !topo.venues.contains_key(&line.venue) {
            return Err(SimError::Scenario { line: line_no, msg: format!("venue {} not in topology", line.venue) });
        }
        if topo.tape_of(line.symbol).is_none() {
            return Err(SimError::Scenario { line: line_no, msg: format!("symbol {} has no tape", line.symbol) });
        }
        stats.actions += 1;
        let gbbo = if matches!(line.action, Action::Submit(o) if o.peg != crate::book::Peg::None) {
            Some(recompute_dbbo(shown.iter().filter(|((_, s), _)| *s == line.symbol).map(|((v, _), p)| (v, p))))
        } else {
            None
        };
        let book = books.entry((line.venue, line.symbol)).or_default();
        let result = match line.action {
            Action::Submit(o) => book.submit(o, gbbo.as_ref()).map(|ev| (ev, Some(o.side))),
            Action::Cancel(id) => book.cancel(id).map(|_| (Vec::new(), None)),
            Action::Modify(id, q) => book.modify(id, q).map(|_| (Vec::new(), None)),
        };
        let (events, taker) = match result {
            Ok(r) => r,
            Err(BookError::RejectedOrder(_)) | Err(BookError::NotFound(_)) => {
                stats.rejected += 1;
                continue;
            }
            Err(source) => return Err(SimError::Book { line: line_no, source }),
        };
        for ev in events {
            if let (BookEvent::Fill { px, qty, .. }, Some(taker)) = (ev, taker) {
                stats.fills += 1;
                origins.push(Origin {
                    t_us: line.t_us,
                    venue: line.venue,
                    symbol: line.symbol,
                    change: VenueChange::Trade { print: Quote { px, qty }, taker },
                });
            }
        }
        let lbbo = book.lbbo();
        let prev = shown.entry((line.venue, line.symbol)).or_default();
        if *prev != lbbo {
            *prev = lbbo;
            stats.lbbo_changes += 1;
            origins.push(Origin {
                t_us: line.t_us,
                venue: line.venue,
                symbol: line.symbol,
                change: VenueChange::Lbbo(lbbo),
            });
        }
    }

    let path =
        |a: &str, b: &str| delays.ns(a, b).ok_or_else(|| SimError::Topology(format!("no path between {a} and {b}")));
    let mut deliveries: Vec<(DeliveryKey, ObserverEvent)> = Vec::with_capacity(origins.len() * 2);

    // Direct feeds.
    for (seq, o) in origins.iter().enumerate() {
        let VenueChange::Lbbo(lbbo) = o.change else { continue };
        let site = &topo.venues[&o.venue];
        let at = round_us(o.t_us * 1000 + path(site, obs)?);
        let mut ev = ObserverEvent::quote(
            at,
            FeedId::Direct(o.venue),
            o.symbol,
            o.venue,
            side_or_withdrawn(lbbo.bid),
            side_or_withdrawn(lbbo.offer),
        );
        ev.origin_ts = Some(TimeUs(o.t_us));
        deliveries.push(((at, 1, o.venue.0, seq as u64), ev));
    }

    // SIP: consolidate in order of arrival at each tape, then publish.
    let mut at_tape: Vec<(u64, usize, &String)> = Vec::with_capacity(origins.len());
    for (seq, o) in origins.iter().enumerate() {
        let tape = topo.tape_of(o.symbol).expect("checked above");
        let tape_site = &topo.tapes[tape];
        at_tape.push((o.t_us * 1000 + path(&topo.venues[&o.venue], tape_site)?, seq, tape_site));
    }
    at_tape.sort_by_key(|&(ns, seq, _)| (ns, seq));
    let mut sip_venues: HashMap<Symbol, BTreeMap<VenueId, BboPair>> = HashMap::new();
    let mut nbbo: HashMap<Symbol, BboPair> = HashMap::new();
    for (sip_seq, &(ns, seq, tape_site)) in at_tape.iter().enumerate() {
        let o = &origins[seq];
        let at = round_us(ns + topo.sip_processing_us * 1000 + path(tape_site, obs)?);
        let key = (at, 0, 0, sip_seq as u64);
        match o.change {
            VenueChange::Trade { print, taker } => {
                let hint = match taker {
                    Side::Bid => SideHint::Buy,
                    Side::Offer => SideHint::Sell,
                };
                let mut ev = ObserverEvent::trade(at, o.symbol, o.venue, print, hint);
                ev.origin_ts = Some(TimeUs(o.t_us));
                deliveries.push((key, ev));
            }
            VenueChange::Lbbo(lbbo) => {
                let table = sip_venues.entry(o.symbol).or_default();
                table.insert(o.venue, lbbo);
                let consolidated = recompute_dbbo(table.iter());
                let last = nbbo.entry(o.symbol).or_default();
                if *last != consolidated {
                    *last = consolidated;
                    stats.sip_quotes += 1;
                    let mut ev = ObserverEvent::quote(
                        at,
                        FeedId::Sip,
                        o.symbol,
                        o.venue,
                        side_or_withdrawn(consolidated.bid),
                        side_or_withdrawn(consolidated.offer),
                    );
                    ev.origin_ts = Some(TimeUs(o.t_us));
                    deliveries.push((key, ev));
                }
            }
        }
    }

    deliveries.sort_by_key(|(k, _)| *k);
    let events: Vec<ObserverEvent> = deliveries.into_iter().map(|(_, e)| e).collect();
    let truth = ground_truth(&events);
    Ok(SimOutput { events, truth, stats })
}

/// Replays the delivery schedule with a plain full-rescan view and derives
/// segments from the per-microsecond difference.
fn ground_truth(events: &[ObserverEvent]) -> GroundTruth {
    #[derive(Default)]
    struct State {
        sip: BboPair,
        venues: BTreeMap<VenueId, BboPair>,
    }
    let stream_end = events.last().map(|e| e.obs_ts).unwrap_or_default();
    let mut states: HashMap<Symbol, State> = HashMap::new();
    let mut steps: BTreeMap<(Symbol, Side), Vec<(TimeUs, Option<Price>)>> = BTreeMap::new();
    for ev in events {
        if ev.trade.is_some() {
            continue;
        }
        let st = states.entry(ev.symbol).or_default();
        let target = match ev.feed {
            FeedId::Sip => &mut st.sip,
            FeedId::Direct(v) => st.venues.entry(v).or_default(),
        };
        if let Some(q) = ev.bid {
            target.bid = (q.qty.0 > 0).then_some(q);
        }
        if let Some(q) = ev.offer {
            target.offer = (q.qty.0 > 0).then_some(q);
        }
        let dbbo = recompute_dbbo(st.venues.iter());
        for side in Side::BOTH {
            let dp = match (st.sip.px(side), dbbo.px(side)) {
                (Some(s), Some(d)) => Some(s - d),
                _ => None,
            };
            let series = steps.entry((ev.symbol, side)).or_default();
            match series.last_mut() {
                Some(last) if last.0 == ev.obs_ts => last.1 = dp,
                _ => series.push((ev.obs_ts, dp)),
            }
        }
    }
    // Drop repeats (including ones created by same-microsecond reversals).
    for series in steps.values_mut() {
        let mut prev: Option<Option<Price>> = Some(None);
        series.retain(|&(_, v)| {
            let keep = prev != Some(v);
            prev = Some(v);
            keep
        });
    }

    let sign = |v: Option<Price>| v.map_or(0, Price::signum);
    let mut segments = Vec::new();
    for (&(symbol, side), series) in &steps {
        let mut i = 0;
        while i < series.len() {
            let dir = sign(series[i].1);
            if dir == 0 {
                i += 1;
                continue;
            }
            let mut j = i;
            let (mut lo, mut hi) = (series[i].1.unwrap(), series[i].1.unwrap());
            while j + 1 < series.len() && sign(series[j + 1].1) == dir {
                j += 1;
                let v = series[j].1.unwrap();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let (end, truncated) = match series.get(j + 1) {
                Some(&(t, _)) => (t, false),
                None => (stream_end, true),
            };
            let flip_start = i > 0 && sign(series[i - 1].1) == -dir;
            let (a, b) = (lo.abs(), hi.abs());
            segments.push(DislocationSegment {
                symbol,
                side,
                start: series[i].0,
                end,
                direction: dir,
                min_dp: lo,
                max_dp: hi,
                min_mag: a.min(b),
                max_mag: a.max(b),
                truncated,
                flip_start,
            });
            i = j + 1;
        }
    }
    segments.sort_by_key(|s| (s.symbol, s.start, s.side, s.end));
    GroundTruth { steps, segments, stream_end }
}
