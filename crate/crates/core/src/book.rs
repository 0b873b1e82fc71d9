//! Single-venue limit order book with price-time priority.
//!
//! Each price level keeps two FIFO queues: displayed orders first, then
//! non-displayed ones. Midpoint-peg orders rest hidden in a separate FIFO per
//! side and trade at the midpoint of the NBBO supplied with each submit.

use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::consolidate::{better, BboPair};
use crate::ingest::Quote;
use crate::types::{Price, Qty, Side};

pub type OrderId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Peg {
    #[default]
    None,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    /// `None` for a market order (or an uncapped peg).
    pub limit_px: Option<Price>,
    pub qty: Qty,
    pub displayed: bool,
    pub ioc: bool,
    pub peg: Peg,
}

impl Order {
    pub fn limit(id: OrderId, side: Side, px: i64, qty: u64) -> Order {
        Order { id, side, limit_px: Some(Price(px)), qty: Qty(qty), displayed: true, ioc: false, peg: Peg::None }
    }

    pub fn market(id: OrderId, side: Side, qty: u64) -> Order {
        Order { id, side, limit_px: None, qty: Qty(qty), displayed: true, ioc: true, peg: Peg::None }
    }

    pub fn midpoint_peg(id: OrderId, side: Side, qty: u64) -> Order {
        Order { id, side, limit_px: None, qty: Qty(qty), displayed: false, ioc: false, peg: Peg::Midpoint }
    }

    pub fn hidden(mut self) -> Order {
        self.displayed = false;
        self
    }

    pub fn ioc(mut self) -> Order {
        self.ioc = true;
        self
    }

    fn is_market(&self) -> bool {
        self.limit_px.is_none() && self.peg == Peg::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BookEvent {
    Fill {
        taker: OrderId,
        maker: OrderId,
        px: Price,
        qty: Qty,
        midpoint: bool,
    },
    /// `px` is `None` for a resting midpoint peg.
    Rest {
        id: OrderId,
        px: Option<Price>,
        qty: Qty,
    },
    Cancel {
        id: OrderId,
        qty: Qty,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BookError {
    #[error("order rejected: {0}")]
    RejectedOrder(&'static str),
    #[error("order {0} not found")]
    NotFound(OrderId),
    #[error("order id {0} already in use")]
    DuplicateId(OrderId),
}

#[derive(Debug, Clone, Copy)]
struct Resting {
    id: OrderId,
    qty: u64,
    /// Limit cap; only meaningful for pegs.
    limit: Option<Price>,
}

#[derive(Debug, Clone, Default)]
struct Level {
    displayed: VecDeque<Resting>,
    hidden: VecDeque<Resting>,
}

impl Level {
    fn is_empty(&self) -> bool {
        self.displayed.is_empty() && self.hidden.is_empty()
    }

    fn front_mut(&mut self) -> Option<(&mut Resting, bool)> {
        if let Some(r) = self.displayed.front_mut() {
            return Some((r, false));
        }
        self.hidden.front_mut().map(|r| (r, true))
    }

    fn pop_front(&mut self) {
        if self.displayed.pop_front().is_none() {
            self.hidden.pop_front();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Priced { side: Side, px: Price, hidden: bool },
    Peg { side: Side },
}

/// One venue's book.
#[derive(Debug, Clone, Default)]
pub struct LocalBook {
    bids: BTreeMap<Price, Level>,
    offers: BTreeMap<Price, Level>,
    pegs: [VecDeque<Resting>; 2],
    index: HashMap<OrderId, Location>,
}

fn valid_midpoint(nbbo: Option<&BboPair>) -> Option<Price> {
    let nbbo = nbbo?;
    let (b, o) = (nbbo.bid?, nbbo.offer?);
    if b.px > o.px {
        return None;
    }
    Price::midpoint(b.px, o.px)
}

fn within(side: Side, px: Price, limit: Option<Price>) -> bool {
    match (limit, side) {
        (None, _) => true,
        (Some(l), Side::Bid) => px <= l,
        (Some(l), Side::Offer) => px >= l,
    }
}

impl LocalBook {
    pub fn new() -> LocalBook {
        LocalBook::default()
    }

    fn levels(&self, side: Side) -> &BTreeMap<Price, Level> {
        match side {
            Side::Bid => &self.bids,
            Side::Offer => &self.offers,
        }
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<Price, Level> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Offer => &mut self.offers,
        }
    }

    /// Best priced level on `side`, displayed or not.
    fn best_level(&self, side: Side) -> Option<Price> {
        match side {
            Side::Bid => self.bids.keys().next_back().copied(),
            Side::Offer => self.offers.keys().next().copied(),
        }
    }

    /// First resting peg on `side` whose cap admits `mid`.
    fn eligible_peg(&self, side: Side, mid: Price) -> Option<usize> {
        self.pegs[side.index()].iter().position(|r| within(side, mid, r.limit))
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Submits an order: crosses the opposite side in price-time priority,
    /// then rests or cancels the residual.
    pub fn submit(&mut self, order: Order, nbbo: Option<&BboPair>) -> Result<Vec<BookEvent>, BookError> {
        if order.qty.0 == 0 {
            return Err(BookError::RejectedOrder("quantity must be positive"));
        }
        if order.limit_px.is_some_and(|p| p.0 < 0) {
            return Err(BookError::RejectedOrder("negative limit price"));
        }
        if self.index.contains_key(&order.id) {
            return Err(BookError::DuplicateId(order.id));
        }
        let mid = valid_midpoint(nbbo);
        if order.peg == Peg::Midpoint && mid.is_none() {
            return Err(BookError::RejectedOrder("midpoint peg needs a two-sided, uncrossed NBBO"));
        }

        let side = order.side;
        let contra = side.opposite();
        let mut remaining = order.qty.0;
        let mut events = Vec::new();

        // An incoming peg trades at the midpoint, so its effective limit is
        // the midpoint (further capped by any explicit limit).
        let (limit, peg_taker) = match order.peg {
            Peg::Midpoint => {
                let m = mid.unwrap_or_default();
                if !within(side, m, order.limit_px) {
                    (None, None)
                } else {
                    (Some(m), Some(m))
                }
            }
            Peg::None => (order.limit_px, None),
        };
        let can_cross = order.peg == Peg::None || peg_taker.is_some();

        while remaining > 0 && can_cross {
            let level_px = self.best_level(contra).filter(|&p| within(side, p, limit));
            let peg_px =
                mid.filter(|&m| within(side, m, limit)).and_then(|m| self.eligible_peg(contra, m).map(|i| (m, i)));
            // Priced levels win ties against pegs.
            let use_peg = match (level_px, peg_px) {
                (None, None) => break,
                (Some(_), None) => false,
                (None, Some(_)) => true,
                (Some(lp), Some((mp, _))) => better(contra, mp, lp),
            };
            if use_peg {
                let (m, i) = peg_px.unwrap_or_default();
                let maker = &mut self.pegs[contra.index()][i];
                let qty = remaining.min(maker.qty);
                maker.qty -= qty;
                remaining -= qty;
                let maker_id = maker.id;
                if maker.qty == 0 {
                    self.pegs[contra.index()].remove(i);
                    self.index.remove(&maker_id);
                }
                events.push(BookEvent::Fill { taker: order.id, maker: maker_id, px: m, qty: Qty(qty), midpoint: true });
            } else {
                let lp = level_px.unwrap_or_default();
                let levels = self.levels_mut(contra);
                let level = levels.get_mut(&lp).expect("best level exists");
                let (maker, _) = level.front_mut().expect("levels are never empty");
                let qty = remaining.min(maker.qty);
                maker.qty -= qty;
                remaining -= qty;
                let maker_id = maker.id;
                let done = maker.qty == 0;
                if done {
                    level.pop_front();
                    if level.is_empty() {
                        levels.remove(&lp);
                    }
                    self.index.remove(&maker_id);
                }
                let px = peg_taker.unwrap_or(lp);
                events.push(BookEvent::Fill {
                    taker: order.id,
                    maker: maker_id,
                    px,
                    qty: Qty(qty),
                    midpoint: peg_taker.is_some(),
                });
            }
        }

        if remaining > 0 {
            if order.ioc || order.is_market() {
                events.push(BookEvent::Cancel { id: order.id, qty: Qty(remaining) });
            } else if order.peg == Peg::Midpoint {
                self.pegs[side.index()].push_back(Resting { id: order.id, qty: remaining, limit: order.limit_px });
                self.index.insert(order.id, Location::Peg { side });
                events.push(BookEvent::Rest { id: order.id, px: None, qty: Qty(remaining) });
            } else {
                let px = order.limit_px.expect("non-market order has a limit");
                let level = self.levels_mut(side).entry(px).or_default();
                let r = Resting { id: order.id, qty: remaining, limit: None };
                if order.displayed {
                    level.displayed.push_back(r);
                } else {
                    level.hidden.push_back(r);
                }
                self.index.insert(order.id, Location::Priced { side, px, hidden: !order.displayed });
                events.push(BookEvent::Rest { id: order.id, px: Some(px), qty: Qty(remaining) });
            }
        }
        Ok(events)
    }

    fn queue_mut(&mut self, loc: Location) -> Option<&mut VecDeque<Resting>> {
        match loc {
            Location::Priced { side, px, hidden } => {
                let level = self.levels_mut(side).get_mut(&px)?;
                Some(if hidden { &mut level.hidden } else { &mut level.displayed })
            }
            Location::Peg { side } => Some(&mut self.pegs[side.index()]),
        }
    }

    /// Removes a resting order, returning its open quantity.
    pub fn cancel(&mut self, id: OrderId) -> Result<Qty, BookError> {
        let loc = self.index.remove(&id).ok_or(BookError::NotFound(id))?;
        let queue = self.queue_mut(loc).ok_or(BookError::NotFound(id))?;
        let pos = queue.iter().position(|r| r.id == id).ok_or(BookError::NotFound(id))?;
        let removed = queue.remove(pos).map(|r| r.qty).unwrap_or(0);
        if let Location::Priced { side, px, .. } = loc {
            let levels = self.levels_mut(side);
            if levels.get(&px).is_some_and(Level::is_empty) {
                levels.remove(&px);
            }
        }
        Ok(Qty(removed))
    }

    /// Changes the open quantity in place; the order keeps its queue position.
    /// Price changes are a cancel followed by a new submit.
    pub fn modify(&mut self, id: OrderId, new_qty: Qty) -> Result<(), BookError> {
        if new_qty.0 == 0 {
            return Err(BookError::RejectedOrder("modify to zero quantity; use cancel"));
        }
        let loc = *self.index.get(&id).ok_or(BookError::NotFound(id))?;
        let queue = self.queue_mut(loc).ok_or(BookError::NotFound(id))?;
        let r = queue.iter_mut().find(|r| r.id == id).ok_or(BookError::NotFound(id))?;
        r.qty = new_qty.0;
        Ok(())
    }

    /// Position of an order within its queue (0 = front), and its open size.
    pub fn queue_position(&self, id: OrderId) -> Option<(usize, Qty)> {
        let loc = *self.index.get(&id)?;
        let queue = match loc {
            Location::Priced { side, px, hidden } => {
                let level = self.levels(side).get(&px)?;
                if hidden {
                    &level.hidden
                } else {
                    &level.displayed
                }
            }
            Location::Peg { side } => &self.pegs[side.index()],
        };
        queue.iter().position(|r| r.id == id).map(|i| (i, Qty(queue[i].qty)))
    }

    fn best_displayed(&self, side: Side) -> Option<Quote> {
        let mut iter: Box<dyn Iterator<Item = (&Price, &Level)>> = match side {
            Side::Bid => Box::new(self.bids.iter().rev()),
            Side::Offer => Box::new(self.offers.iter()),
        };
        iter.find(|(_, l)| !l.displayed.is_empty())
            .map(|(px, l)| Quote { px: *px, qty: Qty(l.displayed.iter().map(|r| r.qty).sum()) })
    }

    /// Displayed top of book: best displayed price per side with the
    /// displayed size aggregated at that level.
    pub fn lbbo(&self) -> BboPair {
        BboPair { bid: self.best_displayed(Side::Bid), offer: self.best_displayed(Side::Offer) }
    }

    /// Best price on `side` including non-displayed priced orders.
    pub fn best_price(&self, side: Side) -> Option<Price> {
        self.best_level(side)
    }
}
