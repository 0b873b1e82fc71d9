//! Shared vocabulary: exact prices, observer time, sides, feeds and symbols.
//!
//! Prices are integer counts of 10^-4 USD. Every quantity that touches money
//! stays an integer until it is formatted for a report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;

/// Number of price units in one dollar.
pub const PRICE_SCALE: i64 = 10_000;
/// One cent in price units.
pub const CENT: i64 = 100;
/// Microseconds in one calendar day.
pub const DAY_US: u64 = 86_400_000_000;

/// A price (or price difference) in units of 10^-4 USD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub i64);

impl Price {
    pub const ZERO: Price = Price(0);

    pub fn e4(self) -> i64 {
        self.0
    }

    pub fn abs(self) -> Price {
        Price(self.0.abs())
    }

    pub fn signum(self) -> i8 {
        self.0.signum() as i8
    }

    /// Parses a decimal dollar string exactly. More than four fraction
    /// digits is an error, never a rounding.
    pub fn from_decimal(text: &str) -> Result<Price, ParseError> {
        parse_scaled(text.as_bytes(), 4).map(Price).ok_or_else(|| ParseError::Decimal(text.to_string()))
    }

    /// Exact decimal rendering: at least two fraction digits, at most four,
    /// trailing zeros beyond the cents trimmed.
    pub fn to_decimal(self) -> String {
        format_e4(self.0 as i128)
    }

    /// Midpoint of two prices, `None` when it is not representable.
    pub fn midpoint(a: Price, b: Price) -> Option<Price> {
        let sum = a.0 + b.0;
        (sum % 2 == 0).then_some(Price(sum / 2))
    }

    /// True when the price sits on the displayed-quote grid: whole cents at or
    /// above one dollar, any 10^-4 increment below it.
    pub fn is_quote_increment(self) -> bool {
        self.0 < PRICE_SCALE || self.0 % CENT == 0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

impl FromStr for Price {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Price::from_decimal(s)
    }
}

impl std::ops::Sub for Price {
    type Output = Price;
    fn sub(self, rhs: Price) -> Price {
        Price(self.0 - rhs.0)
    }
}

impl std::ops::Add for Price {
    type Output = Price;
    fn add(self, rhs: Price) -> Price {
        Price(self.0 + rhs.0)
    }
}

/// Formats an e4-scaled amount (price or money) as exact decimal dollars.
pub fn format_e4(value: i128) -> String {
    let neg = value < 0;
    let abs = value.unsigned_abs();
    let whole = abs / PRICE_SCALE as u128;
    let mut frac = abs % PRICE_SCALE as u128;
    let mut digits = 4;
    while digits > 2 && frac % 10 == 0 {
        frac /= 10;
        digits -= 1;
    }
    format!("{}{}.{:0width$}", if neg { "-" } else { "" }, whole, frac, width = digits)
}

/// Parses `[+-]digits[.digits]` into an integer scaled by 10^`scale`.
/// Returns `None` on any malformation or excess precision.
pub(crate) fn parse_scaled(bytes: &[u8], scale: u32) -> Option<i64> {
    let (neg, body) = match bytes.first()? {
        b'-' => (true, &bytes[1..]),
        b'+' => (false, &bytes[1..]),
        _ => (false, bytes),
    };
    if body.is_empty() {
        return None;
    }
    let mut value: i64 = 0;
    let mut frac_digits: Option<u32> = None;
    let mut any_digit = false;
    for &b in body {
        match b {
            b'0'..=b'9' => {
                if let Some(n) = frac_digits.as_mut() {
                    if *n == scale {
                        return None;
                    }
                    *n += 1;
                }
                value = value.checked_mul(10)?.checked_add((b - b'0') as i64)?;
                any_digit = true;
            }
            b'.' if frac_digits.is_none() => frac_digits = Some(0),
            _ => return None,
        }
    }
    if !any_digit {
        return None;
    }
    let frac = frac_digits.unwrap_or(0);
    value = value.checked_mul(10_i64.pow(scale - frac))?;
    Some(if neg { -value } else { value })
}

/// Observer timestamp: microseconds since the session's midnight. Streams that
/// cover several days keep counting, so `day()` recovers the day index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeUs(pub u64);

impl TimeUs {
    pub fn day(self) -> u64 {
        self.0 / DAY_US
    }

    pub fn time_of_day(self) -> TimeUs {
        TimeUs(self.0 % DAY_US)
    }

    pub fn minute_of_day(self) -> u32 {
        (self.time_of_day().0 / 60_000_000) as u32
    }
}

impl fmt::Display for TimeUs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Offer,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Bid, Side::Offer];

    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Offer => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Offer,
            Side::Offer => Side::Bid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Offer => "offer",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bid" | "Bid" | "B" => Ok(Side::Bid),
            "offer" | "Offer" | "ask" | "O" | "A" => Ok(Side::Offer),
            _ => Err(ParseError::Field { field: "side", value: s.to_string() }),
        }
    }
}

/// Share count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Qty(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VenueId(pub u16);

impl fmt::Display for VenueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which feed delivered a message to the observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeedId {
    Sip,
    Direct(VenueId),
}

impl fmt::Display for FeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedId::Sip => f.write_str("SIP"),
            FeedId::Direct(v) => write!(f, "D.{}", v.0),
        }
    }
}

impl FromStr for FeedId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "SIP" {
            return Ok(FeedId::Sip);
        }
        s.strip_prefix("D.")
            .and_then(|v| v.parse::<u16>().ok())
            .map(|v| FeedId::Direct(VenueId(v)))
            .ok_or_else(|| ParseError::Field { field: "feed", value: s.to_string() })
    }
}

impl Serialize for FeedId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeedId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ticker symbol stored inline: 1-8 bytes of `[A-Z0-9.]`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol {
    len: u8,
    bytes: [u8; 8],
}

impl Symbol {
    pub const MAX_LEN: usize = 8;

    pub fn new(text: &str) -> Result<Symbol, ParseError> {
        let raw = text.as_bytes();
        let valid = !raw.is_empty()
            && raw.len() <= Self::MAX_LEN
            && raw.iter().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || *b == b'.');
        if !valid {
            return Err(ParseError::Field { field: "symbol", value: text.to_string() });
        }
        let mut bytes = [0u8; 8];
        bytes[..raw.len()].copy_from_slice(raw);
        Ok(Symbol { len: raw.len() as u8, bytes })
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII is ever stored.
        std::str::from_utf8(&self.bytes[..self.len as usize]).unwrap_or("")
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Symbol({})", self.as_str())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Symbol {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Symbol::new(s)
    }
}

impl Serialize for Symbol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        Symbol::new(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decimal_examples() {
        assert_eq!(Price::from_decimal("99.13").unwrap(), Price(991300));
        assert_eq!(Price::from_decimal("0.0001").unwrap(), Price(1));
        assert_eq!(Price::from_decimal("99.135").unwrap(), Price(991350));
        assert_eq!(Price::from_decimal("-3").unwrap(), Price(-30000));
        assert_eq!(Price::from_decimal("+.5").unwrap(), Price(5000));
    }

    #[test]
    fn decimal_rejects_precision_loss_and_junk() {
        for bad in ["99.13001", "", "-", ".", "1.2.3", "1e3", "12a", " 1"] {
            assert!(Price::from_decimal(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(Price(991300).to_decimal(), "99.13");
        assert_eq!(Price(991350).to_decimal(), "99.135");
        assert_eq!(Price(1).to_decimal(), "0.0001");
        assert_eq!(Price(-30000).to_decimal(), "-3.00");
        assert_eq!(Price(-1).to_decimal(), "-0.0001");
        assert_eq!(Price(0).to_decimal(), "0.00");
    }

    #[test]
    fn midpoint_is_exact() {
        assert_eq!(Price::midpoint(Price(991300), Price(991500)), Some(Price(991400)));
        assert_eq!(Price::midpoint(Price(991300), Price(991400)), Some(Price(991350)));
        assert_eq!(Price::midpoint(Price(1), Price(2)), None);
    }

    #[test]
    fn quote_grid() {
        assert!(Price(991300).is_quote_increment());
        assert!(!Price(991350).is_quote_increment());
        assert!(Price(9999).is_quote_increment());
    }

    #[test]
    fn symbols() {
        assert_eq!(Symbol::new("BRK.B").unwrap().as_str(), "BRK.B");
        assert!(Symbol::new("").is_err());
        assert!(Symbol::new("aapl").is_err());
        assert!(Symbol::new("TOOLONGSYM").is_err());
    }

    #[test]
    fn feeds() {
        assert_eq!("SIP".parse::<FeedId>().unwrap(), FeedId::Sip);
        assert_eq!("D.12".parse::<FeedId>().unwrap(), FeedId::Direct(VenueId(12)));
        assert!("D.x".parse::<FeedId>().is_err());
        assert_eq!(FeedId::Direct(VenueId(3)).to_string(), "D.3");
    }

    #[test]
    fn time_of_day() {
        let t = TimeUs(DAY_US * 2 + 35_335_398_386);
        assert_eq!(t.day(), 2);
        assert_eq!(t.time_of_day(), TimeUs(35_335_398_386));
        assert_eq!(t.minute_of_day(), 9 * 60 + 48);
    }

    proptest! {
        #[test]
        fn decimal_round_trip(v in any::<i64>().prop_map(|v| v / 16)) {
            let p = Price(v);
            prop_assert_eq!(Price::from_decimal(&p.to_decimal()).unwrap(), p);
        }
    }
}
